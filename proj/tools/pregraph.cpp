#include "pregraph/cli.hpp"

int main(int argc, char** argv) { return pregraph::cli::run(argc, argv); }
