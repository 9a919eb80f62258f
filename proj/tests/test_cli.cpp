#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "pregraph/cli.hpp"

using namespace pregraph;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
  fs::path dir;
};

const std::vector<std::string> kSmall = {"--set", "model.layers=2", "--set", "model.width=16",
                                         "--set", "model.mlp_hidden=32"};

Result invoke(std::vector<std::string> args, const fs::path& root) {
  args.insert(args.begin(), "pregraph");
  args.push_back("--out");
  args.push_back(root.string());
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  const auto pos = r.out.find("run_dir=");
  if (pos != std::string::npos) r.dir = r.out.substr(pos + 8, r.out.find('\n', pos) - pos - 8);
  return r;
}

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read(const fs::path& p) { return json::parse(slurp(p)); }

std::string corpus() { return std::string(PREGRAPH_TEST_DATA) + "/corpus.csv"; }

/// Generates the transfer benchmark once per test and returns its run directory.
fs::path transfer_data(const fixture::TempDir& tmp) {
  const auto r = invoke({"gen", "--kind", "transfer", "--size", "64", "--seed", "1"}, tmp / "gen");
  EXPECT_EQ(r.code, 0) << r.err;
  return r.dir;
}

}  // namespace

TEST(Cli, ParseWritesDatasetAndRunRecord) {
  fixture::TempDir tmp("cli-parse");
  const auto r = invoke({"parse", "--input", corpus()}, tmp.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rec = read(r.dir / "run.json");
  EXPECT_EQ(rec["status"], "ok");
  EXPECT_EQ(rec["exit_code"], 0);
  EXPECT_TRUE(rec.contains("wall_seconds"));
  EXPECT_TRUE(rec["config"].contains("model.width"));
  EXPECT_TRUE(rec["artifacts"].contains("dataset.jsonl"));
  EXPECT_EQ(rec["artifacts"]["dataset.jsonl"], fnv1a_hex(slurp(r.dir / "dataset.jsonl")));
  EXPECT_FALSE(io::read_dataset(r.dir / "dataset.jsonl").graphs.empty());
}

TEST(Cli, ScaffoldSplitTwiceIsIdentical) {
  fixture::TempDir tmp("cli-split");
  const auto a = invoke({"split", "--rule", "scaffold", "--input", corpus()}, tmp / "a");
  const auto b = invoke({"split", "--rule", "scaffold", "--input", corpus()}, tmp / "b");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(a.dir / "split.json"), slurp(b.dir / "split.json"));
  const auto s = SplitAssignment::from_json(read(a.dir / "split.json"));
  EXPECT_EQ(s.rule, "scaffold");
  EXPECT_FALSE(s.test.empty());
}

TEST(Cli, ScaffoldCommandListsKeys) {
  fixture::TempDir tmp("cli-scaffold");
  const auto r = invoke({"scaffold", "--input", corpus()}, tmp.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(r.dir / "scaffolds.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "index,scaffold_smiles,scaffold_key");
}

TEST(Cli, PretrainThenFinetuneRecordsInitHash) {
  fixture::TempDir tmp("cli-chain");
  const auto data = transfer_data(tmp);
  const auto pre = invoke(with({"pretrain", "--task", "context", "--input", (data / "pretrain.jsonl").string(),
                                "--set", "train.epochs=1", "--set", "train.batch_size=32", "--set", "context.k=2",
                                "--set", "context.r1=1", "--set", "context.r2=3"},
                               kSmall),
                          tmp / "runs");
  ASSERT_EQ(pre.code, 0) << pre.err;
  const auto ckpt = pre.dir / "encoder.ckpt";
  const auto ck = io::load_checkpoint(ckpt);
  // Only the main encoder is kept; the context encoder is discarded.
  EncoderConfig ec;
  ec.layers = 2;
  ec.width = 16;
  ec.mlp_hidden = 32;
  EXPECT_EQ(ck.params.size(), Encoder<float>(ec, 0).params().size());
  EXPECT_EQ(ck.config, ec);
  EXPECT_TRUE(fs::exists(pre.dir / "curves.csv"));

  const auto ft = invoke(with({"finetune", "--input", (data / "downstream.jsonl").string(), "--split",
                               (data / "split.json").string(), "--init", ckpt.string(), "--set", "train.epochs=2"},
                              kSmall),
                         tmp / "runs");
  ASSERT_EQ(ft.code, 0) << ft.err;
  const auto report = read(ft.dir / "report.json");
  EXPECT_EQ(report["init_checkpoint_hash"], ck.content_hash);
  EXPECT_TRUE(read(ft.dir / "run.json")["inputs"].contains(ckpt.string()));

  const auto ev = invoke({"eval", "--ckpt", (ft.dir / "best.ckpt").string(), "--input",
                          (data / "downstream.jsonl").string(), "--split", (data / "split.json").string()},
                         tmp / "runs");
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(read(ev.dir / "report.json")["mean"], report["mean"]);

  const auto in = invoke({"inspect", "--ckpt", ckpt.string()}, tmp / "runs");
  ASSERT_EQ(in.code, 0) << in.err;
  EXPECT_EQ(read(in.dir / "summary.json")["content_hash"], ck.content_hash);
}

TEST(Cli, GradcheckPassesAndExitsZero) {
  fixture::TempDir tmp("cli-grad");
  const auto r = invoke({"gradcheck", "--model", "gin", "--precision", "double"}, tmp.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = read(r.dir / "report.json");
  EXPECT_LT(report["max_rel_error"].get<double>(), 1e-4);
  EXPECT_TRUE(report["passed"].get<bool>());
  EXPECT_NE(r.out.find("max_rel_error="), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  fixture::TempDir tmp("cli-usage");
  EXPECT_EQ(invoke({"frobnicate"}, tmp.path()).code, 1);
  EXPECT_EQ(invoke({"split", "--input", corpus(), "--rule", "alphabetical"}, tmp.path()).code, 1);
  EXPECT_EQ(invoke({"gradcheck", "--precision", "single"}, tmp.path()).code, 1);
  const auto r = invoke({"pretrain", "--task", "infomax", "--input", corpus()}, tmp.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("pregraph: error=ConfigError reason=\"", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  EXPECT_EQ(invoke({"parse", "--input", corpus(), "--set", "model.width"}, tmp.path()).code, 1);
}

TEST(Cli, DataErrorsExitTwo) {
  fixture::TempDir tmp("cli-data");
  EXPECT_EQ(invoke({"parse", "--input", (tmp / "missing.csv").string()}, tmp / "runs").code, 2);
  std::ofstream(tmp / "bad.csv") << "smiles,t\nC(C,1\n";
  const auto r = invoke({"parse", "--input", (tmp / "bad.csv").string()}, tmp / "runs");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error=DataError"), std::string::npos) << r.err;
  std::ofstream(tmp / "junk.ckpt") << "garbage";
  EXPECT_EQ(invoke({"inspect", "--ckpt", (tmp / "junk.ckpt").string()}, tmp / "runs").code, 2);
}

TEST(Cli, FailedRunsRecordTheError) {
  fixture::TempDir tmp("cli-fail");
  const auto r = invoke({"parse", "--input", (tmp / "missing.csv").string()}, tmp / "runs");
  ASSERT_EQ(r.code, 2);
  fs::path dir;
  for (const auto& e : fs::directory_iterator(tmp / "runs")) dir = e.path();
  const auto rec = read(dir / "run.json");
  EXPECT_EQ(rec["status"], "failed");
  EXPECT_EQ(rec["exit_code"], 2);
  EXPECT_EQ(rec["error"]["class"], "DataError");
}

TEST(Cli, DivergenceExitsThree) {
  fixture::TempDir tmp("cli-diverge");
  const auto data = transfer_data(tmp);
  const auto r = invoke(with({"finetune", "--input", (data / "downstream.jsonl").string(), "--split",
                              (data / "split.json").string(), "--set", "train.epochs=2", "--set", "train.lr=1e30"},
                             kSmall),
                        tmp / "runs");
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("error=DivergenceError"), std::string::npos) << r.err;
}

TEST(Cli, SupervisedPretrainLeakageGate) {
  fixture::TempDir tmp("cli-leak");
  const auto data = transfer_data(tmp);
  const auto down = data / "downstream.jsonl", split = data / "split.json";
  // Missing the exclusion flags is refused outright.
  const auto bare = invoke({"pretrain", "--task", "supervised", "--input", (data / "pretrain.jsonl").string()},
                           tmp / "runs");
  EXPECT_EQ(bare.code, 2);
  EXPECT_NE(bare.err.find("error=LeakageError"), std::string::npos) << bare.err;

  // Pre-training data that includes a downstream test graph is refused.
  auto pre = io::read_dataset(data / "pretrain.jsonl");
  const auto d = io::read_dataset(down);
  const auto s = SplitAssignment::from_json(read(split));
  auto leaked = d.graphs[s.test.front()];
  leaked.labels.assign(pre.num_tasks(), 1);
  pre.graphs.push_back(leaked);
  io::write_dataset(tmp / "leaky.jsonl", pre);
  const auto r = invoke(with({"pretrain", "--task", "supervised", "--input", (tmp / "leaky.jsonl").string(),
                              "--exclude", down.string(), "--exclude-split", split.string(), "--set",
                              "train.epochs=1"},
                             kSmall),
                        tmp / "runs");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error=LeakageError"), std::string::npos) << r.err;

  const auto ok = invoke(with({"pretrain", "--task", "supervised", "--input", (data / "pretrain.jsonl").string(),
                               "--exclude", down.string(), "--exclude-split", split.string(), "--set",
                               "train.epochs=1"},
                              kSmall),
                         tmp / "runs");
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(read(ok.dir / "run.json")["leakage_check"]["overlap"], 0);
}

TEST(Cli, ReplayReproducesArtifacts) {
  fixture::TempDir tmp("cli-replay");
  const auto data = transfer_data(tmp);
  const auto r = invoke(with({"finetune", "--input", (data / "downstream.jsonl").string(), "--split",
                              (data / "split.json").string(), "--set", "train.epochs=2", "--seed", "4"},
                             kSmall),
                        tmp / "first");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto before = read(r.dir / "run.json");
  const auto again = invoke({"replay", (r.dir / "run.json").string()}, tmp / "second");
  ASSERT_EQ(again.code, 0) << again.err;
  const auto after = read(again.dir / "run.json");
  EXPECT_EQ(after["run_hash"], before["run_hash"]);
  EXPECT_EQ(after["artifacts"]["best.ckpt"], before["artifacts"]["best.ckpt"]);
  EXPECT_EQ(slurp(again.dir / "report.json"), slurp(r.dir / "report.json"));
}

TEST(Cli, SeedFlagChangesTheRun) {
  fixture::TempDir tmp("cli-seed");
  const auto a = invoke({"gen", "--kind", "masked-rule", "--size", "64", "--seed", "1"}, tmp.path());
  const auto b = invoke({"gen", "--kind", "masked-rule", "--size", "64", "--seed", "2"}, tmp.path());
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_NE(a.dir, b.dir);
  EXPECT_NE(slurp(a.dir / "dataset.jsonl"), slurp(b.dir / "dataset.jsonl"));
}

TEST(Cli, ConfigFileAndOverridePrecedence) {
  fixture::TempDir tmp("cli-config");
  std::ofstream(tmp / "run.cfg") << "# small\nsplit.train = 0.6\nsplit.valid = 0.2\nsplit.test = 0.2\n";
  const auto r = invoke({"split", "--rule", "random", "--input", corpus(), "--config", (tmp / "run.cfg").string(),
                         "--set", "split.valid=0.3", "--set", "split.test=0.1"},
                        tmp / "runs");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rec = read(r.dir / "run.json");
  EXPECT_EQ(rec["config"]["split.train"], "0.6");
  EXPECT_EQ(rec["config"]["split.valid"], "0.3");
}

TEST(Cli, OutputRootFromEnvironment) {
  fixture::TempDir tmp("cli-env");
  const auto cmd = "PREGRAPH_OUT=" + tmp.path().string() + " " + PREGRAPH_CLI +
                   " gen --kind masked-rule --size 64 > /dev/null 2>&1";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  std::size_t runs = 0;
  for (const auto& e : fs::directory_iterator(tmp.path())) runs += fs::exists(e.path() / "run.json");
  EXPECT_EQ(runs, 1u);
  const auto bad = "PREGRAPH_OUT=" + tmp.path().string() + " " + PREGRAPH_CLI + " split > /dev/null 2>&1";
  EXPECT_EQ(WEXITSTATUS(std::system(bad.c_str())), 1);
}
