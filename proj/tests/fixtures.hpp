#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "pregraph/graph.hpp"
#include "pregraph/rng.hpp"
#include "pregraph/vocab.hpp"

namespace fixture {

using pregraph::AttributedGraph;

inline AttributedGraph carbon_graph(int n, const std::vector<std::pair<int, int>>& edges) {
  AttributedGraph g;
  g.vocab = pregraph::molecule_vocab();
  g.num_nodes = n;
  g.node_attrs.assign(n, {pregraph::molecule::atom_index(6), 0});
  for (auto [u, v] : edges) g.edges.push_back({u, v, {pregraph::molecule::kBondSingle, pregraph::molecule::kDirNone}});
  return g;
}

inline AttributedGraph path(int n) {
  std::vector<std::pair<int, int>> e;
  for (int i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return carbon_graph(n, e);
}

inline AttributedGraph star(int leaves) {
  std::vector<std::pair<int, int>> e;
  for (int i = 1; i <= leaves; ++i) e.emplace_back(0, i);
  return carbon_graph(leaves + 1, e);
}

inline AttributedGraph cycle(int n) {
  std::vector<std::pair<int, int>> e;
  for (int i = 0; i < n; ++i) e.emplace_back(i, (i + 1) % n);
  return carbon_graph(n, e);
}

/// Erdos-Renyi graph with random atom and bond categories.
inline AttributedGraph random_graph(int n, double p, std::uint64_t seed) {
  pregraph::Rng rng(seed);
  AttributedGraph g;
  g.vocab = pregraph::molecule_vocab();
  g.num_nodes = n;
  for (int v = 0; v < n; ++v) g.node_attrs.push_back({static_cast<int>(rng.index(8)), static_cast<int>(rng.index(4))});
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v)
      if (rng.bernoulli(p)) g.edges.push_back({u, v, {static_cast<int>(rng.index(4)), static_cast<int>(rng.index(3))}});
  return g;
}

/// Connected random graph: a random tree plus extra edges.
inline AttributedGraph random_connected(int n, int extra, std::uint64_t seed) {
  pregraph::Rng rng(seed);
  auto g = random_graph(n, 0.0, seed ^ 0x55);
  for (int v = 1; v < n; ++v) {
    g.edges.push_back({static_cast<int>(rng.index(static_cast<std::size_t>(v))), v,
                       {static_cast<int>(rng.index(4)), static_cast<int>(rng.index(3))}});
  }
  for (int i = 0; i < extra; ++i) {
    const int u = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
    const int v = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
    bool dup = u == v;
    for (const auto& e : g.edges) dup = dup || (e.u == u && e.v == v) || (e.u == v && e.v == u);
    if (!dup) g.edges.push_back({u, v, {pregraph::molecule::kBondSingle, pregraph::molecule::kDirNone}});
  }
  return g;
}

inline std::vector<int> random_perm(int n, std::uint64_t seed) {
  pregraph::Rng rng(seed);
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  rng.shuffle(p);
  return p;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() /
              ("pregraph-" + tag + "-" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixture
