#pragma once

// Synthetic molecule-vocabulary benchmarks with planted regularities.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "pregraph/chem.hpp"
#include "pregraph/error.hpp"
#include "pregraph/graph.hpp"
#include "pregraph/io.hpp"
#include "pregraph/rng.hpp"
#include "pregraph/split.hpp"
#include "pregraph/vocab.hpp"

namespace pregraph::bench {

enum class Kind { context_classes, masked_rule, transfer };

inline Kind parse_kind(const std::string& s) {
  if (s == "context-classes") return Kind::context_classes;
  if (s == "masked-rule") return Kind::masked_rule;
  if (s == "transfer") return Kind::transfer;
  throw ConfigError("unknown benchmark kind '" + s + "'");
}

inline constexpr std::size_t kMinSize = 64;

namespace detail {

class MolBuilder {
 public:
  MolBuilder() { g_.vocab = molecule_vocab(); }

  int atom(int z) {
    g_.node_attrs.push_back({molecule::atom_index(z), molecule::kChiralUnspecified});
    degree_.push_back(0);
    return g_.num_nodes++;
  }
  void bond(int a, int b, int type = molecule::kBondSingle) {
    g_.edges.push_back({a, b, {type, molecule::kDirNone}});
    ++degree_[a];
    ++degree_[b];
  }
  /// Copies `frag` in and bonds its atom 0 to `at`; returns the offset of the copy.
  int graft(const AttributedGraph& frag, int at) {
    const int off = g_.num_nodes;
    for (const auto& a : frag.node_attrs) {
      g_.node_attrs.push_back(a);
      degree_.push_back(0);
      ++g_.num_nodes;
    }
    for (const auto& e : frag.edges) {
      g_.edges.push_back({e.u + off, e.v + off, e.attrs});
      ++degree_[e.u + off];
      ++degree_[e.v + off];
    }
    bond(at, off);
    return off;
  }
  int degree(int v) const { return degree_[v]; }
  int size() const { return g_.num_nodes; }
  AttributedGraph& graph() { return g_; }

 private:
  AttributedGraph g_;
  std::vector<int> degree_;
};

inline void check_size(std::size_t size) {
  if (size < kMinSize) throw ConfigError("benchmark size must be at least " + std::to_string(kMinSize));
}

inline int random_atom(Rng& rng) {
  static constexpr std::array<int, 8> z{6, 7, 8, 9, 15, 16, 17, 35};
  return z[rng.index(z.size())];
}

/// Even cycle with a chord from every node i = 0 mod 4 to i + 2: degrees 2 and 3, triangles throughout.
inline AttributedGraph ring_rich(Rng& rng) {
  const int n = 12 + 4 * static_cast<int>(rng.index(3));
  MolBuilder m;
  for (int i = 0; i < n; ++i) m.atom(random_atom(rng));
  for (int i = 0; i < n; ++i) m.bond(i, (i + 1) % n);
  for (int i = 0; i < n; i += 4) m.bond(i, i + 2);
  return std::move(m.graph());
}

/// Path backbone where every backbone atom carries one or two leaves.
inline AttributedGraph branched_tree(Rng& rng) {
  const int spine = 5 + static_cast<int>(rng.index(4));
  MolBuilder m;
  for (int i = 0; i < spine; ++i) {
    m.atom(random_atom(rng));
    if (i) m.bond(i - 1, i);
  }
  for (int i = 0; i < spine; ++i) {
    const int leaves = 1 + static_cast<int>(rng.index(2));
    for (int l = 0; l < leaves; ++l) m.bond(i, m.atom(random_atom(rng)));
  }
  return std::move(m.graph());
}

}  // namespace detail

/// Two structural classes: ring-rich graphs without degree-1 atoms (label 0)
/// and branched trees (label 1). Atoms are drawn uniformly from C, N, O, F,
/// P, S, Cl and Br; bonds are single.
inline io::Dataset context_classes(std::size_t size, std::uint64_t seed) {
  detail::check_size(size);
  Rng rng(mix_seed(seed, 0xc0));
  io::Dataset ds;
  ds.task_names = {"branched"};
  ds.provenance = "planted:context-classes size=" + std::to_string(size) + " seed=" + std::to_string(seed);
  for (std::size_t i = 0; i < size; ++i) {
    const int cls = static_cast<int>(i % 2);
    auto g = cls ? detail::branched_tree(rng) : detail::ring_rich(rng);
    g.labels = {cls};
    ds.graphs.push_back(std::move(g));
  }
  return ds;
}

/// Label of an atom in the masked-rule benchmark: its degree decides the element.
inline int masked_rule_atomic_number(int degree) {
  switch (degree) {
    case 1: return 6;
    case 2: return 7;
    default: return 8;
  }
}

/// Random trees with maximum degree 3 whose atom types follow
/// masked_rule_atomic_number(degree).
inline io::Dataset masked_rule(std::size_t size, std::uint64_t seed) {
  detail::check_size(size);
  Rng rng(mix_seed(seed, 0x3a));
  io::Dataset ds;
  ds.provenance = "planted:masked-rule size=" + std::to_string(size) + " seed=" + std::to_string(seed);
  for (std::size_t i = 0; i < size; ++i) {
    const int n = 8 + static_cast<int>(rng.index(13));
    std::vector<int> deg(1, 0);
    std::vector<std::pair<int, int>> edges;
    for (int v = 1; v < n; ++v) {
      // Prefer attaching to atoms that already have a neighbor, which keeps
      // the three degree classes close to balanced.
      std::vector<int> open, inner;
      for (int u = 0; u < v; ++u) {
        if (deg[u] < 3) open.push_back(u);
        if (deg[u] >= 1 && deg[u] < 3) inner.push_back(u);
      }
      const auto& pool = !inner.empty() && rng.bernoulli(0.7) ? inner : open;
      const int u = pool[rng.index(pool.size())];
      edges.emplace_back(u, v);
      ++deg[u];
      deg.push_back(1);
    }
    detail::MolBuilder m;
    for (int v = 0; v < n; ++v) m.atom(masked_rule_atomic_number(deg[v]));
    for (auto [u, v] : edges) m.bond(u, v);
    ds.graphs.push_back(std::move(m.graph()));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Transfer benchmark

/// Motif library: motif i belongs to family i % 4; motifs 0-7 form set A
/// (downstream train), 8-15 set B (downstream valid and test). Within a
/// family one set B motif resembles its set A relatives and one does not.
inline constexpr std::array<std::string_view, 16> kMotifs = {
    "c1ccccc1", "C1CCNCC1", "C(=O)O",    "C#N",     "c1ccncc1", "C1CCOC1", "S(=O)(=O)N", "C(F)(F)F",
    "c1ccsc1",  "C1CCCCC1", "P(=O)(O)O", "c1ccoc1", "C1CC1",    "N(=O)=O", "C(Cl)Cl",    "B(O)O"};
inline constexpr int kFamilies = 4;
inline constexpr int family_of(int motif) { return motif % kFamilies; }
inline constexpr int kDownstreamTasks = 2;  // families 0 and 1

struct TransferOptions {
  std::size_t downstream = 0;
  std::size_t pretrain = 0;
  double valid_frac = 0.2;
  double test_frac = 0.2;
};

struct TransferData {
  io::Dataset pretrain;
  io::Dataset downstream;
  SplitAssignment split;
  std::vector<std::vector<int>> motifs;  // motif ids per downstream graph
};

namespace detail {

inline const std::vector<AttributedGraph>& motif_graphs() {
  static const std::vector<AttributedGraph> lib = [] {
    std::vector<AttributedGraph> out;
    for (auto s : kMotifs) out.push_back(chem::parse_smiles(s));
    return out;
  }();
  return lib;
}

/// Carbon backbone tree plus 1-3 grafted motifs drawn from `pool`.
inline AttributedGraph motif_molecule(Rng& rng, std::span<const int> pool, std::vector<int>& used) {
  MolBuilder m;
  const int backbone = 3 + static_cast<int>(rng.index(6));
  for (int i = 0; i < backbone; ++i) {
    m.atom(6);
    if (i) {
      int u;
      do {
        u = static_cast<int>(rng.index(static_cast<std::size_t>(i)));
      } while (m.degree(u) >= 3);
      m.bond(u, i);
    }
  }
  const int k = 1 + static_cast<int>(rng.index(3));
  used.clear();
  for (int j = 0; j < k; ++j) {
    const int motif = pool[rng.index(pool.size())];
    int at;
    do {
      at = static_cast<int>(rng.index(static_cast<std::size_t>(backbone)));
    } while (m.degree(at) >= 4);
    m.graft(motif_graphs()[motif], at);
    used.push_back(motif);
  }
  return std::move(m.graph());
}

}  // namespace detail

/// Pre-training graphs use all motifs and carry the 4 family labels.
/// Downstream graphs carry family 0/1 labels; train uses set A and valid/test
/// use set B, so test motifs never appear in downstream train.
inline TransferData transfer(const TransferOptions& opt, std::uint64_t seed) {
  detail::check_size(opt.downstream);
  detail::check_size(opt.pretrain);
  Rng rng(mix_seed(seed, 0x7f));
  TransferData out;
  const std::vector<int> set_a{0, 1, 2, 3, 4, 5, 6, 7}, set_b{8, 9, 10, 11, 12, 13, 14, 15};
  std::vector<int> all(16);
  for (int i = 0; i < 16; ++i) all[i] = i;

  auto& ds = out.downstream;
  ds.provenance = "planted:transfer downstream=" + std::to_string(opt.downstream) + " seed=" + std::to_string(seed);
  for (int f = 0; f < kDownstreamTasks; ++f) ds.task_names.push_back("family" + std::to_string(f));
  const auto n_test = static_cast<std::size_t>(std::llround(opt.test_frac * static_cast<double>(opt.downstream)));
  const auto n_valid = static_cast<std::size_t>(std::llround(opt.valid_frac * static_cast<double>(opt.downstream)));
  const auto n_train = opt.downstream - n_test - n_valid;
  std::vector<int> used;
  for (std::size_t i = 0; i < opt.downstream; ++i) {
    const bool in_train = i < n_train;
    auto g = detail::motif_molecule(rng, in_train ? set_a : set_b, used);
    for (int f = 0; f < kDownstreamTasks; ++f) {
      bool has = false;
      for (int m : used) has = has || family_of(m) == f;
      g.labels.push_back(has ? 1 : 0);
    }
    (in_train ? out.split.train : i < n_train + n_valid ? out.split.valid : out.split.test).push_back(i);
    out.motifs.push_back(used);
    ds.graphs.push_back(std::move(g));
  }
  out.split.rule = "motif";
  out.split.seed = seed;
  out.split.fracs = {1.0 - opt.valid_frac - opt.test_frac, opt.valid_frac, opt.test_frac};

  std::unordered_set<std::string> test_hashes;
  for (auto i : out.split.test) test_hashes.insert(io::structure_hash(ds.graphs[i]));

  auto& pt = out.pretrain;
  pt.provenance = "planted:transfer pretrain=" + std::to_string(opt.pretrain) + " seed=" + std::to_string(seed);
  for (int f = 0; f < kFamilies; ++f) pt.task_names.push_back("family" + std::to_string(f));
  while (pt.graphs.size() < opt.pretrain) {
    auto g = detail::motif_molecule(rng, all, used);
    if (test_hashes.count(io::structure_hash(g))) continue;
    for (int f = 0; f < kFamilies; ++f) {
      bool has = false;
      for (int m : used) has = has || family_of(m) == f;
      g.labels.push_back(has ? 1 : 0);
    }
    pt.graphs.push_back(std::move(g));
  }
  return out;
}

inline TransferData transfer(std::size_t size, std::uint64_t seed) {
  return transfer(TransferOptions{size, 2 * size}, seed);
}

}  // namespace pregraph::bench
