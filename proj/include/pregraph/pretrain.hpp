#pragma once

// Pre-training objectives: context prediction, attribute masking, edge
// prediction and graph-level supervised multi-task learning.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <vector>

#include "pregraph/autodiff.hpp"
#include "pregraph/error.hpp"
#include "pregraph/gnn.hpp"
#include "pregraph/graph.hpp"
#include "pregraph/rng.hpp"

namespace pregraph {

namespace detail {

template <class Enc, class T>
Var<T> encode_nodes(Enc& enc, Tape<T>& tape, const GraphBatch& b, const TrainContext* train) {
  if constexpr (std::is_const_v<Enc>) {
    (void)train;
    return enc.node_embeddings(tape, b);
  } else {
    return enc.node_embeddings(tape, b, train);
  }
}

template <class Enc, class T>
Var<T> encode_graphs(Enc& enc, Tape<T>& tape, const GraphBatch& b, const TrainContext* train) {
  return enc.readout(tape, encode_nodes(enc, tape, b, train), b);
}

}  // namespace detail

/// Loss plus the raw logits and 0/1 labels it was computed from.
template <class T>
struct BinaryOutput {
  Var<T> loss;
  Var<T> logits;
  std::vector<int> labels;
};

/// Fraction of logits whose sign agrees with the label (logit > 0 means 1).
template <class T>
double binary_accuracy(const Tensor<T>& logits, std::span<const int> labels) {
  if (labels.size() != logits.size() || labels.empty()) throw InvalidArgument("binary_accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += (logits[i] > T(0)) == (labels[i] == 1);
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Context prediction

struct ContextConfig {
  int k = 5;
  int r1 = 4;
  int r2 = 7;
  int context_layers = 3;
  int negative_ratio = 1;
  int centers_per_graph = 1;

  void validate() const {
    if (k < 1) throw ConfigError("context.k must be >= 1");
    if (r1 < 0 || r1 >= r2) throw ConfigError("context radii need 0 <= r1 < r2");
    if (r1 >= k) throw ConfigError("context.r1 must be smaller than context.k");
    if (context_layers < 1) throw ConfigError("context.layers must be >= 1");
    if (negative_ratio < 0) throw ConfigError("context.negative_ratio must be >= 0");
    if (centers_per_graph < 1) throw ConfigError("context.centers must be >= 1");
  }
};

struct ContextSample {
  AttributedGraph neighborhood;  // center is local node 0
  AttributedGraph context;
  std::vector<int> anchors;      // local ids in `context`
  std::size_t source_graph = 0;
  int center = 0;                // parent node id
};

struct ContextPair {
  std::size_t neighborhood = 0;  // sample index
  std::size_t context = 0;       // sample index
  int label = 0;
};

struct ContextBatch {
  std::vector<ContextSample> samples;
  std::vector<ContextPair> pairs;
};

/// Picks centers with a usable neighborhood and context ring, then pairs each
/// neighborhood with its own context (label 1) and with `negative_ratio`
/// contexts drawn from other graphs (label 0). `allow_negative(i, j)` can
/// restrict which graph j may supply negatives for graph i.
inline ContextBatch build_context_pairs(std::span<const AttributedGraph* const> graphs, Rng& rng,
                                        const ContextConfig& cfg,
                                        const std::function<bool(std::size_t, std::size_t)>& allow_negative = {}) {
  cfg.validate();
  if (graphs.size() == 1 && cfg.negative_ratio > 0) {
    throw ConfigError("negative sampling needs at least two graphs per batch");
  }
  ContextBatch out;
  std::vector<std::vector<std::size_t>> by_graph(graphs.size());
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = *graphs[gi];
    if (g.num_nodes == 0) continue;
    const Adjacency adj(g);
    std::vector<int> order(static_cast<std::size_t>(g.num_nodes));
    for (int v = 0; v < g.num_nodes; ++v) order[v] = v;
    rng.shuffle(order);
    int taken = 0;
    for (int v : order) {
      if (taken == cfg.centers_per_graph) break;
      auto ring = context_ring(g, adj, v, cfg.r1, cfg.r2, cfg.k);
      if (ring.anchors.empty()) continue;
      auto nb = khop_neighborhood(g, adj, v, cfg.k);
      ContextSample s;
      s.neighborhood = to_graph(g, nb, 0);
      s.neighborhood.labels.clear();
      s.context = to_graph(g, ring);
      s.context.labels.clear();
      s.anchors = std::move(ring.anchors);
      s.source_graph = gi;
      s.center = v;
      by_graph[gi].push_back(out.samples.size());
      out.samples.push_back(std::move(s));
      ++taken;
    }
  }
  std::vector<std::size_t> contributing;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    if (!by_graph[gi].empty()) contributing.push_back(gi);
  }
  if (cfg.negative_ratio > 0 && contributing.size() < 2) return {};
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    out.pairs.push_back({i, i, 1});
    if (cfg.negative_ratio == 0) continue;
    const std::size_t gi = out.samples[i].source_graph;
    std::vector<std::size_t> others;
    for (std::size_t gj : contributing) {
      if (gj != gi && (!allow_negative || allow_negative(gi, gj))) others.push_back(gj);
    }
    if (others.empty()) continue;
    for (int r = 0; r < cfg.negative_ratio; ++r) {
      const auto& pool = by_graph[others[rng.index(others.size())]];
      out.pairs.push_back({i, pool[rng.index(pool.size())], 0});
    }
  }
  return out;
}

inline ContextBatch build_context_pairs(std::span<const AttributedGraph> graphs, Rng& rng, const ContextConfig& cfg,
                                        const std::function<bool(std::size_t, std::size_t)>& allow_negative = {}) {
  std::vector<const AttributedGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  return build_context_pairs(std::span<const AttributedGraph* const>(ptrs), rng, cfg, allow_negative);
}

/// Encoder for context rings: same architecture and width as the main encoder.
inline EncoderConfig context_encoder_config(const EncoderConfig& main, const ContextConfig& cfg) {
  EncoderConfig c = main;
  c.layers = cfg.context_layers;
  c.readout = Readout::mean;
  return c;
}

/// Mean binary cross-entropy of sigma(h_center . c_context) against the pair labels,
/// where c is the average context-encoder embedding over the anchor nodes.
template <class Main, class Ctx, class T>
BinaryOutput<T> context_loss(Main& main, Ctx& ctx, const ContextBatch& batch, Tape<T>& tape,
                             const TrainContext* train = nullptr) {
  if (batch.pairs.empty()) throw InvalidArgument("context_loss: empty pair list");
  std::vector<const AttributedGraph*> nbs, cxs;
  for (const auto& s : batch.samples) {
    nbs.push_back(&s.neighborhood);
    cxs.push_back(&s.context);
  }
  const auto nb = GraphBatch::build(std::span<const AttributedGraph* const>(nbs));
  const auto cx = GraphBatch::build(std::span<const AttributedGraph* const>(cxs));
  auto h = ops::gather_rows(detail::encode_nodes(main, tape, nb, train), nb.centers);
  auto hx = detail::encode_nodes(ctx, tape, cx, train);
  std::vector<int> rows, seg;
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    for (int a : batch.samples[i].anchors) {
      rows.push_back(cx.graph_offset[i] + a);
      seg.push_back(static_cast<int>(i));
    }
  }
  auto c = ops::segment_mean(ops::gather_rows(hx, std::move(rows)), std::move(seg), batch.samples.size());
  std::vector<int> pn, pc;
  BinaryOutput<T> out;
  Tensor<T> y(batch.pairs.size(), 1);
  for (std::size_t i = 0; i < batch.pairs.size(); ++i) {
    pn.push_back(static_cast<int>(batch.pairs[i].neighborhood));
    pc.push_back(static_cast<int>(batch.pairs[i].context));
    out.labels.push_back(batch.pairs[i].label);
    y[i] = static_cast<T>(batch.pairs[i].label);
  }
  out.logits = ops::row_dot(ops::gather_rows(h, std::move(pn)), ops::gather_rows(c, std::move(pc)));
  out.loss = ops::bce_with_logits(out.logits, std::move(y));
  return out;
}

// ---------------------------------------------------------------------------
// Attribute masking

enum class MaskTarget { nodes, edges };

inline MaskTarget parse_mask_target(const std::string& s) {
  if (s == "nodes" || s == "node" || s == "node-attrs") return MaskTarget::nodes;
  if (s == "edges" || s == "edge" || s == "edge-attrs") return MaskTarget::edges;
  throw InvalidArgument("unknown mask target '" + s + "'");
}
inline std::string to_string(MaskTarget t) { return t == MaskTarget::nodes ? "nodes" : "edges"; }

struct MaskConfig {
  double rate = 0.15;
  MaskTarget target = MaskTarget::nodes;
  int slot = 0;

  void validate() const {
    if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("mask.rate must be in (0, 1)");
    if (slot < 0) throw ConfigError("mask.slot must be >= 0");
  }
};

/// max(1, round(rate * count)), halves rounded away from zero.
inline std::size_t mask_count(std::size_t count, double rate) {
  const auto m = static_cast<std::size_t>(std::llround(rate * static_cast<double>(count)));
  return std::min(count, std::max<std::size_t>(1, m));
}

struct MaskedGraph {
  AttributedGraph graph;
  MaskTarget target = MaskTarget::nodes;
  std::vector<int> positions;               // node or edge ids, ascending
  std::vector<int> categories;              // original category of the predicted slot
  std::vector<std::vector<int>> bit_targets;  // protein edges: the full relation vector
};

/// True when edge targets are predicted per bit rather than as one category.
inline bool bitwise_edge_targets(const Vocab& v) { return v == protein_vocab(); }

inline MaskedGraph apply_mask(const AttributedGraph& g, const MaskConfig& cfg, Rng& rng) {
  cfg.validate();
  const bool nodes = cfg.target == MaskTarget::nodes;
  const std::size_t count = nodes ? static_cast<std::size_t>(g.num_nodes) : g.edges.size();
  if (count == 0) throw InvalidArgument(nodes ? "apply_mask: graph has no nodes" : "apply_mask: graph has no edges");
  const auto& slots = nodes ? g.vocab.node_slots : g.vocab.edge_slots;
  if (static_cast<std::size_t>(cfg.slot) >= slots.size()) throw InvalidArgument("apply_mask: slot out of range");
  auto picks = rng.sample_without_replacement(count, mask_count(count, cfg.rate));
  std::sort(picks.begin(), picks.end());
  MaskedGraph out;
  out.graph = g;
  out.target = cfg.target;
  const bool bits = !nodes && bitwise_edge_targets(g.vocab);
  for (std::size_t p : picks) {
    out.positions.push_back(static_cast<int>(p));
    auto& attrs = nodes ? out.graph.node_attrs[p] : out.graph.edges[p].attrs;
    if (bits) {
      out.bit_targets.push_back(attrs);
    } else {
      out.categories.push_back(attrs[cfg.slot]);
    }
    for (std::size_t s = 0; s < attrs.size(); ++s) {
      attrs[s] = nodes ? g.vocab.node_mask(s) : g.vocab.edge_mask(s);
    }
  }
  return out;
}

/// Output width of the prediction head for a masking configuration.
inline std::size_t mask_head_dim(const Vocab& v, const MaskConfig& cfg) {
  if (cfg.target == MaskTarget::nodes) return static_cast<std::size_t>(v.node_real(cfg.slot));
  if (bitwise_edge_targets(v)) return v.edge_slots.size();
  return static_cast<std::size_t>(v.edge_real(cfg.slot));
}

template <class T>
struct MaskOutput {
  Var<T> loss;
  Var<T> logits;
  std::vector<int> classes;  // categorical targets, one per logits row
  Tensor<T> bits;            // bitwise targets (protein edges)
};

/// Prediction accuracy for masked targets: argmax match per row, or per-bit
/// sign agreement for bitwise targets.
template <class T>
double mask_accuracy(const MaskOutput<T>& out) {
  const auto& L = out.logits.value();
  if (!out.classes.empty()) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < L.rows(); ++i) {
      const T* r = L.row(i);
      hit += static_cast<int>(std::max_element(r, r + L.cols()) - r) == out.classes[i];
    }
    return static_cast<double>(hit) / static_cast<double>(L.rows());
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < L.size(); ++i) hit += (L[i] > T(0)) == (out.bits[i] > T(0.5));
  return static_cast<double>(hit) / static_cast<double>(L.size());
}

/// Node targets: softmax cross-entropy of head(h_v). Edge targets: head(h_u + h_v),
/// softmax over bond categories or per-bit bce for relation vectors.
template <class Enc, class Head, class T>
MaskOutput<T> masking_loss(Enc& enc, Head& head, std::span<const MaskedGraph> batch, Tape<T>& tape,
                           const TrainContext* train = nullptr) {
  if (batch.empty()) throw InvalidArgument("masking_loss: empty batch");
  std::vector<const AttributedGraph*> gs;
  for (const auto& m : batch) gs.push_back(&m.graph);
  const auto b = GraphBatch::build(std::span<const AttributedGraph* const>(gs));
  auto h = detail::encode_nodes(enc, tape, b, train);
  const MaskTarget target = batch.front().target;
  MaskOutput<T> out;
  Var<T> rep;
  if (target == MaskTarget::nodes) {
    std::vector<int> rows;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i].target != target) throw InvalidArgument("masking_loss: mixed mask targets");
      for (std::size_t k = 0; k < batch[i].positions.size(); ++k) {
        rows.push_back(b.graph_offset[i] + batch[i].positions[k]);
        out.classes.push_back(batch[i].categories[k]);
      }
    }
    rep = ops::gather_rows(h, std::move(rows));
  } else {
    std::vector<int> us, vs;
    std::vector<std::vector<int>> bit_rows;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i].target != target) throw InvalidArgument("masking_loss: mixed mask targets");
      for (std::size_t k = 0; k < batch[i].positions.size(); ++k) {
        const auto& e = batch[i].graph.edges[batch[i].positions[k]];
        us.push_back(b.graph_offset[i] + e.u);
        vs.push_back(b.graph_offset[i] + e.v);
        if (batch[i].bit_targets.empty()) {
          out.classes.push_back(batch[i].categories[k]);
        } else {
          bit_rows.push_back(batch[i].bit_targets[k]);
        }
      }
    }
    rep = ops::add(ops::gather_rows(h, std::move(us)), ops::gather_rows(h, std::move(vs)));
    if (!bit_rows.empty()) {
      out.bits = Tensor<T>(bit_rows.size(), bit_rows.front().size());
      for (std::size_t r = 0; r < bit_rows.size(); ++r) {
        for (std::size_t c = 0; c < bit_rows[r].size(); ++c) out.bits(r, c) = bit_rows[r][c] == 1 ? T(1) : T(0);
      }
    }
  }
  if (out.classes.empty() && out.bits.size() == 0) throw InvalidArgument("masking_loss: no targets");
  out.logits = head.apply(tape, rep);
  out.loss = out.classes.empty() ? ops::bce_with_logits(out.logits, out.bits)
                                 : ops::softmax_cross_entropy(out.logits, out.classes);
  return out;
}

// ---------------------------------------------------------------------------
// Edge prediction

/// Samples `count` node pairs that are not edges of `g`, uniformly with
/// replacement. Returns nothing for graphs without non-edges.
inline std::vector<std::pair<int, int>> sample_non_edges(const AttributedGraph& g, std::size_t count, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(g.num_nodes);
  const std::uint64_t pairs = n * (n - 1) / 2;
  if (n < 2 || pairs <= g.edges.size()) return {};
  std::unordered_set<std::uint64_t> present;
  for (const auto& e : g.edges) {
    const auto a = static_cast<std::uint64_t>(std::min(e.u, e.v));
    const auto b = static_cast<std::uint64_t>(std::max(e.u, e.v));
    present.insert(a * n + b);
  }
  std::vector<std::pair<int, int>> out;
  out.reserve(count);
  if (pairs - g.edges.size() < g.edges.size()) {
    std::vector<std::pair<int, int>> pool;
    for (int a = 0; a < g.num_nodes; ++a) {
      for (int b = a + 1; b < g.num_nodes; ++b) {
        if (!present.count(static_cast<std::uint64_t>(a) * n + b)) pool.emplace_back(a, b);
      }
    }
    for (std::size_t i = 0; i < count; ++i) out.push_back(pool[rng.index(pool.size())]);
    return out;
  }
  while (out.size() < count) {
    auto a = static_cast<int>(rng.index(n));
    auto b = static_cast<int>(rng.index(n));
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (present.count(static_cast<std::uint64_t>(a) * n + b)) continue;
    out.emplace_back(a, b);
  }
  return out;
}

/// bce on sigma(h_u . h_v): every edge is a positive, and as many sampled
/// non-edges per graph are negatives. Graphs without edges or non-edges are skipped.
template <class Enc, class T>
BinaryOutput<T> edgepred_loss(Enc& enc, std::span<const AttributedGraph* const> graphs, Rng& rng, Tape<T>& tape,
                              const TrainContext* train = nullptr) {
  std::vector<const AttributedGraph*> used;
  std::vector<std::vector<std::pair<int, int>>> negatives;
  for (const auto* g : graphs) {
    if (g->edges.empty()) continue;
    auto neg = sample_non_edges(*g, g->edges.size(), rng);
    if (neg.empty()) continue;
    used.push_back(g);
    negatives.push_back(std::move(neg));
  }
  if (used.empty()) throw InvalidArgument("edgepred_loss: no graph with both edges and non-edges");
  const auto b = GraphBatch::build(std::span<const AttributedGraph* const>(used));
  auto h = detail::encode_nodes(enc, tape, b, train);
  std::vector<int> us, vs;
  BinaryOutput<T> out;
  for (std::size_t i = 0; i < used.size(); ++i) {
    const int off = b.graph_offset[i];
    for (const auto& e : used[i]->edges) {
      us.push_back(off + e.u);
      vs.push_back(off + e.v);
      out.labels.push_back(1);
    }
    for (const auto& [u, v] : negatives[i]) {
      us.push_back(off + u);
      vs.push_back(off + v);
      out.labels.push_back(0);
    }
  }
  Tensor<T> y(out.labels.size(), 1);
  for (std::size_t i = 0; i < out.labels.size(); ++i) y[i] = static_cast<T>(out.labels[i]);
  out.logits = ops::row_dot(ops::gather_rows(h, std::move(us)), ops::gather_rows(h, std::move(vs)));
  out.loss = ops::bce_with_logits(out.logits, std::move(y));
  return out;
}

// ---------------------------------------------------------------------------
// Supervised multi-task

template <class T>
struct SupervisedOutput {
  Var<T> loss;
  Var<T> logits;       // graphs x tasks
  Tensor<T> targets;
  Tensor<T> weights;   // 0 where the label is missing
};

/// Label matrix and mask for a list of graphs with `tasks` ternary labels each.
template <class T>
std::pair<Tensor<T>, Tensor<T>> label_matrix(std::span<const AttributedGraph* const> graphs, std::size_t tasks) {
  Tensor<T> y(graphs.size(), tasks), w(graphs.size(), tasks);
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const auto& labels = graphs[i]->labels;
    if (labels.size() != tasks) throw InvalidArgument("label width does not match task count");
    for (std::size_t t = 0; t < tasks; ++t) {
      if (labels[t] == -1) continue;
      y(i, t) = labels[t] == 1 ? T(1) : T(0);
      w(i, t) = T(1);
    }
  }
  return {std::move(y), std::move(w)};
}

/// Per-task bce on head(h_G), averaged over the non-missing labels in the batch.
template <class Enc, class Head, class T>
SupervisedOutput<T> supervised_loss(Enc& enc, Head& head, std::span<const AttributedGraph* const> graphs,
                                    Tape<T>& tape, const TrainContext* train = nullptr) {
  if (graphs.empty()) throw InvalidArgument("supervised_loss: empty batch");
  SupervisedOutput<T> out;
  std::tie(out.targets, out.weights) = label_matrix<T>(graphs, head.out_dim());
  bool any = false;
  for (T x : out.weights.storage()) any = any || x != T(0);
  if (!any) throw DataError("supervised_loss: batch has no non-missing labels");
  const auto b = GraphBatch::build(graphs);
  out.logits = head.apply(tape, detail::encode_graphs(enc, tape, b, train));
  out.loss = ops::bce_with_logits(out.logits, out.targets, out.weights);
  return out;
}

}  // namespace pregraph
