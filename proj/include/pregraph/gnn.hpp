#pragma once

// Message-passing encoders: input embeddings, GIN (molecule and protein
// variants), GCN and GraphSAGE-mean layers, and mean / mean+center readouts.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "pregraph/autodiff.hpp"
#include "pregraph/error.hpp"
#include "pregraph/graph.hpp"
#include "pregraph/rng.hpp"
#include "pregraph/vocab.hpp"

namespace pregraph {

enum class Architecture { gin, gcn, sage };
enum class Readout { mean, mean_center };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::gin: return "gin";
    case Architecture::gcn: return "gcn";
    case Architecture::sage: return "sage";
  }
  return "?";
}
inline Architecture parse_architecture(const std::string& s) {
  if (s == "gin") return Architecture::gin;
  if (s == "gcn") return Architecture::gcn;
  if (s == "sage" || s == "graphsage") return Architecture::sage;
  throw InvalidArgument("unknown architecture '" + s + "'");
}
inline std::string to_string(Readout r) { return r == Readout::mean ? "mean" : "mean-center"; }
inline Readout parse_readout(const std::string& s) {
  if (s == "mean") return Readout::mean;
  if (s == "mean-center" || s == "mean-concat-center") return Readout::mean_center;
  throw InvalidArgument("unknown readout '" + s + "'");
}

struct EncoderConfig {
  Architecture arch = Architecture::gin;
  int layers = 5;
  int width = 300;
  int mlp_hidden = 600;
  double dropout = 0.0;
  Readout readout = Readout::mean;
  Domain domain = Domain::molecule;

  void validate() const {
    if (layers < 1) throw InvalidArgument("encoder needs at least one layer");
    if (width < 1 || mlp_hidden < 1) throw InvalidArgument("encoder widths must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("dropout must be in [0, 1)");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Several graphs flattened into one disjoint union.
///
/// Arcs are directed: each stored edge contributes u->v and v->u, and every
/// node gets one virtual self-loop arc carrying the self-loop categories.
/// Arc order is local to each graph, so a graph's arithmetic does not depend
/// on what else shares the batch.
struct GraphBatch {
  Vocab vocab;
  std::size_t num_graphs = 0;
  std::size_t num_nodes = 0;
  std::vector<std::vector<int>> node_slots;  // [slot][node]
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<std::vector<int>> arc_slots;   // [slot][arc]
  std::vector<char> self_loop;               // per arc
  std::vector<int> node_graph;               // graph index of each node
  std::vector<int> graph_offset;             // first node of each graph, plus sentinel
  std::vector<int> centers;                  // global node id or -1
  std::vector<int> degree;                   // arcs into each node, self-loop included

  std::size_t num_arcs() const { return src.size(); }

  static GraphBatch build(std::span<const AttributedGraph* const> graphs) {
    if (graphs.empty()) throw InvalidArgument("empty graph batch");
    GraphBatch b;
    b.vocab = graphs.front()->vocab;
    b.num_graphs = graphs.size();
    b.node_slots.resize(b.vocab.node_slots.size());
    b.arc_slots.resize(b.vocab.edge_slots.size());
    int offset = 0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
      const auto& g = *graphs[gi];
      if (g.vocab != b.vocab) throw InvalidArgument("vocab mismatch inside batch");
      b.graph_offset.push_back(offset);
      for (int v = 0; v < g.num_nodes; ++v) {
        for (std::size_t s = 0; s < b.node_slots.size(); ++s) b.node_slots[s].push_back(g.node_attrs[v][s]);
        b.node_graph.push_back(static_cast<int>(gi));
      }
      auto push_arc = [&](int u, int v, const std::vector<int>* attrs) {
        b.src.push_back(offset + u);
        b.dst.push_back(offset + v);
        b.self_loop.push_back(attrs ? 0 : 1);
        for (std::size_t s = 0; s < b.arc_slots.size(); ++s) {
          b.arc_slots[s].push_back(attrs ? (*attrs)[s] : b.vocab.edge_self_loop(s));
        }
      };
      for (const auto& e : g.edges) {
        push_arc(e.u, e.v, &e.attrs);
        push_arc(e.v, e.u, &e.attrs);
      }
      for (int v = 0; v < g.num_nodes; ++v) push_arc(v, v, nullptr);
      b.centers.push_back(g.center ? offset + *g.center : -1);
      offset += g.num_nodes;
    }
    b.graph_offset.push_back(offset);
    b.num_nodes = static_cast<std::size_t>(offset);
    b.degree.assign(b.num_nodes, 0);
    for (int d : b.dst) ++b.degree[d];
    return b;
  }

  static GraphBatch build(std::span<const AttributedGraph> graphs) {
    std::vector<const AttributedGraph*> ptrs;
    ptrs.reserve(graphs.size());
    for (const auto& g : graphs) ptrs.push_back(&g);
    return build(std::span<const AttributedGraph* const>(ptrs));
  }

  static GraphBatch build(const AttributedGraph& g) { return build(std::span<const AttributedGraph>(&g, 1)); }
};

/// Training-time forward options; a null context means evaluation mode.
struct TrainContext {
  Rng* rng = nullptr;
  bool freeze_bn = false;
};

namespace detail {

template <class T>
Tensor<T> glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> w(fan_in, fan_out);
  for (auto& x : w.storage()) x = static_cast<T>(rng.uniform(-a, a));
  return w;
}

template <class T>
Tensor<T> embedding_table(std::size_t rows, std::size_t width, Rng& rng) {
  Tensor<T> w(rows, width);
  for (auto& x : w.storage()) x = static_cast<T>(rng.normal(0.0, 0.02));
  return w;
}

}  // namespace detail

/// Linear map from a representation to logits.
template <class T>
class LinearHead {
 public:
  LinearHead() = default;
  LinearHead(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed, const std::string& prefix = "head")
      : in_(in_dim), out_(out_dim) {
    Rng rng(seed);
    w_ = params_.add(prefix + ".w", detail::glorot<T>(in_dim, out_dim, rng));
    b_ = params_.add(prefix + ".b", Tensor<T>(1, out_dim));
  }

  Var<T> apply(Tape<T>& tape, Var<T> x) { return apply_impl(*this, tape, x); }
  Var<T> apply(Tape<T>& tape, Var<T> x) const { return apply_impl(*this, tape, x); }

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

 private:
  template <class Self>
  static Var<T> apply_impl(Self& self, Tape<T>& tape, Var<T> x) {
    if (x.cols() != self.in_) throw InvalidArgument("head input width mismatch");
    auto y = ops::matmul(x, tape.param(self.params_[self.w_]));
    return ops::add_row(y, tape.param(self.params_[self.b_]));
  }

  std::size_t in_ = 0, out_ = 0;
  ParamStore<T> params_;
  std::size_t w_ = 0, b_ = 0;
};

/// A configured K-layer encoder with its parameters and batch-norm statistics.
template <class T>
class Encoder {
 public:
  struct Inputs {
    Var<T> h0;
    std::vector<Var<T>> edge_features;  // one per layer, rows = arcs
  };

  Encoder() = default;

  Encoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(cfg), vocab_(vocab_for(cfg.domain)) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t d = static_cast<std::size_t>(cfg_.width);
    for (std::size_t s = 0; s < vocab_.node_slots.size(); ++s) {
      node_emb_.push_back(params_.add("node_emb." + std::to_string(s),
                                      detail::embedding_table<T>(static_cast<std::size_t>(vocab_.node_slots[s]), d, rng)));
    }
    if (cfg_.domain == Domain::protein) {
      edge_w_ = params_.add("edge_lin.w", detail::glorot<T>(protein::kEdgeFeatureWidth, d, rng));
      edge_b_ = params_.add("edge_lin.b", Tensor<T>(1, d));
    }
    for (int k = 0; k < cfg_.layers; ++k) {
      const std::string p = "layer" + std::to_string(k) + ".";
      Layer L;
      if (cfg_.domain == Domain::molecule) {
        for (std::size_t s = 0; s < vocab_.edge_slots.size(); ++s) {
          L.edge_emb.push_back(params_.add(p + "edge_emb." + std::to_string(s),
                                           detail::embedding_table<T>(static_cast<std::size_t>(vocab_.edge_slots[s]), d, rng)));
        }
      }
      if (cfg_.arch == Architecture::gin) {
        const std::size_t in = cfg_.domain == Domain::protein ? 2 * d : d;
        const std::size_t hid = static_cast<std::size_t>(cfg_.mlp_hidden);
        L.w1 = params_.add(p + "mlp.w1", detail::glorot<T>(in, hid, rng));
        L.b1 = params_.add(p + "mlp.b1", Tensor<T>(1, hid));
        L.w2 = params_.add(p + "mlp.w2", detail::glorot<T>(hid, d, rng));
        L.b2 = params_.add(p + "mlp.b2", Tensor<T>(1, d));
      } else {
        const std::size_t in = cfg_.arch == Architecture::sage ? 2 * d : d;
        L.w1 = params_.add(p + "lin.w", detail::glorot<T>(in, d, rng));
        L.b1 = params_.add(p + "lin.b", Tensor<T>(1, d));
      }
      L.gamma = params_.add(p + "bn.gamma", Tensor<T>(1, d, T(1)));
      L.beta = params_.add(p + "bn.beta", Tensor<T>(1, d));
      L.running_mean = params_.add(p + "bn.running_mean", Tensor<T>(1, d), false);
      L.running_var = params_.add(p + "bn.running_var", Tensor<T>(1, d, T(1)), false);
      layers_.push_back(std::move(L));
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  void set_dropout(double rate) {
    if (rate < 0.0 || rate >= 1.0) throw InvalidArgument("dropout must be in [0, 1)");
    cfg_.dropout = rate;
  }

  /// Width of readout(): d, or 2d with the center concatenated.
  std::size_t graph_dim() const {
    return static_cast<std::size_t>(cfg_.width) * (cfg_.readout == Readout::mean_center ? 2 : 1);
  }

  Inputs embed_inputs(Tape<T>& tape, const GraphBatch& b) { return embed_impl(*this, tape, b); }
  Inputs embed_inputs(Tape<T>& tape, const GraphBatch& b) const { return embed_impl(*this, tape, b); }

  /// One message-passing layer, including batch norm, the inner ReLU (omitted
  /// at the last layer) and dropout in training.
  Var<T> layer(Tape<T>& tape, std::size_t k, Var<T> h, Var<T> edge_features, const GraphBatch& b,
               const TrainContext* train = nullptr) {
    return layer_impl(*this, tape, k, h, edge_features, b, train);
  }
  Var<T> layer(Tape<T>& tape, std::size_t k, Var<T> h, Var<T> edge_features, const GraphBatch& b) const {
    return layer_impl(*this, tape, k, h, edge_features, b, nullptr);
  }

  /// Pre-normalization output of layer k: the aggregation followed by the
  /// MLP (GIN) or linear map (GCN, SAGE with its row normalization).
  Var<T> conv(Tape<T>& tape, std::size_t k, Var<T> h, Var<T> edge_features, const GraphBatch& b) const {
    return conv_impl(*this, tape, k, h, edge_features, b);
  }

  /// Final-layer node embeddings h^(K).
  Var<T> node_embeddings(Tape<T>& tape, const GraphBatch& b, const TrainContext* train = nullptr) {
    return forward_impl(*this, tape, b, train);
  }
  Var<T> node_embeddings(Tape<T>& tape, const GraphBatch& b) const { return forward_impl(*this, tape, b, nullptr); }

  /// Permutation-invariant pooling of node rows into one row per graph.
  Var<T> readout(Tape<T>& tape, Var<T> h, const GraphBatch& b) const {
    (void)tape;
    auto mean = ops::segment_mean(h, b.node_graph, b.num_graphs);
    if (cfg_.readout == Readout::mean) return mean;
    for (int c : b.centers) {
      if (c < 0) throw InvalidArgument("mean-center readout needs a center on every graph");
    }
    return ops::concat_cols(mean, ops::gather_rows(h, b.centers));
  }

  Var<T> graph_embeddings(Tape<T>& tape, const GraphBatch& b, const TrainContext* train = nullptr) {
    return readout(tape, node_embeddings(tape, b, train), b);
  }
  Var<T> graph_embeddings(Tape<T>& tape, const GraphBatch& b) const {
    return readout(tape, node_embeddings(tape, b), b);
  }

 private:
  struct Layer {
    std::vector<std::size_t> edge_emb;
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
    std::size_t gamma = 0, beta = 0, running_mean = 0, running_var = 0;
  };

  template <class Self>
  static Inputs embed_impl(Self& self, Tape<T>& tape, const GraphBatch& b) {
    const auto& cfg = self.cfg_;
    if (b.vocab != self.vocab_) throw InvalidArgument("vocab mismatch between batch and encoder");
    for (std::size_t s = 0; s < b.node_slots.size(); ++s) {
      for (int c : b.node_slots[s]) {
        if (c < 0 || c >= self.vocab_.node_slots[s]) throw InvalidArgument("vocab mismatch: node category");
      }
    }
    Inputs in;
    for (std::size_t s = 0; s < self.node_emb_.size(); ++s) {
      auto e = ops::gather_rows(tape.param(self.params_[self.node_emb_[s]]), b.node_slots[s]);
      in.h0 = s == 0 ? e : ops::add(in.h0, e);
    }
    if (cfg.domain == Domain::protein) {
      Tensor<T> c(b.num_arcs(), protein::kEdgeFeatureWidth);
      for (std::size_t a = 0; a < b.num_arcs(); ++a) {
        for (std::size_t s = 0; s < b.arc_slots.size(); ++s) {
          const int v = b.arc_slots[s][a];
          if (v == 1) c(a, s) = T(1);
          if (v == protein::kSlotSelfLoop) c(a, protein::kSelfLoopBit) = T(1);
          if (v == protein::kSlotMask) c(a, protein::kMaskBit) = T(1);
        }
      }
      auto he = ops::add_row(ops::matmul(tape.constant(std::move(c)), tape.param(self.params_[self.edge_w_])),
                             tape.param(self.params_[self.edge_b_]));
      in.edge_features.assign(static_cast<std::size_t>(cfg.layers), he);
    } else {
      for (const auto& L : self.layers_) {
        Var<T> he;
        for (std::size_t s = 0; s < L.edge_emb.size(); ++s) {
          auto e = ops::gather_rows(tape.param(self.params_[L.edge_emb[s]]), b.arc_slots[s]);
          he = s == 0 ? e : ops::add(he, e);
        }
        in.edge_features.push_back(he);
      }
    }
    return in;
  }

  template <class Self>
  static Var<T> conv_impl(Self& self, Tape<T>& tape, std::size_t k, Var<T> h, Var<T> he, const GraphBatch& b) {
    const auto& L = self.layers_.at(k);
    const auto& cfg = self.cfg_;
    auto P = [&](std::size_t i) { return tape.param(self.params_[i]); };
    switch (cfg.arch) {
      case Architecture::gin: {
        Var<T> agg;
        if (cfg.domain == Domain::protein) {
          auto hs = ops::segment_sum(ops::gather_rows(h, b.src), b.dst, b.num_nodes);
          auto es = ops::segment_sum(he, b.dst, b.num_nodes);
          agg = ops::concat_cols(hs, es);
        } else {
          agg = ops::segment_sum(ops::add(ops::gather_rows(h, b.src), he), b.dst, b.num_nodes);
        }
        auto z = ops::relu(ops::add_row(ops::matmul(agg, P(L.w1)), P(L.b1)));
        return ops::add_row(ops::matmul(z, P(L.w2)), P(L.b2));
      }
      case Architecture::gcn: {
        std::vector<T> norm(b.num_arcs());
        for (std::size_t a = 0; a < norm.size(); ++a) {
          norm[a] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(b.degree[b.src[a]]) * b.degree[b.dst[a]]));
        }
        auto msg = ops::scale_rows(ops::add(ops::gather_rows(h, b.src), he), std::move(norm));
        auto agg = ops::segment_sum(msg, b.dst, b.num_nodes);
        return ops::add_row(ops::matmul(agg, P(L.w1)), P(L.b1));
      }
      case Architecture::sage: {
        std::vector<int> arcs, src, dst;
        for (std::size_t a = 0; a < b.num_arcs(); ++a) {
          if (b.self_loop[a]) continue;
          arcs.push_back(static_cast<int>(a));
          src.push_back(b.src[a]);
          dst.push_back(b.dst[a]);
        }
        Var<T> mean;
        if (arcs.empty()) {
          mean = tape.constant(Tensor<T>(b.num_nodes, h.cols()));
        } else {
          auto msg = ops::add(ops::gather_rows(h, std::move(src)), ops::gather_rows(he, std::move(arcs)));
          mean = ops::segment_mean(msg, std::move(dst), b.num_nodes);
        }
        auto lin = ops::add_row(ops::matmul(ops::concat_cols(mean, h), P(L.w1)), P(L.b1));
        return ops::l2_normalize_rows(lin);
      }
    }
    throw InvalidArgument("unknown architecture");
  }

  template <class Self>
  static Var<T> layer_impl(Self& self, Tape<T>& tape, std::size_t k, Var<T> h, Var<T> he, const GraphBatch& b,
                           const TrainContext* train) {
    auto z = conv_impl(self, tape, k, h, he, b);
    const auto& L = self.layers_.at(k);
    ops::BatchNormOptions bn;
    bn.use_batch_stats = train && !train->freeze_bn;
    ops::RunningStats<T> stats{&self.params_[L.running_mean].value, &self.params_[L.running_var].value};
    if constexpr (!std::is_const_v<Self>) {
      if (bn.use_batch_stats) {
        stats.mean_out = &self.params_[L.running_mean].value;
        stats.var_out = &self.params_[L.running_var].value;
      }
    }
    z = ops::batch_norm(z, tape.param(self.params_[L.gamma]), tape.param(self.params_[L.beta]), stats, bn);
    if (k + 1 < self.layers_.size()) z = ops::relu(z);
    if (train) z = ops::dropout(z, self.cfg_.dropout, train->rng, true);
    return z;
  }

  template <class Self>
  static Var<T> forward_impl(Self& self, Tape<T>& tape, const GraphBatch& b, const TrainContext* train) {
    auto in = embed_impl(self, tape, b);
    auto h = in.h0;
    for (std::size_t k = 0; k < self.layers_.size(); ++k) {
      h = layer_impl(self, tape, k, h, in.edge_features[k], b, train);
    }
    return h;
  }

  EncoderConfig cfg_;
  Vocab vocab_;
  ParamStore<T> params_;
  std::vector<std::size_t> node_emb_;
  std::size_t edge_w_ = 0, edge_b_ = 0;
  std::vector<Layer> layers_;
};

}  // namespace pregraph
