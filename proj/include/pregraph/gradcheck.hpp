#pragma once

// Finite-difference checks of every pre-training objective on a small
// double-precision encoder.

#include <cstdint>
#include <string>
#include <vector>

#include "pregraph/gnn.hpp"
#include "pregraph/optim.hpp"
#include "pregraph/pretrain.hpp"
#include "pregraph/rng.hpp"
#include "pregraph/vocab.hpp"

namespace pregraph {

struct ObjectiveCheck {
  std::string objective;
  GradCheckResult result;
};

/// Random connected molecule-vocabulary graphs with `min_nodes..max_nodes`
/// atoms, a few extra ring bonds, and `tasks` ternary labels.
inline std::vector<AttributedGraph> toy_molecules(std::size_t count, int min_nodes, int max_nodes, std::size_t tasks,
                                                  std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AttributedGraph> out;
  for (std::size_t i = 0; i < count; ++i) {
    AttributedGraph g;
    g.vocab = molecule_vocab();
    g.num_nodes = min_nodes + static_cast<int>(rng.index(static_cast<std::size_t>(max_nodes - min_nodes + 1)));
    for (int v = 0; v < g.num_nodes; ++v) {
      g.node_attrs.push_back({static_cast<int>(rng.index(10)), static_cast<int>(rng.index(4))});
    }
    auto edge = [&](int u, int v) {
      g.edges.push_back({u, v, {static_cast<int>(rng.index(4)), static_cast<int>(rng.index(3))}});
    };
    for (int v = 1; v < g.num_nodes; ++v) edge(static_cast<int>(rng.index(static_cast<std::size_t>(v))), v);
    for (int extra = 0; extra < 2; ++extra) {
      const int u = static_cast<int>(rng.index(static_cast<std::size_t>(g.num_nodes)));
      const int v = static_cast<int>(rng.index(static_cast<std::size_t>(g.num_nodes)));
      bool dup = u == v;
      for (const auto& e : g.edges) dup = dup || (e.u == u && e.v == v) || (e.u == v && e.v == u);
      if (!dup) edge(u, v);
    }
    for (std::size_t t = 0; t < tasks; ++t) g.labels.push_back(static_cast<int>(rng.index(3)) - 1);
    out.push_back(std::move(g));
  }
  return out;
}

/// Gradient check of the four objectives composed with a `layers`-layer encoder.
inline std::vector<ObjectiveCheck> gradcheck_objectives(Architecture arch, std::uint64_t seed, int layers = 2,
                                                        const GradCheckOptions& opt = {}) {
  EncoderConfig ec;
  ec.arch = arch;
  ec.layers = layers;
  ec.width = 16;
  ec.mlp_hidden = 32;
  ec.dropout = 0.0;
  auto graphs = toy_molecules(4, 6, 10, 3, mix_seed(seed, 1));
  for (auto& g : graphs) g.labels[0] = static_cast<int>(&g - graphs.data()) % 2;  // keep one label per task present
  std::vector<const AttributedGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  const std::span<const AttributedGraph* const> batch(ptrs);
  const TrainContext train{nullptr, false};
  std::vector<ObjectiveCheck> out;

  {
    Encoder<double> enc(ec, mix_seed(seed, 2));
    ContextConfig cc{layers, 1, 3, 2, 1, 1};
    Encoder<double> ctx(context_encoder_config(ec, cc), mix_seed(seed, 3));
    Rng rng(mix_seed(seed, 4));
    const auto pairs = build_context_pairs(batch, rng, cc);
    auto loss = [&](Tape<double>& t) { return context_loss(enc, ctx, pairs, t, &train).loss; };
    out.push_back({"context", grad_check(loss, {&enc.params(), &ctx.params()}, opt)});
  }
  {
    Encoder<double> enc(ec, mix_seed(seed, 5));
    MaskConfig mc;
    LinearHead<double> head(static_cast<std::size_t>(ec.width), mask_head_dim(enc.vocab(), mc), mix_seed(seed, 6));
    Rng rng(mix_seed(seed, 7));
    std::vector<MaskedGraph> masked;
    for (const auto& g : graphs) masked.push_back(apply_mask(g, mc, rng));
    auto loss = [&](Tape<double>& t) {
      return masking_loss(enc, head, std::span<const MaskedGraph>(masked), t, &train).loss;
    };
    out.push_back({"mask", grad_check(loss, {&enc.params(), &head.params()}, opt)});
  }
  {
    Encoder<double> enc(ec, mix_seed(seed, 8));
    auto loss = [&](Tape<double>& t) {
      Rng rng(mix_seed(seed, 9));
      return edgepred_loss(enc, batch, rng, t, &train).loss;
    };
    out.push_back({"edgepred", grad_check(loss, {&enc.params()}, opt)});
  }
  {
    Encoder<double> enc(ec, mix_seed(seed, 10));
    LinearHead<double> head(enc.graph_dim(), 3, mix_seed(seed, 11));
    auto loss = [&](Tape<double>& t) { return supervised_loss(enc, head, batch, t, &train).loss; };
    out.push_back({"supervised", grad_check(loss, {&enc.params(), &head.params()}, opt)});
  }
  return out;
}

}  // namespace pregraph
