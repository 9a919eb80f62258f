#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pregraph/gnn.hpp"
#include "pregraph/gradcheck.hpp"
#include "pregraph/optim.hpp"
#include "pregraph/pretrain.hpp"

using namespace pregraph;

namespace {

EncoderConfig tiny(int layers = 2) {
  EncoderConfig c;
  c.layers = layers;
  c.width = 16;
  c.mlp_hidden = 32;
  return c;
}

std::vector<AttributedGraph> chains(int count, int length, std::uint64_t seed) {
  std::vector<AttributedGraph> out;
  for (int i = 0; i < count; ++i) out.push_back(fixture::random_connected(length, 1, seed + i));
  return out;
}

// Zero every weight so all embeddings vanish.
template <class T>
void zero_all(ParamStore<T>& store) {
  for (std::size_t i = 0; i < store.size(); ++i) store[i].value.fill(T(0));
}

}  // namespace

TEST(ContextPairs, EightGraphsGiveEightPositivesAndEightNegatives) {
  const auto graphs = chains(8, 20, 1);
  Rng rng(4);
  const ContextConfig cfg{3, 1, 4, 3, 1, 1};
  const auto cb = build_context_pairs(std::span<const AttributedGraph>(graphs), rng, cfg);
  ASSERT_EQ(cb.samples.size(), 8u);
  int pos = 0, neg = 0;
  for (const auto& p : cb.pairs) {
    if (p.label == 1) {
      ++pos;
      EXPECT_EQ(p.neighborhood, p.context);
    } else {
      ++neg;
      EXPECT_NE(cb.samples[p.neighborhood].source_graph, cb.samples[p.context].source_graph);
    }
  }
  EXPECT_EQ(pos, 8);
  EXPECT_EQ(neg, 8);
}

TEST(ContextPairs, SamplesMatchDistanceOracle) {
  const auto graphs = chains(6, 25, 10);
  Rng rng(5);
  const ContextConfig cfg{3, 1, 4, 3, 2, 2};
  const auto cb = build_context_pairs(std::span<const AttributedGraph>(graphs), rng, cfg);
  for (const auto& s : cb.samples) {
    const auto& g = graphs[s.source_graph];
    const auto d = oracle::floyd_warshall(g);
    int within_k = 0, in_ring = 0, anchors = 0;
    for (int u = 0; u < g.num_nodes; ++u) {
      within_k += d[s.center][u] <= 3;
      in_ring += d[s.center][u] >= 1 && d[s.center][u] <= 4;
      anchors += d[s.center][u] >= 1 && d[s.center][u] <= 3;
    }
    EXPECT_EQ(s.neighborhood.num_nodes, within_k);
    EXPECT_EQ(s.context.num_nodes, in_ring);
    EXPECT_EQ(static_cast<int>(s.anchors.size()), anchors);
    ASSERT_TRUE(s.neighborhood.center.has_value());
    EXPECT_EQ(*s.neighborhood.center, 0);
    EXPECT_GE(s.anchors.size(), 1u);
  }
  std::size_t negatives = 0;
  for (const auto& p : cb.pairs) negatives += p.label == 0;
  EXPECT_EQ(negatives, 2 * cb.samples.size());
}

TEST(ContextPairs, TriangleIsSkipped) {
  std::vector<AttributedGraph> graphs{fixture::cycle(3), fixture::path(12), fixture::path(12)};
  Rng rng(1);
  const auto cb = build_context_pairs(std::span<const AttributedGraph>(graphs), rng, ContextConfig{});
  for (const auto& s : cb.samples) EXPECT_NE(s.source_graph, 0u);
}

TEST(ContextPairs, DeterministicForSeed) {
  const auto graphs = chains(5, 16, 2);
  Rng a(9), b(9);
  const ContextConfig cfg{2, 1, 3, 2, 1, 1};
  const auto x = build_context_pairs(std::span<const AttributedGraph>(graphs), a, cfg);
  const auto y = build_context_pairs(std::span<const AttributedGraph>(graphs), b, cfg);
  ASSERT_EQ(x.pairs.size(), y.pairs.size());
  for (std::size_t i = 0; i < x.pairs.size(); ++i) {
    EXPECT_EQ(x.pairs[i].neighborhood, y.pairs[i].neighborhood);
    EXPECT_EQ(x.pairs[i].context, y.pairs[i].context);
    EXPECT_EQ(x.pairs[i].label, y.pairs[i].label);
  }
  for (std::size_t i = 0; i < x.samples.size(); ++i) EXPECT_EQ(x.samples[i].center, y.samples[i].center);
}

TEST(ContextPairs, SingleGraphBatchWithNegativesIsAConfigError) {
  const auto graphs = chains(1, 16, 3);
  Rng rng(1);
  EXPECT_THROW(build_context_pairs(std::span<const AttributedGraph>(graphs), rng, ContextConfig{2, 1, 3, 2, 1, 1}),
               ConfigError);
  EXPECT_NO_THROW(build_context_pairs(std::span<const AttributedGraph>(graphs), rng, ContextConfig{2, 1, 3, 2, 0, 1}));
  EXPECT_THROW(ContextConfig({2, 2, 3, 2, 1, 1}).validate(), ConfigError);
  EXPECT_THROW(ContextConfig({2, 1, 1, 2, 1, 1}).validate(), ConfigError);
}

TEST(ContextLoss, ZeroEmbeddingsGiveLn2) {
  Encoder<double> main(tiny(), 1), ctx(tiny(), 2);
  zero_all(main.params());
  zero_all(ctx.params());
  const auto graphs = chains(4, 12, 4);
  Rng rng(3);
  const auto cb = build_context_pairs(std::span<const AttributedGraph>(graphs), rng, ContextConfig{2, 1, 3, 2, 1, 1});
  Tape<double> t;
  EXPECT_NEAR(context_loss(main, ctx, cb, t).loss.value().item(), std::log(2.0), 1e-12);
}

TEST(ContextLoss, EmptyPairListIsInvalid) {
  Encoder<double> main(tiny(), 1), ctx(tiny(), 2);
  Tape<double> t;
  EXPECT_THROW(context_loss(main, ctx, ContextBatch{}, t), InvalidArgument);
}

TEST(ContextLoss, LogisticLossFallsAsPositiveLogitsGrow) {
  double last = std::numeric_limits<double>::infinity();
  for (double x : {1.0, 5.0, 10.0}) {
    Tape<double> t;
    const double l = ops::bce_with_logits(t.constant(Tensor<double>(3, 1, x)), Tensor<double>(3, 1, 1.0)).value().item();
    EXPECT_LT(l, last);
    last = l;
  }
  EXPECT_LT(last, 1e-4);
}

TEST(Mask, CountsFollowTheRoundingRule) {
  EXPECT_EQ(mask_count(20, 0.15), 3u);
  EXPECT_EQ(mask_count(3, 0.15), 1u);
  for (std::size_t n = 1; n < 200; ++n) {
    const auto expect = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n))));
    EXPECT_EQ(mask_count(n, 0.15), expect);
  }
}

TEST(Mask, MasksEverySlotAndRecordsOriginals) {
  const auto g = fixture::random_graph(20, 0.2, 6);
  Rng rng(2);
  const auto m = apply_mask(g, MaskConfig{}, rng);
  ASSERT_EQ(m.positions.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    const int v = m.positions[k];
    EXPECT_EQ(m.categories[k], g.node_attrs[v][0]);
    EXPECT_EQ(m.graph.node_attrs[v][0], molecule::kAtomMask);
    EXPECT_EQ(m.graph.node_attrs[v][1], molecule::kChiralMask);
  }
  std::set<int> distinct(m.positions.begin(), m.positions.end());
  EXPECT_EQ(distinct.size(), 3u);
  Rng again(2);
  EXPECT_EQ(apply_mask(g, MaskConfig{}, again).positions, m.positions);
}

TEST(Mask, ThreeNodeMoleculeMasksOne) {
  Rng rng(1);
  EXPECT_EQ(apply_mask(fixture::path(3), MaskConfig{}, rng).positions.size(), 1u);
}

TEST(Mask, EdgeTargets) {
  const auto g = fixture::random_connected(10, 3, 1);
  MaskConfig cfg;
  cfg.target = MaskTarget::edges;
  Rng rng(1);
  const auto m = apply_mask(g, cfg, rng);
  for (std::size_t k = 0; k < m.positions.size(); ++k) {
    EXPECT_EQ(m.categories[k], g.edges[m.positions[k]].attrs[0]);
    EXPECT_EQ(m.graph.edges[m.positions[k]].attrs[0], molecule::kBondMask);
  }
  EXPECT_THROW(apply_mask(fixture::carbon_graph(2, {}), cfg, rng), InvalidArgument);
}

TEST(Mask, InvalidRate) {
  Rng rng(1);
  MaskConfig cfg;
  cfg.rate = 0.0;
  EXPECT_THROW(apply_mask(fixture::path(4), cfg, rng), ConfigError);
  cfg.rate = 1.0;
  EXPECT_THROW(apply_mask(fixture::path(4), cfg, rng), ConfigError);
}

TEST(MaskLoss, UniformLogitsGiveLnC) {
  Encoder<double> enc(tiny(), 1);
  const MaskConfig mc;
  LinearHead<double> head(16, mask_head_dim(enc.vocab(), mc), 2);
  zero_all(head.params());
  Rng rng(1);
  const std::vector<MaskedGraph> masked{apply_mask(fixture::random_graph(12, 0.3, 1), mc, rng)};
  Tape<double> t;
  const auto out = masking_loss(enc, head, std::span<const MaskedGraph>(masked), t);
  EXPECT_EQ(mask_head_dim(enc.vocab(), mc), 118u);
  EXPECT_NEAR(out.loss.value().item(), std::log(118.0), 1e-12);
}

TEST(MaskLoss, ProteinEdgesUseBitwiseTargets) {
  EncoderConfig ec = tiny();
  ec.domain = Domain::protein;
  Encoder<double> enc(ec, 1);
  MaskConfig mc;
  mc.target = MaskTarget::edges;
  EXPECT_EQ(mask_head_dim(enc.vocab(), mc), 7u);
  AttributedGraph g;
  g.vocab = protein_vocab();
  g.num_nodes = 5;
  g.node_attrs.assign(5, {0});
  for (int v = 1; v < 5; ++v) g.edges.push_back({v - 1, v, {1, 0, 1, 0, 0, 1, 0}});
  Rng rng(1);
  const std::vector<MaskedGraph> masked{apply_mask(g, mc, rng)};
  ASSERT_EQ(masked[0].bit_targets.size(), 1u);
  EXPECT_EQ(masked[0].bit_targets[0], (std::vector<int>{1, 0, 1, 0, 0, 1, 0}));
  for (int a : masked[0].graph.edges[masked[0].positions[0]].attrs) EXPECT_EQ(a, protein::kSlotMask);
  LinearHead<double> head(16, 7, 3);
  zero_all(head.params());
  Tape<double> t;
  EXPECT_NEAR(masking_loss(enc, head, std::span<const MaskedGraph>(masked), t).loss.value().item(), std::log(2.0),
              1e-12);
}

TEST(EdgePred, ZeroEmbeddingsGiveLn2) {
  Encoder<double> enc(tiny(), 1);
  zero_all(enc.params());
  const auto graphs = chains(3, 10, 1);
  std::vector<const AttributedGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  Rng rng(1);
  Tape<double> t;
  const auto out = edgepred_loss(enc, std::span<const AttributedGraph* const>(ptrs), rng, t);
  EXPECT_NEAR(out.loss.value().item(), std::log(2.0), 1e-12);
  std::size_t pos = 0;
  for (int l : out.labels) pos += l;
  EXPECT_EQ(2 * pos, out.labels.size());
}

TEST(EdgePred, NegativesAreNeverEdges) {
  const auto g = fixture::path(8);
  Rng rng(3);
  const auto neg = sample_non_edges(g, 200, rng);
  ASSERT_EQ(neg.size(), 200u);
  for (auto [u, v] : neg) {
    EXPECT_NE(u, v);
    EXPECT_NE(std::abs(u - v), 1);
  }
  EXPECT_TRUE(sample_non_edges(fixture::carbon_graph(3, {{0, 1}, {1, 2}, {0, 2}}), 2, rng).empty());
}

TEST(EdgePred, SameSeedSameLoss) {
  Encoder<double> enc(tiny(), 1);
  const auto graphs = chains(3, 10, 1);
  std::vector<const AttributedGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  auto run = [&] {
    Rng rng(11);
    Tape<double> t;
    return edgepred_loss(enc, std::span<const AttributedGraph* const>(ptrs), rng, t).loss.value().item();
  };
  EXPECT_EQ(run(), run());
}

TEST(EdgePred, CompleteGraphsAreSkipped) {
  Encoder<double> enc(tiny(), 1);
  const auto tri = fixture::carbon_graph(3, {{0, 1}, {1, 2}, {0, 2}});
  const auto path = fixture::path(5);
  std::vector<const AttributedGraph*> only{&tri}, mixed{&tri, &path};
  Rng rng(1);
  Tape<double> t;
  EXPECT_THROW(edgepred_loss(enc, std::span<const AttributedGraph* const>(only), rng, t), InvalidArgument);
  EXPECT_EQ(edgepred_loss(enc, std::span<const AttributedGraph* const>(mixed), rng, t).labels.size(), 8u);
}

TEST(Supervised, ZeroLogitsHalfLabelsGiveLn2) {
  Encoder<double> enc(tiny(), 1);
  LinearHead<double> head(16, 2, 1);
  zero_all(head.params());
  auto a = fixture::path(4), b = fixture::path(5);
  a.labels = {1, 0};
  b.labels = {0, 1};
  std::vector<const AttributedGraph*> ptrs{&a, &b};
  Tape<double> t;
  EXPECT_NEAR(supervised_loss(enc, head, std::span<const AttributedGraph* const>(ptrs), t).loss.value().item(),
              std::log(2.0), 1e-12);
}

TEST(Supervised, SingleConfidentLabelGivesNearZeroLoss) {
  Encoder<double> enc(tiny(), 1);
  LinearHead<double> head(16, 3, 1);
  zero_all(head.params());
  head.params().find("head.b")->value = Tensor<double>(1, 3, {20.0, 0.0, 0.0});
  auto g = fixture::path(4);
  g.labels = {1, -1, -1};
  std::vector<const AttributedGraph*> ptrs{&g};
  Tape<double> t;
  EXPECT_LT(supervised_loss(enc, head, std::span<const AttributedGraph* const>(ptrs), t).loss.value().item(), 1e-8);
}

TEST(Supervised, MissingLabelsHaveZeroGradient) {
  Encoder<double> enc(tiny(), 1);
  LinearHead<double> head(16, 3, 1);
  auto a = fixture::path(4), b = fixture::random_connected(6, 1, 2);
  a.labels = {1, -1, 0};
  b.labels = {-1, -1, 1};
  std::vector<const AttributedGraph*> ptrs{&a, &b};
  Tape<double> t;
  const auto out = supervised_loss(enc, head, std::span<const AttributedGraph* const>(ptrs), t);
  t.backward(out.loss);
  const auto& G = t.grad(out.logits.id);
  EXPECT_EQ(G(0, 1), 0.0);
  EXPECT_EQ(G(1, 0), 0.0);
  EXPECT_EQ(G(1, 1), 0.0);
  EXPECT_NE(G(0, 0), 0.0);
  // The second task has no label in the batch, so its head column gets nothing.
  const auto& W = head.params().find("head.w")->grad;
  for (std::size_t r = 0; r < W.rows(); ++r) EXPECT_EQ(W(r, 1), 0.0);
  auto c = fixture::path(3);
  c.labels = {-1, -1, -1};
  std::vector<const AttributedGraph*> none{&c};
  EXPECT_THROW(supervised_loss(enc, head, std::span<const AttributedGraph* const>(none), t), DataError);
}

TEST(Objectives, AllLossesAreNonNegativeAndDecrease) {
  const auto graphs = toy_molecules(8, 8, 12, 3, 5);
  std::vector<const AttributedGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  const std::span<const AttributedGraph* const> batch(ptrs);
  const AdamOptions adam{0.01};
  const TrainContext train{nullptr, true};
  auto descend = [&](auto&& loss_fn, std::vector<ParamStore<double>*> stores) {
    std::vector<double> values;
    for (int step = 0; step < 50; ++step) {
      for (auto* s : stores) s->zero_grad();
      Tape<double> t;
      auto l = loss_fn(t);
      values.push_back(l.value().item());
      EXPECT_GE(values.back(), 0.0);
      t.backward(l);
      for (auto* s : stores) adam_step(*s, adam);
    }
    return values;
  };
  {
    Encoder<double> enc(tiny(), 1), ctx(tiny(), 2);
    Rng rng(1);
    const auto cb = build_context_pairs(batch, rng, ContextConfig{2, 1, 3, 2, 1, 1});
    const auto v = descend([&](Tape<double>& t) { return context_loss(enc, ctx, cb, t, &train).loss; },
                           {&enc.params(), &ctx.params()});
    EXPECT_LT(v.back(), v.front()) << "context";
  }
  {
    Encoder<double> enc(tiny(), 3);
    LinearHead<double> head(16, 118, 4);
    Rng rng(2);
    std::vector<MaskedGraph> masked;
    for (const auto& g : graphs) masked.push_back(apply_mask(g, MaskConfig{}, rng));
    const auto v = descend(
        [&](Tape<double>& t) { return masking_loss(enc, head, std::span<const MaskedGraph>(masked), t, &train).loss; },
        {&enc.params(), &head.params()});
    EXPECT_LT(v.back(), v.front()) << "mask";
  }
  {
    Encoder<double> enc(tiny(), 5);
    const auto v = descend(
        [&](Tape<double>& t) {
          Rng rng(3);
          return edgepred_loss(enc, batch, rng, t, &train).loss;
        },
        {&enc.params()});
    EXPECT_LT(v.back(), v.front()) << "edgepred";
  }
  {
    Encoder<double> enc(tiny(), 6);
    LinearHead<double> head(16, 3, 7);
    const auto v = descend([&](Tape<double>& t) { return supervised_loss(enc, head, batch, t, &train).loss; },
                           {&enc.params(), &head.params()});
    EXPECT_LT(v.back(), v.front()) << "supervised";
  }
}

TEST(Objectives, ContextEncoderHasItsOwnParameters) {
  const auto main = tiny(5);
  const auto cfg = context_encoder_config(main, ContextConfig{});
  EXPECT_EQ(cfg.layers, 3);
  EXPECT_EQ(cfg.width, main.width);
  Encoder<double> a(main, 1), b(cfg, 1);
  EXPECT_NE(a.params().size(), b.params().size());
}
