#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "pregraph/autodiff.hpp"
#include "pregraph/gnn.hpp"
#include "pregraph/gradcheck.hpp"
#include "pregraph/optim.hpp"

using namespace pregraph;

namespace {

Tensor<double> filled(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(r, c);
  for (auto& x : t.storage()) x = rng.normal(0.0, 1.0);
  return t;
}

}  // namespace

TEST(Primitives, SigmoidAtZero) {
  Tape<double> t;
  auto s = ops::sigmoid(t.constant(Tensor<double>::scalar(0.0)));
  EXPECT_DOUBLE_EQ(s.value().item(), 0.5);
}

TEST(Primitives, SegmentMean) {
  Tape<double> t;
  auto x = t.constant(Tensor<double>(3, 1, {2.0, 4.0, 6.0}));
  auto m = ops::segment_mean(x, {0, 0, 1}, 2);
  EXPECT_EQ(m.value(), Tensor<double>(2, 1, {3.0, 6.0}));
}

TEST(Primitives, SegmentMeanThenSubtractIsCentered) {
  Rng rng(3);
  std::vector<int> seg;
  for (int i = 0; i < 40; ++i) seg.push_back(static_cast<int>(rng.index(5)));
  Tape<double> t;
  auto x = t.constant(filled(40, 3, 4));
  auto mean = ops::segment_mean(x, seg, 5);
  auto centered = ops::sub(x, ops::gather_rows(mean, seg));
  auto again = ops::segment_mean(centered, seg, 5);
  for (double v : again.value().storage()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Primitives, BceGradientAtZero) {
  ParamStore<double> store;
  store.add("x", Tensor<double>::scalar(0.0));
  auto loss = [&](Tape<double>& t) { return ops::bce_with_logits(t.param(store[0]), Tensor<double>::scalar(1.0)); };
  {
    Tape<double> t;
    auto l = loss(t);
    EXPECT_NEAR(l.value().item(), std::log(2.0), 1e-15);
    t.backward(l);
  }
  EXPECT_NEAR(store[0].grad[0], -0.5, 1e-15);
  // Central finite difference oracle.
  const double h = 1e-5;
  auto at = [&](double x) {
    Tape<double> t;
    return ops::bce_with_logits(t.constant(Tensor<double>::scalar(x)), Tensor<double>::scalar(1.0)).value().item();
  };
  EXPECT_NEAR((at(h) - at(-h)) / (2 * h), store[0].grad[0], 1e-6);
}

TEST(Primitives, BceIsStableForLargeLogits) {
  Tape<double> t;
  auto x = t.constant(Tensor<double>(1, 2, {1e4, -1e4}));
  auto l = ops::bce_with_logits(x, Tensor<double>(1, 2, {1.0, 0.0}));
  EXPECT_TRUE(std::isfinite(l.value().item()));
  EXPECT_LT(l.value().item(), 1e-12);
}

TEST(Primitives, ShapeMismatchIsInvalidArgument) {
  Tape<double> t;
  auto a = t.constant(Tensor<double>(2, 3));
  auto b = t.constant(Tensor<double>(2, 3));
  EXPECT_THROW(ops::matmul(a, b), InvalidArgument);
  EXPECT_THROW(ops::add(a, t.constant(Tensor<double>(3, 2))), InvalidArgument);
}

TEST(Primitives, NonFiniteOutputIsDivergence) {
  Tape<double> t;
  auto a = t.constant(Tensor<double>::scalar(1e300));
  EXPECT_THROW(ops::scale(a, 1e300), DivergenceError);
  Tape<float> tf;
  auto b = tf.constant(Tensor<float>::scalar(std::numeric_limits<float>::max()));
  EXPECT_THROW(ops::add(b, b), DivergenceError);
}

TEST(Tape, FanOutAccumulates) {
  ParamStore<double> store;
  store.add("x", Tensor<double>::scalar(3.0));
  Tape<double> t;
  auto x = t.param(store[0]);
  // y = x*x + x via matmul; dy/dx = 2x + 1.
  auto y = ops::add(ops::matmul(x, x), x);
  t.backward(y);
  EXPECT_DOUBLE_EQ(store[0].grad[0], 7.0);
}

TEST(Dropout, EvalIsIdentityAndTrainScales) {
  Tape<double> t;
  auto x = t.constant(Tensor<double>(50, 20, 1.0));
  EXPECT_EQ(ops::dropout(x, 0.5, nullptr, false).value(), x.value());
  Rng rng(1);
  const auto y = ops::dropout(x, 0.5, &rng, true).value();
  for (double v : y.storage()) EXPECT_TRUE(v == 0.0 || v == 2.0);
}

TEST(BatchNorm, EvalIsDeterministicAffine) {
  Tape<double> t;
  const auto X = filled(7, 4, 9);
  Tensor<double> mean(1, 4, {0.5, -1.0, 0.0, 2.0}), var(1, 4, {1.0, 4.0, 0.25, 9.0});
  auto gamma = t.constant(Tensor<double>(1, 4, {1.0, 2.0, 0.5, -1.0}));
  auto beta = t.constant(Tensor<double>(1, 4, {0.0, 1.0, -1.0, 0.5}));
  ops::BatchNormOptions opt;
  opt.use_batch_stats = false;
  auto a = ops::batch_norm(t.constant(X), gamma, beta, {&mean, &var}, opt).value();
  auto b = ops::batch_norm(t.constant(X), gamma, beta, {&mean, &var}, opt).value();
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double expect = gamma.value()[j] * (X(i, j) - mean[j]) / std::sqrt(var[j] + 1e-5) + beta.value()[j];
      EXPECT_NEAR(a(i, j), expect, 1e-12);
    }
}

TEST(BatchNorm, TrainModeCentersColumnsAndUpdatesRunningStats) {
  Tape<double> t;
  const auto X = filled(30, 3, 2);
  Tensor<double> mean(1, 3), var(1, 3, 1.0), mean_out = mean, var_out = var;
  auto gamma = t.constant(Tensor<double>(1, 3, 1.0));
  auto beta = t.constant(Tensor<double>(1, 3));
  auto y = ops::batch_norm(t.constant(X), gamma, beta, {&mean, &var, &mean_out, &var_out}, {}).value();
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0, s2 = 0.0, mu = 0.0;
    for (std::size_t i = 0; i < 30; ++i) {
      s += y(i, j);
      s2 += y(i, j) * y(i, j);
      mu += X(i, j);
    }
    EXPECT_NEAR(s / 30, 0.0, 1e-12);
    EXPECT_NEAR(s2 / 30, 1.0, 1e-3);
    EXPECT_NEAR(mean_out[j], 0.1 * mu / 30, 1e-12);
  }
}

TEST(GradCheck, Quadratic) {
  ParamStore<double> store;
  store.add("x", filled(5, 4, 1));
  auto loss = [&](Tape<double>& t) {
    auto x = t.param(store[0]);
    return ops::scale(ops::sum_all(ops::row_dot(x, x)), 0.5);
  };
  const auto r = grad_check(loss, {&store});
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.coordinates, 20u);
}

TEST(GradCheck, DetectsAWrongGradient) {
  ParamStore<double> store;
  store.add("x", filled(1, 3, 1));
  // dropout with a fresh stream per call is not deterministic, so the
  // finite differences disagree with the tape.
  std::uint64_t calls = 0;
  auto loss = [&](Tape<double>& t) {
    Rng rng(++calls);
    return ops::sum_all(ops::dropout(t.param(store[0]), 0.5, &rng, true));
  };
  EXPECT_GT(grad_check(loss, {&store}).max_rel_error, 1e-2);
}

TEST(GradCheck, SingleGinLayerMeanBce) {
  EncoderConfig ec;
  ec.layers = 1;
  ec.width = 8;
  ec.mlp_hidden = 16;
  Encoder<double> enc(ec, 5);
  const auto g = fixture::random_connected(6, 2, 7);
  const auto b = GraphBatch::build(g);
  LinearHead<double> head(8, 1, 3);
  auto loss = [&](Tape<double>& t) {
    auto h = enc.graph_embeddings(t, b);
    return ops::bce_with_logits(head.apply(t, h), Tensor<double>::scalar(1.0));
  };
  EXPECT_LT(grad_check(loss, {&enc.params(), &head.params()}).max_rel_error, 1e-5);
}

TEST(GradCheck, ContextObjectiveOnToyPairs) {
  GradCheckOptions opt;
  opt.seed = 3;
  const auto checks = gradcheck_objectives(Architecture::gin, 3, 2, opt);
  ASSERT_EQ(checks.front().objective, "context");
  EXPECT_LT(checks.front().result.max_rel_error, 1e-4) << checks.front().result.worst;
}

TEST(GradCheck, EveryObjectiveAndArchitecture) {
  for (auto arch : {Architecture::gin, Architecture::gcn, Architecture::sage}) {
    for (const auto& c : gradcheck_objectives(arch, 11)) {
      EXPECT_LT(c.result.max_rel_error, 1e-4) << to_string(arch) << " " << c.objective << " " << c.result.worst;
      EXPECT_GT(c.result.coordinates, 0u);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamStore<double> store;
  store.add("p", filled(3, 3, 1));
  const auto before = store[0].value;
  std::vector<Tensor<double>> grads{Tensor<double>(3, 3)};
  adam_step(store, std::span<const Tensor<double>>(grads));
  EXPECT_EQ(store[0].value, before);
  EXPECT_EQ(store[0].step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore<double> store;
  store.add("p", Tensor<double>::scalar(0.0));
  std::vector<Tensor<double>> grads{Tensor<double>::scalar(1.0)};
  adam_step(store, std::span<const Tensor<double>>(grads));
  // m_hat = 1, v_hat = 1, so the update is lr / (1 + eps).
  EXPECT_NEAR(store[0].value[0], -0.001 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, DescendsAConvexQuadratic) {
  ParamStore<double> store;
  store.add("p", Tensor<double>(1, 2, {1.0, -2.0}));
  auto value = [&] {
    const auto& p = store[0].value;
    return p[0] * p[0] + 3.0 * p[1] * p[1];
  };
  const double start = value();
  AdamOptions opt;
  opt.lr = 0.1;
  for (int i = 0; i < 2; ++i) {
    std::vector<Tensor<double>> grads{Tensor<double>(1, 2, {2.0 * store[0].value[0], 6.0 * store[0].value[1]})};
    adam_step(store, std::span<const Tensor<double>>(grads), opt);
  }
  EXPECT_LT(value(), start);
}

TEST(Adam, ShapeMismatch) {
  ParamStore<double> store;
  store.add("p", Tensor<double>(2, 2));
  std::vector<Tensor<double>> grads{Tensor<double>(2, 3)};
  EXPECT_THROW(adam_step(store, std::span<const Tensor<double>>(grads)), InvalidArgument);
}
