#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pregraph/autodiff.hpp"
#include "pregraph/rng.hpp"

namespace pregraph {

/// Defaults are the optimizer's standard betas/eps with lr 0.001.
struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every trainable parameter, using `grads[i]`
/// for parameter i.
template <class T>
void adam_step(ParamStore<T>& store, std::span<const Tensor<T>> grads, const AdamOptions& opt = {}) {
  if (grads.size() != store.size()) throw InvalidArgument("adam_step: one gradient per parameter required");
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!grads[i].same_shape(store[i].value)) {
      throw InvalidArgument("adam_step: gradient shape mismatch for '" + store[i].name + "'");
    }
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (!p.trainable) continue;
    ++p.step;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(p.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(p.step));
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double gk = g[k];
      const double m = opt.beta1 * p.m[k] + (1.0 - opt.beta1) * gk;
      const double v = opt.beta2 * p.v[k] + (1.0 - opt.beta2) * gk * gk;
      p.m[k] = static_cast<T>(m);
      p.v[k] = static_cast<T>(v);
      const double update = opt.lr * (m / c1) / (std::sqrt(v / c2) + opt.eps);
      p.value[k] = static_cast<T>(p.value[k] - update);
    }
  }
}

/// Adam step using the gradients accumulated in the store.
template <class T>
void adam_step(ParamStore<T>& store, const AdamOptions& opt = {}) {
  std::vector<Tensor<T>> grads;
  grads.reserve(store.size());
  for (const auto& p : store) grads.push_back(p.grad);
  adam_step(store, std::span<const Tensor<T>>(grads), opt);
}

struct GradCheckOptions {
  double eps = 1e-4;
  double sample_fraction = 0.05;      // used once a parameter exceeds `full_check_limit` scalars
  std::size_t full_check_limit = 256;
  std::uint64_t seed = 0;
  // A coordinate whose error exceeds `refine_above` is re-measured with the
  // step divided by 10, up to `refinements` times; the smallest error is kept.
  int refinements = 4;
  double refine_above = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<param>[<index>]" of the worst coordinate
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

/// Compares tape gradients against central differences. `loss` must build the
/// whole computation on the given tape and be deterministic between calls.
/// Error per coordinate is |a - n| / max(1, |a|, |n|); the worst one is reported.
inline GradCheckResult grad_check(const std::function<Var<double>(Tape<double>&)>& loss,
                                  std::vector<ParamStore<double>*> stores, const GradCheckOptions& opt = {}) {
  for (auto* s : stores) s->zero_grad();
  {
    Tape<double> tape;
    auto l = loss(tape);
    tape.backward(l);
  }
  auto eval = [&]() {
    Tape<double> tape;
    return loss(tape).value().item();
  };
  Rng rng(opt.seed);
  GradCheckResult res;
  for (auto* s : stores) {
    for (auto& p : *s) {
      if (!p.trainable) continue;
      const Tensor<double> analytic = p.grad;
      std::vector<std::size_t> coords;
      if (p.value.size() <= opt.full_check_limit) {
        for (std::size_t k = 0; k < p.value.size(); ++k) coords.push_back(k);
      } else {
        const auto count = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(opt.sample_fraction * static_cast<double>(p.value.size()))));
        coords = rng.sample_without_replacement(p.value.size(), count);
      }
      for (std::size_t k : coords) {
        const double orig = p.value[k];
        const double a = analytic[k];
        double err = 0.0, numeric = 0.0;
        for (int refine = 0; refine <= opt.refinements; ++refine) {
          const double h = opt.eps * std::pow(0.1, refine);
          p.value[k] = orig + h;
          const double up = eval();
          p.value[k] = orig - h;
          const double down = eval();
          p.value[k] = orig;
          const double n = (up - down) / (2.0 * h);
          const double e = std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
          if (refine == 0 || e < err) {
            err = e;
            numeric = n;
          }
          if (err <= opt.refine_above) break;
        }
        if (err > res.max_rel_error || res.worst.empty()) {
          res.max_rel_error = err;
          res.worst = p.name + "[" + std::to_string(k) + "]";
          res.worst_analytic = a;
          res.worst_numeric = numeric;
        }
        ++res.coordinates;
      }
    }
  }
  return res;
}

}  // namespace pregraph
