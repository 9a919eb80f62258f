#pragma once

// Reverse-mode differentiation over a small fixed set of matrix primitives.
//
// A Tape records nodes in creation order, which is a topological order, so the
// backward sweep simply walks the nodes in reverse. Gradients accumulate
// additively wherever a value fans out.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pregraph/error.hpp"
#include "pregraph/rng.hpp"
#include "pregraph/tensor.hpp"

namespace pregraph {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;  // Adam first moment
  Tensor<T> v;  // Adam second moment
  std::int64_t step = 0;
  bool trainable = true;
};

/// Named parameters with optimizer state. Indices are stable for the
/// lifetime of the store, so owners keep indices rather than pointers.
template <class T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> init, bool trainable = true) {
    if (find(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
    Parameter<T> p;
    p.name = std::move(name);
    p.grad = Tensor<T>(init.rows(), init.cols());
    p.m = Tensor<T>(init.rows(), init.cols());
    p.v = Tensor<T>(init.rows(), init.cols());
    p.value = std::move(init);
    p.trainable = trainable;
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  const Parameter<T>* find(std::string_view name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  std::size_t num_scalars(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (!trainable_only || p.trainable) n += p.value.size();
    }
    return n;
  }

 private:
  std::vector<Parameter<T>> params_;
};

template <class T>
class Tape;

/// Handle to a value recorded on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Leaf whose gradient is added to `p.grad` after backward().
  Var<T> param(Parameter<T>& p) {
    Node n;
    n.view = &p;
    n.sink = &p;
    n.needs_grad = p.trainable;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Read-only leaf (evaluation through a const model).
  Var<T> param(const Parameter<T>& p) {
    Node n;
    n.view = &p;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    if (!value.all_finite()) throw DivergenceError("non-finite output in " + std::string(op));
    Node n;
    n.value = std::move(value);
    for (const auto& in : inputs) {
      if (in.tape != this) throw InvalidArgument("mixing values from different tapes");
      n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const {
    const auto& n = nodes_[id];
    return n.view ? n.view->value : n.value;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer for `id`, zero-initialized on first use.
  Tensor<T>& grad_mut(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0 && value(id).size() != 0) {
      n.grad = Tensor<T>(value(id).rows(), value(id).cols());
    }
    return n.grad;
  }

  const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw InvalidArgument("loss recorded on another tape");
    if (value(loss.id).size() != 1) throw InvalidArgument("backward() needs a scalar loss");
    grad_mut(loss.id).fill(T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.sink && n.grad.size()) {
        auto& dst = n.sink->grad.storage();
        const auto& src = n.grad.storage();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    const Parameter<T>* view = nullptr;
    Parameter<T>* sink = nullptr;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;
};

namespace ops {

namespace detail {
template <class T>
void require(bool ok, std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!ok) throw InvalidArgument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}
}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.cols() == B.rows(), "matmul", A, B);
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor<T> C(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    T* c = C.row(i);
    const T* ar = A.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ar[p];
      if (av == T(0)) continue;
      const T* br = B.row(p);
      for (std::size_t j = 0; j < m; ++j) c[j] += av * br[j];
    }
  }
  return a.tape->record("matmul", std::move(C), {a, b}, [a, b, n, k, m](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    const auto& A = t.value(a.id);
    const auto& B = t.value(b.id);
    if (t.needs_grad(a.id)) {
      auto& GA = t.grad_mut(a.id);
      for (std::size_t i = 0; i < n; ++i) {
        const T* g = G.row(i);
        T* ga = GA.row(i);
        for (std::size_t p = 0; p < k; ++p) {
          const T* br = B.row(p);
          T s = 0;
          for (std::size_t j = 0; j < m; ++j) s += g[j] * br[j];
          ga[p] += s;
        }
      }
    }
    if (t.needs_grad(b.id)) {
      auto& GB = t.grad_mut(b.id);
      for (std::size_t i = 0; i < n; ++i) {
        const T* g = G.row(i);
        const T* ar = A.row(i);
        for (std::size_t p = 0; p < k; ++p) {
          const T av = ar[p];
          if (av == T(0)) continue;
          T* gb = GB.row(p);
          for (std::size_t j = 0; j < m; ++j) gb[j] += av * g[j];
        }
      }
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.same_shape(B), "add", A, B);
  Tensor<T> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  return a.tape->record("add", std::move(C), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    for (auto in : {a, b}) {
      if (!t.needs_grad(in.id)) continue;
      auto& GI = t.grad_mut(in.id);
      for (std::size_t i = 0; i < G.size(); ++i) GI[i] += G[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.same_shape(B), "sub", A, B);
  Tensor<T> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  return a.tape->record("sub", std::move(C), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    if (t.needs_grad(a.id)) {
      auto& GA = t.grad_mut(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i];
    }
    if (t.needs_grad(b.id)) {
      auto& GB = t.grad_mut(b.id);
      for (std::size_t i = 0; i < G.size(); ++i) GB[i] -= G[i];
    }
  });
}

/// a[n,m] + bias[1,m] broadcast over rows.
template <class T>
Var<T> add_row(Var<T> a, Var<T> bias) {
  const auto& A = a.value();
  const auto& B = bias.value();
  detail::require(B.rows() == 1 && B.cols() == A.cols(), "add_row", A, B);
  Tensor<T> C = A;
  for (std::size_t i = 0; i < C.rows(); ++i) {
    T* c = C.row(i);
    for (std::size_t j = 0; j < C.cols(); ++j) c[j] += B[j];
  }
  return a.tape->record("add_row", std::move(C), {a, bias}, [a, bias](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    if (t.needs_grad(a.id)) {
      auto& GA = t.grad_mut(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i];
    }
    if (t.needs_grad(bias.id)) {
      auto& GB = t.grad_mut(bias.id);
      for (std::size_t i = 0; i < G.rows(); ++i) {
        const T* g = G.row(i);
        for (std::size_t j = 0; j < G.cols(); ++j) GB[j] += g[j];
      }
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> C = a.value();
  for (auto& x : C.storage()) x *= s;
  return a.tape->record("scale", std::move(C), {a}, [a, s](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    auto& GA = t.grad_mut(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * G[i];
  });
}

/// Multiplies row i by the constant w[i].
template <class T>
Var<T> scale_rows(Var<T> a, std::vector<T> w) {
  const auto& A = a.value();
  if (w.size() != A.rows()) throw InvalidArgument("scale_rows: weight count does not match rows");
  Tensor<T> C = A;
  for (std::size_t i = 0; i < C.rows(); ++i) {
    T* c = C.row(i);
    for (std::size_t j = 0; j < C.cols(); ++j) c[j] *= w[i];
  }
  return a.tape->record("scale_rows", std::move(C), {a}, [a, w = std::move(w)](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    auto& GA = t.grad_mut(a.id);
    for (std::size_t i = 0; i < G.rows(); ++i) {
      const T* g = G.row(i);
      T* ga = GA.row(i);
      for (std::size_t j = 0; j < G.cols(); ++j) ga[j] += w[i] * g[j];
    }
  });
}

template <class T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.rows() == B.rows(), "concat_cols", A, B);
  const std::size_t ca = A.cols(), cb = B.cols();
  Tensor<T> C(A.rows(), ca + cb);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    std::copy_n(A.row(i), ca, C.row(i));
    std::copy_n(B.row(i), cb, C.row(i) + ca);
  }
  return a.tape->record("concat_cols", std::move(C), {a, b}, [a, b, ca, cb](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    if (t.needs_grad(a.id)) {
      auto& GA = t.grad_mut(a.id);
      for (std::size_t i = 0; i < G.rows(); ++i) {
        for (std::size_t j = 0; j < ca; ++j) GA(i, j) += G(i, j);
      }
    }
    if (t.needs_grad(b.id)) {
      auto& GB = t.grad_mut(b.id);
      for (std::size_t i = 0; i < G.rows(); ++i) {
        for (std::size_t j = 0; j < cb; ++j) GB(i, j) += G(i, ca + j);
      }
    }
  });
}

/// out[r] = a[idx[r]]; doubles as embedding lookup.
template <class T>
Var<T> gather_rows(Var<T> a, std::vector<int> idx) {
  const auto& A = a.value();
  const std::size_t m = A.cols();
  Tensor<T> C(idx.size(), m);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= A.rows()) {
      throw InvalidArgument("gather_rows: index " + std::to_string(idx[r]) + " out of range " + A.shape_str());
    }
    std::copy_n(A.row(static_cast<std::size_t>(idx[r])), m, C.row(r));
  }
  return a.tape->record("gather_rows", std::move(C), {a}, [a, idx = std::move(idx), m](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    auto& GA = t.grad_mut(a.id);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const T* g = G.row(r);
      T* ga = GA.row(static_cast<std::size_t>(idx[r]));
      for (std::size_t j = 0; j < m; ++j) ga[j] += g[j];
    }
  });
}

/// out[s] = sum of a[i] over rows with segment[i] == s.
template <class T>
Var<T> segment_sum(Var<T> a, std::vector<int> segment, std::size_t num_segments) {
  const auto& A = a.value();
  if (segment.size() != A.rows()) throw InvalidArgument("segment_sum: one segment id per row required");
  const std::size_t m = A.cols();
  Tensor<T> C(num_segments, m);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] < 0 || static_cast<std::size_t>(segment[i]) >= num_segments) {
      throw InvalidArgument("segment_sum: segment id out of range");
    }
    T* c = C.row(static_cast<std::size_t>(segment[i]));
    const T* ar = A.row(i);
    for (std::size_t j = 0; j < m; ++j) c[j] += ar[j];
  }
  return a.tape->record("segment_sum", std::move(C), {a},
                        [a, segment = std::move(segment), m](Tape<T>& t, std::size_t self) {
                          const auto& G = t.grad(self);
                          auto& GA = t.grad_mut(a.id);
                          for (std::size_t i = 0; i < segment.size(); ++i) {
                            const T* g = G.row(static_cast<std::size_t>(segment[i]));
                            T* ga = GA.row(i);
                            for (std::size_t j = 0; j < m; ++j) ga[j] += g[j];
                          }
                        });
}

/// Per-segment mean; empty segments yield zero rows.
template <class T>
Var<T> segment_mean(Var<T> a, std::vector<int> segment, std::size_t num_segments) {
  std::vector<T> inv(num_segments, T(0));
  for (int s : segment) {
    if (s < 0 || static_cast<std::size_t>(s) >= num_segments) throw InvalidArgument("segment_mean: id out of range");
    inv[static_cast<std::size_t>(s)] += T(1);
  }
  for (auto& c : inv) c = c > T(0) ? T(1) / c : T(0);
  auto sums = segment_sum(a, std::move(segment), num_segments);
  return scale_rows(sums, std::move(inv));
}

template <class T>
Var<T> relu(Var<T> a) {
  Tensor<T> C = a.value();
  for (auto& x : C.storage()) x = x > T(0) ? x : T(0);
  return a.tape->record("relu", std::move(C), {a}, [a](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    const auto& A = t.value(a.id);
    auto& GA = t.grad_mut(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) {
      if (A[i] > T(0)) GA[i] += G[i];
    }
  });
}

template <class T>
T sigmoid_value(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> C = a.value();
  for (auto& x : C.storage()) x = sigmoid_value(x);
  return a.tape->record("sigmoid", std::move(C), {a}, [a](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    const auto& Y = t.value(self);
    auto& GA = t.grad_mut(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * Y[i] * (T(1) - Y[i]);
  });
}

/// Inverted dropout. Identity when not training or rate == 0.
template <class T>
Var<T> dropout(Var<T> a, double rate, Rng* rng, bool train) {
  if (!train || rate <= 0.0) return a;
  if (rate >= 1.0) throw InvalidArgument("dropout rate must be < 1");
  if (!rng) throw InvalidArgument("dropout needs a random stream in training mode");
  const auto& A = a.value();
  std::vector<T> keep(A.size());
  const T scale = T(1) / static_cast<T>(1.0 - rate);
  for (auto& k : keep) k = rng->uniform() < rate ? T(0) : scale;
  Tensor<T> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= keep[i];
  return a.tape->record("dropout", std::move(C), {a}, [a, keep = std::move(keep)](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    auto& GA = t.grad_mut(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * keep[i];
  });
}

struct BatchNormOptions {
  bool use_batch_stats = true;  // false: normalize with running statistics
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Running statistics for batch_norm. `mean`/`var` are read in eval mode;
/// `mean_out`/`var_out`, when set, are updated in place from batch statistics
/// (the running variance uses the unbiased estimate).
template <class T>
struct RunningStats {
  const Tensor<T>* mean = nullptr;
  const Tensor<T>* var = nullptr;
  Tensor<T>* mean_out = nullptr;
  Tensor<T>* var_out = nullptr;
};

/// Per-column batch normalization over all rows.
template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, RunningStats<T> stats, const BatchNormOptions& opt) {
  const auto& X = x.value();
  const std::size_t n = X.rows(), m = X.cols();
  detail::require(gamma.value().rows() == 1 && gamma.value().cols() == m, "batch_norm", X, gamma.value());
  detail::require(beta.value().rows() == 1 && beta.value().cols() == m, "batch_norm", X, beta.value());
  if (n == 0) throw InvalidArgument("batch_norm on empty input");
  std::vector<T> mean(m, T(0)), inv_std(m, T(0));
  if (opt.use_batch_stats) {
    std::vector<double> mu(m, 0.0), var(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) mu[j] += X(i, j);
    }
    for (auto& v : mu) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double d = X(i, j) - mu[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double biased = var[j] / static_cast<double>(n);
      mean[j] = static_cast<T>(mu[j]);
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(biased + opt.eps));
      if (stats.mean_out && stats.var_out) {
        const double unbiased = n > 1 ? var[j] / static_cast<double>(n - 1) : biased;
        auto& rm = (*stats.mean_out)[j];
        auto& rv = (*stats.var_out)[j];
        rm = static_cast<T>((1.0 - opt.momentum) * rm + opt.momentum * mu[j]);
        rv = static_cast<T>((1.0 - opt.momentum) * rv + opt.momentum * unbiased);
      }
    }
  } else {
    if (!stats.mean || !stats.var) throw InvalidArgument("batch_norm: running statistics required");
    for (std::size_t j = 0; j < m; ++j) {
      mean[j] = (*stats.mean)[j];
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>((*stats.var)[j]) + opt.eps));
    }
  }
  const auto& Gm = gamma.value();
  const auto& Bt = beta.value();
  Tensor<T> xhat(n, m);
  Tensor<T> Y(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const T h = (X(i, j) - mean[j]) * inv_std[j];
      xhat(i, j) = h;
      Y(i, j) = Gm[j] * h + Bt[j];
    }
  }
  const bool batch = opt.use_batch_stats;
  return x.tape->record(
      "batch_norm", std::move(Y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, n, m](Tape<T>& t,
                                                                                        std::size_t self) {
        const auto& G = t.grad(self);
        const auto& Gm = t.value(gamma.id);
        std::vector<T> sum_g(m, T(0)), sum_gx(m, T(0));
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) {
            sum_g[j] += G(i, j);
            sum_gx[j] += G(i, j) * xhat(i, j);
          }
        }
        if (t.needs_grad(gamma.id)) {
          auto& GG = t.grad_mut(gamma.id);
          for (std::size_t j = 0; j < m; ++j) GG[j] += sum_gx[j];
        }
        if (t.needs_grad(beta.id)) {
          auto& GB = t.grad_mut(beta.id);
          for (std::size_t j = 0; j < m; ++j) GB[j] += sum_g[j];
        }
        if (t.needs_grad(x.id)) {
          auto& GX = t.grad_mut(x.id);
          const T inv_n = T(1) / static_cast<T>(n);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
              const T k = Gm[j] * inv_std[j];
              if (batch) {
                GX(i, j) += k * (G(i, j) - inv_n * sum_g[j] - xhat(i, j) * inv_n * sum_gx[j]);
              } else {
                GX(i, j) += k * G(i, j);
              }
            }
          }
        }
      });
}

/// Scales each row to unit L2 norm (rows with norm below eps are divided by eps).
template <class T>
Var<T> l2_normalize_rows(Var<T> a, T eps = T(1e-12)) {
  const auto& A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  std::vector<T> norm(n);
  Tensor<T> Y = A;
  for (std::size_t i = 0; i < n; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) s += A(i, j) * A(i, j);
    norm[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < m; ++j) Y(i, j) /= norm[i];
  }
  return a.tape->record("l2_normalize_rows", std::move(Y), {a},
                        [a, norm = std::move(norm), eps, m](Tape<T>& t, std::size_t self) {
                          const auto& G = t.grad(self);
                          const auto& Y = t.value(self);
                          auto& GA = t.grad_mut(a.id);
                          for (std::size_t i = 0; i < G.rows(); ++i) {
                            if (norm[i] <= eps) {
                              for (std::size_t j = 0; j < m; ++j) GA(i, j) += G(i, j) / eps;
                              continue;
                            }
                            T dot = 0;
                            for (std::size_t j = 0; j < m; ++j) dot += Y(i, j) * G(i, j);
                            for (std::size_t j = 0; j < m; ++j) GA(i, j) += (G(i, j) - Y(i, j) * dot) / norm[i];
                          }
                        });
}

/// Row-wise inner products, n x 1.
template <class T>
Var<T> row_dot(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.same_shape(B), "row_dot", A, B);
  Tensor<T> C(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    T s = 0;
    for (std::size_t j = 0; j < A.cols(); ++j) s += A(i, j) * B(i, j);
    C[i] = s;
  }
  return a.tape->record("row_dot", std::move(C), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& G = t.grad(self);
    const auto& A = t.value(a.id);
    const auto& B = t.value(b.id);
    if (t.needs_grad(a.id)) {
      auto& GA = t.grad_mut(a.id);
      for (std::size_t i = 0; i < A.rows(); ++i) {
        for (std::size_t j = 0; j < A.cols(); ++j) GA(i, j) += G[i] * B(i, j);
      }
    }
    if (t.needs_grad(b.id)) {
      auto& GB = t.grad_mut(b.id);
      for (std::size_t i = 0; i < A.rows(); ++i) {
        for (std::size_t j = 0; j < A.cols(); ++j) GB(i, j) += G[i] * A(i, j);
      }
    }
  });
}

inline constexpr double kLogitClamp = 30.0;

/// Weighted mean binary cross-entropy on logits:
///   sum_i w_i * l(x_i, y_i) / sum_i w_i,  l = max(x,0) - x*y + log(1 + exp(-|x|)).
/// Logits are clamped to [-30, 30]; a zero weight contributes neither loss nor gradient.
template <class T>
Var<T> bce_with_logits(Var<T> logits, Tensor<T> targets, Tensor<T> weights) {
  const auto& X = logits.value();
  detail::require(X.same_shape(targets), "bce_with_logits", X, targets);
  detail::require(X.same_shape(weights), "bce_with_logits", X, weights);
  double wsum = 0.0, loss = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (weights[i] == T(0)) continue;
    const double x = std::clamp(static_cast<double>(X[i]), -kLogitClamp, kLogitClamp);
    const double y = targets[i];
    loss += weights[i] * (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))));
    wsum += weights[i];
  }
  if (wsum <= 0.0) throw InvalidArgument("bce_with_logits: no weighted entries");
  return logits.tape->record(
      "bce_with_logits", Tensor<T>::scalar(static_cast<T>(loss / wsum)), {logits},
      [logits, targets = std::move(targets), weights = std::move(weights), wsum](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        const auto& X = t.value(logits.id);
        auto& GX = t.grad_mut(logits.id);
        for (std::size_t i = 0; i < X.size(); ++i) {
          if (weights[i] == T(0)) continue;
          const double x = static_cast<double>(X[i]);
          if (x < -kLogitClamp || x > kLogitClamp) continue;
          GX[i] += g * static_cast<T>(weights[i] * (sigmoid_value(x) - targets[i]) / wsum);
        }
      });
}

template <class T>
Var<T> bce_with_logits(Var<T> logits, Tensor<T> targets) {
  Tensor<T> w(targets.rows(), targets.cols(), T(1));
  return bce_with_logits(logits, std::move(targets), std::move(w));
}

/// Mean softmax cross-entropy of rows of `logits` against class ids.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::vector<int> targets) {
  const auto& X = logits.value();
  if (targets.size() != X.rows()) throw InvalidArgument("softmax_cross_entropy: one target per row required");
  if (targets.empty()) throw InvalidArgument("softmax_cross_entropy: empty batch");
  const std::size_t n = X.rows(), c = X.cols();
  Tensor<T> prob(n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw InvalidArgument("softmax_cross_entropy: target out of range");
    }
    double mx = X(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(X(i, j)));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(X(i, j) - mx);
    for (std::size_t j = 0; j < c; ++j) prob(i, j) = static_cast<T>(std::exp(X(i, j) - mx) / z);
    loss += -(X(i, targets[i]) - mx - std::log(z));
  }
  return logits.tape->record(
      "softmax_cross_entropy", Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(n))), {logits},
      [logits, prob = std::move(prob), targets = std::move(targets), n, c](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0] / static_cast<T>(n);
        auto& GX = t.grad_mut(logits.id);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const T y = static_cast<std::size_t>(targets[i]) == j ? T(1) : T(0);
            GX(i, j) += g * (prob(i, j) - y);
          }
        }
      });
}

/// Sum of all entries, 1x1.
template <class T>
Var<T> sum_all(Var<T> a) {
  T s = 0;
  for (T x : a.value().storage()) s += x;
  return a.tape->record("sum_all", Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    auto& GA = t.grad_mut(a.id);
    for (auto& x : GA.storage()) x += g;
  });
}

}  // namespace ops
}  // namespace pregraph
