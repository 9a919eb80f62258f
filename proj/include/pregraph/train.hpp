#pragma once

// Pre-training and fine-tuning loops, evaluation, and learning curves.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pregraph/autodiff.hpp"
#include "pregraph/error.hpp"
#include "pregraph/gnn.hpp"
#include "pregraph/metrics.hpp"
#include "pregraph/optim.hpp"
#include "pregraph/pretrain.hpp"
#include "pregraph/rng.hpp"

namespace pregraph {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double dropout = 0.0;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int eval_every = 1;
  long max_steps = -1;  // negative: no cap
  bool freeze_bn = false;
  int workers = 1;

  void validate() const {
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("train.dropout must be in [0, 1)");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
  }
};

struct CurveRow {
  int epoch = 0;
  double train_loss = 0.0;
  double train_metric = 0.0;
  double valid_metric = 0.0;
  double seconds = 0.0;
  double valid_loss = 0.0;
};

struct Curves {
  std::vector<CurveRow> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,train_loss,train_metric,valid_metric,seconds,valid_loss\n";
    for (const auto& r : rows) {
      os << r.epoch << ',' << r.train_loss << ',' << r.train_metric << ',' << r.valid_metric << ',' << r.seconds << ','
         << r.valid_loss << '\n';
    }
    return os.str();
  }
};

/// First epoch whose validation metric reaches `threshold`.
inline std::optional<int> epochs_to_reach(const Curves& c, double threshold) {
  for (const auto& r : c.rows) {
    if (r.valid_metric >= threshold) return r.epoch;
  }
  return std::nullopt;
}

namespace detail {

inline std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch)));
  }
  return out;
}

inline std::vector<const AttributedGraph*> pick(std::span<const AttributedGraph> graphs,
                                                const std::vector<std::size_t>& idx) {
  std::vector<const AttributedGraph*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&graphs[i]);
  return out;
}

/// Runs fn(chunk) for chunk in [0, chunks) on up to `workers` threads.
template <class Fn>
void parallel_chunks(std::size_t chunks, int workers, Fn&& fn) {
  const auto w = std::min<std::size_t>(chunks, static_cast<std::size_t>(std::max(1, workers)));
  if (w <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t c = t; c < chunks; c += w) fn(c);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace detail

/// Graph-level logits (graphs x tasks) in evaluation mode. Rows are merged
/// by index, so the result does not depend on the worker count.
template <class T>
Tensor<T> predict(const Encoder<T>& enc, const LinearHead<T>& head, std::span<const AttributedGraph* const> graphs,
                  int workers = 1, std::size_t chunk = 128) {
  Tensor<T> out(graphs.size(), head.out_dim());
  const std::size_t chunks = (graphs.size() + chunk - 1) / chunk;
  detail::parallel_chunks(chunks, workers, [&](std::size_t c) {
    const std::size_t lo = c * chunk, hi = std::min(graphs.size(), lo + chunk);
    Tape<T> tape;
    const auto b = GraphBatch::build(graphs.subspan(lo, hi - lo));
    const auto logits = head.apply(tape, enc.graph_embeddings(tape, b)).value();
    std::copy(logits.storage().begin(), logits.storage().end(), out.row(lo));
  });
  return out;
}

template <class T>
TaskAuc evaluate_tasks(const Encoder<T>& enc, const LinearHead<T>& head, std::span<const AttributedGraph* const> graphs,
                       int workers = 1) {
  const auto logits = predict(enc, head, graphs, workers);
  std::vector<double> scores(logits.storage().begin(), logits.storage().end());
  std::vector<int> labels;
  labels.reserve(scores.size());
  for (const auto* g : graphs) {
    if (g->labels.size() != head.out_dim()) throw DataError("label width does not match task count");
    labels.insert(labels.end(), g->labels.begin(), g->labels.end());
  }
  return multitask_auc(scores, labels, head.out_dim());
}

// ---------------------------------------------------------------------------
// Pre-training

enum class Objective { context, mask, edgepred, supervised };

inline Objective parse_objective(const std::string& s) {
  if (s == "context") return Objective::context;
  if (s == "mask" || s == "masking") return Objective::mask;
  if (s == "edgepred") return Objective::edgepred;
  if (s == "supervised") return Objective::supervised;
  throw ConfigError("unknown pre-training task '" + s + "'");
}
inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::context: return "context";
    case Objective::mask: return "mask";
    case Objective::edgepred: return "edgepred";
    case Objective::supervised: return "supervised";
  }
  return "?";
}

struct PretrainSetup {
  Objective objective = Objective::context;
  ContextConfig context;
  MaskConfig mask;
  std::size_t tasks = 0;  // supervised only
};

/// Objective-specific trainable state besides the main encoder.
struct PretrainAux {
  std::optional<Encoder<float>> context;
  std::optional<LinearHead<float>> head;

  static PretrainAux make(const Encoder<float>& enc, const PretrainSetup& s, std::uint64_t seed) {
    PretrainAux aux;
    switch (s.objective) {
      case Objective::context:
        aux.context.emplace(context_encoder_config(enc.config(), s.context), mix_seed(seed, 11));
        break;
      case Objective::mask:
        aux.head.emplace(static_cast<std::size_t>(enc.config().width), mask_head_dim(enc.vocab(), s.mask),
                         mix_seed(seed, 12));
        break;
      case Objective::supervised:
        if (s.tasks == 0) throw DataError("supervised pre-training needs labelled graphs");
        aux.head.emplace(enc.graph_dim(), s.tasks, mix_seed(seed, 13));
        break;
      case Objective::edgepred:
        break;
    }
    return aux;
  }
};

/// Loss and metric accumulated over one pass.
struct PassStats {
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  double metric_sum = 0.0;
  std::size_t metric_count = 0;
  std::vector<double> scores;  // supervised: collected logits
  std::vector<int> labels;

  double loss() const { return loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0; }
  double metric(std::size_t tasks) const {
    if (tasks) {
      auto auc = multitask_auc(scores, labels, tasks);
      return auc.mean.value_or(std::numeric_limits<double>::quiet_NaN());
    }
    return metric_count ? metric_sum / static_cast<double>(metric_count) : 0.0;
  }
};

namespace detail {

/// One objective evaluation on a batch; returns false when the batch yields nothing to score.
/// `Enc`/`Aux` are const for evaluation.
template <class Enc, class Ctx, class Head>
bool objective_step(Enc& enc, Ctx* ctx, Head* head, const PretrainSetup& s,
                    std::span<const AttributedGraph* const> graphs, Rng& rng, Tape<float>& tape,
                    const TrainContext* train, Var<float>& loss, PassStats& stats) {
  switch (s.objective) {
    case Objective::context: {
      const auto cb = build_context_pairs(graphs, rng, s.context);
      if (cb.pairs.empty()) return false;
      auto out = context_loss(enc, *ctx, cb, tape, train);
      loss = out.loss;
      const double n = static_cast<double>(out.labels.size());
      stats.loss_sum += out.loss.value().item() * n;
      stats.loss_count += out.labels.size();
      stats.metric_sum += binary_accuracy(out.logits.value(), out.labels) * n;
      stats.metric_count += out.labels.size();
      return true;
    }
    case Objective::mask: {
      std::vector<MaskedGraph> masked;
      for (const auto* g : graphs) {
        const bool has = s.mask.target == MaskTarget::nodes ? g->num_nodes > 0 : !g->edges.empty();
        if (has) masked.push_back(apply_mask(*g, s.mask, rng));
      }
      if (masked.empty()) return false;
      auto out = masking_loss(enc, *head, std::span<const MaskedGraph>(masked), tape, train);
      loss = out.loss;
      const auto n = out.logits.rows();
      stats.loss_sum += out.loss.value().item() * static_cast<double>(n);
      stats.loss_count += n;
      stats.metric_sum += mask_accuracy(out) * static_cast<double>(n);
      stats.metric_count += n;
      return true;
    }
    case Objective::edgepred: {
      bool any = false;
      for (const auto* g : graphs) any = any || !g->edges.empty();
      if (!any) return false;
      std::optional<BinaryOutput<float>> out;
      try {
        out = edgepred_loss(enc, graphs, rng, tape, train);
      } catch (const InvalidArgument&) {
        return false;
      }
      loss = out->loss;
      const double n = static_cast<double>(out->labels.size());
      stats.loss_sum += out->loss.value().item() * n;
      stats.loss_count += out->labels.size();
      stats.metric_sum += binary_accuracy(out->logits.value(), out->labels) * n;
      stats.metric_count += out->labels.size();
      return true;
    }
    case Objective::supervised: {
      std::optional<SupervisedOutput<float>> out;
      try {
        out = supervised_loss(enc, *head, graphs, tape, train);
      } catch (const DataError&) {
        return false;
      }
      loss = out->loss;
      double w = 0.0;
      for (float x : out->weights.storage()) w += x;
      stats.loss_sum += out->loss.value().item() * w;
      stats.loss_count += static_cast<std::size_t>(w);
      const auto& L = out->logits.value();
      for (std::size_t i = 0; i < L.size(); ++i) {
        stats.scores.push_back(L[i]);
        stats.labels.push_back(out->weights[i] == 0.0f ? -1 : static_cast<int>(out->targets[i]));
      }
      return true;
    }
  }
  return false;
}

}  // namespace detail

struct PretrainResult {
  Curves curves;
  long steps = 0;
  PretrainAux aux;
};

/// Validation pass for a pre-training objective with a fixed random stream.
inline PassStats pretrain_evaluate(const Encoder<float>& enc, const PretrainAux& aux, const PretrainSetup& s,
                                   std::span<const AttributedGraph> graphs, const TrainConfig& cfg) {
  PassStats stats;
  Rng rng(mix_seed(cfg.seed, 0xe7a1));
  for (std::size_t lo = 0; lo < graphs.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t hi = std::min(graphs.size(), lo + static_cast<std::size_t>(cfg.batch_size));
    std::vector<const AttributedGraph*> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(&graphs[i]);
    Tape<float> tape;
    Var<float> loss;
    const Encoder<float>* ctx = aux.context ? &*aux.context : nullptr;
    const LinearHead<float>* head = aux.head ? &*aux.head : nullptr;
    detail::objective_step(enc, ctx, head, s, std::span<const AttributedGraph* const>(batch), rng, tape, nullptr,
                           loss, stats);
  }
  return stats;
}

/// Trains `enc` on one objective. Only the main encoder is meant to be kept;
/// auxiliary state is returned for inspection.
inline PretrainResult pretrain_run(Encoder<float>& enc, const PretrainSetup& s, std::span<const AttributedGraph> train,
                                   std::span<const AttributedGraph> valid, const TrainConfig& cfg) {
  cfg.validate();
  if (s.objective == Objective::context) s.context.validate();
  if (s.objective == Objective::mask) s.mask.validate();
  if (train.empty()) throw DataError("empty pre-training set");
  enc.set_dropout(cfg.dropout);
  PretrainResult res;
  res.aux = PretrainAux::make(enc, s, cfg.seed);
  Rng rng(mix_seed(cfg.seed, 0x7a17));
  const AdamOptions adam{cfg.lr};
  const std::size_t tasks = s.objective == Objective::supervised ? s.tasks : 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.max_steps >= 0 && res.steps >= cfg.max_steps) break;
    const auto t0 = std::chrono::steady_clock::now();
    PassStats stats;
    for (const auto& idx : detail::shuffled_batches(train.size(), static_cast<std::size_t>(cfg.batch_size), rng)) {
      if (cfg.max_steps >= 0 && res.steps >= cfg.max_steps) break;
      const auto batch = detail::pick(train, idx);
      Tape<float> tape;
      Var<float> loss;
      TrainContext tc{&rng, cfg.freeze_bn};
      Encoder<float>* ctx = res.aux.context ? &*res.aux.context : nullptr;
      LinearHead<float>* head = res.aux.head ? &*res.aux.head : nullptr;
      if (!detail::objective_step(enc, ctx, head, s, std::span<const AttributedGraph* const>(batch), rng, tape, &tc,
                                  loss, stats)) {
        continue;
      }
      if (!std::isfinite(loss.value().item())) throw DivergenceError("non-finite pre-training loss");
      enc.params().zero_grad();
      if (ctx) ctx->params().zero_grad();
      if (head) head->params().zero_grad();
      tape.backward(loss);
      adam_step(enc.params(), adam);
      if (ctx) adam_step(ctx->params(), adam);
      if (head) adam_step(head->params(), adam);
      ++res.steps;
    }
    CurveRow row;
    row.epoch = epoch;
    row.train_loss = stats.loss();
    row.train_metric = stats.metric(tasks);
    if (!valid.empty() && epoch % cfg.eval_every == 0) {
      const auto v = pretrain_evaluate(enc, res.aux, s, valid, cfg);
      row.valid_loss = v.loss();
      row.valid_metric = v.metric(tasks);
    } else {
      row.valid_loss = row.valid_metric = std::numeric_limits<double>::quiet_NaN();
    }
    row.seconds = detail::elapsed(t0);
    res.curves.rows.push_back(row);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct FinetuneResult {
  Curves curves;
  int best_epoch = 0;
  std::optional<double> best_valid;
  TaskAuc initial_valid;
  TaskAuc initial_test;
  TaskAuc test;                         // at the best validation epoch
  std::vector<std::optional<double>> valid_by_epoch;  // index = epoch, 0 = before training
  std::vector<std::optional<double>> test_by_epoch;
  Encoder<float> best_encoder;
  LinearHead<float> best_head;
  long steps = 0;
};

/// End-to-end training of encoder + fresh head on the labelled train split,
/// reporting test AUC at the epoch with the best mean validation AUC
/// (smallest epoch on ties, epoch 0 being the untrained model).
inline FinetuneResult finetune(Encoder<float>& enc, LinearHead<float>& head, std::span<const AttributedGraph> train,
                               std::span<const AttributedGraph> valid, std::span<const AttributedGraph> test,
                               const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty() || valid.empty() || test.empty()) throw DataError("fine-tuning needs non-empty train/valid/test");
  enc.set_dropout(cfg.dropout);
  auto ptrs = [](std::span<const AttributedGraph> gs) {
    std::vector<const AttributedGraph*> p;
    for (const auto& g : gs) p.push_back(&g);
    return p;
  };
  const auto vp = ptrs(valid), tp = ptrs(test);
  FinetuneResult res;
  auto eval = [&](const std::vector<const AttributedGraph*>& gs) {
    return evaluate_tasks<float>(enc, head, std::span<const AttributedGraph* const>(gs), cfg.workers);
  };
  res.initial_valid = eval(vp);
  res.initial_test = eval(tp);
  res.valid_by_epoch.push_back(res.initial_valid.mean);
  res.test_by_epoch.push_back(res.initial_test.mean);
  res.best_epoch = 0;
  res.best_valid = res.initial_valid.mean;
  res.test = res.initial_test;
  res.best_encoder = enc;
  res.best_head = head;

  Rng rng(mix_seed(cfg.seed, 0xf17e));
  const AdamOptions adam{cfg.lr};
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.max_steps >= 0 && res.steps >= cfg.max_steps) break;
    const auto t0 = std::chrono::steady_clock::now();
    PassStats stats;
    for (const auto& idx : detail::shuffled_batches(train.size(), static_cast<std::size_t>(cfg.batch_size), rng)) {
      if (cfg.max_steps >= 0 && res.steps >= cfg.max_steps) break;
      const auto batch = detail::pick(train, idx);
      Tape<float> tape;
      TrainContext tc{&rng, cfg.freeze_bn};
      std::optional<SupervisedOutput<float>> out;
      try {
        out = supervised_loss(enc, head, std::span<const AttributedGraph* const>(batch), tape, &tc);
      } catch (const DataError&) {
        continue;
      }
      const float lv = out->loss.value().item();
      if (!std::isfinite(lv)) throw DivergenceError("non-finite fine-tuning loss");
      enc.params().zero_grad();
      head.params().zero_grad();
      tape.backward(out->loss);
      adam_step(enc.params(), adam);
      adam_step(head.params(), adam);
      ++res.steps;
      double w = 0.0;
      for (float x : out->weights.storage()) w += x;
      stats.loss_sum += lv * w;
      stats.loss_count += static_cast<std::size_t>(w);
      const auto& L = out->logits.value();
      for (std::size_t i = 0; i < L.size(); ++i) {
        stats.scores.push_back(L[i]);
        stats.labels.push_back(out->weights[i] == 0.0f ? -1 : static_cast<int>(out->targets[i]));
      }
    }
    const auto v = eval(vp);
    const auto t = eval(tp);
    res.valid_by_epoch.push_back(v.mean);
    res.test_by_epoch.push_back(t.mean);
    if (v.mean && (!res.best_valid || *v.mean > *res.best_valid)) {
      res.best_valid = v.mean;
      res.best_epoch = epoch;
      res.test = t;
      res.best_encoder = enc;
      res.best_head = head;
    }
    CurveRow row;
    row.epoch = epoch;
    row.train_loss = stats.loss();
    row.train_metric = stats.metric(head.out_dim());
    row.valid_metric = v.mean.value_or(std::numeric_limits<double>::quiet_NaN());
    row.valid_loss = std::numeric_limits<double>::quiet_NaN();
    row.seconds = detail::elapsed(t0);
    res.curves.rows.push_back(row);
  }
  return res;
}

}  // namespace pregraph
