#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "pregraph/error.hpp"

namespace pregraph {

/// ROC-AUC as the Mann-Whitney statistic (wins + ties/2) / (P * N), from
/// average ranks. Labels must be 0 or 1 and include both classes.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("roc_auc: scores and labels differ in length");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw InvalidArgument("roc_auc: labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetric("roc_auc: labels contain a single class");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Ranks are 1-based; a tie block spanning ranks [i+1, j] gets (i+1+j)/2 each.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += avg;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  return roc_auc(std::span<const double>(scores), std::span<const int>(labels));
}

struct TaskAuc {
  std::vector<std::optional<double>> per_task;  // empty where the task is not evaluable
  std::optional<double> mean;                   // over evaluable tasks only
  std::size_t evaluable = 0;
};

/// Per-task ROC-AUC over a graphs x tasks score matrix with ternary labels
/// (-1 entries are ignored). Single-class tasks are skipped.
inline TaskAuc multitask_auc(std::span<const double> scores, std::span<const int> labels, std::size_t tasks) {
  if (tasks == 0 || scores.size() != labels.size() || scores.size() % tasks != 0) {
    throw InvalidArgument("multitask_auc: shape mismatch");
  }
  const std::size_t rows = scores.size() / tasks;
  TaskAuc out;
  double sum = 0.0;
  for (std::size_t t = 0; t < tasks; ++t) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t r = 0; r < rows; ++r) {
      const int l = labels[r * tasks + t];
      if (l == -1) continue;
      s.push_back(scores[r * tasks + t]);
      y.push_back(l);
    }
    try {
      const double a = roc_auc(s, y);
      out.per_task.push_back(a);
      sum += a;
      ++out.evaluable;
    } catch (const UndefinedMetric&) {
      out.per_task.push_back(std::nullopt);
    }
  }
  if (out.evaluable) out.mean = sum / static_cast<double>(out.evaluable);
  return out;
}

template <class T>
T median(std::vector<T> v) {
  if (v.empty()) throw InvalidArgument("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : (v[h - 1] + v[h]) / T(2);
}

}  // namespace pregraph
