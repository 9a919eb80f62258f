#pragma once

// Dataset splits (scaffold, species, random) and the pre-training leakage gate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "pregraph/chem.hpp"
#include "pregraph/error.hpp"
#include "pregraph/io.hpp"
#include "pregraph/rng.hpp"

namespace pregraph {

struct SplitAssignment {
  std::string rule;
  std::uint64_t seed = 0;
  std::vector<double> fracs;
  std::vector<std::size_t> train, valid, test;
  std::optional<std::vector<std::size_t>> prior;
  std::vector<std::string> warnings;

  /// Throws unless the parts are pairwise disjoint and within [0, n).
  void validate(std::size_t n) const {
    std::vector<char> seen(n, 0);
    auto mark = [&](const std::vector<std::size_t>& part) {
      for (auto i : part) {
        if (i >= n) throw DataError("split index " + std::to_string(i) + " out of range");
        if (seen[i]) throw DataError("split parts overlap at index " + std::to_string(i));
        seen[i] = 1;
      }
    };
    mark(train);
    mark(valid);
    mark(test);
    if (prior) mark(*prior);
  }

  std::size_t covered() const { return train.size() + valid.size() + test.size() + (prior ? prior->size() : 0); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"rule", rule}, {"seed", seed},  {"fracs", fracs},
                     {"train", train}, {"valid", valid}, {"test", test}, {"warnings", warnings}};
    if (prior) j["prior"] = *prior;
    return j;
  }

  static SplitAssignment from_json(const nlohmann::json& j) {
    SplitAssignment s;
    try {
      s.rule = j.value("rule", "");
      s.seed = j.value("seed", std::uint64_t{0});
      s.fracs = j.value("fracs", std::vector<double>{});
      s.train = j.at("train").get<std::vector<std::size_t>>();
      s.valid = j.at("valid").get<std::vector<std::size_t>>();
      s.test = j.at("test").get<std::vector<std::size_t>>();
      if (j.contains("prior")) s.prior = j["prior"].get<std::vector<std::size_t>>();
      s.warnings = j.value("warnings", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("bad split file: ") + e.what());
    }
    return s;
  }
};

namespace detail {

inline void check_fracs(std::span<const double> fracs, std::size_t parts) {
  if (fracs.size() != parts) throw InvalidArgument("expected " + std::to_string(parts) + " split fractions");
  double sum = 0.0;
  for (double f : fracs) {
    if (f < 0.0) throw InvalidArgument("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw InvalidArgument("split fractions must sum to 1");
}

inline std::size_t ceil_count(double x) { return static_cast<std::size_t>(std::ceil(x - 1e-9)); }

}  // namespace detail

/// Groups indices by key, largest groups first (ties by ascending key), and
/// fills train up to ceil(f_train N), then valid up to ceil((f_train+f_valid) N),
/// then test. The largest group always lands in train.
inline SplitAssignment scaffold_split(std::span<const std::string> keys, std::vector<double> fracs = {0.8, 0.1, 0.1}) {
  detail::check_fracs(fracs, 3);
  if (keys.empty()) throw DataError("scaffold split of an empty dataset");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < keys.size(); ++i) groups[keys[i]].push_back(i);
  std::vector<const std::pair<const std::string, std::vector<std::size_t>>*> order;
  for (const auto& kv : groups) order.push_back(&kv);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->second.size() > b->second.size(); });
  const double n = static_cast<double>(keys.size());
  const auto train_cut = detail::ceil_count(fracs[0] * n);
  const auto valid_cut = detail::ceil_count((fracs[0] + fracs[1]) * n);
  SplitAssignment s;
  s.rule = "scaffold";
  s.fracs = fracs;
  for (const auto* kv : order) {
    const auto& idx = kv->second;
    if (s.train.empty() || s.train.size() + idx.size() <= train_cut) {
      s.train.insert(s.train.end(), idx.begin(), idx.end());
    } else if (s.train.size() + s.valid.size() + idx.size() <= valid_cut) {
      s.valid.insert(s.valid.end(), idx.begin(), idx.end());
    } else {
      s.test.insert(s.test.end(), idx.begin(), idx.end());
    }
  }
  for (auto* part : {&s.train, &s.valid, &s.test}) std::sort(part->begin(), part->end());
  if (s.valid.empty() || s.test.empty()) {
    s.warnings.push_back("degenerate split: " + std::to_string(groups.size()) +
                         " scaffold group(s) leave valid or test empty");
  }
  return s;
}

inline std::vector<std::string> scaffold_keys(std::span<const AttributedGraph> mols) {
  std::vector<std::string> keys;
  keys.reserve(mols.size());
  for (const auto& m : mols) keys.push_back(chem::scaffold_key(m));
  return keys;
}

inline SplitAssignment scaffold_split(std::span<const AttributedGraph> mols, std::vector<double> fracs = {0.8, 0.1, 0.1}) {
  const auto keys = scaffold_keys(mols);
  return scaffold_split(std::span<const std::string>(keys), std::move(fracs));
}

/// Target species: seeded 50/50 into test and prior. Other species pooled and
/// shuffled into train/valid at 85/15. Counts are rounded to nearest.
inline SplitAssignment species_split(std::span<const std::optional<std::string>> species, const std::string& target,
                                     std::uint64_t seed, double test_frac = 0.5, double train_frac = 0.85) {
  std::vector<std::size_t> tgt, rest;
  std::unordered_set<std::string> names;
  for (std::size_t i = 0; i < species.size(); ++i) {
    if (!species[i]) continue;
    names.insert(*species[i]);
    (*species[i] == target ? tgt : rest).push_back(i);
  }
  if (tgt.empty()) throw DataError("target species '" + target + "' not present");
  if (names.size() < 2) throw DataError("species split needs at least two species");
  Rng rng(seed);
  rng.shuffle(tgt);
  rng.shuffle(rest);
  const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(tgt.size())));
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(rest.size())));
  SplitAssignment s;
  s.rule = "species";
  s.seed = seed;
  s.fracs = {train_frac, 1.0 - train_frac, test_frac};
  s.test.assign(tgt.begin(), tgt.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.prior.emplace(tgt.begin() + static_cast<std::ptrdiff_t>(n_test), tgt.end());
  s.train.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_train), rest.end());
  for (auto* part : {&s.train, &s.valid, &s.test, &*s.prior}) std::sort(part->begin(), part->end());
  return s;
}

inline SplitAssignment species_split(std::span<const AttributedGraph> graphs, const std::string& target,
                                     std::uint64_t seed) {
  std::vector<std::optional<std::string>> sp;
  for (const auto& g : graphs) sp.push_back(g.species);
  return species_split(std::span<const std::optional<std::string>>(sp), target, seed);
}

inline SplitAssignment random_split(std::size_t n, std::uint64_t seed, std::vector<double> fracs = {0.8, 0.1, 0.1}) {
  detail::check_fracs(fracs, 3);
  if (n == 0) throw DataError("random split of an empty dataset");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::llround(fracs[0] * static_cast<double>(n)));
  const auto n_valid = std::min(n - n_train, static_cast<std::size_t>(std::llround(fracs[1] * static_cast<double>(n))));
  SplitAssignment s;
  s.rule = "random";
  s.seed = seed;
  s.fracs = fracs;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                 idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), idx.end());
  for (auto* part : {&s.train, &s.valid, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

/// Refuses pre-training data that contains any downstream test graph
/// (compared by structure hash). Returns the number of test graphs checked.
inline std::size_t check_no_leakage(std::span<const AttributedGraph> pretrain,
                                    std::span<const AttributedGraph> downstream,
                                    std::span<const std::size_t> test_indices) {
  std::unordered_map<std::string, std::size_t> test_hashes;
  for (auto i : test_indices) {
    if (i >= downstream.size()) throw DataError("test index out of range in leakage check");
    test_hashes.emplace(io::structure_hash(downstream[i]), i);
  }
  std::size_t hits = 0;
  std::optional<std::pair<std::size_t, std::size_t>> first;
  for (std::size_t i = 0; i < pretrain.size(); ++i) {
    auto it = test_hashes.find(io::structure_hash(pretrain[i]));
    if (it == test_hashes.end()) continue;
    if (!first) first.emplace(i, it->second);
    ++hits;
  }
  if (hits) {
    throw LeakageError(std::to_string(hits) + " pre-training graph(s) match downstream test graphs (first: pretrain #" +
                       std::to_string(first->first) + " = test #" + std::to_string(first->second) + ")");
  }
  return test_hashes.size();
}

}  // namespace pregraph
