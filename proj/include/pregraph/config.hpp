#pragma once

// Flat key = value run configuration with dotted namespaces.

#include <charconv>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pregraph/error.hpp"
#include "pregraph/gnn.hpp"
#include "pregraph/hash.hpp"
#include "pregraph/pretrain.hpp"
#include "pregraph/train.hpp"

namespace pregraph {

class Config {
 public:
  /// Defaults for `command`; `task` is the pre-training objective when the
  /// command is "pretrain". Self-supervised runs use batch 256, supervised
  /// pre-training batch 32 with dropout 0.2, fine-tuning batch 32 with dropout 0.5.
  static Config defaults(std::string_view command = "", std::string_view task = "") {
    Config c;
    c.values_ = {
        {"model.arch", "gin"},
        {"model.layers", "5"},
        {"model.width", "300"},
        {"model.mlp_hidden", "600"},
        {"model.readout", "mean"},
        {"train.epochs", "100"},
        {"train.batch_size", "32"},
        {"train.dropout", "0"},
        {"train.lr", "0.001"},
        {"train.eval_every", "1"},
        {"train.max_steps", "-1"},
        {"train.freeze_bn", "false"},
        {"train.workers", "1"},
        {"context.k", "5"},
        {"context.r1", "4"},
        {"context.r2", "7"},
        {"context.layers", "3"},
        {"context.negative_ratio", "1"},
        {"context.centers_per_graph", "1"},
        {"mask.rate", "0.15"},
        {"mask.target", "nodes"},
        {"split.train", "0.8"},
        {"split.valid", "0.1"},
        {"split.test", "0.1"},
        {"seed", "0"},
    };
    if (command == "pretrain") {
      if (task == "supervised") {
        c.values_["train.dropout"] = "0.2";
      } else {
        c.values_["train.batch_size"] = "256";
      }
    } else if (command == "finetune") {
      c.values_["train.dropout"] = "0.5";
    }
    return c;
  }

  /// Parses `key = value` lines; blank lines and `#` comments are skipped.
  /// Keys must already exist in this config.
  void merge_text(std::string_view text, const std::string& origin = "config") {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto end = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
      }
      set(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
      if (end == text.size()) break;
    }
  }

  /// Accepts "key=value".
  void set_override(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(kv) + "' is not key=value");
    set(std::string(trim(kv.substr(0, eq))), std::string(trim(kv.substr(eq + 1))));
  }

  void set(const std::string& key, std::string value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = std::move(value);
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  long integer(const std::string& key) const {
    const auto& s = str(key);
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError(key + ": '" + s + "' is not an integer");
    return v;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": '" + s + "' is not a number");
  }

  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": '" + s + "' is not a boolean");
  }

  std::uint64_t seed() const {
    const auto& s = str("seed");
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError("seed: '" + s + "' is not an unsigned integer");
    return v;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted "key=value\n" lines.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  nlohmann::json to_json() const { return nlohmann::json(values_); }

  void merge_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config object expected");
    for (const auto& [k, v] : j.items()) set(k, v.is_string() ? v.get<std::string>() : v.dump());
  }

  EncoderConfig encoder(Domain domain) const {
    EncoderConfig e;
    e.arch = parse_architecture(str("model.arch"));
    e.layers = static_cast<int>(integer("model.layers"));
    e.width = static_cast<int>(integer("model.width"));
    e.mlp_hidden = static_cast<int>(integer("model.mlp_hidden"));
    e.readout = parse_readout(str("model.readout"));
    e.dropout = real("train.dropout");
    e.domain = domain;
    e.validate();
    return e;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.epochs = static_cast<int>(integer("train.epochs"));
    t.batch_size = static_cast<int>(integer("train.batch_size"));
    t.dropout = real("train.dropout");
    t.lr = real("train.lr");
    t.seed = seed();
    t.eval_every = static_cast<int>(integer("train.eval_every"));
    t.max_steps = integer("train.max_steps");
    t.freeze_bn = boolean("train.freeze_bn");
    t.workers = static_cast<int>(integer("train.workers"));
    t.validate();
    return t;
  }

  ContextConfig context() const {
    ContextConfig c;
    c.k = static_cast<int>(integer("context.k"));
    c.r1 = static_cast<int>(integer("context.r1"));
    c.r2 = static_cast<int>(integer("context.r2"));
    c.context_layers = static_cast<int>(integer("context.layers"));
    c.negative_ratio = static_cast<int>(integer("context.negative_ratio"));
    c.centers_per_graph = static_cast<int>(integer("context.centers_per_graph"));
    c.validate();
    return c;
  }

  MaskConfig mask() const {
    MaskConfig m;
    m.rate = real("mask.rate");
    m.target = parse_mask_target(str("mask.target"));
    m.validate();
    return m;
  }

  std::vector<double> split_fracs() const { return {real("split.train"), real("split.valid"), real("split.test")}; }

 private:
  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace pregraph
