#pragma once

// The `pregraph` command line: every invocation becomes a run directory named
// by the hash of its command, resolved config and arguments.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pregraph/bench.hpp"
#include "pregraph/chem.hpp"
#include "pregraph/config.hpp"
#include "pregraph/error.hpp"
#include "pregraph/gnn.hpp"
#include "pregraph/gradcheck.hpp"
#include "pregraph/hash.hpp"
#include "pregraph/io.hpp"
#include "pregraph/metrics.hpp"
#include "pregraph/split.hpp"
#include "pregraph/train.hpp"

namespace pregraph::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

inline constexpr double kGradTolerance = 1e-4;

template <class E>
bool is_a(const std::exception& e) {
  return dynamic_cast<const E*>(&e) != nullptr;
}

/// Exception class name and exit code.
inline std::pair<std::string, int> classify(const std::exception& e) {
  if (is_a<VersionMismatch>(e)) return {"VersionMismatch", kExitData};
  if (is_a<HashMismatch>(e)) return {"HashMismatch", kExitData};
  if (is_a<ShapeMismatch>(e)) return {"ShapeMismatch", kExitData};
  if (is_a<CheckpointError>(e)) return {"CheckpointError", kExitData};
  if (is_a<LeakageError>(e)) return {"LeakageError", kExitData};
  if (is_a<ParseError>(e)) return {"ParseError", kExitData};
  if (is_a<DataError>(e)) return {"DataError", kExitData};
  if (is_a<UndefinedMetric>(e)) return {"UndefinedMetric", kExitData};
  if (is_a<DivergenceError>(e)) return {"DivergenceError", kExitNumeric};
  if (is_a<ConfigError>(e)) return {"ConfigError", kExitUsage};
  if (is_a<InvalidArgument>(e)) return {"InvalidArgument", kExitUsage};
  if (is_a<CLI::Error>(e)) return {"UsageError", kExitUsage};
  if (is_a<std::ios_base::failure>(e) || is_a<std::filesystem::filesystem_error>(e)) return {"IOError", kExitData};
  return {"InternalError", kExitData};
}

/// `reason="..."` with quotes, backslashes and line breaks escaped.
inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (c == '\n' || c == '\r') {
      out += ' ';
    } else {
      out += c;
    }
  }
  return out + "\"";
}

/// What a run needs to be re-executed.
struct RunSpec {
  std::string command;
  Config config;
  std::map<std::string, std::string> args;  // command-specific flags, by name without dashes

  std::string arg(const std::string& name, const std::string& fallback = "") const {
    auto it = args.find(name);
    return it == args.end() ? fallback : it->second;
  }
  std::string required(const std::string& name) const {
    auto it = args.find(name);
    if (it == args.end() || it->second.empty()) throw ConfigError(command + " needs --" + name);
    return it->second;
  }

  std::string hash() const {
    std::string text = command + "\n" + config.canonical();
    for (const auto& [k, v] : args) text += "--" + k + "=" + v + "\n";
    return fnv1a_hex(text);
  }
};

/// Output directory and the run.json record being built up.
class Run {
 public:
  Run(const RunSpec& spec, const fs::path& root) : spec_(spec) {
    dir_ = root / (spec.command + "-" + spec.hash().substr(0, 12));
    fs::create_directories(dir_);
    record_ = json{{"command", spec.command},
                   {"args", spec.args},
                   {"config", spec.config.to_json()},
                   {"seed", spec.config.str("seed")},
                   {"run_hash", spec.hash()},
                   {"status", "running"},
                   {"artifacts", json::object()},
                   {"inputs", json::object()}};
    for (const auto& key : {"input", "split", "init", "ckpt", "exclude", "exclude-split"}) {
      auto it = spec.args.find(key);
      if (it != spec.args.end() && fs::is_regular_file(it->second)) {
        record_["inputs"][it->second] = fnv1a_hex(io::read_file(it->second));
      }
    }
    save();
  }

  const fs::path& dir() const { return dir_; }
  fs::path path(const std::string& name) const { return dir_ / name; }
  json& record() { return record_; }

  /// Registers an artifact already written under the run directory.
  void artifact(const std::string& name) { record_["artifacts"][name] = fnv1a_hex(io::read_file(path(name))); }

  void write(const std::string& name, std::string_view bytes) {
    io::write_file(path(name), bytes);
    artifact(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  void finish(const std::string& status, double seconds, int exit_code) {
    record_["status"] = status;
    record_["wall_seconds"] = seconds;
    record_["exit_code"] = exit_code;
    save();
  }

 private:
  void save() const { io::write_json(dir_ / "run.json", record_); }

  RunSpec spec_;
  fs::path dir_;
  json record_;
};

namespace detail {

inline std::vector<AttributedGraph> take(const std::vector<AttributedGraph>& graphs,
                                         const std::vector<std::size_t>& idx) {
  std::vector<AttributedGraph> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(graphs.at(i));
  return out;
}

inline SplitAssignment read_split(const std::string& path, std::size_t n) {
  auto s = SplitAssignment::from_json(io::read_json(path));
  s.validate(n);
  return s;
}

inline const std::vector<std::size_t>& part(const SplitAssignment& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "valid") return s.valid;
  if (name == "test") return s.test;
  if (name == "prior") {
    if (!s.prior) throw DataError("split has no prior part");
    return *s.prior;
  }
  throw ConfigError("unknown split part '" + name + "'");
}

inline json task_report(const TaskAuc& auc, const std::vector<std::string>& names) {
  json per = json::object();
  for (std::size_t t = 0; t < auc.per_task.size(); ++t) {
    const auto key = t < names.size() ? names[t] : "task" + std::to_string(t);
    per[key] = auc.per_task[t] ? json(*auc.per_task[t]) : json(nullptr);
  }
  return json{{"per_task", per}, {"mean", auc.mean ? json(*auc.mean) : json(nullptr)}, {"evaluable", auc.evaluable}};
}

inline std::string dataset_hash(const io::Dataset& ds) { return fnv1a_hex(io::dataset_jsonl(ds)); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each returns an exit code and writes its artifacts into `run`.

inline int cmd_parse(const RunSpec& spec, Run& run, std::ostream& out) {
  const auto ds = io::read_molecule_csv(spec.required("input"));
  const auto hash = io::write_dataset(run.path("dataset.jsonl"), ds);
  run.artifact("dataset.jsonl");
  run.artifact("dataset.jsonl.manifest.json");
  out << "graphs=" << ds.graphs.size() << " tasks=" << ds.num_tasks() << " hash=" << hash << "\n";
  return kExitOk;
}

inline int cmd_scaffold(const RunSpec& spec, Run& run, std::ostream& out) {
  const auto ds = io::load_any(spec.required("input"));
  if (ds.domain != Domain::molecule) throw DataError("scaffolds are defined for molecules only");
  std::string csv = "index,scaffold_smiles,scaffold_key\n";
  std::map<std::string, std::size_t> groups;
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
    const auto scaffold = chem::murcko_scaffold(ds.graphs[i]);
    const auto key = chem::canonical_key(scaffold);
    ++groups[key];
    csv += std::to_string(i) + "," + chem::render_smiles(scaffold) + "," + key + "\n";
  }
  run.write("scaffolds.csv", csv);
  out << "molecules=" << ds.graphs.size() << " scaffolds=" << groups.size() << "\n";
  return kExitOk;
}

inline int cmd_split(const RunSpec& spec, Run& run, std::ostream& out, std::ostream& err) {
  const auto ds = io::load_any(spec.required("input"));
  const auto rule = spec.arg("rule", "scaffold");
  const auto fracs = spec.config.split_fracs();
  SplitAssignment s;
  if (rule == "scaffold") {
    if (ds.domain != Domain::molecule) throw DataError("scaffold split needs molecules");
    s = scaffold_split(std::span<const AttributedGraph>(ds.graphs), fracs);
  } else if (rule == "species") {
    s = species_split(std::span<const AttributedGraph>(ds.graphs), spec.required("target-species"), spec.config.seed());
  } else if (rule == "random") {
    s = random_split(ds.graphs.size(), spec.config.seed(), fracs);
  } else {
    throw ConfigError("unknown split rule '" + rule + "'");
  }
  s.validate(ds.graphs.size());
  run.write_json("split.json", s.to_json());
  for (const auto& w : s.warnings) err << "pregraph: warning=DegenerateSplit reason=" << quote(w) << "\n";
  run.record()["warnings"] = s.warnings;
  out << "train=" << s.train.size() << " valid=" << s.valid.size() << " test=" << s.test.size();
  if (s.prior) out << " prior=" << s.prior->size();
  out << "\n";
  return kExitOk;
}

inline int cmd_gen(const RunSpec& spec, Run& run, std::ostream& out) {
  const auto kind = bench::parse_kind(spec.required("kind"));
  std::size_t size = 0;
  try {
    size = std::stoul(spec.required("size"));
  } catch (const std::logic_error&) {
    throw ConfigError("--size must be a positive integer");
  }
  const auto seed = spec.config.seed();
  auto save = [&](const std::string& name, const io::Dataset& ds) {
    io::write_dataset(run.path(name), ds);
    run.artifact(name);
    run.artifact(name + ".manifest.json");
  };
  switch (kind) {
    case bench::Kind::context_classes:
      save("dataset.jsonl", bench::context_classes(size, seed));
      break;
    case bench::Kind::masked_rule:
      save("dataset.jsonl", bench::masked_rule(size, seed));
      break;
    case bench::Kind::transfer: {
      const auto t = bench::transfer(size, seed);
      save("pretrain.jsonl", t.pretrain);
      save("downstream.jsonl", t.downstream);
      run.write_json("split.json", t.split.to_json());
      break;
    }
  }
  out << "kind=" << spec.arg("kind") << " size=" << size << " seed=" << seed << "\n";
  return kExitOk;
}

inline int cmd_pretrain(const RunSpec& spec, Run& run, std::ostream& out) {
  const auto ds = io::load_any(spec.required("input"));
  PretrainSetup setup;
  setup.objective = parse_objective(spec.arg("task", "context"));
  setup.context = spec.config.context();
  setup.mask = spec.config.mask();
  setup.tasks = ds.num_tasks();
  const auto cfg = spec.config.train();

  std::vector<AttributedGraph> train = ds.graphs, valid;
  if (!spec.arg("split").empty()) {
    const auto s = detail::read_split(spec.arg("split"), ds.graphs.size());
    train = detail::take(ds.graphs, detail::part(s, spec.arg("part", "train")));
    valid = detail::take(ds.graphs, s.valid);
  }

  if (setup.objective == Objective::supervised) {
    if (spec.arg("exclude").empty() || spec.arg("exclude-split").empty()) {
      throw LeakageError("supervised pre-training needs --exclude <downstream data> and --exclude-split <split.json>");
    }
    const auto down = io::load_any(spec.arg("exclude"));
    const auto ds_split = detail::read_split(spec.arg("exclude-split"), down.graphs.size());
    // Both the training and the validation graphs must be clean.
    std::vector<AttributedGraph> used = train;
    used.insert(used.end(), valid.begin(), valid.end());
    const auto checked = check_no_leakage(used, down.graphs, ds_split.test);
    run.record()["leakage_check"] = json{{"downstream", spec.arg("exclude")},
                                         {"test_graphs", checked},
                                         {"pretrain_graphs", used.size()},
                                         {"overlap", 0}};
  }

  Encoder<float> enc(spec.config.encoder(ds.domain), mix_seed(cfg.seed, 1));
  const auto res = pretrain_run(enc, setup, train, valid, cfg);
  run.write("curves.csv", res.curves.to_csv());
  const json meta{{"objective", to_string(setup.objective)},
                  {"seed", cfg.seed},
                  {"dataset_hash", detail::dataset_hash(ds)},
                  {"steps", res.steps}};
  const auto hash = io::save_checkpoint(run.path("encoder.ckpt"), enc, {}, meta);
  run.artifact("encoder.ckpt");
  json report = meta;
  report["checkpoint_hash"] = hash;
  if (!res.curves.rows.empty()) {
    const auto& last = res.curves.rows.back();
    report["final_train_loss"] = last.train_loss;
    report["final_train_metric"] = last.train_metric;
    if (std::isfinite(last.valid_metric)) report["final_valid_metric"] = last.valid_metric;
    if (std::isfinite(last.valid_loss)) report["final_valid_loss"] = last.valid_loss;
  }
  run.write_json("report.json", report);
  out << "objective=" << to_string(setup.objective) << " steps=" << res.steps << " checkpoint_hash=" << hash << "\n";
  return kExitOk;
}

inline int cmd_finetune(const RunSpec& spec, Run& run, std::ostream& out) {
  const auto ds = io::load_any(spec.required("input"));
  if (ds.num_tasks() == 0) throw DataError("fine-tuning needs labelled graphs");
  const auto s = detail::read_split(spec.required("split"), ds.graphs.size());
  const auto cfg = spec.config.train();
  std::optional<Encoder<float>> enc;
  std::optional<std::string> init_hash;
  if (!spec.arg("init").empty()) {
    const auto ck = io::load_checkpoint(spec.arg("init"));
    if (ck.config.domain != ds.domain) {
      throw ShapeMismatch("checkpoint domain " + to_string(ck.config.domain) + " does not match the dataset");
    }
    enc.emplace(io::encoder_from_checkpoint(ck));
    init_hash = ck.content_hash;
  } else {
    enc.emplace(spec.config.encoder(ds.domain), mix_seed(cfg.seed, 1));
  }
  LinearHead<float> head(enc->graph_dim(), ds.num_tasks(), mix_seed(cfg.seed, 2));
  const auto train = detail::take(ds.graphs, s.train), valid = detail::take(ds.graphs, s.valid),
             test = detail::take(ds.graphs, s.test);
  const auto res = finetune(*enc, head, train, valid, test, cfg);
  run.write("curves.csv", res.curves.to_csv());
  const json meta{{"tasks", ds.num_tasks()}, {"task_names", ds.task_names}, {"seed", cfg.seed}};
  io::save_checkpoint(run.path("best.ckpt"), res.best_encoder, {&res.best_head.params()}, meta);
  run.artifact("best.ckpt");
  json report = detail::task_report(res.test, ds.task_names);
  report["best_epoch"] = res.best_epoch;
  report["best_valid_mean"] = res.best_valid ? json(*res.best_valid) : json(nullptr);
  report["seed"] = cfg.seed;
  report["init_checkpoint"] = init_hash ? json(spec.arg("init")) : json(nullptr);
  report["init_checkpoint_hash"] = init_hash ? json(*init_hash) : json(nullptr);
  report["steps"] = res.steps;
  run.write_json("report.json", report);
  out << "best_epoch=" << res.best_epoch << " test_mean_auc=";
  if (res.test.mean) {
    out << *res.test.mean;
  } else {
    out << "undefined";
  }
  out << "\n";
  return kExitOk;
}

inline int cmd_eval(const RunSpec& spec, Run& run, std::ostream& out) {
  const auto ck = io::load_checkpoint(spec.required("ckpt"));
  const auto ds = io::load_any(spec.required("input"));
  if (ck.config.domain != ds.domain) throw ShapeMismatch("checkpoint domain does not match the dataset");
  const auto enc = io::encoder_from_checkpoint(ck);
  const auto meta = ck.manifest.value("meta", json::object());
  if (!meta.contains("tasks")) throw CheckpointError("checkpoint carries no prediction head");
  LinearHead<float> head(enc.graph_dim(), meta["tasks"].get<std::size_t>(), 0);
  io::restore(head.params(), ck);
  if (head.out_dim() != ds.num_tasks()) throw ShapeMismatch("head predicts a different number of tasks");
  std::vector<AttributedGraph> graphs = ds.graphs;
  std::vector<std::size_t> index(ds.graphs.size());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
  if (!spec.arg("split").empty()) {
    const auto s = detail::read_split(spec.arg("split"), ds.graphs.size());
    index = detail::part(s, spec.arg("part", "test"));
    graphs = detail::take(ds.graphs, index);
  }
  const int workers = static_cast<int>(spec.config.integer("train.workers"));
  std::vector<const AttributedGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  const auto logits = predict(enc, head, std::span<const AttributedGraph* const>(ptrs), workers);
  std::string csv = "index";
  for (const auto& t : ds.task_names) csv += "," + t;
  csv += "\n";
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    csv += std::to_string(index[i]);
    for (std::size_t t = 0; t < head.out_dim(); ++t) csv += "," + std::to_string(logits(i, t));
    csv += "\n";
  }
  run.write("predictions.csv", csv);
  const auto auc = evaluate_tasks<float>(enc, head, std::span<const AttributedGraph* const>(ptrs), workers);
  json report = detail::task_report(auc, ds.task_names);
  report["checkpoint_hash"] = ck.content_hash;
  report["graphs"] = graphs.size();
  run.write_json("report.json", report);
  out << "graphs=" << graphs.size() << " mean_auc=";
  if (auc.mean) {
    out << *auc.mean;
  } else {
    out << "undefined";
  }
  out << "\n";
  return kExitOk;
}

inline int cmd_gradcheck(const RunSpec& spec, Run& run, std::ostream& out) {
  const auto arch = parse_architecture(spec.arg("model", "gin"));
  if (spec.arg("precision", "double") != "double") {
    throw ConfigError("gradient checks run in double precision only");
  }
  const auto results = gradcheck_objectives(arch, spec.config.seed());
  double worst = 0.0;
  json report = json::object();
  for (const auto& r : results) {
    worst = std::max(worst, r.result.max_rel_error);
    report[r.objective] = json{{"max_rel_error", r.result.max_rel_error},
                               {"coordinates", r.result.coordinates},
                               {"worst", r.result.worst}};
    out << "objective=" << r.objective << " max_rel_error=" << r.result.max_rel_error
        << " coordinates=" << r.result.coordinates << "\n";
  }
  report["max_rel_error"] = worst;
  report["tolerance"] = kGradTolerance;
  report["passed"] = worst < kGradTolerance;
  run.write_json("report.json", report);
  out << "max_rel_error=" << worst << "\n";
  if (worst >= kGradTolerance) {
    throw DivergenceError("gradient check failed: max relative error " + std::to_string(worst));
  }
  return kExitOk;
}

inline int cmd_inspect(const RunSpec& spec, Run& run, std::ostream& out) {
  const auto ck = io::load_checkpoint(spec.required("ckpt"));
  json params = json::array();
  std::size_t scalars = 0;
  for (const auto& [name, t] : ck.params) {
    params.push_back(json{{"name", name}, {"shape", {t.rows(), t.cols()}}});
    scalars += t.size();
  }
  json summary{{"format_version", ck.manifest.value("format_version", 0)},
               {"content_hash", ck.content_hash},
               {"config", io::encoder_config_json(ck.config)},
               {"parameters", params.size()},
               {"scalars", scalars},
               {"params", params},
               {"meta", ck.manifest.value("meta", json::object())}};
  run.write_json("summary.json", summary);
  out << summary.dump(2) << "\n";
  return kExitOk;
}

inline int execute(const RunSpec& spec, Run& run, std::ostream& out, std::ostream& err) {
  const auto& c = spec.command;
  if (c == "parse") return cmd_parse(spec, run, out);
  if (c == "scaffold") return cmd_scaffold(spec, run, out);
  if (c == "split") return cmd_split(spec, run, out, err);
  if (c == "gen") return cmd_gen(spec, run, out);
  if (c == "pretrain") return cmd_pretrain(spec, run, out);
  if (c == "finetune") return cmd_finetune(spec, run, out);
  if (c == "eval") return cmd_eval(spec, run, out);
  if (c == "gradcheck") return cmd_gradcheck(spec, run, out);
  if (c == "inspect") return cmd_inspect(spec, run, out);
  throw ConfigError("unknown command '" + c + "'");
}

inline fs::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("PREGRAPH_OUT"); env && *env) return env;
  return "runs";
}

/// Runs a fully resolved spec: creates the run directory, records run.json
/// before and after, and maps errors to exit codes.
inline int run_spec(const RunSpec& spec, const fs::path& root, std::ostream& out, std::ostream& err) {
  std::optional<Run> run;
  const auto t0 = std::chrono::steady_clock::now();
  auto seconds = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  try {
    run.emplace(spec, root);
    const int code = execute(spec, *run, out, err);
    run->finish("ok", seconds(), code);
    out << "run_dir=" << run->dir().string() << "\n";
    return code;
  } catch (const std::exception& e) {
    const auto [name, code] = classify(e);
    err << "pregraph: error=" << name << " reason=" << quote(e.what()) << "\n";
    if (run) {
      run->record()["error"] = json{{"class", name}, {"reason", e.what()}};
      try {
        run->finish("failed", seconds(), code);
      } catch (const std::exception&) {
      }
    }
    return code;
  }
}

/// Entry point. `pregraph replay <run.json>` re-executes a recorded run.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Graph neural network pre-training toolkit", "pregraph"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  struct Common {
    std::string config, out, seed;
    std::vector<std::string> sets;
    std::string workers;
  };
  std::map<std::string, Common> common;
  std::map<std::string, std::map<std::string, std::string>> args;
  std::string replay_path;

  auto add = [&](const std::string& name, const std::string& help,
                 const std::vector<std::pair<std::string, std::string>>& flags) {
    auto* sub = app.add_subcommand(name, help);
    auto& c = common[name];
    sub->add_option("--config", c.config, "key = value config file");
    sub->add_option("--seed", c.seed, "run seed");
    sub->add_option("--out", c.out, "output root (default $PREGRAPH_OUT or ./runs)");
    sub->add_option("--set", c.sets, "override key=value (repeatable)");
    sub->add_option("--workers", c.workers, "evaluation worker threads");
    for (const auto& [flag, desc] : flags) sub->add_option("--" + flag, args[name][flag], desc);
    return sub;
  };
  add("parse", "SMILES CSV to JSONL dataset", {{"input", "CSV with a smiles column"}});
  add("scaffold", "emit Murcko scaffold keys", {{"input", "molecule dataset"}});
  add("split", "scaffold, species or random split",
      {{"input", "dataset"}, {"rule", "scaffold|species|random"}, {"target-species", "species for the test/prior parts"}});
  add("gen", "generate a planted benchmark",
      {{"kind", "context-classes|masked-rule|transfer"}, {"size", "number of graphs (>= 64)"}});
  add("pretrain", "pre-train an encoder",
      {{"input", "dataset"},
       {"task", "context|mask|edgepred|supervised"},
       {"split", "optional split.json"},
       {"part", "split part to train on (default train)"},
       {"exclude", "downstream dataset whose test graphs must be absent"},
       {"exclude-split", "split.json of the downstream dataset"}});
  add("finetune", "fine-tune on a labelled split",
      {{"input", "dataset"}, {"split", "split.json"}, {"init", "pre-trained checkpoint"}});
  add("eval", "evaluate a fine-tuned checkpoint",
      {{"ckpt", "checkpoint"}, {"input", "dataset"}, {"split", "optional split.json"}, {"part", "default test"}});
  add("gradcheck", "finite-difference check of every objective",
      {{"model", "gin|gcn|sage"}, {"precision", "double"}});
  add("inspect", "summarize a checkpoint", {{"ckpt", "checkpoint"}});
  auto* replay = app.add_subcommand("replay", "re-execute a run from its run.json");
  replay->add_option("run_json", replay_path, "run.json")->required();
  auto& replay_common = common["replay"];
  replay->add_option("--out", replay_common.out, "output root");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "pregraph: error=UsageError reason=" << quote(e.what()) << "\n";
    return kExitUsage;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  RunSpec spec;
  try {
    if (name == "replay") {
      const auto rec = io::read_json(replay_path);
      spec.command = rec.at("command").get<std::string>();
      const auto ra = rec.at("args").get<std::map<std::string, std::string>>();
      spec.args = ra;
      spec.config = Config::defaults(spec.command, spec.arg("task"));
      spec.config.merge_json(rec.at("config"));
      return run_spec(spec, output_root(replay_common.out), out, err);
    }
    spec.command = name;
    for (const auto& [k, v] : args[name]) {
      if (sub->count("--" + k)) spec.args[k] = v;
    }
    const auto& c = common[name];
    spec.config = Config::defaults(name, spec.arg("task", name == "pretrain" ? "context" : ""));
    if (!c.config.empty()) spec.config.merge_text(io::read_file(c.config), c.config);
    for (const auto& kv : c.sets) spec.config.set_override(kv);
    if (!c.seed.empty()) spec.config.set("seed", c.seed);
    if (!c.workers.empty()) spec.config.set("train.workers", c.workers);
    spec.config.seed();
    return run_spec(spec, output_root(c.out), out, err);
  } catch (const std::exception& e) {
    const auto [cls, code] = classify(e);
    err << "pregraph: error=" << cls << " reason=" << quote(e.what()) << "\n";
    return code;
  }
}

}  // namespace pregraph::cli
