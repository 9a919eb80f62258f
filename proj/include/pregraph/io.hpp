#pragma once

// Dataset files (JSON Lines + manifest), molecule CSV ingestion, checkpoints
// and locked file output.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pregraph/chem.hpp"
#include "pregraph/error.hpp"
#include "pregraph/gnn.hpp"
#include "pregraph/graph.hpp"
#include "pregraph/hash.hpp"
#include "pregraph/vocab.hpp"

namespace pregraph::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Writes `bytes` to `p` while holding an exclusive lock on it.
inline void write_file(const fs::path& p, std::string_view bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const int fd = ::open(p.c_str(), O_WRONLY | O_CREAT, 0644);
  if (fd < 0) throw DataError("cannot write '" + p.string() + "': " + std::strerror(errno));
  struct Closer {
    int fd;
    ~Closer() {
      ::flock(fd, LOCK_UN);
      ::close(fd);
    }
  } closer{fd};
  if (::flock(fd, LOCK_EX) != 0 || ::ftruncate(fd, 0) != 0) {
    throw DataError("cannot lock '" + p.string() + "'");
  }
  const char* data = bytes.data();
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto n = ::write(fd, data, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw DataError("write failed on '" + p.string() + "'");
    }
    data += n;
    left -= static_cast<std::size_t>(n);
  }
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in '" + p.string() + "': " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Graph records

inline json graph_to_json(const AttributedGraph& g) {
  json j;
  j["n"] = g.num_nodes;
  j["node_attrs"] = g.node_attrs;
  json edges = json::array();
  for (const auto& e : g.edges) edges.push_back(json::array({e.u, e.v, e.attrs}));
  j["edges"] = std::move(edges);
  if (g.center) j["center"] = *g.center;
  if (!g.labels.empty()) j["labels"] = g.labels;
  if (g.species) j["species"] = *g.species;
  return j;
}

inline AttributedGraph graph_from_json(const json& j, const Vocab& vocab) {
  AttributedGraph g;
  g.vocab = vocab;
  try {
    g.num_nodes = j.at("n").get<int>();
    g.node_attrs = j.at("node_attrs").get<std::vector<std::vector<int>>>();
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 3) throw DataError("edge records are [u, v, [attrs]]");
      g.edges.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<std::vector<int>>()});
    }
    if (j.contains("center")) g.center = j["center"].get<int>();
    if (j.contains("labels")) g.labels = j["labels"].get<std::vector<int>>();
    if (j.contains("species")) g.species = j["species"].get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad graph record: ") + e.what());
  }
  try {
    g.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("invalid graph: ") + e.what());
  }
  for (int l : g.labels) {
    if (l < -1 || l > 1) throw DataError("labels must be -1, 0 or 1");
  }
  return g;
}

/// Hash of a graph's structure and attributes (labels, center and species
/// excluded), with edges normalized to u < v and sorted.
inline std::string structure_hash(const AttributedGraph& g) {
  std::vector<std::tuple<int, int, std::vector<int>>> edges;
  for (const auto& e : g.edges) edges.emplace_back(std::min(e.u, e.v), std::max(e.u, e.v), e.attrs);
  std::sort(edges.begin(), edges.end());
  std::ostringstream os;
  os << g.num_nodes << '|';
  for (const auto& a : g.node_attrs) {
    for (int x : a) os << x << ',';
    os << ';';
  }
  os << '|';
  for (const auto& [u, v, a] : edges) {
    os << u << '-' << v << ':';
    for (int x : a) os << x << ',';
    os << ';';
  }
  return fnv1a_hex(os.str());
}

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  Domain domain = Domain::molecule;
  std::vector<AttributedGraph> graphs;
  std::vector<std::string> task_names;
  std::vector<std::string> smiles;  // aligned with graphs when ingested from CSV
  std::string provenance;

  std::size_t num_tasks() const { return task_names.size(); }
};

inline std::string dataset_jsonl(const Dataset& ds) {
  std::string out;
  for (const auto& g : ds.graphs) {
    out += graph_to_json(g).dump();
    out += '\n';
  }
  return out;
}

inline json vocab_json(const Vocab& v) { return json{{"node_slots", v.node_slots}, {"edge_slots", v.edge_slots}}; }

inline fs::path manifest_path(const fs::path& data) { return fs::path(data.string() + ".manifest.json"); }

inline json dataset_manifest(const Dataset& ds, const std::string& payload) {
  return json{{"domain", to_string(ds.domain)},
              {"graph_count", ds.graphs.size()},
              {"task_count", ds.task_names.size()},
              {"task_names", ds.task_names},
              {"vocab", vocab_json(vocab_for(ds.domain))},
              {"provenance", ds.provenance},
              {"content_hash", fnv1a_hex(payload)}};
}

/// Writes `path` (one graph per line) and its manifest; returns the content hash.
inline std::string write_dataset(const fs::path& path, const Dataset& ds) {
  for (const auto& g : ds.graphs) {
    if (g.labels.size() != ds.task_names.size()) throw DataError("label width does not match task count");
  }
  const auto payload = dataset_jsonl(ds);
  write_file(path, payload);
  const auto m = dataset_manifest(ds, payload);
  write_json(manifest_path(path), m);
  return m["content_hash"].get<std::string>();
}

/// Reads a JSONL dataset. The manifest, when present, supplies domain and task
/// names and its content hash must match the file.
inline Dataset read_dataset(const fs::path& path) {
  const auto payload = read_file(path);
  Dataset ds;
  std::optional<std::size_t> tasks;
  bool domain_known = false;
  const auto mpath = manifest_path(path);
  if (fs::exists(mpath)) {
    const auto m = read_json(mpath);
    try {
      ds.domain = parse_domain(m.at("domain").get<std::string>());
      ds.task_names = m.at("task_names").get<std::vector<std::string>>();
      ds.provenance = m.value("provenance", "");
      if (m.at("content_hash").get<std::string>() != fnv1a_hex(payload)) {
        throw DataError("dataset '" + path.string() + "' does not match its manifest hash");
      }
    } catch (const json::exception& e) {
      throw DataError(std::string("bad manifest: ") + e.what());
    } catch (const InvalidArgument& e) {
      throw DataError(std::string("bad manifest: ") + e.what());
    }
    tasks = ds.task_names.size();
    domain_known = true;
  }
  std::istringstream in(payload);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON");
    }
    if (!domain_known) {
      const auto& attrs = j.value("node_attrs", json::array());
      ds.domain = !attrs.empty() && attrs[0].size() == 1 ? Domain::protein : Domain::molecule;
      domain_known = true;
    }
    try {
      ds.graphs.push_back(graph_from_json(j, vocab_for(ds.domain)));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const auto width = ds.graphs.back().labels.size();
    if (!tasks) tasks = width;
    if (width != *tasks) throw DataError(path.string() + ":" + std::to_string(lineno) + ": label width differs");
  }
  if (ds.task_names.empty() && tasks) {
    for (std::size_t t = 0; t < *tasks; ++t) ds.task_names.push_back("task" + std::to_string(t));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

/// Splits one CSV record (RFC 4180 quoting, no embedded newlines).
inline std::vector<std::string> csv_fields(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw DataError("unterminated quote in CSV record");
  out.push_back(std::move(cur));
  return out;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

/// Molecule CSV: a `smiles` column; every other column is a task with values
/// 0, 1 or empty (missing).
inline Dataset read_molecule_csv(const fs::path& path) {
  const auto text = read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV '" + path.string() + "'");
  auto header = csv_fields(line);
  for (auto& h : header) h = trim(h);
  std::optional<std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string lower = header[i];
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "smiles") col = i;
  }
  if (!col) throw DataError("CSV '" + path.string() + "' has no smiles column");
  Dataset ds;
  ds.domain = Domain::molecule;
  ds.provenance = "csv:" + path.filename().string();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i != *col) ds.task_names.push_back(header[i]);
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    auto f = csv_fields(line);
    if (f.size() != header.size()) throw DataError(where + "expected " + std::to_string(header.size()) + " fields");
    const auto smi = trim(f[*col]);
    AttributedGraph g;
    try {
      g = chem::parse_smiles(smi);
    } catch (const ParseError& e) {
      throw DataError(where + e.what());
    }
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i == *col) continue;
      const auto v = trim(f[i]);
      if (v.empty()) {
        g.labels.push_back(-1);
      } else if (v == "0" || v == "0.0") {
        g.labels.push_back(0);
      } else if (v == "1" || v == "1.0") {
        g.labels.push_back(1);
      } else {
        throw DataError(where + "label '" + v + "' is not 0, 1 or empty");
      }
    }
    ds.graphs.push_back(std::move(g));
    ds.smiles.push_back(smi);
  }
  return ds;
}

/// CSV or JSONL by extension.
inline Dataset load_any(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".csv") return read_molecule_csv(path);
  return read_dataset(path);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout: one line of JSON manifest, then the raw payload of little-endian
// float32 values for every parameter in manifest order.

inline constexpr int kCheckpointVersion = 1;

inline json encoder_config_json(const EncoderConfig& c) {
  return json{{"arch", to_string(c.arch)},       {"layers", c.layers},   {"width", c.width},
              {"mlp_hidden", c.mlp_hidden},      {"dropout", c.dropout}, {"readout", to_string(c.readout)},
              {"domain", to_string(c.domain)}};
}

inline EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.arch = parse_architecture(j.at("arch").get<std::string>());
  c.layers = j.at("layers").get<int>();
  c.width = j.at("width").get<int>();
  c.mlp_hidden = j.at("mlp_hidden").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.readout = parse_readout(j.at("readout").get<std::string>());
  c.domain = parse_domain(j.at("domain").get<std::string>());
  return c;
}

struct Checkpoint {
  json manifest;
  EncoderConfig config;
  std::vector<std::pair<std::string, Tensor<float>>> params;
  std::string content_hash;

  const Tensor<float>* find(std::string_view name) const {
    for (const auto& [n, t] : params) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

inline void append_f32(std::string& out, float x) {
  const auto bits = std::bit_cast<std::uint32_t>(x);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline float read_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

/// Serializes the encoder and any extra parameter stores (e.g. heads, whose
/// names carry their own prefix). Returns the content hash.
inline std::string save_checkpoint(const fs::path& path, const Encoder<float>& enc,
                                   const std::vector<const ParamStore<float>*>& extras = {}, const json& meta = {}) {
  std::string payload;
  json index = json::array();
  auto add = [&](const ParamStore<float>& store) {
    for (const auto& p : store) {
      index.push_back(json{{"name", p.name},
                           {"shape", {p.value.rows(), p.value.cols()}},
                           {"offset", payload.size()},
                           {"trainable", p.trainable}});
      for (float x : p.value.storage()) detail::append_f32(payload, x);
    }
  };
  add(enc.params());
  for (const auto* s : extras) add(*s);
  const auto hash = fnv1a_hex(payload);
  json m{{"format", "pregraph-checkpoint"},
         {"format_version", kCheckpointVersion},
         {"config", encoder_config_json(enc.config())},
         {"params", std::move(index)},
         {"payload_bytes", payload.size()},
         {"content_hash", hash}};
  if (!meta.is_null()) m["meta"] = meta;
  write_file(path, m.dump() + "\n" + payload);
  return hash;
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  const auto bytes = read_file(path);
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw HashMismatch("checkpoint '" + path.string() + "' has no payload");
  Checkpoint ck;
  try {
    ck.manifest = json::parse(bytes.substr(0, nl));
  } catch (const json::exception&) {
    throw CheckpointError("checkpoint '" + path.string() + "' has a malformed manifest");
  }
  try {
    const int version = ck.manifest.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw VersionMismatch("checkpoint format version " + std::to_string(version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
    const std::string_view payload(bytes.data() + nl + 1, bytes.size() - nl - 1);
    ck.content_hash = ck.manifest.at("content_hash").get<std::string>();
    if (payload.size() != ck.manifest.at("payload_bytes").get<std::size_t>() || fnv1a_hex(payload) != ck.content_hash) {
      throw HashMismatch("checkpoint '" + path.string() + "' payload does not match its content hash");
    }
    ck.config = encoder_config_from_json(ck.manifest.at("config"));
    const auto* base = reinterpret_cast<const unsigned char*>(payload.data());
    for (const auto& p : ck.manifest.at("params")) {
      const auto rows = p.at("shape")[0].get<std::size_t>();
      const auto cols = p.at("shape")[1].get<std::size_t>();
      const auto off = p.at("offset").get<std::size_t>();
      if (off + rows * cols * 4 > payload.size()) throw HashMismatch("parameter extends past the payload");
      Tensor<float> t(rows, cols);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::read_f32(base + off + 4 * i);
      ck.params.emplace_back(p.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint manifest: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw CheckpointError(std::string("checkpoint manifest: ") + e.what());
  }
  return ck;
}

/// Copies stored values into every parameter of `store` (optimizer state is reset).
inline void restore(ParamStore<float>& store, const Checkpoint& ck) {
  for (auto& p : store) {
    const auto* t = ck.find(p.name);
    if (!t) throw ShapeMismatch("checkpoint has no parameter '" + p.name + "'");
    if (!t->same_shape(p.value)) {
      throw ShapeMismatch("parameter '" + p.name + "' is " + t->shape_str() + " in the checkpoint, " +
                          p.value.shape_str() + " in the model");
    }
    p.value = *t;
    p.grad.fill(0.0f);
    p.m.fill(0.0f);
    p.v.fill(0.0f);
    p.step = 0;
  }
}

inline void restore(Encoder<float>& enc, const Checkpoint& ck) { restore(enc.params(), ck); }

inline Encoder<float> encoder_from_checkpoint(const Checkpoint& ck) {
  Encoder<float> enc(ck.config, 0);
  restore(enc, ck);
  return enc;
}

}  // namespace pregraph::io
