#pragma once

// Minimal SMILES reader/writer, ring perception, Bemis-Murcko scaffolds and a
// refinement-coloring canonical key for grouping molecules by scaffold.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pregraph/error.hpp"
#include "pregraph/graph.hpp"
#include "pregraph/hash.hpp"
#include "pregraph/vocab.hpp"

namespace pregraph::chem {

inline constexpr std::array<std::string_view, 118> kElements = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",  "S",  "Cl", "Ar",
    "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe",
    "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf",
    "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs",
    "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

/// Atomic number for an element symbol, 0 if unknown.
inline int atomic_number_of(std::string_view symbol) {
  for (std::size_t i = 0; i < kElements.size(); ++i) {
    if (kElements[i] == symbol) return static_cast<int>(i) + 1;
  }
  return 0;
}

inline std::string_view element_symbol(int atomic_number) {
  if (atomic_number < 1 || atomic_number > 118) throw InvalidArgument("atomic number out of range");
  return kElements[static_cast<std::size_t>(atomic_number - 1)];
}

/// Edges lying on at least one cycle: an edge is a ring edge iff its endpoints
/// stay connected after removing it.
inline std::vector<bool> ring_edges(const AttributedGraph& g) {
  const Adjacency adj(g);
  std::vector<bool> in_ring(g.edges.size(), false);
  std::vector<int> seen(static_cast<std::size_t>(g.num_nodes), -1);
  std::vector<int> stack;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const int src = g.edges[e].u;
    const int dst = g.edges[e].v;
    const int stamp = static_cast<int>(e);
    stack.assign(1, src);
    seen[src] = stamp;
    bool found = false;
    while (!stack.empty() && !found) {
      const int x = stack.back();
      stack.pop_back();
      const auto nb = adj.neighbors(x);
      const auto ids = adj.edge_ids(x);
      for (std::size_t k = 0; k < nb.size(); ++k) {
        if (ids[k] == stamp || seen[nb[k]] == stamp) continue;
        if (nb[k] == dst) {
          found = true;
          break;
        }
        seen[nb[k]] = stamp;
        stack.push_back(nb[k]);
      }
    }
    in_ring[e] = found;
  }
  return in_ring;
}

namespace detail {

struct PendingBond {
  char symbol = 0;  // 0 = implicit
  std::size_t offset = 0;
};

struct RawBond {
  int u;
  int v;
  char symbol;
};

class SmilesReader {
 public:
  explicit SmilesReader(std::string_view text) : s_(text) {}

  AttributedGraph read() {
    if (s_.empty()) throw ParseError("empty SMILES", 0);
    std::size_t i = 0;
    while (i < s_.size()) {
      const char c = s_[i];
      if (c == '(') {
        if (prev_ < 0) throw ParseError("branch without preceding atom", i);
        if (bond_.symbol) throw ParseError("bond before branch", i);
        if (i + 1 < s_.size() && s_[i + 1] == ')') throw ParseError("empty branch", i + 1);
        branches_.push_back({prev_, i});
        ++i;
      } else if (c == ')') {
        if (branches_.empty()) throw ParseError("unbalanced ')'", i);
        if (bond_.symbol) throw ParseError("dangling bond", bond_.offset);
        prev_ = branches_.back().first;
        branches_.pop_back();
        ++i;
      } else if (c == '-' || c == '=' || c == '#' || c == ':' || c == '/' || c == '\\') {
        if (bond_.symbol) throw ParseError("consecutive bond symbols", i);
        if (prev_ < 0) throw ParseError("bond without preceding atom", i);
        bond_ = {c, i};
        ++i;
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        ring_closure(c - '0', i);
        ++i;
      } else if (c == '%') {
        if (i + 2 >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[i + 1])) ||
            !std::isdigit(static_cast<unsigned char>(s_[i + 2]))) {
          throw ParseError("malformed %nn ring closure", i);
        }
        ring_closure((s_[i + 1] - '0') * 10 + (s_[i + 2] - '0'), i);
        i += 3;
      } else if (c == '[') {
        i = bracket_atom(i);
      } else if (c == '.') {
        throw ParseError("multi-fragment SMILES not supported", i);
      } else {
        i = organic_atom(i);
      }
    }
    if (!branches_.empty()) throw ParseError("unbalanced '('", s_.size());
    if (bond_.symbol) throw ParseError("dangling bond", bond_.offset);
    if (!rings_.empty()) throw ParseError("unclosed ring bond", rings_.begin()->second.offset);
    return build();
  }

 private:
  struct Atom {
    int z;
    bool aromatic;
    int chirality;
  };
  struct OpenRing {
    int atom;
    char symbol;
    std::size_t offset;
  };

  void add_atom(int z, bool aromatic, int chirality, std::size_t offset) {
    if (prev_ < 0 && !atoms_.empty()) throw ParseError("multi-fragment SMILES not supported", offset);
    const int a = static_cast<int>(atoms_.size());
    atoms_.push_back({z, aromatic, chirality});
    if (prev_ >= 0) add_bond(prev_, a, bond_.symbol, offset);
    bond_ = {};
    prev_ = a;
  }

  void add_bond(int u, int v, char symbol, std::size_t offset) {
    if (u == v) throw ParseError("ring closure onto the same atom", offset);
    for (const auto& b : bonds_) {
      if ((b.u == u && b.v == v) || (b.u == v && b.v == u)) throw ParseError("duplicate bond", offset);
    }
    bonds_.push_back({u, v, symbol});
  }

  void ring_closure(int digit, std::size_t offset) {
    if (prev_ < 0) throw ParseError("ring closure without atom", offset);
    auto it = rings_.find(digit);
    if (it == rings_.end()) {
      rings_[digit] = {prev_, bond_.symbol, offset};
    } else {
      char symbol = it->second.symbol;
      if (bond_.symbol) {
        if (symbol && symbol != bond_.symbol) throw ParseError("conflicting ring bond symbols", offset);
        symbol = bond_.symbol;
      }
      add_bond(it->second.atom, prev_, symbol, offset);
      rings_.erase(it);
    }
    bond_ = {};
  }

  std::size_t organic_atom(std::size_t i) {
    const char c = s_[i];
    if (c == 'C' && i + 1 < s_.size() && s_[i + 1] == 'l') {
      add_atom(17, false, molecule::kChiralUnspecified, i);
      return i + 2;
    }
    if (c == 'B' && i + 1 < s_.size() && s_[i + 1] == 'r') {
      add_atom(35, false, molecule::kChiralUnspecified, i);
      return i + 2;
    }
    int z = 0;
    bool aromatic = false;
    switch (c) {
      case 'B': z = 5; break;
      case 'C': z = 6; break;
      case 'N': z = 7; break;
      case 'O': z = 8; break;
      case 'P': z = 15; break;
      case 'S': z = 16; break;
      case 'F': z = 9; break;
      case 'I': z = 53; break;
      case 'b': z = 5; aromatic = true; break;
      case 'c': z = 6; aromatic = true; break;
      case 'n': z = 7; aromatic = true; break;
      case 'o': z = 8; aromatic = true; break;
      case 'p': z = 15; aromatic = true; break;
      case 's': z = 16; aromatic = true; break;
      default: throw ParseError(std::string("unknown element or character '") + c + "'", i);
    }
    add_atom(z, aromatic, molecule::kChiralUnspecified, i);
    return i + 1;
  }

  std::size_t bracket_atom(std::size_t open) {
    std::size_t i = open + 1;
    auto at = [&](std::size_t k) -> char { return k < s_.size() ? s_[k] : '\0'; };
    if (std::isdigit(static_cast<unsigned char>(at(i)))) throw ParseError("isotopes not supported", i);

    int z = 0;
    bool aromatic = false;
    const std::size_t sym_at = i;
    if (std::islower(static_cast<unsigned char>(at(i)))) {
      static constexpr std::array<std::string_view, 3> two = {"se", "as", "te"};
      for (auto t : two) {
        if (s_.substr(i, 2) == t) {
          z = atomic_number_of(std::string{static_cast<char>(std::toupper(t[0])), t[1]});
          i += 2;
          break;
        }
      }
      if (!z) {
        static constexpr std::string_view one = "bcnops";
        if (one.find(at(i)) == std::string_view::npos) throw ParseError("unknown aromatic element", i);
        z = atomic_number_of(std::string(1, static_cast<char>(std::toupper(at(i)))));
        ++i;
      }
      aromatic = true;
    } else if (std::isupper(static_cast<unsigned char>(at(i)))) {
      if (std::islower(static_cast<unsigned char>(at(i + 1)))) {
        z = atomic_number_of(s_.substr(i, 2));
        if (z) i += 2;
      }
      if (!z) {
        z = atomic_number_of(s_.substr(i, 1));
        if (!z) throw ParseError("unknown element", i);
        ++i;
      }
    } else {
      throw ParseError("expected element symbol", i);
    }
    (void)sym_at;

    int chirality = molecule::kChiralUnspecified;
    if (at(i) == '@') {
      if (at(i + 1) == '@') {
        chirality = molecule::kChiralCW;
        i += 2;
      } else if (std::isupper(static_cast<unsigned char>(at(i + 1))) && at(i + 1) != 'H') {
        // @TH1, @AL1, @SP1, @TB5, @OH12 ...
        i += 1;
        while (std::isupper(static_cast<unsigned char>(at(i)))) ++i;
        if (!std::isdigit(static_cast<unsigned char>(at(i)))) throw ParseError("malformed chirality class", i);
        while (std::isdigit(static_cast<unsigned char>(at(i)))) ++i;
        chirality = molecule::kChiralOther;
      } else {
        chirality = molecule::kChiralCCW;
        i += 1;
      }
    }
    if (at(i) == 'H') {
      ++i;
      while (std::isdigit(static_cast<unsigned char>(at(i)))) ++i;
    }
    if (at(i) == '+' || at(i) == '-') {
      const char sign = at(i);
      ++i;
      if (std::isdigit(static_cast<unsigned char>(at(i)))) {
        while (std::isdigit(static_cast<unsigned char>(at(i)))) ++i;
      } else {
        while (at(i) == sign) ++i;
      }
      if (at(i) == '+' || at(i) == '-') throw ParseError("invalid charge syntax", i);
    }
    if (at(i) == ':') {
      ++i;
      if (!std::isdigit(static_cast<unsigned char>(at(i)))) throw ParseError("malformed atom class", i);
      while (std::isdigit(static_cast<unsigned char>(at(i)))) ++i;
    }
    if (at(i) != ']') {
      if (i >= s_.size()) throw ParseError("unterminated bracket atom", i);
      throw ParseError("invalid charge syntax", i);
    }
    add_atom(z, aromatic, chirality, open);
    return i + 1;
  }

  AttributedGraph build() const {
    AttributedGraph g;
    g.vocab = molecule_vocab();
    g.num_nodes = static_cast<int>(atoms_.size());
    for (const auto& a : atoms_) g.node_attrs.push_back({molecule::atom_index(a.z), a.chirality});
    std::vector<bool> implicit_aromatic(bonds_.size(), false);
    for (std::size_t k = 0; k < bonds_.size(); ++k) {
      const auto& b = bonds_[k];
      int type = molecule::kBondSingle;
      int dir = molecule::kDirNone;
      switch (b.symbol) {
        case '=': type = molecule::kBondDouble; break;
        case '#': type = molecule::kBondTriple; break;
        case ':': type = molecule::kBondAromatic; break;
        case '/': dir = molecule::kDirEndUpRight; break;
        case '\\': dir = molecule::kDirEndDownRight; break;
        case 0:
          if (atoms_[b.u].aromatic && atoms_[b.v].aromatic) {
            type = molecule::kBondAromatic;
            implicit_aromatic[k] = true;
          }
          break;
        default: break;
      }
      g.edges.push_back({b.u, b.v, {type, dir}});
    }
    // An unmarked bond joining two aromatic atoms of different rings is single.
    if (std::find(implicit_aromatic.begin(), implicit_aromatic.end(), true) != implicit_aromatic.end()) {
      const auto ring = ring_edges(g);
      for (std::size_t k = 0; k < g.edges.size(); ++k) {
        if (implicit_aromatic[k] && !ring[k]) g.edges[k].attrs[0] = molecule::kBondSingle;
      }
    }
    return g;
  }

  std::string_view s_;
  std::vector<Atom> atoms_;
  std::vector<RawBond> bonds_;
  std::vector<std::pair<int, std::size_t>> branches_;
  std::map<int, OpenRing> rings_;
  PendingBond bond_;
  int prev_ = -1;
};

}  // namespace detail

/// Parses the supported SMILES subset into a molecule-domain graph.
/// Implicit hydrogens are not materialized. Throws ParseError with a byte offset.
inline AttributedGraph parse_smiles(std::string_view text) { return detail::SmilesReader(text).read(); }

/// Writes a connected molecule graph as SMILES with every atom bracketed and
/// every bond explicit, so that parsing the output reproduces the structure.
inline std::string render_smiles(const AttributedGraph& g) {
  if (g.num_nodes == 0) return "";
  if (g.vocab != molecule_vocab()) throw InvalidArgument("render_smiles needs a molecule-domain graph");
  const Adjacency adj(g);
  const int n = g.num_nodes;

  // Pass 1: DFS tree; non-tree edges become ring closures.
  std::vector<int> order;
  std::vector<int> parent_edge(static_cast<std::size_t>(n), -1);
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<int>> children(static_cast<std::size_t>(n));
  std::vector<char> tree_edge(g.edges.size(), 0);
  std::vector<std::pair<int, int>> stack{{0, -1}};
  while (!stack.empty()) {
    auto [x, via] = stack.back();
    stack.pop_back();
    if (visited[x]) continue;
    visited[x] = 1;
    order.push_back(x);
    if (via >= 0) {
      tree_edge[via] = 1;
      parent_edge[x] = via;
      const auto& e = g.edges[via];
      children[e.u == x ? e.v : e.u].push_back(x);
    }
    const auto nb = adj.neighbors(x);
    const auto ids = adj.edge_ids(x);
    for (std::size_t k = nb.size(); k-- > 0;) {
      if (!visited[nb[k]]) stack.push_back({nb[k], ids[k]});
    }
  }
  if (static_cast<int>(order.size()) != n) throw InvalidArgument("render_smiles needs a connected graph");
  std::vector<int> rank(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rank[order[i]] = i;

  std::vector<std::vector<int>> closures(static_cast<std::size_t>(n));
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    if (!tree_edge[e]) {
      closures[g.edges[e].u].push_back(static_cast<int>(e));
      closures[g.edges[e].v].push_back(static_cast<int>(e));
    }
  }

  auto bond_text = [&](int e) -> std::string {
    const auto& a = g.edges[e].attrs;
    if (a[1] == molecule::kDirEndUpRight) return "/";
    if (a[1] == molecule::kDirEndDownRight) return "\\";
    if (a[1] != molecule::kDirNone) throw InvalidArgument("cannot render reserved bond direction");
    switch (a[0]) {
      case molecule::kBondSingle: return "-";
      case molecule::kBondDouble: return "=";
      case molecule::kBondTriple: return "#";
      case molecule::kBondAromatic: return ":";
      default: throw InvalidArgument("cannot render reserved bond type");
    }
  };
  auto atom_text = [&](int v) -> std::string {
    const auto& a = g.node_attrs[v];
    if (a[0] >= molecule::kAtomCategories) throw InvalidArgument("cannot render masked atom");
    std::string out = "[";
    out += element_symbol(molecule::atomic_number(a[0]));
    switch (a[1]) {
      case molecule::kChiralCCW: out += "@"; break;
      case molecule::kChiralCW: out += "@@"; break;
      case molecule::kChiralOther: out += "@SP1"; break;
      case molecule::kChiralUnspecified: break;
      default: throw InvalidArgument("cannot render masked chirality");
    }
    return out + "]";
  };

  std::map<int, int> open_digit;  // edge -> digit
  std::vector<char> digit_used(100, 0);
  auto digit_text = [](int d) { return d < 10 ? std::to_string(d) : "%" + std::to_string(d); };

  std::string out;
  // Pass 2: emit in DFS order with explicit recursion over children.
  auto emit = [&](auto&& self, int v) -> void {
    out += atom_text(v);
    auto cl = closures[v];
    std::sort(cl.begin(), cl.end(), [&](int a, int b) {
      const auto other = [&](int e) { return g.edges[e].u == v ? g.edges[e].v : g.edges[e].u; };
      return rank[other(a)] < rank[other(b)];
    });
    for (int e : cl) {
      auto it = open_digit.find(e);
      if (it == open_digit.end()) {
        int d = 1;
        while (d < 100 && digit_used[d]) ++d;
        if (d == 100) throw InvalidArgument("too many open rings");
        digit_used[d] = 1;
        open_digit[e] = d;
        out += bond_text(e) + digit_text(d);
      } else {
        out += digit_text(it->second);
        digit_used[it->second] = 0;
        open_digit.erase(it);
      }
    }
    const auto& ch = children[v];
    for (std::size_t k = 0; k < ch.size(); ++k) {
      const bool branch = k + 1 < ch.size();
      if (branch) out += "(";
      out += bond_text(parent_edge[ch[k]]);
      self(self, ch[k]);
      if (branch) out += ")";
    }
  };
  emit(emit, 0);
  return out;
}

/// Bemis-Murcko scaffold: repeatedly strip non-ring atoms of degree <= 1.
/// Acyclic molecules reduce to the empty graph.
inline AttributedGraph murcko_scaffold(const AttributedGraph& mol) {
  const auto ring = ring_edges(mol);
  const int n = mol.num_nodes;
  std::vector<char> in_ring(static_cast<std::size_t>(n), 0);
  std::vector<int> degree(static_cast<std::size_t>(n), 0);
  for (std::size_t e = 0; e < mol.edges.size(); ++e) {
    ++degree[mol.edges[e].u];
    ++degree[mol.edges[e].v];
    if (ring[e]) in_ring[mol.edges[e].u] = in_ring[mol.edges[e].v] = 1;
  }
  const Adjacency adj(mol);
  std::vector<char> alive(static_cast<std::size_t>(n), 1);
  std::vector<int> work;
  for (int v = 0; v < n; ++v) {
    if (!in_ring[v] && degree[v] <= 1) work.push_back(v);
  }
  while (!work.empty()) {
    const int v = work.back();
    work.pop_back();
    if (!alive[v]) continue;
    alive[v] = 0;
    for (int u : adj.neighbors(v)) {
      if (!alive[u]) continue;
      if (--degree[u] <= 1 && !in_ring[u]) work.push_back(u);
    }
  }
  std::vector<int> keep;
  for (int v = 0; v < n; ++v) {
    if (alive[v]) keep.push_back(v);
  }
  auto out = to_graph(mol, induced_subgraph(mol, adj, keep));
  out.labels.clear();
  out.species.reset();
  return out;
}

inline constexpr std::string_view kEmptyScaffoldKey = "<empty>";

/// Isomorphism-invariant key from iterated neighborhood refinement
/// (1-WL over node attributes, edge attributes and neighbor colors).
/// Non-isomorphic graphs may collide; isomorphic graphs never differ.
inline std::string canonical_key(const AttributedGraph& g) {
  if (g.num_nodes == 0) return std::string(kEmptyScaffoldKey);
  const Adjacency adj(g);
  const int n = g.num_nodes;
  auto encode = [](Fnv1a& h, std::int64_t x) { h.update(&x, sizeof x); };

  std::vector<std::uint64_t> color(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) {
    Fnv1a h;
    encode(h, static_cast<std::int64_t>(g.node_attrs[v].size()));
    for (int a : g.node_attrs[v]) encode(h, a);
    color[v] = h.digest();
  }
  std::vector<std::uint64_t> next(color.size());
  std::vector<std::pair<std::uint64_t, std::uint64_t>> sig;
  for (int round = 0; round < n; ++round) {
    for (int v = 0; v < n; ++v) {
      sig.clear();
      const auto nb = adj.neighbors(v);
      const auto ids = adj.edge_ids(v);
      for (std::size_t k = 0; k < nb.size(); ++k) {
        Fnv1a eh;
        for (int a : g.edges[ids[k]].attrs) encode(eh, a);
        sig.emplace_back(eh.digest(), color[nb[k]]);
      }
      std::sort(sig.begin(), sig.end());
      Fnv1a h;
      h.update(&color[v], sizeof(std::uint64_t));
      for (const auto& [e, c] : sig) {
        h.update(&e, sizeof e);
        h.update(&c, sizeof c);
      }
      next[v] = h.digest();
    }
    color.swap(next);
  }
  std::vector<std::uint64_t> nodes = color;
  std::sort(nodes.begin(), nodes.end());
  std::vector<std::array<std::uint64_t, 3>> edges;
  for (const auto& e : g.edges) {
    Fnv1a eh;
    for (int a : e.attrs) encode(eh, a);
    edges.push_back({std::min(color[e.u], color[e.v]), std::max(color[e.u], color[e.v]), eh.digest()});
  }
  std::sort(edges.begin(), edges.end());
  Fnv1a h;
  for (auto c : nodes) h.update(&c, sizeof c);
  for (const auto& e : edges) h.update(e.data(), sizeof e);
  return "wl:" + std::to_string(n) + ":" + std::to_string(g.edges.size()) + ":" + h.hex();
}

inline std::string scaffold_key(const AttributedGraph& mol) { return canonical_key(murcko_scaffold(mol)); }

}  // namespace pregraph::chem
