#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pregraph/error.hpp"
#include "pregraph/rng.hpp"
#include "pregraph/vocab.hpp"

namespace pregraph {

/// Undirected edge, stored once.
struct Edge {
  int u = 0;
  int v = 0;
  std::vector<int> attrs;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Undirected graph with categorical node and edge attribute vectors.
///
/// Self-loops are never stored; message passing injects them virtually.
/// `labels` holds one ternary entry per task: 1 positive, 0 negative, -1 missing.
struct AttributedGraph {
  int num_nodes = 0;
  std::vector<std::vector<int>> node_attrs;
  std::vector<Edge> edges;
  Vocab vocab;
  std::optional<int> center;
  std::vector<int> labels;
  std::optional<std::string> species;

  std::size_t num_edges() const { return edges.size(); }

  friend bool operator==(const AttributedGraph&, const AttributedGraph&) = default;

  /// Throws InvalidArgument on any broken invariant.
  void validate() const;
};

/// Neighbor lists in ascending node-id order, each entry paired with its edge id.
class Adjacency {
 public:
  explicit Adjacency(const AttributedGraph& g);

  std::span<const int> neighbors(int v) const {
    return {targets_.data() + offsets_[v], targets_.data() + offsets_[v + 1]};
  }
  std::span<const int> edge_ids(int v) const {
    return {edge_ids_.data() + offsets_[v], edge_ids_.data() + offsets_[v + 1]};
  }
  int degree(int v) const { return offsets_[v + 1] - offsets_[v]; }
  int num_nodes() const { return static_cast<int>(offsets_.size()) - 1; }

 private:
  std::vector<int> offsets_;
  std::vector<int> targets_;
  std::vector<int> edge_ids_;
};

/// A node subset of a parent graph with its induced edges.
struct Subgraph {
  struct LocalEdge {
    int u = 0;
    int v = 0;
    int parent_edge = 0;
    friend bool operator==(const LocalEdge&, const LocalEdge&) = default;
  };

  std::vector<int> nodes;            // parent ids, duplicate-free
  std::vector<LocalEdge> edges;      // local ids
  std::vector<int> anchors;          // local ids

  friend bool operator==(const Subgraph&, const Subgraph&) = default;
};

inline void AttributedGraph::validate() const {
  if (num_nodes < 0) throw InvalidArgument("negative node count");
  if (static_cast<int>(node_attrs.size()) != num_nodes) {
    throw InvalidArgument("node_attrs size does not match num_nodes");
  }
  for (const auto& a : node_attrs) {
    if (a.size() != vocab.node_slots.size()) throw InvalidArgument("node attribute width mismatch");
    for (std::size_t s = 0; s < a.size(); ++s) {
      if (a[s] < 0 || a[s] >= vocab.node_slots[s]) throw InvalidArgument("node attribute out of vocab");
    }
  }
  std::vector<std::pair<int, int>> keys;
  keys.reserve(edges.size());
  for (const auto& e : edges) {
    if (e.u < 0 || e.v < 0 || e.u >= num_nodes || e.v >= num_nodes) {
      throw InvalidArgument("edge endpoint out of range");
    }
    if (e.u == e.v) throw InvalidArgument("stored self-loop");
    if (e.attrs.size() != vocab.edge_slots.size()) throw InvalidArgument("edge attribute width mismatch");
    for (std::size_t s = 0; s < e.attrs.size(); ++s) {
      if (e.attrs[s] < 0 || e.attrs[s] >= vocab.edge_slots[s]) {
        throw InvalidArgument("edge attribute out of vocab");
      }
    }
    keys.emplace_back(std::min(e.u, e.v), std::max(e.u, e.v));
  }
  std::sort(keys.begin(), keys.end());
  if (std::adjacent_find(keys.begin(), keys.end()) != keys.end()) {
    throw InvalidArgument("duplicate undirected edge");
  }
  if (center && (*center < 0 || *center >= num_nodes)) throw InvalidArgument("center out of range");
  for (int l : labels) {
    if (l < -1 || l > 1) throw InvalidArgument("label must be -1, 0 or 1");
  }
}

inline Adjacency::Adjacency(const AttributedGraph& g) {
  const int n = g.num_nodes;
  const std::size_t arcs = g.edges.size() * 2;
  // Two stable counting sorts (by target, then by source) give ascending
  // neighbor order in O(n + m).
  std::vector<int> src(arcs), dst(arcs), eid(arcs);
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const auto& e = g.edges[i];
    src[2 * i] = e.u;
    dst[2 * i] = e.v;
    src[2 * i + 1] = e.v;
    dst[2 * i + 1] = e.u;
    eid[2 * i] = eid[2 * i + 1] = static_cast<int>(i);
  }
  auto counting_sort = [n](const std::vector<int>& key, const std::vector<std::size_t>& order) {
    std::vector<int> count(static_cast<std::size_t>(n) + 1, 0);
    for (std::size_t i : order) ++count[key[i] + 1];
    for (int k = 0; k < n; ++k) count[k + 1] += count[k];
    std::vector<std::size_t> out(order.size());
    for (std::size_t i : order) out[count[key[i]]++] = i;
    return out;
  };
  std::vector<std::size_t> order(arcs);
  for (std::size_t i = 0; i < arcs; ++i) order[i] = i;
  order = counting_sort(dst, order);
  order = counting_sort(src, order);

  offsets_.assign(static_cast<std::size_t>(n) + 1, 0);
  for (std::size_t i = 0; i < arcs; ++i) ++offsets_[src[i] + 1];
  for (int k = 0; k < n; ++k) offsets_[k + 1] += offsets_[k];
  targets_.resize(arcs);
  edge_ids_.resize(arcs);
  for (std::size_t k = 0; k < arcs; ++k) {
    targets_[k] = dst[order[k]];
    edge_ids_[k] = eid[order[k]];
  }
}

/// Hop distances from `source`, -1 where unreachable or beyond `max_depth`.
inline std::vector<int> bfs_distances(const Adjacency& adj, int source, int max_depth = -1) {
  std::vector<int> dist(static_cast<std::size_t>(adj.num_nodes()), -1);
  std::vector<int> frontier{source};
  dist[source] = 0;
  std::size_t head = 0;
  while (head < frontier.size()) {
    const int x = frontier[head++];
    if (max_depth >= 0 && dist[x] >= max_depth) continue;
    for (int y : adj.neighbors(x)) {
      if (dist[y] < 0) {
        dist[y] = dist[x] + 1;
        frontier.push_back(y);
      }
    }
  }
  return dist;
}

namespace detail {

inline void check_node(const AttributedGraph& g, int v) {
  if (v < 0 || v >= g.num_nodes) {
    throw InvalidArgument("node id " + std::to_string(v) + " out of range");
  }
}

// Induced edges in local ids. `nodes` is the ordered selection.
inline std::vector<Subgraph::LocalEdge> induced_edges(const Adjacency& adj, std::span<const int> nodes,
                                                      std::vector<int>& local_scratch) {
  for (std::size_t i = 0; i < nodes.size(); ++i) local_scratch[nodes[i]] = static_cast<int>(i);
  std::vector<Subgraph::LocalEdge> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto nb = adj.neighbors(nodes[i]);
    const auto ids = adj.edge_ids(nodes[i]);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      const int j = local_scratch[nb[k]];
      if (j > static_cast<int>(i)) out.push_back({static_cast<int>(i), j, ids[k]});
    }
  }
  for (int p : nodes) local_scratch[p] = -1;
  return out;
}

// Selected nodes ordered by (distance, parent id).
inline std::vector<int> band(const std::vector<int>& dist, const std::vector<int>& reached, int lo, int hi) {
  std::vector<int> nodes;
  for (int u : reached) {
    if (dist[u] >= lo && dist[u] <= hi) nodes.push_back(u);
  }
  std::sort(nodes.begin(), nodes.end(), [&](int a, int b) {
    return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
  });
  return nodes;
}

inline std::vector<int> reached_within(const Adjacency& adj, int v, int depth, std::vector<int>& dist) {
  dist.assign(static_cast<std::size_t>(adj.num_nodes()), -1);
  std::vector<int> reached{v};
  dist[v] = 0;
  std::size_t head = 0;
  while (head < reached.size()) {
    const int x = reached[head++];
    if (dist[x] >= depth) continue;
    for (int y : adj.neighbors(x)) {
      if (dist[y] < 0) {
        dist[y] = dist[x] + 1;
        reached.push_back(y);
      }
    }
  }
  return reached;
}

}  // namespace detail

/// Nodes within `k` hops of `v` plus induced edges, ordered by (distance, id).
inline Subgraph khop_neighborhood(const AttributedGraph& g, const Adjacency& adj, int v, int k) {
  detail::check_node(g, v);
  if (k < 0) throw InvalidArgument("hop count must be non-negative");
  std::vector<int> dist;
  const auto reached = detail::reached_within(adj, v, k, dist);
  Subgraph sg;
  sg.nodes = detail::band(dist, reached, 0, k);
  std::vector<int> scratch(static_cast<std::size_t>(g.num_nodes), -1);
  sg.edges = detail::induced_edges(adj, sg.nodes, scratch);
  return sg;
}

inline Subgraph khop_neighborhood(const AttributedGraph& g, int v, int k) {
  detail::check_node(g, v);
  return khop_neighborhood(g, Adjacency(g), v, k);
}

/// Ring of nodes at distance [r1, r2] from `v`. With `k` supplied, anchors are
/// the ring nodes that are also within `k` hops.
inline Subgraph context_ring(const AttributedGraph& g, const Adjacency& adj, int v, int r1, int r2,
                             std::optional<int> k = std::nullopt) {
  detail::check_node(g, v);
  if (r1 < 0) throw InvalidArgument("inner radius must be non-negative");
  if (r1 >= r2) throw InvalidArgument("inner radius must be smaller than outer radius");
  if (k && r1 >= *k) throw InvalidArgument("inner radius must be smaller than the neighborhood depth");
  std::vector<int> dist;
  const auto reached = detail::reached_within(adj, v, r2, dist);
  Subgraph sg;
  sg.nodes = detail::band(dist, reached, r1, r2);
  std::vector<int> scratch(static_cast<std::size_t>(g.num_nodes), -1);
  sg.edges = detail::induced_edges(adj, sg.nodes, scratch);
  if (k) {
    for (std::size_t i = 0; i < sg.nodes.size(); ++i) {
      if (dist[sg.nodes[i]] <= *k) sg.anchors.push_back(static_cast<int>(i));
    }
  }
  return sg;
}

inline Subgraph context_ring(const AttributedGraph& g, int v, int r1, int r2, std::optional<int> k = std::nullopt) {
  detail::check_node(g, v);
  return context_ring(g, Adjacency(g), v, r1, r2, k);
}

/// Materializes a subgraph as a standalone graph (labels and species are carried over).
inline AttributedGraph to_graph(const AttributedGraph& g, const Subgraph& sg, std::optional<int> center = std::nullopt) {
  AttributedGraph out;
  out.num_nodes = static_cast<int>(sg.nodes.size());
  out.vocab = g.vocab;
  out.node_attrs.reserve(sg.nodes.size());
  for (int p : sg.nodes) out.node_attrs.push_back(g.node_attrs[p]);
  out.edges.reserve(sg.edges.size());
  for (const auto& e : sg.edges) out.edges.push_back({e.u, e.v, g.edges[e.parent_edge].attrs});
  out.center = center;
  out.labels = g.labels;
  out.species = g.species;
  return out;
}

/// Induced subgraph on an ordered, duplicate-free node list.
inline Subgraph induced_subgraph(const AttributedGraph& g, const Adjacency& adj, std::vector<int> nodes) {
  std::vector<int> scratch(static_cast<std::size_t>(g.num_nodes), -1);
  for (int p : nodes) {
    detail::check_node(g, p);
    if (scratch[p] != -1) throw InvalidArgument("duplicate node in selection");
    scratch[p] = 0;
  }
  for (int p : nodes) scratch[p] = -1;
  Subgraph sg;
  sg.edges = detail::induced_edges(adj, nodes, scratch);
  sg.nodes = std::move(nodes);
  return sg;
}

/// Depth-limited breadth-first ego network. Each dequeued node expands at most
/// `max_expand` of its unvisited neighbors, drawn uniformly; the result is the
/// induced subgraph on the selection with the center at local id 0.
inline AttributedGraph ego_sample(const AttributedGraph& g, int v, int depth, int max_expand, Rng& rng) {
  detail::check_node(g, v);
  if (depth < 1 || max_expand < 1) throw InvalidArgument("ego_sample needs depth >= 1 and max_expand >= 1");
  const Adjacency adj(g);
  std::vector<int> level(static_cast<std::size_t>(g.num_nodes), -1);
  std::vector<int> selected{v};
  level[v] = 0;
  std::size_t head = 0;
  while (head < selected.size()) {
    const int x = selected[head++];
    if (level[x] >= depth) continue;
    std::vector<int> candidates;
    for (int y : adj.neighbors(x)) {
      if (level[y] < 0) candidates.push_back(y);
    }
    if (static_cast<int>(candidates.size()) > max_expand) {
      auto picks = rng.sample_without_replacement(candidates.size(), static_cast<std::size_t>(max_expand));
      std::sort(picks.begin(), picks.end());
      std::vector<int> chosen;
      for (auto i : picks) chosen.push_back(candidates[i]);
      candidates = std::move(chosen);
    }
    for (int y : candidates) {
      level[y] = level[x] + 1;
      selected.push_back(y);
    }
  }
  auto sg = induced_subgraph(g, adj, std::move(selected));
  auto out = to_graph(g, sg, 0);
  out.labels.clear();
  return out;
}

/// Relabels node `i` as `perm[i]`.
inline AttributedGraph permute_graph(const AttributedGraph& g, std::span<const int> perm) {
  if (static_cast<int>(perm.size()) != g.num_nodes) throw InvalidArgument("permutation size mismatch");
  std::vector<char> seen(perm.size(), 0);
  for (int p : perm) {
    if (p < 0 || p >= g.num_nodes || seen[p]) throw InvalidArgument("permutation is not a bijection");
    seen[p] = 1;
  }
  AttributedGraph out = g;
  for (int i = 0; i < g.num_nodes; ++i) out.node_attrs[perm[i]] = g.node_attrs[i];
  for (auto& e : out.edges) {
    e.u = perm[e.u];
    e.v = perm[e.v];
  }
  if (g.center) out.center = perm[*g.center];
  return out;
}

inline std::vector<int> invert_permutation(std::span<const int> perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
  return inv;
}

}  // namespace pregraph
