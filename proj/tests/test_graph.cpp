#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pregraph/error.hpp"
#include "pregraph/graph.hpp"

using namespace pregraph;

namespace {

std::set<int> node_set(const Subgraph& sg) { return {sg.nodes.begin(), sg.nodes.end()}; }

std::set<std::pair<int, int>> parent_edges(const Subgraph& sg) {
  std::set<std::pair<int, int>> out;
  for (const auto& e : sg.edges) {
    const int a = sg.nodes[e.u], b = sg.nodes[e.v];
    out.insert({std::min(a, b), std::max(a, b)});
  }
  return out;
}

}  // namespace

TEST(GraphValidate, RejectsStoredSelfLoopsAndDuplicates) {
  auto g = fixture::path(3);
  EXPECT_NO_THROW(g.validate());
  auto loop = g;
  loop.edges.push_back({1, 1, {0, 0}});
  EXPECT_THROW(loop.validate(), InvalidArgument);
  auto dup = g;
  dup.edges.push_back({1, 0, {0, 0}});
  EXPECT_THROW(dup.validate(), InvalidArgument);
  auto bad_attr = g;
  bad_attr.node_attrs[0][0] = 119;
  EXPECT_THROW(bad_attr.validate(), InvalidArgument);
  auto bad_center = g;
  bad_center.center = 3;
  EXPECT_THROW(bad_center.validate(), InvalidArgument);
}

TEST(Khop, PathOneHop) {
  // A-B-C-D with v = B.
  const auto g = fixture::path(4);
  const auto sg = khop_neighborhood(g, 1, 1);
  EXPECT_EQ(sg.nodes, (std::vector<int>{1, 0, 2}));
  EXPECT_EQ(parent_edges(sg), (std::set<std::pair<int, int>>{{0, 1}, {1, 2}}));
  EXPECT_TRUE(sg.anchors.empty());
}

TEST(Khop, ZeroHopIsTheCenterAlone) {
  const auto g = fixture::random_graph(20, 0.2, 3);
  for (int v = 0; v < 20; ++v) {
    const auto sg = khop_neighborhood(g, v, 0);
    EXPECT_EQ(sg.nodes, std::vector<int>{v});
    EXPECT_TRUE(sg.edges.empty());
  }
}

TEST(Khop, OutOfRangeCenter) {
  const auto g = fixture::path(4);
  EXPECT_THROW(khop_neighborhood(g, 4, 1), InvalidArgument);
  EXPECT_THROW(khop_neighborhood(g, -1, 1), InvalidArgument);
  EXPECT_THROW(khop_neighborhood(g, 0, -1), InvalidArgument);
}

TEST(Khop, MatchesFloydWarshallOn50Nodes) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto g = fixture::random_graph(50, 0.06, seed);
    const auto d = oracle::floyd_warshall(g);
    for (int v = 0; v < 50; v += 7) {
      const auto sg = khop_neighborhood(g, v, 3);
      std::set<int> expect;
      for (int u = 0; u < 50; ++u)
        if (d[v][u] <= 3) expect.insert(u);
      EXPECT_EQ(node_set(sg), expect);
      // Order: ascending distance, then id.
      for (std::size_t i = 1; i < sg.nodes.size(); ++i) {
        const int a = sg.nodes[i - 1], b = sg.nodes[i];
        EXPECT_TRUE(d[v][a] < d[v][b] || (d[v][a] == d[v][b] && a < b));
      }
      // Induced edges: exactly the parent edges inside the selection.
      std::set<std::pair<int, int>> induced;
      for (const auto& e : g.edges)
        if (expect.count(e.u) && expect.count(e.v)) induced.insert({std::min(e.u, e.v), std::max(e.u, e.v)});
      EXPECT_EQ(parent_edges(sg), induced);
    }
  }
}

TEST(Khop, NestedInK) {
  const auto g = fixture::random_graph(40, 0.08, 11);
  for (int v = 0; v < 40; v += 5) {
    for (int k = 0; k < 6; ++k) {
      const auto a = node_set(khop_neighborhood(g, v, k));
      const auto b = node_set(khop_neighborhood(g, v, k + 1));
      EXPECT_TRUE(std::includes(b.begin(), b.end(), a.begin(), a.end()));
    }
  }
}

TEST(ContextRing, PathBand) {
  // A-B-C-D-E, v = A, r1 = 1, r2 = 2 -> {B, C} with edge BC.
  const auto g = fixture::path(5);
  const auto sg = context_ring(g, 0, 1, 2);
  EXPECT_EQ(sg.nodes, (std::vector<int>{1, 2}));
  EXPECT_EQ(parent_edges(sg), (std::set<std::pair<int, int>>{{1, 2}}));
}

TEST(ContextRing, StarLeaves) {
  const auto g = fixture::star(5);
  const auto sg = context_ring(g, 0, 1, 4);
  EXPECT_EQ(sg.nodes, (std::vector<int>{1, 2, 3, 4, 5}));
  EXPECT_TRUE(sg.edges.empty());
}

TEST(ContextRing, InvalidRadii) {
  const auto g = fixture::path(5);
  EXPECT_THROW(context_ring(g, 0, 2, 2), InvalidArgument);
  EXPECT_THROW(context_ring(g, 0, 3, 2), InvalidArgument);
  EXPECT_THROW(context_ring(g, 0, 4, 7, 4), InvalidArgument);
  EXPECT_THROW(context_ring(g, 0, 5, 7, 4), InvalidArgument);
}

TEST(ContextRing, ChemistryDefaultsAgainstDistanceOracle) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto g = fixture::random_connected(64, 20, seed);
    const auto d = oracle::floyd_warshall(g);
    for (int v = 0; v < 64; v += 9) {
      const auto ring = context_ring(g, v, 4, 7, 5);
      std::set<int> expect, anchors_expect;
      for (int u = 0; u < 64; ++u) {
        if (d[v][u] >= 4 && d[v][u] <= 7) expect.insert(u);
        if (d[v][u] >= 4 && d[v][u] <= 5) anchors_expect.insert(u);
      }
      EXPECT_EQ(node_set(ring), expect);
      std::set<int> anchors;
      for (int a : ring.anchors) anchors.insert(ring.nodes[a]);
      EXPECT_EQ(anchors, anchors_expect);
      // Anchors are exactly ring ∩ K-hop neighborhood.
      const auto hood = node_set(khop_neighborhood(g, v, 5));
      std::set<int> inter;
      std::set_intersection(hood.begin(), hood.end(), expect.begin(), expect.end(), std::inserter(inter, inter.end()));
      EXPECT_EQ(anchors, inter);
    }
  }
}

TEST(ContextRing, BandBoundsOnSmallGraphs) {
  for (std::uint64_t seed = 20; seed < 40; ++seed) {
    const int n = 10 + static_cast<int>(seed % 50);
    const auto g = fixture::random_graph(n, 3.0 / n, seed);
    const auto d = oracle::floyd_warshall(g);
    for (int v = 0; v < n; v += 3) {
      const int r1 = static_cast<int>(seed % 3), r2 = r1 + 1 + static_cast<int>(seed % 4);
      for (int u : context_ring(g, v, r1, r2).nodes) {
        EXPECT_GE(d[v][u], r1);
        EXPECT_LE(d[v][u], r2);
      }
    }
  }
}

TEST(ContextRing, SmallGraphYieldsEmptyRing) {
  const auto tri = fixture::cycle(3);
  const auto ring = context_ring(tri, 0, 4, 7, 5);
  EXPECT_TRUE(ring.nodes.empty());
  EXPECT_TRUE(ring.anchors.empty());
}

TEST(EgoSample, SmallStarIsTakenWhole) {
  const auto g = fixture::star(6);
  Rng rng(1);
  const auto ego = ego_sample(g, 0, 2, 10, rng);
  EXPECT_EQ(ego.num_nodes, 7);
  EXPECT_EQ(ego.edges.size(), 6u);
  ASSERT_TRUE(ego.center.has_value());
  EXPECT_EQ(*ego.center, 0);
}

TEST(EgoSample, CapBinds) {
  const auto g = fixture::star(25);
  Rng rng(2);
  const auto ego = ego_sample(g, 0, 2, 10, rng);
  EXPECT_EQ(ego.num_nodes, 11);
  EXPECT_EQ(ego.edges.size(), 10u);
}

TEST(EgoSample, DeterministicForSeed) {
  const auto g = fixture::random_graph(100, 0.08, 5);
  Rng a(77), b(77);
  EXPECT_EQ(ego_sample(g, 3, 2, 10, a), ego_sample(g, 3, 2, 10, b));
}

TEST(EgoSample, NeverExceedsDepth) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto g = fixture::random_graph(80, 0.1, seed);
    Rng rng(seed);
    const auto ego = ego_sample(g, 0, 2, 3, rng);
    const auto d = oracle::floyd_warshall(ego);
    for (int u = 0; u < ego.num_nodes; ++u) EXPECT_LE(d[0][u], 2);
    EXPECT_NO_THROW(ego.validate());
  }
}

TEST(Permute, IdentityAndRoundTrip) {
  const auto g = fixture::random_graph(15, 0.3, 8);
  std::vector<int> id(15);
  for (int i = 0; i < 15; ++i) id[i] = i;
  EXPECT_EQ(permute_graph(g, id), g);
  const auto p = fixture::random_perm(15, 4);
  const auto back = permute_graph(permute_graph(g, p), invert_permutation(p));
  EXPECT_EQ(back, g);
  EXPECT_TRUE(oracle::isomorphic(g, permute_graph(g, p)));
}

TEST(Permute, SwapIsolatedEqualNodes) {
  auto g = fixture::carbon_graph(3, {});
  const std::vector<int> swap{1, 0, 2};
  EXPECT_EQ(permute_graph(g, swap).node_attrs, g.node_attrs);
}

TEST(Permute, RejectsNonBijection) {
  const auto g = fixture::path(3);
  EXPECT_THROW(permute_graph(g, std::vector<int>{0, 0, 1}), InvalidArgument);
  EXPECT_THROW(permute_graph(g, std::vector<int>{0, 1}), InvalidArgument);
  EXPECT_THROW(permute_graph(g, std::vector<int>{0, 1, 3}), InvalidArgument);
}
