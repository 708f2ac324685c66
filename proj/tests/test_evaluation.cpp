#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "l2r/evaluation.hpp"
#include "test_util.hpp"

using namespace l2r;
using l2r::test::code_of;

namespace {

double enumerate_optimum(const Instance& inst) {
  std::vector<int> rest(inst.size() - 1);
  std::iota(rest.begin(), rest.end(), 1);
  double best = INFINITY;
  do {
    std::vector<int> order{0};
    order.insert(order.end(), rest.begin(), rest.end());
    best = std::min(best, tour_length(inst, {order}));
  } while (std::next_permutation(rest.begin(), rest.end()));
  return best;
}

}  // namespace

TEST(HeldKarp, SmallCases) {
  const auto sq = Instance::make_tsp("sq", {{0, 0}, {1, 1}, {1, 0}, {0, 1}});
  EXPECT_NEAR(tour_length(sq, held_karp(sq)), 4.0, 1e-12);
  const auto tri = Instance::make_tsp("tri", {{0, 0}, {3, 0}, {0, 4}});
  EXPECT_NEAR(tour_length(tri, held_karp(tri)), 12.0, 1e-12);
}

TEST(HeldKarp, MatchesPermutationEnumeration) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = generate_uniform(ProblemKind::kTsp, 9, std::nullopt, seed);
    const auto hk = held_karp(inst, [](int, int) { return true; });
    ASSERT_TRUE(hk.feasible);
    EXPECT_NEAR(hk.length, enumerate_optimum(inst), 1e-9);
    EXPECT_NEAR(tour_length(inst, hk.tour), hk.length, 1e-9);
  }
}

TEST(HeldKarp, Guards) {
  const auto big = generate_uniform(ProblemKind::kTsp, kHeldKarpMaxNodes + 1, std::nullopt, 1);
  EXPECT_EQ(code_of([&] { held_karp(big); }), ErrorCode::kSizeGuard);
  const auto cvrp = generate_uniform(ProblemKind::kCvrp, 5, 20.0, 1);
  EXPECT_EQ(code_of([&] { held_karp(cvrp); }), ErrorCode::kInvalidInstance);
  const auto inst = generate_uniform(ProblemKind::kTsp, 6, std::nullopt, 2);
  EXPECT_FALSE(held_karp(inst, [](int i, int j) { return i != 0 && j != 0; }).feasible);
}

TEST(NearestNeighbor, Examples) {
  const auto line = Instance::make_tsp("line", {{0, 0}, {1, 0}, {3, 0}});
  const auto seq = nearest_neighbor(line, 0);
  EXPECT_EQ(seq, (std::vector<int>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(sequence_length(line, seq), 6.0);
  const auto two = Instance::make_tsp("two", {{0, 0}, {1, 0}});
  EXPECT_EQ(nearest_neighbor(two, 1), (std::vector<int>{1, 0}));
}

TEST(NearestNeighbor, NeverBeatsOptimum) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = generate_uniform(ProblemKind::kTsp, 8, std::nullopt, 40 + seed);
    EXPECT_GE(sequence_length(inst, nearest_neighbor(inst)) + 1e-12, tour_length(inst, held_karp(inst)));
  }
}

TEST(NearestNeighbor, CvrpIsFeasible) {
  const auto inst = generate_uniform(ProblemKind::kCvrp, 40, 20.0, 3);
  EXPECT_NO_THROW(validate_sequence(inst, nearest_neighbor(inst)));
}

TEST(Metrics, Gap) {
  EXPECT_DOUBLE_EQ(optimality_gap(23.12, 23.12), 0.0);
  EXPECT_NEAR(optimality_gap(24.16, 23.12), 4.50, 0.01);
  EXPECT_DOUBLE_EQ(optimality_gap(8.0, 4.0), 100.0);
  EXPECT_EQ(code_of([] { optimality_gap(1.0, 0.0); }), ErrorCode::kInvalidReference);
}

TEST(Metrics, Ratio) {
  EXPECT_NEAR(ratio_percent(1067, 1173), 90.96, 0.005);
  EXPECT_DOUBLE_EQ((RatioResult{5, 5}).percent(), 100.0);
}

TEST(Ratio, FullCandidateSetsGiveHundred) {
  const auto inst = generate_uniform(ProblemKind::kTsp, 10, std::nullopt, 5);
  const auto g = build_sparse_graph(inst, 0.0);
  const auto p = ParameterSet<float>::initialized(l2r::test::small_config(ProblemKind::kTsp), 5);
  const auto tour = held_karp(inst);
  for (auto reducer : {ReducerKind::kLearned, ReducerKind::kDistance}) {
    const auto r = optimality_ratio(inst, tour, g, Policy<float>{&p, reducer, 9});
    EXPECT_EQ(r.steps, 10);
    EXPECT_EQ(r.hits, 10);
  }
}

TEST(Ratio, DistanceReducerMatchesBruteForceScan) {
  const auto inst = generate_uniform(ProblemKind::kTsp, 14, std::nullopt, 6);
  const auto g = build_sparse_graph(inst, 0.0);
  const auto tour = held_karp(inst);
  const int k = 3;
  int hits = 1;  // closing edge
  std::vector<char> visited(14, 0);
  for (int t = 0; t + 1 < 14; ++t) {
    const int cur = tour.order[t], next = tour.order[t + 1];
    visited[cur] = 1;
    std::vector<int> open;
    for (int j = 0; j < 14; ++j)
      if (!visited[j]) open.push_back(j);
    std::sort(open.begin(), open.end(), [&](int a, int b) {
      const double da = inst.unit_distance(cur, a), db = inst.unit_distance(cur, b);
      return da < db || (da == db && a < b);
    });
    open.resize(std::min<std::size_t>(k, open.size()));
    hits += std::find(open.begin(), open.end(), next) != open.end();
  }
  const auto r = optimality_ratio(inst, tour, g, Policy<float>{nullptr, ReducerKind::kDistance, k});
  EXPECT_EQ(r.steps, 14);
  EXPECT_EQ(r.hits, hits);
}

TEST(Pruning, ZeroAtFullAndMonotone) {
  std::vector<Instance> instances;
  for (int i = 0; i < 6; ++i) instances.push_back(generate_uniform(ProblemKind::kTsp, 10, std::nullopt, 60 + i));
  const std::vector<int> ks{2, 3, 4, 6, 9};
  const auto rep = pruned_oracle_experiment(instances, ks);
  ASSERT_EQ(rep.summary.size(), ks.size());
  EXPECT_EQ(rep.summary.back().mean_gap_pct, 0.0);
  EXPECT_EQ(rep.summary.back().infeasible, 0);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    double prev = INFINITY;
    for (const auto& row : rep.rows) {
      if (row.instance != static_cast<int>(i)) continue;
      const double len = row.feasible ? row.restricted : INFINITY;
      EXPECT_LE(len, prev + 1e-12);
      EXPECT_GE(row.gap_pct, row.feasible ? -1e-9 : 0.0);
      prev = len;
    }
  }
  EXPECT_NE(rep.to_csv().find("instance"), std::string::npos);
}

TEST(Pruning, KnnUnionIsSymmetric) {
  const auto inst = generate_uniform(ProblemKind::kTsp, 12, std::nullopt, 7);
  const auto adj = knn_union(inst, 3);
  for (int i = 0; i < 12; ++i) {
    EXPECT_FALSE(adj[i][i]);
    int deg = 0;
    for (int j = 0; j < 12; ++j) {
      EXPECT_EQ(adj[i][j], adj[j][i]);
      deg += adj[i][j];
    }
    EXPECT_GE(deg, 3);
  }
}

TEST(Report, TimingOptional) {
  SolveReport r;
  r.method = "greedy";
  r.objective = 5.0;
  r.wall_ms = 12.5;
  EXPECT_FALSE(r.to_json(false).contains("wall_ms"));
  EXPECT_TRUE(r.to_json(true).contains("wall_ms"));
}
