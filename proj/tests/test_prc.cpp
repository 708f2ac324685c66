#include <gtest/gtest.h>

#include "l2r/evaluation.hpp"
#include "l2r/prc.hpp"
#include "test_util.hpp"

using namespace l2r;
using l2r::test::code_of;
using l2r::test::small_config;

namespace {

std::vector<int> worst_tsp_order(int n) {
  // Alternating indices give a long zig-zag on random points.
  std::vector<int> order;
  for (int i = 0; i < n; i += 2) order.push_back(i);
  for (int i = 1; i < n; i += 2) order.push_back(i);
  return order;
}

}  // namespace

TEST(Prc, ZeroIterationsIsIdentity) {
  const auto p = ParameterSet<float>::initialized(small_config(ProblemKind::kTsp), 1);
  const auto inst = generate_uniform(ProblemKind::kTsp, 20, std::nullopt, 1);
  const auto seq = worst_tsp_order(20);
  PrcConfig c;
  c.iterations = 0;
  const auto r = improve(inst, seq, Policy<float>{&p, ReducerKind::kLearned, 5}, c);
  EXPECT_EQ(r.sequence, seq);
  EXPECT_EQ(r.objective, sequence_length(inst, seq));
  EXPECT_EQ(r.history.size(), 1u);
}

TEST(Prc, MonotoneAndBoundedByOptimum) {
  const auto p = ParameterSet<float>::initialized(small_config(ProblemKind::kTsp), 2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = generate_uniform(ProblemKind::kTsp, 10, std::nullopt, 10 + seed);
    PrcConfig c;
    c.iterations = 10;
    c.max_destroy_len = 6;
    c.seed = seed;
    const auto r = improve(inst, worst_tsp_order(10), Policy<float>{&p, ReducerKind::kLearned, 5}, c);
    ASSERT_EQ(r.history.size(), 11u);
    for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1]);
    EXPECT_NO_THROW(validate_sequence(inst, r.sequence));
    EXPECT_NEAR(r.objective, sequence_length(inst, r.sequence), 1e-9);
    EXPECT_GE(r.objective + 1e-9, tour_length(inst, held_karp(inst)));
    EXPECT_LT(r.objective, r.history.front());
  }
}

TEST(Prc, CvrpStaysFeasible) {
  const auto p = ParameterSet<float>::initialized(small_config(ProblemKind::kCvrp), 3);
  const auto inst = generate_uniform(ProblemKind::kCvrp, 30, 25.0, 3);
  const auto start = nearest_neighbor(inst);
  PrcConfig c;
  c.iterations = 8;
  c.max_destroy_len = 8;
  c.seed = 3;
  const auto r = improve(inst, start, Policy<float>{&p, ReducerKind::kLearned, 6}, c);
  EXPECT_NO_THROW(validate_sequence(inst, r.sequence));
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1]);
}

TEST(Prc, DeterministicAndRejectsInvalidInput) {
  const auto p = ParameterSet<float>::initialized(small_config(ProblemKind::kTsp), 4);
  const auto inst = generate_uniform(ProblemKind::kTsp, 25, std::nullopt, 4);
  PrcConfig c;
  c.iterations = 5;
  c.max_destroy_len = 10;
  c.seed = 9;
  const Policy<float> policy{&p, ReducerKind::kLearned, 5};
  const auto a = improve(inst, worst_tsp_order(25), policy, c);
  const auto b = improve(inst, worst_tsp_order(25), policy, c);
  EXPECT_EQ(a.sequence, b.sequence);
  EXPECT_EQ(a.history, b.history);
  const std::vector<int> broken{0, 1, 1};
  EXPECT_EQ(code_of([&] { improve(inst, broken, policy, c); }), ErrorCode::kInvalidSolution);
}
