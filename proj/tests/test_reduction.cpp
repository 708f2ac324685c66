#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "l2r/reduction_policy.hpp"
#include "test_util.hpp"

using namespace l2r;
using l2r::test::code_of;
using l2r::test::small_config;

namespace {

std::vector<int> all_but(int n, int skip) {
  std::vector<int> v;
  for (int i = 0; i < n; ++i)
    if (i != skip) v.push_back(i);
  return v;
}

// Straight-line logits from the parameter tensors, in long double.
std::vector<long double> reference_logits(const ParameterSet<double>& p, const Instance& inst,
                                          const ReductionQuery& q, const std::vector<int>& feasible) {
  const auto& r = p.reduction;
  const std::size_t d = r.key.rows();
  const bool cvrp = inst.is_cvrp();
  auto hidden = [&](int i) {
    std::vector<long double> h(d);
    const auto pt = inst.unit_coords()[i];
    for (std::size_t c = 0; c < d; ++c) {
      h[c] = r.embed_b[c] + pt.x * r.embed_w(0, c) + pt.y * r.embed_w(1, c);
      if (cvrp) h[c] += inst.unit_demands()[i] * r.embed_w(2, c);
    }
    return h;
  };
  auto project = [&](const std::vector<long double>& h, const Matrix<double>& w) {
    std::vector<long double> out(d);
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t l = 0; l < d; ++l) out[c] += h[l] * w(l, c);
    return out;
  };
  std::vector<long double> ctx(d);
  if (cvrp) {
    const auto hl = hidden(q.last);
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t l = 0; l < d; ++l) ctx[c] += hl[l] * r.ctx_last(l, c);
      ctx[c] += q.q_remain * r.ctx_last(d, c);
    }
  } else {
    const auto a = project(hidden(q.first), r.ctx_first), b = project(hidden(q.last), r.ctx_last);
    for (std::size_t c = 0; c < d; ++c) ctx[c] = a[c] + b[c];
  }
  const long double scale = std::log2(static_cast<long double>(q.scale_nodes ? q.scale_nodes : inst.size()));
  std::vector<long double> bias;
  for (int j : feasible) bias.push_back(-r.alpha[0] * scale * inst.unit_distance(q.last, j));
  std::vector<long double> hhat(d);
  for (std::size_t c = 0; c < d; ++c) {
    long double num = 0, den = 0;
    for (std::size_t f = 0; f < feasible.size(); ++f) {
      const auto h = hidden(feasible[f]);
      const long double kc = project(h, r.key)[c], vc = project(h, r.value)[c];
      const long double w = std::exp(bias[f] + kc);
      num += w * vc;
      den += w;
    }
    hhat[c] = num / den / (1 + std::exp(-ctx[c]));
  }
  std::vector<long double> u;
  for (std::size_t f = 0; f < feasible.size(); ++f) {
    const auto h = hidden(feasible[f]);
    long double z = 0;
    for (std::size_t c = 0; c < d; ++c) z += hhat[c] * h[c];
    u.push_back(10 * std::tanh(z / std::sqrt(static_cast<long double>(d)) + bias[f]));
  }
  return u;
}

}  // namespace

TEST(Encoding, ZeroWeightsGiveBias) {
  auto p = ParameterSet<double>::zeros(small_config(ProblemKind::kTsp));
  for (std::size_t c = 0; c < 8; ++c) p.reduction.embed_b[c] = 0.1 * c;
  const auto inst = generate_uniform(ProblemKind::kTsp, 6, std::nullopt, 1);
  const auto h = embed_all(p, inst);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(h(i, c), 0.1 * c);
}

TEST(Encoding, MatchesDirectProduct) {
  const auto p = ParameterSet<double>::initialized(small_config(ProblemKind::kCvrp), 2);
  const auto inst = generate_uniform(ProblemKind::kCvrp, 9, 30.0, 2);
  const auto h = embed_all(p, inst);
  for (int i = 0; i < inst.size(); ++i)
    for (std::size_t c = 0; c < 8; ++c) {
      const double expect = p.reduction.embed_b[c] + inst.unit_coords()[i].x * p.reduction.embed_w(0, c) +
                            inst.unit_coords()[i].y * p.reduction.embed_w(1, c) +
                            (i == 0 ? 0.0 : inst.demands()[i] / 30.0) * p.reduction.embed_w(2, c);
      EXPECT_NEAR(h(i, c), expect, 1e-14);
    }
}

TEST(Context, TspFirstEqualsLast) {
  const auto p = ParameterSet<double>::initialized(small_config(ProblemKind::kTsp), 3);
  const auto inst = generate_uniform(ProblemKind::kTsp, 5, std::nullopt, 3);
  const auto enc = encode(p, inst);
  const auto ctx = context_embedding(p, enc, {2, 2, 1.0, 0});
  for (std::size_t c = 0; c < 8; ++c) {
    double s = 0;
    for (std::size_t l = 0; l < 8; ++l)
      s += enc.hidden(2, l) * (p.reduction.ctx_first(l, c) + p.reduction.ctx_last(l, c));
    EXPECT_NEAR(ctx[c], s, 1e-14);
  }
}

TEST(Context, CvrpZeroWeights) {
  auto p = ParameterSet<double>::initialized(small_config(ProblemKind::kCvrp), 4);
  p.reduction.ctx_last.fill(0.0);
  const auto inst = generate_uniform(ProblemKind::kCvrp, 5, 20.0, 4);
  const auto ctx = context_embedding(p, encode(p, inst), {0, 0, 1.0, 0});
  for (double x : ctx.values()) EXPECT_EQ(x, 0.0);
  const auto enc = encode(p, inst);
  EXPECT_EQ(code_of([&] { context_embedding(p, enc, {0, -1, 1.0, 0}); }), ErrorCode::kStateError);
}

TEST(Bias, ScaleDistanceExample) {
  // 1024 nodes; the corners fix the unit box so unit distance equals raw distance.
  std::vector<Point> pts{{0, 0}, {0.5, 0}, {1, 1}};
  Rng rng(5);
  while (pts.size() < 1024) pts.push_back({rng.uniform(), rng.uniform()});
  const auto inst = Instance::make_tsp("bias", pts);
  auto p = ParameterSet<double>::zeros(small_config(ProblemKind::kTsp));
  p.reduction.alpha[0] = 1.0;
  const std::vector<int> feasible{1};
  const auto bias = reduction_bias(p, inst, {0, 0, 1.0, 0}, feasible);
  EXPECT_DOUBLE_EQ(bias[0], -5.0);
}

TEST(Scores, EqualLogitsAreUniform) {
  auto cfg = small_config(ProblemKind::kTsp);
  cfg.reduction_bias = false;
  const auto p = ParameterSet<double>::zeros(cfg);
  const auto inst = generate_uniform(ProblemKind::kTsp, 6, std::nullopt, 6);
  const auto enc = encode(p, inst);
  const std::vector<int> feasible{1, 2, 4, 5};
  const auto s = score_feasible(p, enc, inst, {0, 0, 1.0, 0}, feasible);
  for (double pr : s.probs) EXPECT_NEAR(pr, 0.25, 1e-15);
}

TEST(Scores, MatchStraightLineRecomputation) {
  for (auto kind : {ProblemKind::kTsp, ProblemKind::kCvrp}) {
    const auto p = ParameterSet<double>::initialized(small_config(kind), 7);
    const auto inst = generate_uniform(kind, 15, 40.0, 7);
    const auto enc = encode(p, inst);
    const std::vector<int> feasible{1, 3, 4, 8, 9, 12};
    const ReductionQuery q{kind == ProblemKind::kTsp ? 2 : 0, 5, 0.6, 0};
    const auto s = score_feasible(p, enc, inst, q, feasible);
    const auto ref = reference_logits(p, inst, q, feasible);
    double sum = 0;
    for (std::size_t i = 0; i < feasible.size(); ++i) {
      EXPECT_NEAR(s.logits[i], static_cast<double>(ref[i]), 1e-10);
      sum += s.probs[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Scores, LogitsClippedForLargeWeights) {
  auto p = ParameterSet<double>::initialized(small_config(ProblemKind::kTsp), 8);
  for (auto* t : p.tensors())
    for (auto& x : t->values()) x *= 40;
  const auto inst = generate_uniform(ProblemKind::kTsp, 30, std::nullopt, 8);
  const auto enc = encode(p, inst);
  const auto s = score_feasible(p, enc, inst, {0, 3, 1.0, 0}, all_but(30, 3));
  for (double u : s.logits) {
    EXPECT_GE(u, -10.0);
    EXPECT_LE(u, 10.0);
  }
  const std::vector<int> none;
  EXPECT_EQ(code_of([&] { score_feasible(p, enc, inst, {0, 3, 1.0, 0}, none); }), ErrorCode::kEmptyFeasible);
}

TEST(Scores, DisablingBiasKeepsNormalization) {
  auto cfg = small_config(ProblemKind::kTsp);
  const auto with = ParameterSet<double>::initialized(cfg, 9);
  cfg.reduction_bias = false;
  auto without = ParameterSet<double>::initialized(cfg, 9);
  const auto inst = generate_uniform(ProblemKind::kTsp, 20, std::nullopt, 9);
  const auto a = score_feasible(with, encode(with, inst), inst, {0, 4, 1.0, 0}, all_but(20, 4));
  const auto b = score_feasible(without, encode(without, inst), inst, {0, 4, 1.0, 0}, all_but(20, 4));
  EXPECT_NE(a.logits, b.logits);
  EXPECT_NEAR(std::accumulate(b.probs.begin(), b.probs.end(), 0.0), 1.0, 1e-12);
}

TEST(FastScorer, AgreesWithExactPath) {
  for (auto kind : {ProblemKind::kTsp, ProblemKind::kCvrp}) {
    auto cfg = small_config(kind, 16, 1);
    const auto p = ParameterSet<float>::initialized(cfg, 10);
    const auto inst = generate_uniform(kind, 300, 50.0, 10);
    const auto enc = encode(p, inst);
    const FastScorer<float> fast(p, enc);
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<int> feasible;
      for (int i = 1; i < inst.size(); ++i)
        if (rng.uniform() < 0.5) feasible.push_back(i);
      const ReductionQuery q{kind == ProblemKind::kTsp ? 1 + trial : 0, 1 + 3 * trial, 0.7, 0};
      const auto exact = score_feasible(p, enc, inst, q, feasible);
      const auto approx = fast.score(inst, q, feasible);
      for (std::size_t i = 0; i < feasible.size(); ++i) {
        EXPECT_NEAR(approx.logits[i], exact.logits[i], 1e-3);
        EXPECT_NEAR(approx.probs[i], exact.probs[i], 1e-5);
      }
    }
  }
}

TEST(ReductionGradient, MatchesFiniteDifferences) {
  for (auto kind : {ProblemKind::kTsp, ProblemKind::kCvrp}) {
    auto p = ParameterSet<double>::initialized(small_config(kind), 12);
    const auto inst = generate_uniform(kind, 10, 20.0, 12);
    const std::vector<int> feasible{1, 2, 5, 6, 7, 9};
    const ReductionQuery q{kind == ProblemKind::kTsp ? 3 : 0, 4, 0.55, 0};
    const std::size_t target = 2;
    auto loss = [&] {
      const auto s = score_feasible(p, encode(p, inst), inst, q, feasible);
      return std::log(s.probs[target]);
    };
    const auto enc = encode(p, inst);
    ReductionTrace<double> tr;
    const auto s = score_feasible(p, enc, inst, q, feasible, &tr);
    std::vector<double> dlogits(feasible.size());
    for (std::size_t i = 0; i < feasible.size(); ++i) dlogits[i] = (i == target) - s.probs[i];
    auto grads = ParameterSet<double>::zeros(p.config);
    EncodingGrad<double> eg;
    eg.reset(enc.hidden.rows(), enc.hidden.cols());
    reduction_backward(p, enc, tr, dlogits, eg, grads);
    encoding_backward(p, enc, eg, grads);
    l2r::test::expect_fd_params(p, grads, loss);
    for (const auto* t : std::vector<const Matrix<double>*>{&grads.local.embed_w, &grads.local.alpha})
      for (double x : t->values()) EXPECT_EQ(x, 0.0);
  }
}

TEST(Select, PoolSmallerThanK) {
  const std::vector<int> nodes{4, 1, 9, 3, 7};
  const std::vector<double> scores{0.1, 0.3, 0.2, 0.25, 0.15};
  const auto c = select_candidates(nodes, scores, 20, SelectMode::kGreedy);
  EXPECT_EQ(c.indices, (std::vector<int>{1, 3, 9, 7, 4}));
  EXPECT_FALSE(c.sampled.has_value());
}

TEST(Select, TieBreaksTowardLowerIndex) {
  const std::vector<int> nodes{7, 2, 9};
  const std::vector<double> scores{0.4, 0.3, 0.3};
  const auto c = select_candidates(nodes, scores, 2, SelectMode::kGreedy);
  EXPECT_EQ(c.indices, (std::vector<int>{7, 2}));
}

TEST(Select, MatchesFullSort) {
  Rng rng(13);
  std::vector<int> nodes(100);
  std::iota(nodes.begin(), nodes.end(), 0);
  for (int i = 99; i > 0; --i) std::swap(nodes[i], nodes[rng.uniform_int(0, i)]);
  std::vector<double> scores(100);
  for (auto& s : scores) s = std::floor(rng.uniform() * 50) / 50;  // plenty of ties
  std::vector<std::size_t> order(100);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && nodes[a] < nodes[b]);
  });
  const auto c = select_candidates(nodes, scores, 20, SelectMode::kGreedy);
  ASSERT_EQ(c.indices.size(), 20u);
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(c.indices[i], nodes[order[i]]);
    EXPECT_EQ(c.scores[i], scores[order[i]]);
  }
}

TEST(Select, SamplingRecordsLogProbability) {
  const std::vector<int> nodes{3, 5, 8};
  const std::vector<double> scores{0.2, 0.5, 0.3};
  Rng rng(14);
  std::vector<int> counts(9);
  for (int i = 0; i < 4000; ++i) {
    const auto c = select_candidates(nodes, scores, 1, SelectMode::kSample, &rng);
    ASSERT_TRUE(c.sampled.has_value());
    const auto pos = std::find(nodes.begin(), nodes.end(), *c.sampled) - nodes.begin();
    EXPECT_DOUBLE_EQ(c.sampled_log_prob, std::log(scores[pos]));
    ++counts[*c.sampled];
  }
  EXPECT_NEAR(counts[5] / 4000.0, 0.5, 0.05);
}

TEST(Dssr, NearestFeasible) {
  const auto inst = Instance::make_tsp("d", {{0, 0}, {3, 0}, {1, 0}, {0, 2}, {5, 5}});
  const std::vector<int> feasible{1, 2, 3, 4};
  EXPECT_EQ(dssr_candidates(inst, 0, feasible, 1).indices, (std::vector<int>{2}));
  EXPECT_TRUE(dssr_candidates(inst, 0, feasible, 1).scores.empty());
  const auto ring = Instance::make_tsp("r", {{0, 0}, {1, 0}, {0, 1}, {-1, 0}, {0, -1}});
  EXPECT_EQ(dssr_candidates(ring, 0, std::vector<int>{4, 3, 2, 1}, 2).indices, (std::vector<int>{1, 2}));
}

TEST(Dssr, MatchesFullSortAndIsScaleInvariant) {
  const auto inst = generate_uniform(ProblemKind::kTsp, 80, std::nullopt, 15);
  std::vector<Point> scaled;
  for (const auto& pt : inst.coords()) scaled.push_back({pt.x * 37 + 5, pt.y * 37 - 2});
  const auto big = Instance::make_tsp("big", scaled);
  std::vector<int> feasible;
  for (int i = 0; i < 80; i += 2)
    if (i != 10) feasible.push_back(i);
  auto sorted = feasible;
  std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
    const double da = inst.unit_distance(10, a), db = inst.unit_distance(10, b);
    return da < db || (da == db && a < b);
  });
  sorted.resize(7);
  EXPECT_EQ(dssr_candidates(inst, 10, feasible, 7).indices, sorted);
  EXPECT_EQ(dssr_candidates(big, 10, feasible, 7).indices, sorted);
}
