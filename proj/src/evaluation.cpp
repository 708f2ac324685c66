#include "l2r/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include "l2r/error.hpp"

namespace l2r {

HeldKarpResult held_karp(const Instance& instance, const EdgePredicate& allowed, DistanceMode mode) {
  if (instance.kind() != ProblemKind::kTsp) throw Error(ErrorCode::kInvalidInstance, "held_karp: TSP only");
  const int n = instance.size();
  if (n > kHeldKarpMaxNodes)
    throw Error(ErrorCode::kSizeGuard, "held_karp: " + std::to_string(n) + " nodes exceed the limit of " +
                                           std::to_string(kHeldKarpMaxNodes));
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n * n, kInf);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && (!allowed || allowed(i, j))) dist[i * n + j] = instance.distance(i, j, mode);

  HeldKarpResult out;
  if (n == 2) {
    if (dist[1] < kInf && dist[n] < kInf) out = {true, {{0, 1}}, dist[1] + dist[n]};
    return out;
  }
  // Subsets of nodes 1..n-1; dp[mask][j] = shortest path 0 -> ... -> j covering mask.
  const int m = n - 1;
  const std::size_t full = std::size_t{1} << m;
  std::vector<double> dp(full * m, kInf);
  std::vector<std::int8_t> parent(full * m, -1);
  for (int j = 0; j < m; ++j) dp[(std::size_t{1} << j) * m + j] = dist[0 * n + j + 1];
  for (std::size_t mask = 1; mask < full; ++mask) {
    for (int j = 0; j < m; ++j) {
      if (!(mask >> j & 1)) continue;
      const double base = dp[mask * m + j];
      if (base == kInf) continue;
      for (int nx = 0; nx < m; ++nx) {
        if (mask >> nx & 1) continue;
        const double w = dist[(j + 1) * n + nx + 1];
        if (w == kInf) continue;
        const std::size_t next = mask | (std::size_t{1} << nx);
        if (base + w < dp[next * m + nx]) {
          dp[next * m + nx] = base + w;
          parent[next * m + nx] = static_cast<std::int8_t>(j);
        }
      }
    }
  }
  double best = kInf;
  int last = -1;
  for (int j = 0; j < m; ++j) {
    const double total = dp[(full - 1) * m + j] + dist[(j + 1) * n];
    if (total < best) {
      best = total;
      last = j;
    }
  }
  if (last < 0) return out;
  std::vector<int> order;
  std::size_t mask = full - 1;
  for (int j = last; j >= 0;) {
    order.push_back(j + 1);
    const int p = parent[mask * m + j];
    mask &= ~(std::size_t{1} << j);
    j = p;
  }
  order.push_back(0);
  std::reverse(order.begin(), order.end());
  out.feasible = true;
  out.tour.order = std::move(order);
  out.length = best;
  return out;
}

Tour held_karp(const Instance& instance) { return held_karp(instance, nullptr).tour; }

std::vector<int> nearest_neighbor(const Instance& instance, int start) {
  const int n = instance.size();
  std::vector<char> visited(n, 0);
  std::vector<int> seq;
  auto nearest = [&](int from, auto&& admissible) {
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (visited[j] || !admissible(j)) continue;
      const double d = instance.distance(from, j);
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    return best;
  };
  if (!instance.is_cvrp()) {
    if (start < 0 || start >= n) throw Error(ErrorCode::kInvalidConfig, "nearest_neighbor: bad start node");
    int cur = start;
    visited[cur] = 1;
    seq.push_back(cur);
    for (int step = 1; step < n; ++step) {
      cur = nearest(cur, [](int) { return true; });
      visited[cur] = 1;
      seq.push_back(cur);
    }
    return seq;
  }
  visited[0] = 1;
  seq.push_back(0);
  double load = instance.capacity();
  int cur = 0, left = n - 1;
  auto dem = instance.demands();
  while (left > 0) {
    const int nx = nearest(cur, [&](int j) { return dem[j] <= load; });
    if (nx < 0) {
      seq.push_back(0);
      cur = 0;
      load = instance.capacity();
      continue;
    }
    visited[nx] = 1;
    load -= dem[nx];
    seq.push_back(nx);
    cur = nx;
    --left;
  }
  seq.push_back(0);
  return seq;
}

double optimality_gap(double objective, double reference) {
  if (!(reference > 0.0)) throw Error(ErrorCode::kInvalidReference, "optimality_gap: reference must be positive");
  return 100.0 * (objective - reference) / reference;
}

double ratio_percent(int hits, int steps) { return steps > 0 ? 100.0 * hits / steps : 0.0; }
double RatioResult::percent() const { return ratio_percent(hits, steps); }

template <typename T>
RatioResult optimality_ratio(const Instance& instance, const Tour& reference, const SparseGraph& graph,
                             const Policy<T>& policy) {
  if (instance.kind() != ProblemKind::kTsp) throw Error(ErrorCode::kInvalidInstance, "optimality_ratio: TSP only");
  tour_length(instance, reference);  // validates the permutation
  const int n = instance.size();
  Encoding<T> enc;
  std::unique_ptr<FastScorer<T>> fast;
  if (policy.reducer == ReducerKind::kLearned) {
    enc = encode(*policy.params, instance);
    fast = std::make_unique<FastScorer<T>>(*policy.params, enc);
  }
  Rng rng(0);
  StepContext<T> ctx;
  ctx.instance = &instance;
  ctx.graph = &graph;
  ctx.policy = &policy;
  ctx.encoding = &enc;
  ctx.fast = fast.get();
  RolloutState state = init_state(instance, StartRule::fixed(reference.order[0]), rng);
  RatioResult r;
  for (int t = 0; t + 1 < n; ++t) {
    const int next = reference.order[t + 1];
    const FeasibleSet fs = feasible_set(state, graph, instance);
    const CandidateSet cs = reduce(ctx, {state.first, state.last, state.q_remain, n}, fs.nodes);
    if (std::find(cs.indices.begin(), cs.indices.end(), next) != cs.indices.end()) ++r.hits;
    ++r.steps;
    advance(state, instance, next);
  }
  ++r.hits;  // closing edge
  ++r.steps;
  return r;
}

nlohmann::json SolveReport::to_json(bool include_timing) const {
  nlohmann::json j{{"method", method}, {"objective", objective}, {"fallback_events", fallback_events}};
  j["reference_objective"] = reference_objective ? nlohmann::json(*reference_objective) : nlohmann::json();
  j["gap_pct"] = gap_pct ? nlohmann::json(*gap_pct) : nlohmann::json();
  j["optimality_ratio"] = optimality_ratio ? nlohmann::json(*optimality_ratio) : nlohmann::json();
  if (include_timing) j["wall_ms"] = wall_ms;
  return j;
}

std::vector<std::vector<char>> knn_union(const Instance& instance, int k) {
  const int n = instance.size();
  std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    order.erase(order.begin() + i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return instance.distance(i, a) < instance.distance(i, b); });
    const int keep = std::min<int>(k, static_cast<int>(order.size()));
    for (int r = 0; r < keep; ++r) adj[i][order[r]] = adj[order[r]][i] = 1;
  }
  return adj;
}

PruningReport pruned_oracle_experiment(std::span<const Instance> instances, std::span<const int> k_values) {
  PruningReport report;
  const std::size_t ni = instances.size(), nk = k_values.size();
  std::vector<PruningRow> rows(ni * nk);
  std::vector<std::exception_ptr> errors(ni);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < ni; ++i) {
    try {
      const double optimum = held_karp(instances[i], nullptr).length;
      for (std::size_t c = 0; c < nk; ++c) {
        const auto adj = knn_union(instances[i], k_values[c]);
        const auto res = held_karp(instances[i], [&](int a, int b) { return adj[a][b] != 0; });
        PruningRow& row = rows[i * nk + c];
        row.instance = static_cast<int>(i);
        row.k = k_values[c];
        row.optimum = optimum;
        row.feasible = res.feasible;
        row.restricted = res.feasible ? res.length : 0.0;
        row.gap_pct = res.feasible ? optimality_gap(res.length, optimum) : 0.0;
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  report.rows = std::move(rows);
  for (std::size_t c = 0; c < nk; ++c) {
    PruningSummary s;
    s.k = k_values[c];
    double sum = 0.0;
    for (std::size_t i = 0; i < ni; ++i) {
      const auto& row = report.rows[i * nk + c];
      if (row.feasible) {
        ++s.feasible;
        sum += row.gap_pct;
      } else {
        ++s.infeasible;
      }
    }
    s.mean_gap_pct = s.feasible ? sum / s.feasible : 0.0;
    report.summary.push_back(s);
  }
  return report;
}

std::string PruningReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "instance,k,optimum,feasible,restricted,gap_pct\n";
  for (const auto& r : rows)
    out << r.instance << ',' << r.k << ',' << r.optimum << ',' << (r.feasible ? 1 : 0) << ','
        << r.restricted << ',' << r.gap_pct << '\n';
  return out.str();
}

nlohmann::json PruningReport::to_json() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"instance", r.instance}, {"k", r.k}, {"optimum", r.optimum}, {"feasible", r.feasible},
                         {"restricted", r.restricted}, {"gap_pct", r.gap_pct}});
  j["summary"] = nlohmann::json::array();
  for (const auto& s : summary)
    j["summary"].push_back({{"k", s.k}, {"feasible", s.feasible}, {"infeasible", s.infeasible},
                            {"mean_gap_pct", s.mean_gap_pct}});
  return j;
}

template RatioResult optimality_ratio<float>(const Instance&, const Tour&, const SparseGraph&, const Policy<float>&);
template RatioResult optimality_ratio<double>(const Instance&, const Tour&, const SparseGraph&, const Policy<double>&);

}  // namespace l2r
