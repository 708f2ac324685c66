#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2r/instances.hpp"
#include "l2r/rollout.hpp"
#include "l2r/static_reduction.hpp"

namespace l2r {

inline constexpr int kHeldKarpMaxNodes = 18;

using EdgePredicate = std::function<bool(int, int)>;

struct HeldKarpResult {
  bool feasible = false;
  Tour tour;
  double length = 0.0;
};

// Exact TSP by bitmask dynamic programming, tour starting at node 0. Edges
// rejected by `allowed` are never used; without a Hamiltonian cycle the
// result is infeasible. Throws kSizeGuard above kHeldKarpMaxNodes nodes.
HeldKarpResult held_karp(const Instance& instance, const EdgePredicate& allowed,
                         DistanceMode mode = DistanceMode::kEuclidean);
Tour held_karp(const Instance& instance);

// Nearest feasible next node, ties toward lower index. For CVRP the result is
// a depot-delimited walk that returns to the depot when nothing fits.
std::vector<int> nearest_neighbor(const Instance& instance, int start = 0);

double optimality_gap(double objective, double reference);

struct RatioResult {
  int hits = 0;
  int steps = 0;
  double percent() const;
};

double ratio_percent(int hits, int steps);

// Walks `reference` from its first node; at each step the policy's candidate
// set for the induced prefix is checked for the true successor. The closing
// edge back to the start is forced and counts as a hit, so steps = n.
template <typename T>
RatioResult optimality_ratio(const Instance& instance, const Tour& reference, const SparseGraph& graph,
                             const Policy<T>& policy);

struct SolveReport {
  std::string method;
  double objective = 0.0;
  std::optional<double> reference_objective;
  std::optional<double> gap_pct;
  std::optional<double> optimality_ratio;
  double wall_ms = 0.0;
  int fallback_events = 0;

  nlohmann::json to_json(bool include_timing = true) const;
};

// Table-1 analog: optimum over the symmetrized union of k-nearest lists vs
// the unrestricted optimum.
struct PruningRow {
  int instance = 0;
  int k = 0;
  double optimum = 0.0;
  bool feasible = false;
  double restricted = 0.0;
  double gap_pct = 0.0;
};

struct PruningSummary {
  int k = 0;
  int feasible = 0;
  int infeasible = 0;
  double mean_gap_pct = 0.0;  // over feasible instances
};

struct PruningReport {
  std::vector<PruningRow> rows;
  std::vector<PruningSummary> summary;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

// Symmetrized k-nearest edge set as an adjacency matrix.
std::vector<std::vector<char>> knn_union(const Instance& instance, int k);

PruningReport pruned_oracle_experiment(std::span<const Instance> instances, std::span<const int> k_values);

}  // namespace l2r
