#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "l2r/instances.hpp"
#include "l2r/rollout.hpp"

namespace l2r {

struct PrcConfig {
  int iterations = 100;
  int max_destroy_len = 1000;
  int segments_per_iter = 0;  // 0: every segment of the partition
  std::uint64_t seed = 0;
};

struct PrcResult {
  std::vector<int> sequence;
  double objective = 0.0;
  std::vector<double> history;  // objective after each iteration, starting with the input
  int accepted = 0;
};

// Destroy-and-repair improvement. Each iteration cuts the solution into
// consecutive segments that share endpoints (lengths uniform in
// [2, max_destroy_len], TSP from a random rotation, CVRP inside each route),
// rebuilds every interior greedily with the policy using the segment's end
// as first node and its start as last node, and keeps a rebuild only if it
// is strictly shorter.
template <typename T>
PrcResult improve(const Instance& instance, std::span<const int> sequence, const Policy<T>& policy,
                  const PrcConfig& config);

}  // namespace l2r
