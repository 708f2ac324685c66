#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "l2r/instances.hpp"

namespace l2r {

// Out-degree kept per node for `n` nodes: ceil((1 - gamma)(n - 1)), capped at
// n - 1. Self is excluded from the rank.
int keep_count_for(int n, double gamma);

struct GraphOptions {
  enum class Lists { kAuto, kAlways, kNever };
  Lists lists = Lists::kAuto;
  // kAuto materializes neighbor lists only below this many directed edges.
  std::size_t max_list_entries = std::size_t{1} << 24;
};

// Directed sparse topology obtained by pruning, for every node, the farthest
// gamma fraction of the other nodes.
//
// Edge membership is decided by a per-node cutoff on the lexicographic key
// (squared unit distance, node index), so `has_edge` needs O(n) memory in
// total. Explicit ascending neighbor lists are materialized when they fit.
class SparseGraph {
 public:
  SparseGraph() = default;

  int size() const { return n_; }
  int keep_count() const { return keep_; }
  double gamma() const { return gamma_; }
  bool has_lists() const { return !list_index_.empty() || n_ == 0; }

  bool has_edge(int from, int to) const {
    if (from == to) return false;
    const double d2 = squared(from, to);
    return d2 < cutoff_d2_[from] || (d2 == cutoff_d2_[from] && to <= cutoff_index_[from]);
  }

  // Ascending by (distance, index); throws kStateError without lists.
  std::span<const int> neighbors(int node) const;
  std::span<const double> neighbor_distances(int node) const;

  double cutoff_distance(int node) const;
  int cutoff_index(int node) const { return cutoff_index_[node]; }

  void save(const std::string& path) const;
  static SparseGraph load(const std::string& path, const Instance& instance);

 private:
  friend SparseGraph build_sparse_graph(const Instance&, double, const GraphOptions&);

  // Explicit fma pins the rounding so every call site agrees bit for bit,
  // whatever contraction the compiler applies elsewhere.
  double squared(int a, int b) const {
    const double dx = coords_[a].x - coords_[b].x;
    const double dy = coords_[a].y - coords_[b].y;
    return std::fma(dx, dx, dy * dy);
  }

  int n_ = 0;
  int keep_ = 0;
  double gamma_ = 0.0;
  std::vector<Point> coords_;
  std::vector<double> cutoff_d2_;
  std::vector<int> cutoff_index_;
  std::vector<int> list_index_;
  std::vector<double> list_distance_;
};

SparseGraph build_sparse_graph(const Instance& instance, double gamma,
                               const GraphOptions& options = {});

}  // namespace l2r
