#pragma once

#include <span>
#include <vector>

#include "l2r/instances.hpp"
#include "l2r/neural_ops.hpp"
#include "l2r/parameters.hpp"
#include "l2r/reduction_policy.hpp"
#include "l2r/rng.hpp"

namespace l2r {

// Sub-graph handed to the local model: [first, last, candidates...] with
// coordinates normalized by the candidates' bounding box.
struct SubGraph {
  int first = -1;
  int last = -1;
  std::vector<int> candidates;
  std::vector<Point> coords;    // 2 + |candidates| rows, in [0, 1]^2
  std::vector<double> demands;  // per candidate: demand / q_remain (CVRP, depot 0)
  double q_remain = 1.0;
  double ratio = 0.0;           // r = 1 / max(dx, dy); 0 for a degenerate box
  bool cvrp = false;

  int size() const { return static_cast<int>(candidates.size()); }
};

SubGraph normalize_subgraph(const Instance& instance, int first, int last,
                            std::span<const int> candidates, double q_remain = 1.0);

template <typename T>
struct LayerTrace {
  Matrix<T> x, q, k, v;
  std::vector<AafmCache<T>> aafm;  // one per batch item
  LayerNormCache<T> ln1, ln2;
  Matrix<T> h, f1;
};

template <typename T>
struct LocalTrace {
  int width = 0;
  int items = 0;
  Matrix<T> points;  // stacked (x, y) rows
  Matrix<T> e0;      // points W0 + b0, padded rows zero
  std::vector<Matrix<T>> distances;  // per item, (2 + width) square
  std::vector<Matrix<T>> bias;
  std::vector<T> scale;              // log2 |candidates| per item
  std::vector<LayerTrace<T>> layers;
  Matrix<T> out;
  std::vector<std::vector<T>> tanh_z;
  bool recorded = false;
};

struct LocalScores {
  std::vector<double> logits;  // padded entries are -inf
  std::vector<double> probs;   // padded entries are exactly 0
};

// Initial embeddings H0, (2 + width) x d; `width` 0 means |candidates|.
template <typename T>
Matrix<T> embed_subgraph(const ParameterSet<T>& params, const SubGraph& sg, int width = 0);

// Forward pass over a batch padded to `width` candidates. With a trace, all
// intermediates needed by `local_backward` are kept.
template <typename T>
std::vector<LocalScores> local_forward(const ParameterSet<T>& params,
                                       std::span<const SubGraph* const> items, int width,
                                       LocalTrace<T>* trace = nullptr);

// Single-item backward for dlogits over the real candidates.
template <typename T>
void local_backward(const ParameterSet<T>& params, const SubGraph& sg, const LocalTrace<T>& trace,
                    std::span<const double> dlogits, ParameterSet<T>& grads);

struct Choice {
  int position = -1;
  int node = -1;
  double log_prob = 0.0;
};

// Greedy picks the highest probability (lower position on ties); kSample
// draws from the softmax. A single candidate is returned without a forward.
Choice pick(const SubGraph& sg, std::span<const double> probs, SelectMode mode, Rng* rng);
template <typename T>
Choice choose_next(const ParameterSet<T>& params, const SubGraph& sg, SelectMode mode,
                   Rng* rng = nullptr);

struct PaddedBatch {
  int width = 0;
  std::vector<const SubGraph*> items;
  std::vector<std::vector<char>> mask;  // per item, width entries, true = real candidate
};

PaddedBatch pad_batch(std::span<const SubGraph> subgraphs);
template <typename T>
std::vector<LocalScores> batched_forward(const ParameterSet<T>& params, const PaddedBatch& batch);

}  // namespace l2r
