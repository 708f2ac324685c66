#pragma once

#include <optional>
#include <span>
#include <vector>

#include "l2r/instances.hpp"
#include "l2r/neural_ops.hpp"
#include "l2r/parameters.hpp"
#include "l2r/rng.hpp"

namespace l2r {

// Per-instance node encoding of the reduction model, computed once and reused
// across all construction steps.
template <typename T>
struct Encoding {
  Matrix<T> features;  // n x dx: unit (x, y) and, for CVRP, demand / capacity
  Matrix<T> hidden;    // H = features W_e + b_e
  Matrix<T> keys;      // H W_K
  Matrix<T> values;    // H W_V
};

template <typename T>
Matrix<T> node_features(const Instance& instance);
template <typename T>
Matrix<T> embed_all(const ParameterSet<T>& params, const Instance& instance);
template <typename T>
Encoding<T> encode(const ParameterSet<T>& params, const Instance& instance);

struct ReductionQuery {
  int first = -1;
  int last = -1;
  double q_remain = 1.0;
  // Node count N entering the log2(N) scale of the adaptation bias.
  int scale_nodes = 0;
};

// TSP: h_first W_first + h_last W_last.  CVRP: [h_last, q_remain] W_last.
template <typename T>
Matrix<T> context_embedding(const ParameterSet<T>& params, const Encoding<T>& enc,
                            const ReductionQuery& query);

// Adaptation bias -alpha * log2(N) * d(last, j) for every feasible j, or zeros
// when the bias is disabled.
template <typename T>
std::vector<T> reduction_bias(const ParameterSet<T>& params, const Instance& instance,
                              const ReductionQuery& query, std::span<const int> feasible);

struct Scores {
  std::vector<double> logits;  // clipped compatibilities u, one per feasible node
  std::vector<double> probs;   // softmax(u)
};

template <typename T>
struct ReductionTrace {
  ReductionQuery query;
  std::vector<int> feasible;
  std::vector<T> distances;
  Matrix<T> context;
  Matrix<T> keys, values, bias;
  AafmCache<T> aafm;
  Matrix<T> hhat;
  std::vector<T> tanh_z;
};

// Exact evaluation over the gathered feasible rows. Throws kEmptyFeasible
// when `feasible` is empty.
template <typename T>
Scores score_feasible(const ParameterSet<T>& params, const Encoding<T>& enc,
                      const Instance& instance, const ReductionQuery& query,
                      std::span<const int> feasible, ReductionTrace<T>* trace = nullptr);

// Inference-only scorer for large instances. exp(K) is tabulated once per
// instance with a global column shift, and the compatibility h_j . h_hat is
// taken through the affine encoder, so a step costs O(|feasible| d) with no
// per-node exponentials of K. Steps whose denominators underflow fall back to
// `score_feasible`.
struct CandidateSet;

template <typename T>
class FastScorer {
 public:
  FastScorer(const ParameterSet<T>& params, const Encoding<T>& enc);
  Scores score(const Instance& instance, const ReductionQuery& query,
               std::span<const int> feasible) const;
  // Greedy top-k without materializing scores; `scores` stays empty.
  CandidateSet top_k(const Instance& instance, const ReductionQuery& query,
                     std::span<const int> feasible, int k) const;
  std::size_t fallbacks() const { return fallbacks_; }

 private:
  // Pre-clip compatibilities; false when a softmax denominator underflows.
  bool compatibilities(const Instance& instance, const ReductionQuery& query,
                       std::span<const int> feasible, std::vector<double>& z) const;

  const ParameterSet<T>* params_;
  const Encoding<T>* enc_;
  Matrix<T> exp_table_;
  mutable std::size_t fallbacks_ = 0;
};

// Gradient slots for the per-node encoding.
template <typename T>
struct EncodingGrad {
  Matrix<T> hidden, keys, values;
  void reset(std::size_t n, std::size_t d) {
    hidden.reset(n, d);
    keys.reset(n, d);
    values.reset(n, d);
  }
};

// Backpropagates dlogits (one per feasible node) into the encoding slots and
// the context/alpha parameters.
template <typename T>
void reduction_backward(const ParameterSet<T>& params, const Encoding<T>& enc,
                        const ReductionTrace<T>& trace, std::span<const double> dlogits,
                        EncodingGrad<T>& enc_grad, ParameterSet<T>& grads);
// Pushes the encoding slots through W_K, W_V and the embedding.
template <typename T>
void encoding_backward(const ParameterSet<T>& params, const Encoding<T>& enc,
                       const EncodingGrad<T>& enc_grad, ParameterSet<T>& grads);

// --- candidate selection ---------------------------------------------------------

enum class SelectMode { kGreedy, kSample };

struct CandidateSet {
  std::vector<int> indices;  // ranked by score, ties toward lower node index
  std::vector<double> scores;
  std::optional<int> sampled;
  double sampled_log_prob = 0.0;
};

// Top-k of `nodes` by `scores`; kSample additionally draws tau from the full
// distribution.
CandidateSet select_candidates(std::span<const int> nodes, std::span<const double> scores, int k,
                               SelectMode mode, Rng* rng = nullptr);

// The k feasible nodes nearest to `last`, ties toward lower index.
CandidateSet dssr_candidates(const Instance& instance, int last, std::span<const int> feasible,
                             int k);

}  // namespace l2r
