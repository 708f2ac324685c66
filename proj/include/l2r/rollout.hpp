#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "l2r/instances.hpp"
#include "l2r/local_construction.hpp"
#include "l2r/parameters.hpp"
#include "l2r/reduction_policy.hpp"
#include "l2r/rng.hpp"
#include "l2r/static_reduction.hpp"

namespace l2r {

enum class ReducerKind { kLearned, kDistance };

struct StartRule {
  enum class Kind { kFixed, kRandom };
  Kind kind = Kind::kFixed;
  int index = 0;

  static StartRule fixed(int index) { return {Kind::kFixed, index}; }
  static StartRule random() { return {Kind::kRandom, 0}; }
};

class RolloutState {
 public:
  std::vector<char> visited;
  std::vector<int> partial;
  int first = -1;
  int last = -1;
  double q_remain = 1.0;  // fraction of capacity left (CVRP)
  double load_left = 0.0; // same in problem units, kept exact for masking
  int step = 0;
  int customers_left = 0;
  int fallback_events = 0;

  bool done() const { return done_; }

 private:
  friend RolloutState init_state(const Instance&, StartRule, Rng&);
  friend struct FeasibleSet feasible_set(const RolloutState&, const SparseGraph&, const Instance&);
  friend void advance(RolloutState&, const Instance&, int);
  bool done_ = false;
  std::vector<int> pending_;  // ascending, may hold visited entries until compacted
  std::size_t stale_ = 0;
};

RolloutState init_state(const Instance& instance, StartRule start, Rng& rng);

struct FeasibleSet {
  std::vector<int> nodes;
  bool fallback = false;
};

// Unvisited out-neighbors of `last` in the sparse graph (CVRP: customers that
// fit the remaining load). Falls back to every admissible unvisited node when
// the graph leaves none.
FeasibleSet feasible_set(const RolloutState& state, const SparseGraph& graph, const Instance& instance);

// Appends `node` and updates load, visited flags and termination.
void advance(RolloutState& state, const Instance& instance, int node);

template <typename T>
struct Policy {
  const ParameterSet<T>* params = nullptr;
  ReducerKind reducer = ReducerKind::kLearned;
  int k = 20;
};

// Everything a step needs besides the state; `fast` may be null.
template <typename T>
struct StepContext {
  const Instance* instance = nullptr;
  const SparseGraph* graph = nullptr;
  const Policy<T>* policy = nullptr;
  const Encoding<T>* encoding = nullptr;
  const FastScorer<T>* fast = nullptr;
  SelectMode mode = SelectMode::kGreedy;
  bool sample_tau = false;   // draw tau from the reduction distribution
  bool instrument = false;   // keep scores and the ranked top-k
  Rng* rng = nullptr;
};

struct StepRecord {
  int t = 0;
  int first = -1;
  int last = -1;
  double q_remain = 1.0;
  std::vector<int> feasible;
  std::vector<int> ranked;        // top-k in score order (reduction output)
  std::vector<double> scores;     // o over `feasible` (instrumented learned steps)
  std::vector<int> candidates;    // ascending, as handed to the local model
  int sampled = -1;
  double log_o = 0.0;
  int chosen = -1;
  double log_p = 0.0;
  bool fallback = false;
};

// Feasible set, reduction and normalization for the next decision. Returns
// the sub-graph the local model chooses from.
template <typename T>
SubGraph prepare_step(const RolloutState& state, const StepContext<T>& ctx, StepRecord& record);

// Candidate set for an arbitrary feasible set (used by rollouts and PRC).
template <typename T>
CandidateSet reduce(const StepContext<T>& ctx, const ReductionQuery& query,
                    std::span<const int> feasible, std::vector<double>* scores = nullptr);

struct RolloutOptions {
  SelectMode mode = SelectMode::kGreedy;
  StartRule start = StartRule::fixed(0);
  std::uint64_t seed = 0;
  bool record = false;      // keep per-step records with tau sampling (training)
  bool instrument = false;  // keep per-step records with scores
  bool fast_scoring = true; // FastScorer when not recording
};

struct RolloutResult {
  std::vector<int> sequence;
  double objective = 0.0;  // Euclidean length in problem units
  int steps = 0;
  int fallback_events = 0;
  double sum_log_p = 0.0;
  double sum_log_o = 0.0;
  std::vector<StepRecord> records;
};

template <typename T>
RolloutResult rollout(const Instance& instance, const SparseGraph& graph, const Policy<T>& policy,
                      const RolloutOptions& options);

// Rollouts for many instances of one kind. `batched` steps them in lockstep
// through padded local-model batches; otherwise each runs on its own.
// Item i uses seed derive_seed(options.seed, i).
template <typename T>
std::vector<RolloutResult> construct(std::span<const Instance> instances,
                                     std::span<const SparseGraph> graphs, const Policy<T>& policy,
                                     const RolloutOptions& options, bool batched = false);

}  // namespace l2r
