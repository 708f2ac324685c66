#include "l2r/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "l2r/error.hpp"

namespace l2r {
namespace {

constexpr int kDepot = 0;

bool fits(const Instance& instance, const RolloutState& state, int node) {
  return instance.demands()[node] <= state.load_left;
}

}  // namespace

RolloutState init_state(const Instance& instance, StartRule start, Rng& rng) {
  const int n = instance.size();
  RolloutState s;
  s.visited.assign(n, 0);
  int origin = kDepot;
  if (instance.is_cvrp()) {
    s.load_left = instance.capacity();
    s.q_remain = 1.0;
    s.customers_left = n - 1;
  } else {
    origin = start.kind == StartRule::Kind::kRandom ? static_cast<int>(rng.uniform_int(0, n - 1)) : start.index;
    if (origin < 0 || origin >= n) throw Error(ErrorCode::kInvalidConfig, "start node out of range");
    s.customers_left = n - 1;
  }
  s.visited[origin] = 1;
  s.partial.push_back(origin);
  s.first = s.last = origin;
  s.pending_.reserve(n);
  for (int i = 0; i < n; ++i)
    if (i != origin && !(instance.is_cvrp() && i == kDepot)) s.pending_.push_back(i);
  s.done_ = s.customers_left == 0 && !instance.is_cvrp();
  return s;
}

FeasibleSet feasible_set(const RolloutState& state, const SparseGraph& graph, const Instance& instance) {
  FeasibleSet out;
  if (state.done_) return out;
  const bool cvrp = instance.is_cvrp();
  std::size_t admissible = 0;
  for (int j : state.pending_) {
    if (state.visited[j] || (cvrp && !fits(instance, state, j))) continue;
    ++admissible;
    if (graph.has_edge(state.last, j)) out.nodes.push_back(j);
  }
  if (out.nodes.empty() && admissible > 0) {
    out.fallback = true;
    for (int j : state.pending_)
      if (!state.visited[j] && !(cvrp && !fits(instance, state, j))) out.nodes.push_back(j);
  }
  return out;
}

void advance(RolloutState& s, const Instance& instance, int node) {
  if (s.done_) throw Error(ErrorCode::kStateError, "advance: rollout already finished");
  const bool cvrp = instance.is_cvrp();
  if (node < 0 || node >= instance.size()) throw Error(ErrorCode::kInternal, "advance: node out of range");
  if (cvrp && node == kDepot) {
    if (s.last == kDepot) throw Error(ErrorCode::kInternal, "advance: consecutive depot visits");
    s.load_left = instance.capacity();
    s.q_remain = 1.0;
  } else {
    if (s.visited[node]) throw Error(ErrorCode::kInternal, "advance: node already visited");
    if (cvrp) {
      if (!fits(instance, s, node)) throw Error(ErrorCode::kInternal, "advance: capacity exceeded");
      s.load_left -= instance.demands()[node];
      s.q_remain = s.load_left / instance.capacity();
    }
    s.visited[node] = 1;
    --s.customers_left;
    if (++s.stale_ * 2 > s.pending_.size()) {
      std::erase_if(s.pending_, [&](int j) { return s.visited[j] != 0; });
      s.stale_ = 0;
    }
  }
  s.partial.push_back(node);
  s.last = node;
  ++s.step;
  s.done_ = s.customers_left == 0 && (!cvrp || node == kDepot);
}

template <typename T>
CandidateSet reduce(const StepContext<T>& ctx, const ReductionQuery& query,
                    std::span<const int> feasible, std::vector<double>* scores) {
  const auto& policy = *ctx.policy;
  if (policy.reducer == ReducerKind::kDistance)
    return dssr_candidates(*ctx.instance, query.last, feasible, policy.k);
  if (ctx.fast && !ctx.sample_tau && !scores) return ctx.fast->top_k(*ctx.instance, query, feasible, policy.k);
  const Scores sc = ctx.fast ? ctx.fast->score(*ctx.instance, query, feasible)
                             : score_feasible(*policy.params, *ctx.encoding, *ctx.instance, query, feasible);
  CandidateSet cs = select_candidates(feasible, sc.probs, policy.k,
                                      ctx.sample_tau ? SelectMode::kSample : SelectMode::kGreedy, ctx.rng);
  if (scores) *scores = sc.probs;
  return cs;
}

template <typename T>
SubGraph prepare_step(const RolloutState& state, const StepContext<T>& ctx, StepRecord& rec) {
  const Instance& instance = *ctx.instance;
  const bool cvrp = instance.is_cvrp();
  FeasibleSet fs = feasible_set(state, *ctx.graph, instance);
  rec.t = state.step;
  rec.first = state.first;
  rec.last = state.last;
  rec.q_remain = state.q_remain;
  rec.fallback = fs.fallback;

  std::vector<int> cands;
  if (!fs.nodes.empty()) {
    ReductionQuery query{state.first, state.last, state.q_remain, instance.size()};
    CandidateSet cs = reduce(ctx, query, fs.nodes, ctx.instrument ? &rec.scores : nullptr);
    if (cs.sampled) {
      rec.sampled = *cs.sampled;
      rec.log_o = cs.sampled_log_prob;
    }
    cands = cs.indices;
    rec.ranked = std::move(cs.indices);
  } else if (!cvrp || state.last == kDepot) {
    throw Error(ErrorCode::kInternal, "rollout: no admissible node left");
  }
  if (cvrp && state.last != kDepot) cands.push_back(kDepot);
  std::sort(cands.begin(), cands.end());
  rec.candidates = cands;
  rec.feasible = std::move(fs.nodes);
  return normalize_subgraph(instance, state.first, state.last, cands, state.q_remain);
}

namespace {

template <typename T>
struct Runner {
  const Instance* instance;
  Encoding<T> encoding;
  std::unique_ptr<FastScorer<T>> fast;
  Rng rng;
  RolloutState state;
  RolloutResult result;
  StepContext<T> ctx;

  Runner(const Instance& inst, const SparseGraph& graph, const Policy<T>& policy,
         const RolloutOptions& options, std::uint64_t seed)
      : instance(&inst), rng(seed) {
    if (policy.reducer == ReducerKind::kLearned) {
      if (!policy.params) throw Error(ErrorCode::kInvalidConfig, "learned reducer needs parameters");
      encoding = encode(*policy.params, inst);
      if (options.fast_scoring && !options.record)
        fast = std::make_unique<FastScorer<T>>(*policy.params, encoding);
    }
    if (graph.size() != inst.size()) throw Error(ErrorCode::kShapeError, "sparse graph does not match instance");
    ctx.instance = &inst;
    ctx.graph = &graph;
    ctx.policy = &policy;
    ctx.encoding = &encoding;
    ctx.fast = fast.get();
    ctx.mode = options.mode;
    ctx.sample_tau = options.record && options.mode == SelectMode::kSample;
    ctx.instrument = options.instrument;
    ctx.rng = &rng;
    state = init_state(inst, options.start, rng);
  }

  void apply(const Choice& choice, StepRecord&& rec, bool keep) {
    rec.chosen = choice.node;
    rec.log_p = choice.log_prob;
    result.sum_log_p += rec.log_p;
    result.sum_log_o += rec.log_o;
    if (rec.fallback) ++state.fallback_events;
    advance(state, *instance, choice.node);
    if (keep) result.records.push_back(std::move(rec));
  }

  RolloutResult finish() {
    result.sequence = std::move(state.partial);
    result.steps = state.step;
    result.fallback_events = state.fallback_events;
    try {
      validate_sequence(*instance, result.sequence);
    } catch (const Error& e) {
      throw Error(ErrorCode::kInternal, std::string("rollout produced an infeasible solution: ") + e.what());
    }
    result.objective = sequence_length(*instance, result.sequence);
    return std::move(result);
  }
};

}  // namespace

template <typename T>
RolloutResult rollout(const Instance& instance, const SparseGraph& graph, const Policy<T>& policy,
                      const RolloutOptions& options) {
  Runner<T> run(instance, graph, policy, options, options.seed);
  const bool keep = options.record || options.instrument;
  while (!run.state.done()) {
    StepRecord rec;
    const SubGraph sg = prepare_step(run.state, run.ctx, rec);
    const Choice choice = choose_next(*policy.params, sg, options.mode, &run.rng);
    run.apply(choice, std::move(rec), keep);
  }
  return run.finish();
}

template <typename T>
std::vector<RolloutResult> construct(std::span<const Instance> instances,
                                     std::span<const SparseGraph> graphs, const Policy<T>& policy,
                                     const RolloutOptions& options, bool batched) {
  if (instances.size() != graphs.size()) throw Error(ErrorCode::kBatchError, "construct: one graph per instance");
  for (const auto& inst : instances)
    if (inst.kind() != instances[0].kind()) throw Error(ErrorCode::kBatchError, "construct: mixed problem kinds");
  const std::size_t count = instances.size();
  std::vector<RolloutResult> out(count);

  if (!batched) {
    std::vector<std::exception_ptr> errors(count);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < count; ++i) {
      try {
        RolloutOptions o = options;
        o.seed = derive_seed(options.seed, i);
        out[i] = rollout(instances[i], graphs[i], policy, o);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    return out;
  }

  std::vector<std::unique_ptr<Runner<T>>> runners;
  for (std::size_t i = 0; i < count; ++i)
    runners.push_back(std::make_unique<Runner<T>>(instances[i], graphs[i], policy, options,
                                                  derive_seed(options.seed, i)));
  const bool keep = options.record || options.instrument;
  for (;;) {
    std::vector<std::size_t> active;
    std::vector<SubGraph> subgraphs;
    std::vector<StepRecord> recs;
    for (std::size_t i = 0; i < count; ++i) {
      if (runners[i]->state.done()) continue;
      active.push_back(i);
      recs.emplace_back();
      subgraphs.push_back(prepare_step(runners[i]->state, runners[i]->ctx, recs.back()));
    }
    if (active.empty()) break;
    std::vector<std::size_t> multi;
    std::vector<SubGraph> forward_items;
    for (std::size_t a = 0; a < active.size(); ++a)
      if (subgraphs[a].size() > 1) {
        multi.push_back(a);
        forward_items.push_back(subgraphs[a]);
      }
    std::vector<LocalScores> scores;
    if (!forward_items.empty()) scores = batched_forward(*policy.params, pad_batch(forward_items));
    for (std::size_t a = 0, next = 0; a < active.size(); ++a) {
      auto& run = *runners[active[a]];
      Choice choice{0, subgraphs[a].candidates[0], 0.0};
      if (next < multi.size() && multi[next] == a) {
        choice = pick(subgraphs[a], scores[next].probs, options.mode, &run.rng);
        ++next;
      }
      run.apply(choice, std::move(recs[a]), keep);
    }
  }
  for (std::size_t i = 0; i < count; ++i) out[i] = runners[i]->finish();
  return out;
}

#define L2R_INSTANTIATE(T)                                                                         \
  template CandidateSet reduce<T>(const StepContext<T>&, const ReductionQuery&,                    \
                                  std::span<const int>, std::vector<double>*);                     \
  template SubGraph prepare_step<T>(const RolloutState&, const StepContext<T>&, StepRecord&);      \
  template RolloutResult rollout<T>(const Instance&, const SparseGraph&, const Policy<T>&,         \
                                    const RolloutOptions&);                                        \
  template std::vector<RolloutResult> construct<T>(std::span<const Instance>,                      \
                                                   std::span<const SparseGraph>, const Policy<T>&, \
                                                   const RolloutOptions&, bool);

L2R_INSTANTIATE(float)
L2R_INSTANTIATE(double)

}  // namespace l2r
