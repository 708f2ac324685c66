#include "l2r/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "l2r/error.hpp"
#include "l2r/static_reduction.hpp"

namespace l2r {
namespace {

constexpr std::size_t kGradientChunk = 8;

// Stream tags for derive_seed.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kRolloutStream = 2;
constexpr std::uint64_t kPoolStream = 3;
constexpr std::uint64_t kValidationStream = 4;
constexpr std::uint64_t kInitStream = 5;

template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  std::vector<std::exception_ptr> errors(count);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < count; ++i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

ReductionQuery query_of(const StepRecord& s, const Instance& instance) {
  return {s.first, s.last, s.q_remain, instance.size()};
}

std::ptrdiff_t position(std::span<const int> v, int node) {
  const auto it = std::find(v.begin(), v.end(), node);
  if (it == v.end()) throw Error(ErrorCode::kStateError, "trajectory record: chosen node not in its set");
  return it - v.begin();
}

double log_softmax_at(std::span<const double> logits, std::size_t i) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double u : logits) s += std::exp(u - mx);
  return logits[i] - mx - std::log(s);
}

}  // namespace

// --- config ----------------------------------------------------------------------

TrainConfig TrainConfig::paper(ProblemKind kind) {
  TrainConfig c;
  c.kind = kind;
  if (kind == ProblemKind::kCvrp) {
    c.k = 50;
    c.batch_size = 60;
  }
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 2;
  c.batches_per_epoch = 200;
  c.batch_size = 64;
  c.n_train = 20;
  c.k = 10;
  c.dim = 64;
  c.ff_dim = 256;
  c.layers = 3;
  c.eval_pool_size = 512;
  c.validation_size = 256;
  return c;
}

ModelConfig TrainConfig::model() const {
  ModelConfig m;
  m.kind = kind;
  m.dim = dim;
  m.ff_dim = ff_dim;
  m.layers = layers;
  m.k = k;
  m.gamma = gamma;
  m.reduction_bias = reduction_bias;
  m.local_bias = local_bias;
  return m;
}

double TrainConfig::learning_rate(int epoch) const { return lr * std::pow(lr_decay, epoch - 1); }

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::kInvalidConfig, what);
  };
  need(epochs >= 0, "epochs must be >= 0");
  need(batches_per_epoch > 0 && batch_size > 0, "batches and batch size must be positive");
  need(n_train >= 2, "n_train must be >= 2");
  need(lr > 0 && lr_decay > 0 && clip_norm > 0, "lr, lr_decay and clip_norm must be positive");
  need(beta_exp > 0 && beta_exp < 1, "beta_exp must be in (0, 1)");
  need(ttest_alpha > 0 && ttest_alpha < 1, "ttest_alpha must be in (0, 1)");
  need(eval_pool_size >= 2 && validation_size >= 1, "eval pool needs >= 2 instances");
  model().validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"epochs", epochs},
          {"batches_per_epoch", batches_per_epoch},
          {"batch_size", batch_size},
          {"n_train", n_train},
          {"k", k},
          {"gamma", gamma},
          {"lr", lr},
          {"lr_decay", lr_decay},
          {"clip_norm", clip_norm},
          {"beta_exp", beta_exp},
          {"ttest_alpha", ttest_alpha},
          {"eval_pool_size", eval_pool_size},
          {"validation_size", validation_size},
          {"capacity", capacity},
          {"seed", seed},
          {"d", dim},
          {"d_ff", ff_dim},
          {"M", layers},
          {"reduction_bias", reduction_bias},
          {"local_bias", local_bias}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) { return from_json(doc, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& doc, TrainConfig c) {
  if (!doc.is_object()) throw Error(ErrorCode::kInvalidConfig, "train config must be an object");
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "kind") c.kind = parse_problem_kind(v.get<std::string>());
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "batches_per_epoch") c.batches_per_epoch = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "n_train") c.n_train = v.get<int>();
      else if (key == "k") c.k = v.get<int>();
      else if (key == "gamma") c.gamma = v.get<double>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "lr_decay") c.lr_decay = v.get<double>();
      else if (key == "clip_norm") c.clip_norm = v.get<double>();
      else if (key == "beta_exp") c.beta_exp = v.get<double>();
      else if (key == "ttest_alpha") c.ttest_alpha = v.get<double>();
      else if (key == "eval_pool_size") c.eval_pool_size = v.get<int>();
      else if (key == "validation_size") c.validation_size = v.get<int>();
      else if (key == "capacity") c.capacity = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "d") c.dim = v.get<int>();
      else if (key == "d_ff") c.ff_dim = v.get<int>();
      else if (key == "M") c.layers = v.get<int>();
      else if (key == "reduction_bias") c.reduction_bias = v.get<bool>();
      else if (key == "local_bias") c.local_bias = v.get<bool>();
      else throw Error(ErrorCode::kInvalidConfig, "unknown train config key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- gradients -------------------------------------------------------------------

template <typename T>
double trajectory_log_likelihood(const ParameterSet<T>& params, const Instance& instance,
                                 std::span<const StepRecord> steps, GradientTerms terms) {
  const Encoding<T> enc = encode(params, instance);
  double total = 0.0;
  for (const auto& s : steps) {
    if (terms != GradientTerms::kLocal && s.sampled >= 0) {
      const Scores sc = score_feasible(params, enc, instance, query_of(s, instance), s.feasible);
      total += log_softmax_at(sc.logits, position(s.feasible, s.sampled));
    }
    if (terms != GradientTerms::kReduction && s.candidates.size() > 1) {
      const SubGraph sg = normalize_subgraph(instance, s.first, s.last, s.candidates, s.q_remain);
      const SubGraph* item = &sg;
      const auto ls = local_forward<T>(params, std::span<const SubGraph* const>(&item, 1), sg.size());
      total += log_softmax_at(ls[0].logits, position(s.candidates, s.chosen));
    }
  }
  return total;
}

template <typename T>
void accumulate_log_likelihood_gradient(const ParameterSet<T>& params, const Instance& instance,
                                        std::span<const StepRecord> steps, double coef,
                                        GradientTerms terms, ParameterSet<T>& grads) {
  if (coef == 0.0) return;
  const Encoding<T> enc = encode(params, instance);
  EncodingGrad<T> eg;
  eg.reset(enc.hidden.rows(), enc.hidden.cols());
  bool used_encoding = false;
  std::vector<double> dlogits;
  for (const auto& s : steps) {
    if (terms != GradientTerms::kLocal && s.sampled >= 0) {
      ReductionTrace<T> tr;
      const Scores sc = score_feasible(params, enc, instance, query_of(s, instance), s.feasible, &tr);
      const auto tau = position(s.feasible, s.sampled);
      dlogits.assign(sc.probs.size(), 0.0);
      for (std::size_t j = 0; j < sc.probs.size(); ++j) dlogits[j] = -coef * sc.probs[j];
      dlogits[tau] += coef;
      reduction_backward(params, enc, tr, dlogits, eg, grads);
      used_encoding = true;
    }
    if (terms != GradientTerms::kReduction && s.candidates.size() > 1) {
      const SubGraph sg = normalize_subgraph(instance, s.first, s.last, s.candidates, s.q_remain);
      const SubGraph* item = &sg;
      LocalTrace<T> tr;
      const auto ls = local_forward<T>(params, std::span<const SubGraph* const>(&item, 1), sg.size(), &tr);
      const auto pos = position(s.candidates, s.chosen);
      dlogits.assign(ls[0].probs.size(), 0.0);
      for (std::size_t i = 0; i < ls[0].probs.size(); ++i) dlogits[i] = -coef * ls[0].probs[i];
      dlogits[pos] += coef;
      local_backward(params, sg, tr, dlogits, grads);
    }
  }
  if (used_encoding) encoding_backward(params, enc, eg, grads);
}

template <typename T>
void reinforce_gradients(const ParameterSet<T>& params, std::span<const TrajectoryRecord> records,
                         ParameterSet<T>& grads, GradientTerms terms) {
  if (records.empty()) throw Error(ErrorCode::kBatchError, "reinforce_gradients: empty batch");
  for (const auto& r : records)
    if (!r.instance || r.steps.empty())
      throw Error(ErrorCode::kBatchError, "reinforce_gradients: record without instance or steps");
  const double scale = -1.0 / static_cast<double>(records.size());
  const std::size_t chunks = (records.size() + kGradientChunk - 1) / kGradientChunk;
  std::vector<ParameterSet<T>> partial(chunks, ParameterSet<T>::zeros(params.config));
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(records.size(), (c + 1) * kGradientChunk);
    for (std::size_t i = c * kGradientChunk; i < end; ++i) {
      const auto& r = records[i];
      accumulate_log_likelihood_gradient(params, *r.instance, r.steps, scale * (r.reward - r.baseline),
                                         terms, partial[c]);
    }
  });
  grads = ParameterSet<T>::zeros(params.config);
  auto dst = grads.tensors();
  for (const auto& p : partial) {
    auto src = p.tensors();
    for (std::size_t t = 0; t < dst.size(); ++t)
      for (std::size_t j = 0; j < dst[t]->size(); ++j) (*dst[t])[j] += (*src[t])[j];
  }
}

// --- baselines -------------------------------------------------------------------

double ExponentialBaseline::update(double batch_mean) {
  value_ = seeded_ ? beta_ * value_ + (1.0 - beta_) * batch_mean : batch_mean;
  seeded_ = true;
  return value_;
}

double student_t_sf(double t, double dof) {
  boost::math::students_t dist(dof);
  return boost::math::cdf(boost::math::complement(dist, t));
}

TTestResult one_sided_paired_ttest(std::span<const double> candidate, std::span<const double> baseline,
                                   double alpha) {
  if (candidate.size() != baseline.size() || candidate.size() < 2)
    throw Error(ErrorCode::kBatchError, "paired t-test needs two equal samples of size >= 2");
  const std::size_t n = candidate.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = candidate[i] - baseline[i];
  TTestResult r;
  r.mean_diff = mean(diff);
  double ss = 0.0;
  for (double x : diff) ss += (x - r.mean_diff) * (x - r.mean_diff);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    // Degenerate sample: constant differences.
    r.t = r.mean_diff > 0 ? INFINITY : (r.mean_diff < 0 ? -INFINITY : 0.0);
    r.p_value = r.mean_diff > 0 ? 0.0 : 1.0;
  } else {
    r.t = r.mean_diff / (sd / std::sqrt(static_cast<double>(n)));
    r.p_value = student_t_sf(r.t, static_cast<double>(n - 1));
  }
  r.update = r.mean_diff > 0 && r.p_value < alpha;
  return r;
}

// --- training loop ---------------------------------------------------------------

nlohmann::json EpochMetrics::to_json() const {
  return {{"epoch", epoch},
          {"lr", lr},
          {"mean_reward", mean_reward},
          {"mean_advantage", mean_advantage},
          {"mean_grad_norm", mean_grad_norm},
          {"max_grad_norm", max_grad_norm},
          {"validation_objective", validation_objective},
          {"baseline_updated", baseline_updated},
          {"ttest_t", ttest_t},
          {"ttest_p", ttest_p},
          {"fallback_events", fallback_events}};
}

std::vector<Instance> evaluation_set(const TrainConfig& config, std::uint64_t stream, int count) {
  std::vector<Instance> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(generate_uniform(config.kind, config.n_train, config.capacity, derive_seed(stream, i)));
  return out;
}

std::vector<Instance> training_batch(const TrainConfig& config, int epoch, int batch) {
  return evaluation_set(config, derive_seed(config.seed, kTrainStream, epoch, batch), config.batch_size);
}

namespace {

std::vector<SparseGraph> graphs_for(std::span<const Instance> instances, double gamma) {
  std::vector<SparseGraph> out(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) out[i] = build_sparse_graph(instances[i], gamma);
  return out;
}

std::vector<double> greedy_rewards(const ParameterSet<float>& params, std::span<const Instance> instances,
                                   std::span<const SparseGraph> graphs, int k,
                                   std::span<const int> starts = {}) {
  Policy<float> policy{&params, ReducerKind::kLearned, k};
  std::vector<double> out(instances.size());
  parallel_for(instances.size(), [&](std::size_t i) {
    RolloutOptions o;
    o.start = StartRule::fixed(starts.empty() ? 0 : starts[i]);
    out[i] = -rollout(instances[i], graphs[i], policy, o).objective;
  });
  return out;
}

}  // namespace

double mean_greedy_objective(const ParameterSet<float>& params, std::span<const Instance> instances,
                             double gamma, int k) {
  const auto graphs = graphs_for(instances, gamma);
  return -mean(greedy_rewards(params, instances, graphs, k));
}

TrainResult train(const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const ModelConfig model = config.model();
  TrainResult result{ParameterSet<float>::initialized(model, derive_seed(config.seed, kInitStream)), 0.0, {}};
  ParameterSet<float>& params = result.params;

  const auto validation = evaluation_set(config, derive_seed(config.seed, kValidationStream), config.validation_size);
  const auto validation_graphs = graphs_for(validation, config.gamma);
  result.initial_validation_objective = -mean(greedy_rewards(params, validation, validation_graphs, config.k));
  if (config.epochs == 0) return result;

  ParameterSet<float> baseline_params = params;
  Adam<float> adam(model);
  ExponentialBaseline exp_baseline(config.beta_exp);
  int pool_generation = 0;
  auto make_pool = [&] {
    return evaluation_set(config, derive_seed(config.seed, kPoolStream, pool_generation), config.eval_pool_size);
  };
  auto pool = make_pool();
  auto pool_graphs = graphs_for(pool, config.gamma);

  const Policy<float> learner{&params, ReducerKind::kLearned, config.k};
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = config.learning_rate(epoch);
    double reward_sum = 0.0, advantage_sum = 0.0, norm_sum = 0.0;

    for (int b = 0; b < config.batches_per_epoch; ++b) {
      const auto instances = training_batch(config, epoch, b);
      const auto graphs = graphs_for(instances, config.gamma);
      const std::size_t bs = instances.size();
      std::vector<TrajectoryRecord> records(bs);
      std::vector<int> starts(bs);
      std::vector<int> fallbacks(bs);
      parallel_for(bs, [&](std::size_t i) {
        RolloutOptions o;
        o.mode = SelectMode::kSample;
        o.start = StartRule::random();
        o.seed = derive_seed(config.seed, kRolloutStream, (static_cast<std::uint64_t>(epoch) << 32) | b, i);
        o.record = true;
        RolloutResult r = rollout(instances[i], graphs[i], learner, o);
        records[i].instance = &instances[i];
        records[i].reward = -r.objective;
        records[i].steps = std::move(r.records);
        starts[i] = r.sequence.front();
        fallbacks[i] = r.fallback_events;
      });
      std::vector<double> rewards(bs);
      for (std::size_t i = 0; i < bs; ++i) rewards[i] = records[i].reward;
      const double batch_mean = mean(rewards);

      if (epoch == 1) {
        const double bval = exp_baseline.update(batch_mean);
        for (auto& r : records) r.baseline = bval;
      } else {
        const auto base = greedy_rewards(baseline_params, instances, graphs, config.k, starts);
        for (std::size_t i = 0; i < bs; ++i) records[i].baseline = base[i];
      }

      ParameterSet<float> grads = ParameterSet<float>::zeros(model);
      reinforce_gradients(params, records, grads);
      StepStats stats;
      try {
        stats = adam.step(params, grads, m.lr, config.clip_norm);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kNanGuard && !hooks.diagnostic_checkpoint.empty())
          save_checkpoint(hooks.diagnostic_checkpoint, params,
                          {{"aborted", e.what()}, {"epoch", epoch}, {"batch", b}});
        throw;
      }
      reward_sum += batch_mean;
      for (const auto& r : records) advantage_sum += (r.reward - r.baseline) / static_cast<double>(bs);
      norm_sum += stats.grad_norm;
      m.max_grad_norm = std::max(m.max_grad_norm, stats.grad_norm);
      for (int f : fallbacks) m.fallback_events += f;
      if (hooks.on_batch) hooks.on_batch(epoch, b, batch_mean);
    }
    const double nb = config.batches_per_epoch;
    m.mean_reward = reward_sum / nb;
    m.mean_advantage = advantage_sum / nb;
    m.mean_grad_norm = norm_sum / nb;

    const auto cand = greedy_rewards(params, pool, pool_graphs, config.k);
    const auto base = greedy_rewards(baseline_params, pool, pool_graphs, config.k);
    const TTestResult tt = one_sided_paired_ttest(cand, base, config.ttest_alpha);
    m.ttest_t = tt.t;
    m.ttest_p = tt.p_value;
    m.baseline_updated = tt.update;
    if (tt.update) {
      baseline_params = params;
      ++pool_generation;
      pool = make_pool();
      pool_graphs = graphs_for(pool, config.gamma);
    }
    m.validation_objective = -mean(greedy_rewards(params, validation, validation_graphs, config.k));
    result.epochs.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  return result;
}

#define L2R_INSTANTIATE(T)                                                                          \
  template double trajectory_log_likelihood<T>(const ParameterSet<T>&, const Instance&,             \
                                               std::span<const StepRecord>, GradientTerms);         \
  template void accumulate_log_likelihood_gradient<T>(const ParameterSet<T>&, const Instance&,      \
                                                      std::span<const StepRecord>, double,          \
                                                      GradientTerms, ParameterSet<T>&);             \
  template void reinforce_gradients<T>(const ParameterSet<T>&, std::span<const TrajectoryRecord>,   \
                                       ParameterSet<T>&, GradientTerms);

L2R_INSTANTIATE(float)
L2R_INSTANTIATE(double)

}  // namespace l2r
