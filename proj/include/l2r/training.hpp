#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2r/instances.hpp"
#include "l2r/parameters.hpp"
#include "l2r/rollout.hpp"

namespace l2r {

struct TrainConfig {
  ProblemKind kind = ProblemKind::kTsp;
  int epochs = 100;
  int batches_per_epoch = 2500;
  int batch_size = 180;
  int n_train = 100;
  int k = 20;
  double gamma = 0.1;
  double lr = 1e-4;
  double lr_decay = 0.98;
  double clip_norm = 1.0;
  double beta_exp = 0.8;
  double ttest_alpha = 0.05;
  int eval_pool_size = 10000;
  int validation_size = 1000;
  double capacity = 50.0;  // CVRP training capacity
  std::uint64_t seed = 1;
  int dim = 128;
  int ff_dim = 512;
  int layers = 6;
  bool reduction_bias = true;
  bool local_bias = true;

  // Table-scale defaults for the problem kind (CVRP: k 50, batch 60).
  static TrainConfig paper(ProblemKind kind);
  // Small configuration that trains in minutes on a CPU.
  static TrainConfig desk();

  ModelConfig model() const;
  double learning_rate(int epoch) const;  // lr * lr_decay^(epoch - 1)
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& doc);
  static TrainConfig from_json(const nlohmann::json& doc, TrainConfig base);
};

// One sampled trajectory with its reward R = -objective and baseline b.
struct TrajectoryRecord {
  const Instance* instance = nullptr;
  std::vector<StepRecord> steps;
  double reward = 0.0;
  double baseline = 0.0;
};

enum class GradientTerms { kBoth, kReduction, kLocal };

// Sum over the recorded steps of log o(tau) and/or log p(pi), re-evaluated
// with `params`.
template <typename T>
double trajectory_log_likelihood(const ParameterSet<T>& params, const Instance& instance,
                                 std::span<const StepRecord> steps, GradientTerms terms = GradientTerms::kBoth);

// Adds coef * d/dparams of `trajectory_log_likelihood` into `grads`.
template <typename T>
void accumulate_log_likelihood_gradient(const ParameterSet<T>& params, const Instance& instance,
                                        std::span<const StepRecord> steps, double coef,
                                        GradientTerms terms, ParameterSet<T>& grads);

// Gradient of -(1/B) sum (R - b)(log o + log p), written into `grads`
// (previous contents are discarded). Records are processed in fixed chunks
// merged in order, so the result does not depend on the worker count.
template <typename T>
void reinforce_gradients(const ParameterSet<T>& params, std::span<const TrajectoryRecord> records,
                         ParameterSet<T>& grads, GradientTerms terms = GradientTerms::kBoth);

class ExponentialBaseline {
 public:
  explicit ExponentialBaseline(double beta = 0.8) : beta_(beta) {}
  // Folds in a batch mean and returns the updated value.
  double update(double batch_mean);
  std::optional<double> value() const { return seeded_ ? std::optional<double>(value_) : std::nullopt; }

 private:
  double beta_;
  bool seeded_ = false;
  double value_ = 0.0;
};

struct TTestResult {
  double mean_diff = 0.0;
  double t = 0.0;
  double p_value = 1.0;
  bool update = false;
};

// Survival function of Student's t distribution.
double student_t_sf(double t, double dof);

// One-sided paired test of H1: candidate rewards exceed baseline rewards.
TTestResult one_sided_paired_ttest(std::span<const double> candidate, std::span<const double> baseline,
                                   double alpha);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double mean_reward = 0.0;      // sampled learner rollouts
  double mean_advantage = 0.0;
  double mean_grad_norm = 0.0;
  double max_grad_norm = 0.0;
  double validation_objective = 0.0;  // greedy mean on the fixed validation set
  bool baseline_updated = false;
  double ttest_t = 0.0;
  double ttest_p = 1.0;
  long fallback_events = 0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  ParameterSet<float> params;
  double initial_validation_objective = 0.0;
  std::vector<EpochMetrics> epochs;
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(int epoch, int batch, double mean_reward)> on_batch;
  // Written with the offending parameters when a non-finite gradient aborts.
  std::string diagnostic_checkpoint;
};

// Training instances for one batch: deterministic in (seed, epoch, batch).
std::vector<Instance> training_batch(const TrainConfig& config, int epoch, int batch);
std::vector<Instance> evaluation_set(const TrainConfig& config, std::uint64_t stream, int count);

TrainResult train(const TrainConfig& config, const TrainHooks& hooks = {});

// Mean greedy objective from start node 0.
double mean_greedy_objective(const ParameterSet<float>& params, std::span<const Instance> instances,
                             double gamma, int k);

}  // namespace l2r
