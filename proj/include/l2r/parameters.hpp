#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2r/instances.hpp"
#include "l2r/tensor.hpp"

namespace l2r {

struct ModelConfig {
  ProblemKind kind = ProblemKind::kTsp;
  int dim = 128;
  int ff_dim = 512;
  int layers = 6;
  int k = 20;
  double gamma = 0.1;
  double logit_clip = 10.0;
  bool reduction_bias = true;  // a^R toggle
  bool local_bias = true;      // a^L toggle

  static ModelConfig defaults(ProblemKind kind);
  int reduction_input_dim() const { return kind == ProblemKind::kCvrp ? 3 : 2; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);
};

template <typename T>
struct ReductionParams {
  Matrix<T> embed_w;    // dx x d
  Matrix<T> embed_b;    // 1 x d
  Matrix<T> ctx_first;  // d x d (TSP only)
  Matrix<T> ctx_last;   // d x d, or (d + 1) x d for CVRP
  Matrix<T> key;        // d x d
  Matrix<T> value;      // d x d
  Matrix<T> alpha;      // 1 x 1
};

template <typename T>
struct LayerParams {
  Matrix<T> query, key, value;    // d x d
  Matrix<T> norm1_gain, norm1_bias;
  Matrix<T> ff1_w, ff1_b;         // d x d_ff, 1 x d_ff
  Matrix<T> ff2_w, ff2_b;         // d_ff x d, 1 x d
  Matrix<T> norm2_gain, norm2_bias;
};

template <typename T>
struct LocalParams {
  Matrix<T> embed_w;     // 2 x d
  Matrix<T> embed_b;     // 1 x d
  Matrix<T> first_proj;  // d x d
  Matrix<T> last_proj;   // d x d
  Matrix<T> demand_w;    // 1 x d (CVRP only)
  Matrix<T> load_w;      // 1 x d (CVRP only)
  std::vector<LayerParams<T>> layers;
  Matrix<T> alpha;       // 1 x 1
};

// Learnable weights of both models. Tensors unused by the configured problem
// kind are empty and skipped by `tensors()`.
template <typename T>
class ParameterSet {
 public:
  ModelConfig config;
  ReductionParams<T> reduction;
  LocalParams<T> local;

  static ParameterSet zeros(const ModelConfig& config);
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; LN gains 1, LN biases 0, alphas 1.
  static ParameterSet initialized(const ModelConfig& config, std::uint64_t seed);

  std::vector<Matrix<T>*> tensors();
  std::vector<const Matrix<T>*> tensors() const;
  std::vector<std::string> names() const;

  void set_zero();
  std::size_t parameter_count() const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out = ParameterSet<U>::zeros(config);
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

  bool operator==(const ParameterSet& o) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct StepStats {
  double grad_norm = 0.0;  // before clipping
  double clip_scale = 1.0;
};

// Adaptive-moment optimizer with global-norm clipping. A non-finite gradient
// aborts the step with kNanGuard before any parameter is touched.
template <typename T>
class Adam {
 public:
  Adam(const ModelConfig& config, AdamConfig hyper = {});

  StepStats step(ParameterSet<T>& params, const ParameterSet<T>& grads, double lr,
                 double clip_norm);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig hyper_;
  std::int64_t t_ = 0;
  ParameterSet<T> m_;
  ParameterSet<T> v_;
};

double global_norm(const ParameterSet<float>& grads);
double global_norm(const ParameterSet<double>& grads);

// --- checkpoints ---------------------------------------------------------------

struct Checkpoint {
  ParameterSet<float> params;
  nlohmann::json metadata;  // hyperparameters and provenance
};

void save_checkpoint(const std::string& path, const ParameterSet<float>& params,
                     const nlohmann::json& metadata = nlohmann::json::object());
// Throws kIncompatibleCheckpoint on bad magic or an architecture mismatch with
// `expected`, kParseError on truncated or malformed files.
Checkpoint load_checkpoint(const std::string& path);
Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace l2r
