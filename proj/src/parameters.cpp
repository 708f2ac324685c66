#include "l2r/parameters.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "l2r/error.hpp"
#include "l2r/rng.hpp"

namespace l2r {

ModelConfig ModelConfig::defaults(ProblemKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.k = kind == ProblemKind::kCvrp ? 50 : 20;
  return c;
}

void ModelConfig::validate() const {
  if (dim < 1 || ff_dim < 1 || layers < 0 || k < 1)
    throw Error(ErrorCode::kInvalidConfig, "model dimensions must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorCode::kInvalidGamma, "gamma must be in [0, 1)");
  if (!(logit_clip > 0.0)) throw Error(ErrorCode::kInvalidConfig, "logit clip must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"kind", to_string(kind)}, {"d", dim},          {"d_ff", ff_dim},
          {"M", layers},             {"k", k},            {"gamma", gamma},
          {"xi", logit_clip},        {"reduction_bias", reduction_bias},
          {"local_bias", local_bias}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
  ModelConfig c;
  try {
    c.kind = parse_problem_kind(doc.at("kind").get<std::string>());
    c.dim = doc.at("d").get<int>();
    c.ff_dim = doc.at("d_ff").get<int>();
    c.layers = doc.at("M").get<int>();
    c.k = doc.at("k").get<int>();
    c.gamma = doc.at("gamma").get<double>();
    c.logit_clip = doc.value("xi", 10.0);
    c.reduction_bias = doc.value("reduction_bias", true);
    c.local_bias = doc.value("local_bias", true);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- ParameterSet ----------------------------------------------------------------

template <typename T>
ParameterSet<T> ParameterSet<T>::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.dim, ff = config.ff_dim;
  const bool cvrp = config.kind == ProblemKind::kCvrp;
  ParameterSet p;
  p.config = config;
  auto& r = p.reduction;
  r.embed_w.reset(config.reduction_input_dim(), d);
  r.embed_b.reset(1, d);
  if (!cvrp) r.ctx_first.reset(d, d);
  r.ctx_last.reset(cvrp ? d + 1 : d, d);
  r.key.reset(d, d);
  r.value.reset(d, d);
  r.alpha.reset(1, 1);

  auto& l = p.local;
  l.embed_w.reset(2, d);
  l.embed_b.reset(1, d);
  l.first_proj.reset(d, d);
  l.last_proj.reset(d, d);
  if (cvrp) {
    l.demand_w.reset(1, d);
    l.load_w.reset(1, d);
  }
  l.layers.resize(config.layers);
  for (auto& layer : l.layers) {
    layer.query.reset(d, d);
    layer.key.reset(d, d);
    layer.value.reset(d, d);
    layer.norm1_gain.reset(1, d);
    layer.norm1_bias.reset(1, d);
    layer.ff1_w.reset(d, ff);
    layer.ff1_b.reset(1, ff);
    layer.ff2_w.reset(ff, d);
    layer.ff2_b.reset(1, d);
    layer.norm2_gain.reset(1, d);
    layer.norm2_bias.reset(1, d);
  }
  l.alpha.reset(1, 1);
  return p;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::initialized(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet p = zeros(config);
  Rng rng(seed);
  auto fill = [&rng](Matrix<T>& m, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : m.values()) x = static_cast<T>(rng.uniform(-bound, bound));
  };
  auto& r = p.reduction;
  const std::size_t dx = r.embed_w.rows(), d = config.dim, ff = config.ff_dim;
  fill(r.embed_w, dx);
  fill(r.embed_b, dx);
  fill(r.ctx_first, d);
  fill(r.ctx_last, r.ctx_last.rows());
  fill(r.key, d);
  fill(r.value, d);
  r.alpha.fill(T(1));

  auto& l = p.local;
  fill(l.embed_w, 2);
  fill(l.embed_b, 2);
  fill(l.first_proj, d);
  fill(l.last_proj, d);
  fill(l.demand_w, 1);
  fill(l.load_w, 1);
  for (auto& layer : l.layers) {
    fill(layer.query, d);
    fill(layer.key, d);
    fill(layer.value, d);
    layer.norm1_gain.fill(T(1));
    fill(layer.ff1_w, d);
    fill(layer.ff1_b, d);
    fill(layer.ff2_w, ff);
    fill(layer.ff2_b, ff);
    layer.norm2_gain.fill(T(1));
  }
  l.alpha.fill(T(1));
  return p;
}

namespace {

template <typename Set, typename Fn>
void visit_named(Set& p, Fn&& fn) {
  auto& r = p.reduction;
  fn("reduction.embed_w", r.embed_w);
  fn("reduction.embed_b", r.embed_b);
  fn("reduction.ctx_first", r.ctx_first);
  fn("reduction.ctx_last", r.ctx_last);
  fn("reduction.key", r.key);
  fn("reduction.value", r.value);
  fn("reduction.alpha", r.alpha);
  auto& l = p.local;
  fn("local.embed_w", l.embed_w);
  fn("local.embed_b", l.embed_b);
  fn("local.first_proj", l.first_proj);
  fn("local.last_proj", l.last_proj);
  fn("local.demand_w", l.demand_w);
  fn("local.load_w", l.load_w);
  for (std::size_t i = 0; i < l.layers.size(); ++i) {
    auto& y = l.layers[i];
    const std::string pre = "local.layers." + std::to_string(i) + ".";
    fn(pre + "query", y.query);
    fn(pre + "key", y.key);
    fn(pre + "value", y.value);
    fn(pre + "norm1_gain", y.norm1_gain);
    fn(pre + "norm1_bias", y.norm1_bias);
    fn(pre + "ff1_w", y.ff1_w);
    fn(pre + "ff1_b", y.ff1_b);
    fn(pre + "ff2_w", y.ff2_w);
    fn(pre + "ff2_b", y.ff2_b);
    fn(pre + "norm2_gain", y.norm2_gain);
    fn(pre + "norm2_bias", y.norm2_bias);
  }
  fn("local.alpha", l.alpha);
}

}  // namespace

template <typename T>
std::vector<Matrix<T>*> ParameterSet<T>::tensors() {
  std::vector<Matrix<T>*> out;
  visit_named(*this, [&](const std::string&, Matrix<T>& m) {
    if (!m.empty()) out.push_back(&m);
  });
  return out;
}

template <typename T>
std::vector<const Matrix<T>*> ParameterSet<T>::tensors() const {
  std::vector<const Matrix<T>*> out;
  visit_named(*this, [&](const std::string&, const Matrix<T>& m) {
    if (!m.empty()) out.push_back(&m);
  });
  return out;
}

template <typename T>
std::vector<std::string> ParameterSet<T>::names() const {
  std::vector<std::string> out;
  visit_named(*this, [&](const std::string& name, const Matrix<T>& m) {
    if (!m.empty()) out.push_back(name);
  });
  return out;
}

template <typename T>
void ParameterSet<T>::set_zero() {
  for (auto* m : tensors()) m->fill(T(0));
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* m : tensors()) n += m->size();
  return n;
}

template <typename T>
bool ParameterSet<T>::operator==(const ParameterSet& o) const {
  auto a = tensors();
  auto b = o.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i]->same_shape(*b[i])) return false;
    if (std::memcmp(a[i]->data(), b[i]->data(), a[i]->size() * sizeof(T)) != 0) return false;
  }
  return true;
}

template class ParameterSet<float>;
template class ParameterSet<double>;

// --- Adam ------------------------------------------------------------------------

template <typename T>
static double global_norm_impl(const ParameterSet<T>& grads) {
  double s = 0;
  for (const auto* m : grads.tensors())
    for (T g : m->values()) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

double global_norm(const ParameterSet<float>& grads) { return global_norm_impl(grads); }
double global_norm(const ParameterSet<double>& grads) { return global_norm_impl(grads); }

template <typename T>
Adam<T>::Adam(const ModelConfig& config, AdamConfig hyper)
    : hyper_(hyper), m_(ParameterSet<T>::zeros(config)), v_(ParameterSet<T>::zeros(config)) {}

template <typename T>
StepStats Adam<T>::step(ParameterSet<T>& params, const ParameterSet<T>& grads, double lr,
                        double clip_norm) {
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  if (p.size() != g.size() || p.size() != m.size())
    throw Error(ErrorCode::kShapeError, "optimizer: parameter layout mismatch");
  const auto names = grads.names();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!p[i]->same_shape(*g[i])) throw Error(ErrorCode::kShapeError, "optimizer: shape mismatch for " + names[i]);
    for (T x : g[i]->values())
      if (!std::isfinite(x)) throw Error(ErrorCode::kNanGuard, "non-finite gradient in " + names[i]);
  }

  StepStats stats;
  stats.grad_norm = global_norm(grads);
  if (clip_norm > 0.0 && stats.grad_norm > clip_norm) stats.clip_scale = clip_norm / stats.grad_norm;

  ++t_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p[i]->size(); ++j) {
      const double gj = static_cast<double>((*g[i])[j]) * stats.clip_scale;
      const double mj = b1 * (*m[i])[j] + (1.0 - b1) * gj;
      const double vj = b2 * (*v[i])[j] + (1.0 - b2) * gj * gj;
      (*m[i])[j] = static_cast<T>(mj);
      (*v[i])[j] = static_cast<T>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + hyper_.eps);
      (*p[i])[j] = static_cast<T>((*p[i])[j] - update);
    }
  }
  return stats;
}

template class Adam<float>;
template class Adam<double>;

// --- checkpoints -----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'L', '2', 'R', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
  return a.kind == b.kind && a.dim == b.dim && a.ff_dim == b.ff_dim && a.layers == b.layers;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterSet<float>& params,
                     const nlohmann::json& metadata) {
  nlohmann::json header;
  header["architecture"] = params.config.to_json();
  header["metadata"] = metadata;
  auto names = params.names();
  auto tensors = params.tensors();
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < names.size(); ++i)
    list.push_back({{"name", names[i]}, {"rows", tensors[i]->rows()}, {"cols", tensors[i]->cols()}});
  header["tensors"] = list;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write checkpoint " + path);
  out.write(kMagic, 4);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* m : tensors)
    out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::kIoError, "failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::kIncompatibleCheckpoint, path + ": not an L2R1 checkpoint");
  if (bytes.size() < 12) throw Error(ErrorCode::kParseError, path + ": truncated header");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 4, sizeof len);
  if (len > bytes.size() - 12) throw Error(ErrorCode::kParseError, path + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path + ": malformed header: " + e.what());
  }
  if (!header.contains("architecture") || !header.contains("tensors"))
    throw Error(ErrorCode::kParseError, path + ": header lacks architecture or tensor list");

  Checkpoint ck{ParameterSet<float>::zeros(ModelConfig::from_json(header["architecture"])),
                header.value("metadata", nlohmann::json::object())};
  auto names = ck.params.names();
  auto tensors = ck.params.tensors();
  const auto& list = header["tensors"];
  if (list.size() != names.size())
    throw Error(ErrorCode::kIncompatibleCheckpoint, path + ": tensor count does not match architecture");

  std::size_t offset = 12 + len;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& entry = list[i];
    if (entry.value("name", "") != names[i] || entry.value("rows", 0u) != tensors[i]->rows() ||
        entry.value("cols", 0u) != tensors[i]->cols())
      throw Error(ErrorCode::kIncompatibleCheckpoint, path + ": unexpected tensor " + names[i]);
    const std::size_t n = tensors[i]->size() * sizeof(float);
    if (bytes.size() - offset < n) throw Error(ErrorCode::kParseError, path + ": truncated tensor data");
    std::memcpy(tensors[i]->data(), bytes.data() + offset, n);
    offset += n;
  }
  if (offset != bytes.size()) throw Error(ErrorCode::kParseError, path + ": trailing bytes after tensor data");
  return ck;
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!same_architecture(ck.params.config, expected))
    throw Error(ErrorCode::kIncompatibleCheckpoint,
                path + ": architecture " + ck.params.config.to_json().dump() + " does not match " +
                    expected.to_json().dump());
  return ck;
}

}  // namespace l2r
