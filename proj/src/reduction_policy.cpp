#include "l2r/reduction_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "l2r/error.hpp"

namespace l2r {
namespace {

int scale_nodes(const Instance& instance, const ReductionQuery& query) {
  return query.scale_nodes > 0 ? query.scale_nodes : instance.size();
}

template <typename T>
void finish_scores(std::span<const T> z, double clip, Scores& out, std::vector<T>* tanh_z) {
  const std::size_t m = z.size();
  out.logits.resize(m);
  out.probs.resize(m);
  if (tanh_z) tanh_z->resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const T th = std::tanh(z[j]);
    if (tanh_z) (*tanh_z)[j] = th;
    out.logits[j] = clip * static_cast<double>(th);
  }
  softmax<double>(out.logits, out.probs);
}

bool better(double sa, int ia, double sb, int ib) { return sa > sb || (sa == sb && ia < ib); }

}  // namespace

template <typename T>
Matrix<T> node_features(const Instance& instance) {
  const bool cvrp = instance.is_cvrp();
  const int n = instance.size();
  Matrix<T> s(n, cvrp ? 3 : 2);
  auto pts = instance.unit_coords();
  for (int i = 0; i < n; ++i) {
    s(i, 0) = static_cast<T>(pts[i].x);
    s(i, 1) = static_cast<T>(pts[i].y);
    if (cvrp) s(i, 2) = static_cast<T>(instance.unit_demands()[i]);
  }
  return s;
}

template <typename T>
Matrix<T> embed_all(const ParameterSet<T>& params, const Instance& instance) {
  if (instance.kind() != params.config.kind)
    throw Error(ErrorCode::kShapeError, "embed_all: instance kind differs from the model's");
  Matrix<T> h;
  matmul(node_features<T>(instance), params.reduction.embed_w, h);
  add_row_bias(h, params.reduction.embed_b);
  return h;
}

template <typename T>
Encoding<T> encode(const ParameterSet<T>& params, const Instance& instance) {
  if (instance.kind() != params.config.kind)
    throw Error(ErrorCode::kShapeError, "encode: instance kind differs from the model's");
  Encoding<T> enc;
  enc.features = node_features<T>(instance);
  matmul(enc.features, params.reduction.embed_w, enc.hidden);
  add_row_bias(enc.hidden, params.reduction.embed_b);
  matmul(enc.hidden, params.reduction.key, enc.keys);
  matmul(enc.hidden, params.reduction.value, enc.values);
  return enc;
}

template <typename T>
Matrix<T> context_embedding(const ParameterSet<T>& params, const Encoding<T>& enc,
                            const ReductionQuery& query) {
  const int n = static_cast<int>(enc.hidden.rows());
  if (query.last < 0 || query.last >= n || query.first < 0 || query.first >= n)
    throw Error(ErrorCode::kStateError, "context_embedding: partial solution is empty");
  const std::size_t d = enc.hidden.cols();
  const auto& r = params.reduction;
  Matrix<T> c(1, d);
  if (params.config.kind == ProblemKind::kCvrp) {
    Matrix<T> in(1, d + 1);
    std::copy_n(enc.hidden.row(query.last).data(), d, in.data());
    in[d] = static_cast<T>(query.q_remain);
    matmul(in, r.ctx_last, c);
  } else {
    Matrix<T> hf(1, d), hl(1, d);
    std::copy_n(enc.hidden.row(query.first).data(), d, hf.data());
    std::copy_n(enc.hidden.row(query.last).data(), d, hl.data());
    matmul(hf, r.ctx_first, c);
    matmul_acc(hl, r.ctx_last, c);
  }
  return c;
}

template <typename T>
std::vector<T> reduction_bias(const ParameterSet<T>& params, const Instance& instance,
                              const ReductionQuery& query, std::span<const int> feasible) {
  std::vector<T> a(feasible.size(), T(0));
  if (!params.config.reduction_bias) return a;
  const T scale = params.reduction.alpha[0] * static_cast<T>(std::log2(scale_nodes(instance, query)));
  for (std::size_t j = 0; j < feasible.size(); ++j)
    a[j] = -scale * static_cast<T>(instance.unit_distance(query.last, feasible[j]));
  return a;
}

template <typename T>
Scores score_feasible(const ParameterSet<T>& params, const Encoding<T>& enc,
                      const Instance& instance, const ReductionQuery& query,
                      std::span<const int> feasible, ReductionTrace<T>* trace) {
  if (feasible.empty()) throw Error(ErrorCode::kEmptyFeasible, "score_feasible: no feasible node");
  const std::size_t m = feasible.size(), d = enc.hidden.cols();
  ReductionTrace<T> local;
  ReductionTrace<T>& tr = trace ? *trace : local;
  tr.query = query;
  tr.feasible.assign(feasible.begin(), feasible.end());
  tr.context = context_embedding(params, enc, query);
  tr.keys.reset(m, d);
  tr.values.reset(m, d);
  tr.bias.reset(1, m);
  tr.distances.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    std::copy_n(enc.keys.row(feasible[j]).data(), d, tr.keys.row(j).data());
    std::copy_n(enc.values.row(feasible[j]).data(), d, tr.values.row(j).data());
    tr.distances[j] = static_cast<T>(instance.unit_distance(query.last, feasible[j]));
  }
  const auto a = reduction_bias(params, instance, query, feasible);
  std::copy(a.begin(), a.end(), tr.bias.data());
  aafm_forward(tr.context, tr.keys, tr.values, tr.bias, tr.hhat, trace ? &tr.aafm : nullptr);

  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<T> z(m);
  for (std::size_t j = 0; j < m; ++j) {
    const T* h = enc.hidden.row(feasible[j]).data();
    T dot = 0;
    for (std::size_t c = 0; c < d; ++c) dot += tr.hhat[c] * h[c];
    z[j] = dot * inv_sqrt_d + a[j];
  }
  Scores out;
  finish_scores<T>(z, params.config.logit_clip, out, trace ? &tr.tanh_z : nullptr);
  return out;
}

template <typename T>
FastScorer<T>::FastScorer(const ParameterSet<T>& params, const Encoding<T>& enc)
    : params_(&params), enc_(&enc) {
  const std::size_t n = enc.keys.rows(), d = enc.keys.cols();
  std::vector<T> colmax(d, -std::numeric_limits<T>::infinity());
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) colmax[c] = std::max(colmax[c], enc.keys(j, c));
  // One row per node, [exp(K) | exp(K) * V], so each gather is contiguous.
  exp_table_.reset(n, 2 * d);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) {
      const T ek = std::exp(enc.keys(j, c) - colmax[c]);
      exp_table_(j, c) = ek;
      exp_table_(j, d + c) = ek * enc.values(j, c);
    }
}

template <typename T>
bool FastScorer<T>::compatibilities(const Instance& instance, const ReductionQuery& query,
                                    std::span<const int> feasible, std::vector<double>& z) const {
  if (feasible.empty()) throw Error(ErrorCode::kEmptyFeasible, "score_feasible: no feasible node");
  const auto& params = *params_;
  const auto& enc = *enc_;
  const std::size_t m = feasible.size(), d = enc.hidden.cols();
  const Matrix<T> ctx = context_embedding(params, enc, query);
  const auto a = reduction_bias(params, instance, query, feasible);
  const T amax = *std::max_element(a.begin(), a.end());

  // Blocked accumulation: short runs in T, merged in double.
  constexpr std::size_t kBlock = 256;
  constexpr std::size_t kPrefetch = 8;
  std::vector<double> num(d, 0.0), den(d, 0.0);
  std::vector<T> bn(d), bd(d);
  for (std::size_t start = 0; start < m; start += kBlock) {
    std::fill(bn.begin(), bn.end(), T(0));
    std::fill(bd.begin(), bd.end(), T(0));
    const std::size_t stop = std::min(m, start + kBlock);
    for (std::size_t j = start; j < stop; ++j) {
      if (j + kPrefetch < m) {
        const char* next = reinterpret_cast<const char*>(exp_table_.row(feasible[j + kPrefetch]).data());
        for (std::size_t off = 0; off < 2 * d * sizeof(T); off += 64) __builtin_prefetch(next + off);
      }
      const T w = std::exp(a[j] - amax);
      const T* __restrict ek = exp_table_.row(feasible[j]).data();
      const T* __restrict ekv = ek + d;
      for (std::size_t c = 0; c < d; ++c) {
        bn[c] += w * ekv[c];
        bd[c] += w * ek[c];
      }
    }
    for (std::size_t c = 0; c < d; ++c) {
      num[c] += bn[c];
      den[c] += bd[c];
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    if (!(den[c] >= 1e-30)) {
      ++fallbacks_;
      return false;
    }
  }

  std::vector<double> hhat(d);
  for (std::size_t c = 0; c < d; ++c) hhat[c] = sigmoid(static_cast<double>(ctx[c])) * num[c] / den[c];
  // h_j . h_hat = s_j . (W_e h_hat) + b_e . h_hat
  const auto& we = params.reduction.embed_w;
  const std::size_t dx = we.rows();
  std::vector<double> w(dx, 0.0);
  double offset = 0.0;
  for (std::size_t r = 0; r < dx; ++r)
    for (std::size_t c = 0; c < d; ++c) w[r] += static_cast<double>(we(r, c)) * hhat[c];
  for (std::size_t c = 0; c < d; ++c) offset += static_cast<double>(params.reduction.embed_b[c]) * hhat[c];

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  z.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const T* s = enc.features.row(feasible[j]).data();
    double dot = offset;
    for (std::size_t r = 0; r < dx; ++r) dot += w[r] * s[r];
    z[j] = dot * inv_sqrt_d + a[j];
  }
  return true;
}

template <typename T>
Scores FastScorer<T>::score(const Instance& instance, const ReductionQuery& query,
                            std::span<const int> feasible) const {
  std::vector<double> z;
  if (!compatibilities(instance, query, feasible, z))
    return score_feasible(*params_, *enc_, instance, query, feasible);
  Scores out;
  finish_scores<double>(z, params_->config.logit_clip, out, nullptr);
  return out;
}

template <typename T>
CandidateSet FastScorer<T>::top_k(const Instance& instance, const ReductionQuery& query,
                                  std::span<const int> feasible, int k) const {
  if (k < 1) throw Error(ErrorCode::kInvalidConfig, "select_candidates: k must be >= 1");
  std::vector<double> z;
  if (!compatibilities(instance, query, feasible, z)) {
    const Scores sc = score_feasible(*params_, *enc_, instance, query, feasible);
    CandidateSet out = select_candidates(feasible, sc.probs, k, SelectMode::kGreedy);
    out.scores.clear();
    return out;
  }
  // tanh and softmax are monotone, so ranking by z matches ranking by
  // probability until tanh saturates; past that, rank the finished scores.
  const std::size_t keep = std::min<std::size_t>(k, feasible.size());
  auto worse = [&](std::size_t a, std::size_t b) { return better(z[a], feasible[a], z[b], feasible[b]); };
  std::vector<std::size_t> heap;
  heap.reserve(keep + 1);
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (heap.size() < keep) {
      heap.push_back(j);
      std::push_heap(heap.begin(), heap.end(), worse);
    } else if (better(z[j], feasible[j], z[heap.front()], feasible[heap.front()])) {
      std::pop_heap(heap.begin(), heap.end(), worse);
      heap.back() = j;
      std::push_heap(heap.begin(), heap.end(), worse);
    }
  }
  constexpr double kSaturation = 10.0;
  if (std::abs(z[heap.front()]) > kSaturation) {
    Scores sc;
    finish_scores<double>(z, params_->config.logit_clip, sc, nullptr);
    CandidateSet out = select_candidates(feasible, sc.probs, k, SelectMode::kGreedy);
    out.scores.clear();
    return out;
  }
  std::sort_heap(heap.begin(), heap.end(), worse);
  CandidateSet out;
  out.indices.reserve(keep);
  for (std::size_t j : heap) out.indices.push_back(feasible[j]);
  return out;
}

template <typename T>
void reduction_backward(const ParameterSet<T>& params, const Encoding<T>& enc,
                        const ReductionTrace<T>& tr, std::span<const double> dlogits,
                        EncodingGrad<T>& eg, ParameterSet<T>& grads) {
  const std::size_t m = tr.feasible.size(), d = enc.hidden.cols();
  if (dlogits.size() != m || tr.tanh_z.size() != m || !tr.aafm.recorded)
    throw Error(ErrorCode::kStateError, "reduction_backward: no matching recorded forward pass");
  const T clip = static_cast<T>(params.config.logit_clip);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

  Matrix<T> dhhat(1, d);
  std::vector<T> da(m);
  for (std::size_t j = 0; j < m; ++j) {
    const T th = tr.tanh_z[j];
    const T dz = static_cast<T>(dlogits[j]) * clip * (T(1) - th * th);
    da[j] = dz;
    const T* h = enc.hidden.row(tr.feasible[j]).data();
    T* dh = eg.hidden.row(tr.feasible[j]).data();
    for (std::size_t c = 0; c < d; ++c) {
      dhhat[c] += dz * h[c] * inv_sqrt_d;
      dh[c] += dz * tr.hhat[c] * inv_sqrt_d;
    }
  }

  Matrix<T> dctx, dk, dv, dbias;
  aafm_backward(dhhat, tr.aafm, dctx, dk, dv, dbias);
  for (std::size_t j = 0; j < m; ++j) {
    T* ek = eg.keys.row(tr.feasible[j]).data();
    T* ev = eg.values.row(tr.feasible[j]).data();
    for (std::size_t c = 0; c < d; ++c) {
      ek[c] += dk(j, c);
      ev[c] += dv(j, c);
    }
    da[j] += dbias[j];
  }
  if (params.config.reduction_bias) {
    const T scale = static_cast<T>(std::log2(tr.query.scale_nodes > 0 ? tr.query.scale_nodes
                                                                      : static_cast<int>(enc.hidden.rows())));
    T dalpha = 0;
    for (std::size_t j = 0; j < m; ++j) dalpha -= da[j] * scale * tr.distances[j];
    grads.reduction.alpha[0] += dalpha;
  }

  auto& g = grads.reduction;
  Matrix<T> dh;
  if (params.config.kind == ProblemKind::kCvrp) {
    Matrix<T> in(1, d + 1);
    std::copy_n(enc.hidden.row(tr.query.last).data(), d, in.data());
    in[d] = static_cast<T>(tr.query.q_remain);
    matmul_tn_acc(in, dctx, g.ctx_last);
    Matrix<T> din;
    matmul_nt(dctx, params.reduction.ctx_last, din);
    T* row = eg.hidden.row(tr.query.last).data();
    for (std::size_t c = 0; c < d; ++c) row[c] += din[c];
  } else {
    Matrix<T> hf(1, d), hl(1, d);
    std::copy_n(enc.hidden.row(tr.query.first).data(), d, hf.data());
    std::copy_n(enc.hidden.row(tr.query.last).data(), d, hl.data());
    matmul_tn_acc(hf, dctx, g.ctx_first);
    matmul_tn_acc(hl, dctx, g.ctx_last);
    Matrix<T> df, dl;
    matmul_nt(dctx, params.reduction.ctx_first, df);
    matmul_nt(dctx, params.reduction.ctx_last, dl);
    T* rf = eg.hidden.row(tr.query.first).data();
    T* rl = eg.hidden.row(tr.query.last).data();
    for (std::size_t c = 0; c < d; ++c) {
      rf[c] += df[c];
      rl[c] += dl[c];
    }
  }
}

template <typename T>
void encoding_backward(const ParameterSet<T>& params, const Encoding<T>& enc,
                       const EncodingGrad<T>& eg, ParameterSet<T>& grads) {
  auto& g = grads.reduction;
  matmul_tn_acc(enc.hidden, eg.keys, g.key);
  matmul_tn_acc(enc.hidden, eg.values, g.value);
  Matrix<T> dh = eg.hidden;
  matmul_nt_acc(eg.keys, params.reduction.key, dh);
  matmul_nt_acc(eg.values, params.reduction.value, dh);
  matmul_tn_acc(enc.features, dh, g.embed_w);
  column_sum_acc(dh, g.embed_b);
}

CandidateSet select_candidates(std::span<const int> nodes, std::span<const double> scores, int k,
                               SelectMode mode, Rng* rng) {
  if (nodes.size() != scores.size()) throw Error(ErrorCode::kShapeError, "select_candidates: size mismatch");
  if (k < 1) throw Error(ErrorCode::kInvalidConfig, "select_candidates: k must be >= 1");
  std::vector<std::size_t> order(nodes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto cmp = [&](std::size_t a, std::size_t b) { return better(scores[a], nodes[a], scores[b], nodes[b]); };
  const std::size_t keep = std::min<std::size_t>(k, nodes.size());
  if (keep < order.size()) std::nth_element(order.begin(), order.begin() + keep, order.end(), cmp);
  std::sort(order.begin(), order.begin() + keep, cmp);

  CandidateSet out;
  out.indices.reserve(keep);
  out.scores.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    out.indices.push_back(nodes[order[i]]);
    out.scores.push_back(scores[order[i]]);
  }
  if (mode == SelectMode::kSample) {
    if (!rng) throw Error(ErrorCode::kInvalidConfig, "select_candidates: sampling needs an Rng");
    double u = rng->uniform(), acc = 0.0;
    std::size_t pick = nodes.size() - 1;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      acc += scores[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    while (scores[pick] <= 0.0 && pick > 0) --pick;
    out.sampled = nodes[pick];
    out.sampled_log_prob = std::log(scores[pick]);
  }
  return out;
}

CandidateSet dssr_candidates(const Instance& instance, int last, std::span<const int> feasible, int k) {
  std::vector<double> neg(feasible.size());
  for (std::size_t j = 0; j < feasible.size(); ++j) neg[j] = -instance.unit_distance(last, feasible[j]);
  CandidateSet out = select_candidates(feasible, neg, k, SelectMode::kGreedy);
  out.scores.clear();
  return out;
}

#define L2R_INSTANTIATE(T)                                                                          \
  template Matrix<T> node_features<T>(const Instance&);                                            \
  template Matrix<T> embed_all<T>(const ParameterSet<T>&, const Instance&);                        \
  template Encoding<T> encode<T>(const ParameterSet<T>&, const Instance&);                         \
  template Matrix<T> context_embedding<T>(const ParameterSet<T>&, const Encoding<T>&,              \
                                          const ReductionQuery&);                                  \
  template std::vector<T> reduction_bias<T>(const ParameterSet<T>&, const Instance&,               \
                                            const ReductionQuery&, std::span<const int>);          \
  template Scores score_feasible<T>(const ParameterSet<T>&, const Encoding<T>&, const Instance&,   \
                                    const ReductionQuery&, std::span<const int>,                   \
                                    ReductionTrace<T>*);                                           \
  template class FastScorer<T>;                                                                    \
  template void reduction_backward<T>(const ParameterSet<T>&, const Encoding<T>&,                  \
                                      const ReductionTrace<T>&, std::span<const double>,           \
                                      EncodingGrad<T>&, ParameterSet<T>&);                         \
  template void encoding_backward<T>(const ParameterSet<T>&, const Encoding<T>&,                   \
                                     const EncodingGrad<T>&, ParameterSet<T>&);

L2R_INSTANTIATE(float)
L2R_INSTANTIATE(double)

}  // namespace l2r
