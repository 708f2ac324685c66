#include "l2r/local_construction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "l2r/error.hpp"

namespace l2r {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <typename T>
void copy_block(const Matrix<T>& src, std::size_t row0, std::size_t rows, Matrix<T>& dst) {
  dst.reset(rows, src.cols());
  std::copy_n(src.data() + row0 * src.cols(), rows * src.cols(), dst.data());
}

template <typename T>
void add_block(const Matrix<T>& src, std::size_t row0, Matrix<T>& dst) {
  T* out = dst.data() + row0 * dst.cols();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] += src[i];
}

}  // namespace

SubGraph normalize_subgraph(const Instance& instance, int first, int last,
                            std::span<const int> candidates, double q_remain) {
  if (candidates.empty()) throw Error(ErrorCode::kStateError, "normalize_subgraph: no candidates");
  SubGraph sg;
  sg.first = first;
  sg.last = last;
  sg.candidates.assign(candidates.begin(), candidates.end());
  sg.q_remain = q_remain;
  sg.cvrp = instance.is_cvrp();

  auto pts = instance.coords();
  double min_x = pts[candidates[0]].x, max_x = min_x, min_y = pts[candidates[0]].y, max_y = min_y;
  for (int c : candidates) {
    min_x = std::min(min_x, pts[c].x);
    max_x = std::max(max_x, pts[c].x);
    min_y = std::min(min_y, pts[c].y);
    max_y = std::max(max_y, pts[c].y);
  }
  const double span = std::max(max_x - min_x, max_y - min_y);
  sg.ratio = span > 0.0 ? 1.0 / span : 0.0;
  auto map = [&](int i, bool clamp) {
    Point p{(pts[i].x - min_x) * sg.ratio, (pts[i].y - min_y) * sg.ratio};
    if (clamp) {
      p.x = std::clamp(p.x, 0.0, 1.0);
      p.y = std::clamp(p.y, 0.0, 1.0);
    }
    return p;
  };
  sg.coords.reserve(2 + candidates.size());
  sg.coords.push_back(map(first, true));
  sg.coords.push_back(map(last, true));
  for (int c : candidates) sg.coords.push_back(map(c, false));

  if (sg.cvrp) {
    auto dem = instance.unit_demands();
    sg.demands.reserve(candidates.size());
    for (int c : candidates) sg.demands.push_back(dem[c] > 0.0 ? dem[c] / q_remain : 0.0);
  }
  return sg;
}

template <typename T>
Matrix<T> embed_subgraph(const ParameterSet<T>& params, const SubGraph& sg, int width) {
  const SubGraph* item = &sg;
  const int w = width > 0 ? width : sg.size();
  const std::size_t rows = 2 + w, d = params.config.dim;
  const auto& lp = params.local;
  Matrix<T> pts(rows, 2);
  for (std::size_t i = 0; i < item->coords.size(); ++i) {
    pts(i, 0) = static_cast<T>(item->coords[i].x);
    pts(i, 1) = static_cast<T>(item->coords[i].y);
  }
  Matrix<T> e0;
  matmul(pts, lp.embed_w, e0);
  add_row_bias(e0, lp.embed_b);
  for (std::size_t i = item->coords.size(); i < rows; ++i) std::fill_n(e0.row(i).data(), d, T(0));

  Matrix<T> x = e0;
  Matrix<T> r0(1, d), r1(1, d), t;
  std::copy_n(e0.row(0).data(), d, r0.data());
  std::copy_n(e0.row(1).data(), d, r1.data());
  matmul(r0, lp.first_proj, t);
  std::copy_n(t.data(), d, x.row(0).data());
  matmul(r1, lp.last_proj, t);
  std::copy_n(t.data(), d, x.row(1).data());
  if (item->cvrp) {
    const T q = static_cast<T>(item->q_remain);
    for (std::size_t c = 0; c < d; ++c) {
      x(0, c) += q * lp.load_w[c];
      x(1, c) += q * lp.load_w[c];
    }
    for (int i = 0; i < item->size(); ++i) {
      const T dm = static_cast<T>(item->demands[i]);
      for (std::size_t c = 0; c < d; ++c) x(2 + i, c) += dm * lp.demand_w[c];
    }
  }
  return x;
}

template <typename T>
std::vector<LocalScores> local_forward(const ParameterSet<T>& params,
                                       std::span<const SubGraph* const> items, int width,
                                       LocalTrace<T>* trace) {
  const std::size_t nb = items.size(), d = params.config.dim;
  if (nb == 0) throw Error(ErrorCode::kBatchError, "local_forward: empty batch");
  for (const auto* sg : items) {
    if (sg->candidates.empty()) throw Error(ErrorCode::kStateError, "local_forward: no candidates");
    if (sg->size() > width) throw Error(ErrorCode::kShapeError, "local_forward: item wider than batch");
    if (sg->cvrp != (params.config.kind == ProblemKind::kCvrp))
      throw Error(ErrorCode::kShapeError, "local_forward: sub-graph kind differs from the model's");
  }
  const std::size_t rows = 2 + width;
  const auto& lp = params.local;
  const T alpha = lp.alpha[0];

  LocalTrace<T> scratch;
  LocalTrace<T>& tr = trace ? *trace : scratch;
  tr.recorded = false;
  tr.width = width;
  tr.items = static_cast<int>(nb);
  tr.layers.assign(trace ? lp.layers.size() : 0, {});
  tr.distances.assign(nb, {});
  tr.bias.assign(nb, {});
  tr.scale.assign(nb, T(0));
  tr.tanh_z.assign(nb, {});

  // Embedding: each item's block is independent.
  Matrix<T> x(nb * rows, d);
  tr.points.reset(nb * rows, 2);
  for (std::size_t b = 0; b < nb; ++b) {
    const Matrix<T> xb = embed_subgraph(params, *items[b], width);
    std::copy_n(xb.data(), xb.size(), x.data() + b * rows * d);
    for (std::size_t i = 0; i < items[b]->coords.size(); ++i) {
      tr.points(b * rows + i, 0) = static_cast<T>(items[b]->coords[i].x);
      tr.points(b * rows + i, 1) = static_cast<T>(items[b]->coords[i].y);
    }
  }
  if (trace) {
    matmul(tr.points, lp.embed_w, tr.e0);
    add_row_bias(tr.e0, lp.embed_b);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = items[b]->coords.size(); i < rows; ++i)
        std::fill_n(tr.e0.row(b * rows + i).data(), d, T(0));
  }

  // Pairwise normalized distances and the adaptation bias of each item.
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& sg = *items[b];
    const std::size_t valid = sg.coords.size();
    Matrix<T>& dist = tr.distances[b];
    Matrix<T>& bias = tr.bias[b];
    dist.reset(rows, rows);
    bias.reset(rows, rows);
    tr.scale[b] = static_cast<T>(std::log2(static_cast<double>(sg.size())));
    const T s = params.config.local_bias ? alpha * tr.scale[b] : T(0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < rows; ++j) {
        if (i < valid && j < valid) {
          dist(i, j) = static_cast<T>(std::hypot(sg.coords[i].x - sg.coords[j].x, sg.coords[i].y - sg.coords[j].y));
          bias(i, j) = -s * dist(i, j);
        } else {
          bias(i, j) = i == j ? T(0) : -std::numeric_limits<T>::infinity();
        }
      }
  }

  for (std::size_t l = 0; l < lp.layers.size(); ++l) {
    const auto& w = lp.layers[l];
    Matrix<T> q, k, v;
    matmul(x, w.query, q);
    matmul(x, w.key, k);
    matmul(x, w.value, v);
    Matrix<T> att(nb * rows, d);
    LayerTrace<T>* lt = trace ? &tr.layers[l] : nullptr;
    if (lt) lt->aafm.resize(nb);
    Matrix<T> qb, kb, vb, ob;
    for (std::size_t b = 0; b < nb; ++b) {
      copy_block(q, b * rows, rows, qb);
      copy_block(k, b * rows, rows, kb);
      copy_block(v, b * rows, rows, vb);
      aafm_forward(qb, kb, vb, tr.bias[b], ob, lt ? &lt->aafm[b] : nullptr);
      std::copy_n(ob.data(), ob.size(), att.data() + b * rows * d);
    }
    for (std::size_t i = 0; i < att.size(); ++i) att[i] += x[i];
    Matrix<T> h;
    layer_norm_forward(att, w.norm1_gain, w.norm1_bias, h, lt ? &lt->ln1 : nullptr);
    Matrix<T> f1;
    matmul(h, w.ff1_w, f1);
    add_row_bias(f1, w.ff1_b);
    Matrix<T> r = f1;
    for (auto& e : r.values()) e = std::max(e, T(0));
    Matrix<T> y2 = h;
    matmul_acc(r, w.ff2_w, y2);
    add_row_bias(y2, w.ff2_b);
    if (lt) {
      lt->x = std::move(x);
      lt->q = std::move(q);
      lt->k = std::move(k);
      lt->v = std::move(v);
      lt->h = h;
      lt->f1 = std::move(f1);
    }
    layer_norm_forward(y2, w.norm2_gain, w.norm2_bias, x, lt ? &lt->ln2 : nullptr);
  }

  std::vector<LocalScores> out(nb);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  const double clip = params.config.logit_clip;
  for (std::size_t b = 0; b < nb; ++b) {
    const int m = items[b]->size();
    const T* r0 = x.row(b * rows).data();
    const T* r1 = x.row(b * rows + 1).data();
    auto& sc = out[b];
    sc.logits.assign(width, kNegInf);
    sc.probs.assign(width, 0.0);
    tr.tanh_z[b].assign(m, T(0));
    for (int i = 0; i < m; ++i) {
      const T* xi = x.row(b * rows + 2 + i).data();
      T dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += (r0[c] + r1[c]) * xi[c];
      const T z = dot * inv_sqrt_d + tr.bias[b](1, 2 + i);
      tr.tanh_z[b][i] = std::tanh(z);
      sc.logits[i] = clip * static_cast<double>(tr.tanh_z[b][i]);
    }
    softmax<double>(sc.logits, sc.probs);
  }
  if (trace) {
    tr.out = std::move(x);
    tr.recorded = true;
  }
  return out;
}

template <typename T>
void local_backward(const ParameterSet<T>& params, const SubGraph& sg, const LocalTrace<T>& tr,
                    std::span<const double> dlogits, ParameterSet<T>& grads) {
  if (!tr.recorded || tr.items != 1 || tr.width != sg.size())
    throw Error(ErrorCode::kStateError, "local_backward: no matching recorded forward pass");
  const int m = sg.size();
  if (static_cast<int>(dlogits.size()) != m) throw Error(ErrorCode::kShapeError, "local_backward: dlogits size");
  const std::size_t rows = 2 + m, d = params.config.dim;
  const auto& lp = params.local;
  auto& gl = grads.local;
  const T clip = static_cast<T>(params.config.logit_clip);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  const T bias_scale = params.config.local_bias ? tr.scale[0] : T(0);

  // Head.
  Matrix<T> dx(rows, d);
  std::vector<T> dhc(d, T(0));
  T dalpha = 0;
  for (int i = 0; i < m; ++i) {
    const T th = tr.tanh_z[0][i];
    const T dz = static_cast<T>(dlogits[i]) * clip * (T(1) - th * th);
    if (dz == T(0)) continue;
    const T* xi = tr.out.row(2 + i).data();
    for (std::size_t c = 0; c < d; ++c) {
      dhc[c] += dz * xi[c] * inv_sqrt_d;
      dx(2 + i, c) += dz * (tr.out(0, c) + tr.out(1, c)) * inv_sqrt_d;
    }
    dalpha -= dz * bias_scale * tr.distances[0](1, 2 + i);
  }
  for (std::size_t c = 0; c < d; ++c) {
    dx(0, c) += dhc[c];
    dx(1, c) += dhc[c];
  }

  for (std::size_t l = lp.layers.size(); l-- > 0;) {
    const auto& w = lp.layers[l];
    auto& gw = gl.layers[l];
    const auto& lt = tr.layers[l];
    Matrix<T> dy2;
    layer_norm_backward(dx, w.norm2_gain, lt.ln2, dy2, gw.norm2_gain, gw.norm2_bias);
    Matrix<T> r = lt.f1;
    for (auto& e : r.values()) e = std::max(e, T(0));
    matmul_tn_acc(r, dy2, gw.ff2_w);
    column_sum_acc(dy2, gw.ff2_b);
    Matrix<T> df1;
    matmul_nt(dy2, w.ff2_w, df1);
    for (std::size_t i = 0; i < df1.size(); ++i)
      if (!(lt.f1[i] > T(0))) df1[i] = T(0);
    matmul_tn_acc(lt.h, df1, gw.ff1_w);
    column_sum_acc(df1, gw.ff1_b);
    Matrix<T> dh = dy2;
    matmul_nt_acc(df1, w.ff1_w, dh);

    Matrix<T> dy1;
    layer_norm_backward(dh, w.norm1_gain, lt.ln1, dy1, gw.norm1_gain, gw.norm1_bias);
    Matrix<T> dq, dk, dv, da;
    aafm_backward(dy1, lt.aafm[0], dq, dk, dv, da);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < rows; ++j) dalpha -= da(i, j) * bias_scale * tr.distances[0](i, j);
    matmul_tn_acc(lt.x, dq, gw.query);
    matmul_tn_acc(lt.x, dk, gw.key);
    matmul_tn_acc(lt.x, dv, gw.value);
    dx = std::move(dy1);
    matmul_nt_acc(dq, w.query, dx);
    matmul_nt_acc(dk, w.key, dx);
    matmul_nt_acc(dv, w.value, dx);
  }
  if (params.config.local_bias) gl.alpha[0] += dalpha;

  // Embedding.
  Matrix<T> de0 = dx;
  Matrix<T> e0r(1, d), dxr(1, d), t;
  for (int row = 0; row < 2; ++row) {
    const Matrix<T>& proj = row == 0 ? lp.first_proj : lp.last_proj;
    Matrix<T>& gproj = row == 0 ? gl.first_proj : gl.last_proj;
    std::copy_n(tr.e0.row(row).data(), d, e0r.data());
    std::copy_n(dx.row(row).data(), d, dxr.data());
    matmul_tn_acc(e0r, dxr, gproj);
    matmul_nt(dxr, proj, t);
    std::copy_n(t.data(), d, de0.row(row).data());
  }
  if (sg.cvrp) {
    const T q = static_cast<T>(sg.q_remain);
    for (std::size_t c = 0; c < d; ++c) gl.load_w[c] += q * (dx(0, c) + dx(1, c));
    for (int i = 0; i < m; ++i) {
      const T dm = static_cast<T>(sg.demands[i]);
      for (std::size_t c = 0; c < d; ++c) gl.demand_w[c] += dm * dx(2 + i, c);
    }
  }
  matmul_tn_acc(tr.points, de0, gl.embed_w);
  column_sum_acc(de0, gl.embed_b);
}

Choice pick(const SubGraph& sg, std::span<const double> probs, SelectMode mode, Rng* rng) {
  const int m = sg.size();
  Choice ch;
  if (mode == SelectMode::kGreedy) {
    ch.position = 0;
    for (int i = 1; i < m; ++i)
      if (probs[i] > probs[ch.position]) ch.position = i;
  } else {
    if (!rng) throw Error(ErrorCode::kInvalidConfig, "choose_next: sampling needs an Rng");
    const double u = rng->uniform();
    double acc = 0.0;
    ch.position = m - 1;
    for (int i = 0; i < m; ++i) {
      acc += probs[i];
      if (u < acc) {
        ch.position = i;
        break;
      }
    }
    while (probs[ch.position] <= 0.0 && ch.position > 0) --ch.position;
  }
  ch.node = sg.candidates[ch.position];
  ch.log_prob = std::log(probs[ch.position]);
  return ch;
}

template <typename T>
Choice choose_next(const ParameterSet<T>& params, const SubGraph& sg, SelectMode mode, Rng* rng) {
  if (sg.candidates.empty()) throw Error(ErrorCode::kStateError, "choose_next: no candidates");
  if (sg.size() == 1) return {0, sg.candidates[0], 0.0};
  const SubGraph* item = &sg;
  const auto scores = local_forward<T>(params, std::span<const SubGraph* const>(&item, 1), sg.size());
  return pick(sg, scores[0].probs, mode, rng);
}

PaddedBatch pad_batch(std::span<const SubGraph> subgraphs) {
  if (subgraphs.empty()) throw Error(ErrorCode::kBatchError, "pad_batch: empty batch");
  PaddedBatch batch;
  for (const auto& sg : subgraphs) batch.width = std::max(batch.width, sg.size());
  for (const auto& sg : subgraphs) {
    batch.items.push_back(&sg);
    std::vector<char> mask(batch.width, 0);
    std::fill_n(mask.begin(), sg.size(), 1);
    batch.mask.push_back(std::move(mask));
  }
  return batch;
}

template <typename T>
std::vector<LocalScores> batched_forward(const ParameterSet<T>& params, const PaddedBatch& batch) {
  return local_forward<T>(params, batch.items, batch.width);
}

#define L2R_INSTANTIATE(T)                                                                       \
  template Matrix<T> embed_subgraph<T>(const ParameterSet<T>&, const SubGraph&, int);            \
  template std::vector<LocalScores> local_forward<T>(const ParameterSet<T>&,                     \
                                                     std::span<const SubGraph* const>, int,      \
                                                     LocalTrace<T>*);                            \
  template void local_backward<T>(const ParameterSet<T>&, const SubGraph&, const LocalTrace<T>&, \
                                  std::span<const double>, ParameterSet<T>&);                    \
  template Choice choose_next<T>(const ParameterSet<T>&, const SubGraph&, SelectMode, Rng*);     \
  template std::vector<LocalScores> batched_forward<T>(const ParameterSet<T>&, const PaddedBatch&);

L2R_INSTANTIATE(float)
L2R_INSTANTIATE(double)

}  // namespace l2r
