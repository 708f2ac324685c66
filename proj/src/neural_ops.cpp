#include "l2r/neural_ops.hpp"

#include <cmath>
#include <limits>

#include "l2r/error.hpp"

namespace l2r {
namespace {

template <typename T>
void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kShapeError, what);
}

template <typename T>
void gemm_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  const std::size_t n = a.rows(), inner = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    T* __restrict o = out.data() + i * m;
    const T* ar = a.data() + i * inner;
    for (std::size_t p = 0; p < inner; ++p) {
      const T s = ar[p];
      if (s == T(0)) continue;
      const T* __restrict br = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
    }
  }
}

// Threshold below which a shifted denominator is recomputed with a joint shift.
template <typename T>
constexpr T kTinyDenominator = std::is_same_v<T, float> ? T(1e-20) : T(1e-200);

}  // namespace

template <typename T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  require<T>(a.cols() == b.rows(), "matmul: inner dimensions differ");
  out.reset(a.rows(), b.cols());
  gemm_acc(a, b, out);
}

template <typename T>
void matmul_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  require<T>(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols(),
             "matmul_acc: shape mismatch");
  gemm_acc(a, b, out);
}

template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  require<T>(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(),
             "matmul_tn_acc: shape mismatch");
  const std::size_t rows = a.rows(), n = a.cols(), m = b.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* ar = a.data() + r * n;
    const T* __restrict br = b.data() + r * m;
    for (std::size_t i = 0; i < n; ++i) {
      const T s = ar[i];
      if (s == T(0)) continue;
      T* __restrict o = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
    }
  }
}

template <typename T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  require<T>(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  out.reset(a.rows(), b.rows());
  matmul_nt_acc(a, b, out);
}

template <typename T>
void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  require<T>(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows(),
             "matmul_nt_acc: shape mismatch");
  const std::size_t n = a.rows(), inner = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const T* __restrict ar = a.data() + i * inner;
    for (std::size_t j = 0; j < m; ++j) {
      const T* __restrict br = b.data() + j * inner;
      T s = 0;
      for (std::size_t p = 0; p < inner; ++p) s += ar[p] * br[p];
      out(i, j) += s;
    }
  }
}

template <typename T>
void add_row_bias(Matrix<T>& x, const Matrix<T>& bias) {
  require<T>(bias.size() == x.cols(), "add_row_bias: width mismatch");
  for (std::size_t i = 0; i < x.rows(); ++i) {
    T* r = x.data() + i * x.cols();
    for (std::size_t j = 0; j < x.cols(); ++j) r[j] += bias[j];
  }
}

template <typename T>
void column_sum_acc(const Matrix<T>& dy, Matrix<T>& bias_grad) {
  require<T>(bias_grad.size() == dy.cols(), "column_sum_acc: width mismatch");
  for (std::size_t i = 0; i < dy.rows(); ++i)
    for (std::size_t j = 0; j < dy.cols(); ++j) bias_grad[j] += dy(i, j);
}

// --- layer norm --------------------------------------------------------------

template <typename T>
void layer_norm_forward(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                        Matrix<T>& y, LayerNormCache<T>* cache) {
  const std::size_t n = x.rows(), d = x.cols();
  require<T>(gain.size() == d && bias.size() == d, "layer_norm: width mismatch");
  y.reset(n, d);
  if (cache) {
    cache->normalized.reset(n, d);
    cache->inv_std.assign(n, T(0));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = x.data() + i * d;
    double mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + kLayerNormEps));
    for (std::size_t j = 0; j < d; ++j) {
      const T z = static_cast<T>(xr[j] - mean) * inv;
      if (cache) cache->normalized(i, j) = z;
      y(i, j) = z * gain[j] + bias[j];
    }
    if (cache) cache->inv_std[i] = inv;
  }
}

template <typename T>
void layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& gain, const LayerNormCache<T>& cache,
                         Matrix<T>& dx, Matrix<T>& dgain, Matrix<T>& dbias) {
  const std::size_t n = dy.rows(), d = dy.cols();
  require<T>(cache.normalized.rows() == n && cache.normalized.cols() == d,
             "layer_norm_backward: cache shape mismatch");
  dx.reset(n, d);
  std::vector<T> g(d);
  for (std::size_t i = 0; i < n; ++i) {
    T mean_g = 0, mean_gz = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T z = cache.normalized(i, j);
      dgain[j] += dy(i, j) * z;
      dbias[j] += dy(i, j);
      g[j] = dy(i, j) * gain[j];
      mean_g += g[j];
      mean_gz += g[j] * z;
    }
    mean_g /= static_cast<T>(d);
    mean_gz /= static_cast<T>(d);
    const T inv = cache.inv_std[i];
    for (std::size_t j = 0; j < d; ++j)
      dx(i, j) = inv * (g[j] - mean_g - cache.normalized(i, j) * mean_gz);
  }
}

// --- AAFM --------------------------------------------------------------------

template <typename T>
void aafm_forward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, const Matrix<T>& a,
                  Matrix<T>& out, AafmCache<T>* cache) {
  const std::size_t nq = q.rows(), m = k.rows(), d = q.cols();
  require<T>(k.cols() == d && v.cols() == d && v.rows() == m, "aafm: Q/K/V shape mismatch");
  require<T>(a.rows() == nq && a.cols() == m, "aafm: bias shape mismatch");
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();

  AafmCache<T> local;
  AafmCache<T>& c = cache ? *cache : local;
  c.recorded = false;
  c.exp_a.reset(nq, m);
  c.exp_k.reset(m, d);
  c.ratio.reset(nq, d);
  c.denom.reset(nq, d);
  c.gate.reset(nq, d);
  c.joint_row.assign(nq, 0);

  std::vector<T> colmax(d, kNegInf);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t ch = 0; ch < d; ++ch) colmax[ch] = std::max(colmax[ch], k(j, ch));
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t ch = 0; ch < d; ++ch) c.exp_k(j, ch) = std::exp(k(j, ch) - colmax[ch]);

  Matrix<T> ekv(m, d);
  for (std::size_t i = 0; i < ekv.size(); ++i) ekv[i] = c.exp_k[i] * v[i];

  for (std::size_t i = 0; i < nq; ++i) {
    T rowmax = kNegInf;
    for (std::size_t j = 0; j < m; ++j) rowmax = std::max(rowmax, a(i, j));
    if (rowmax == kNegInf) throw Error(ErrorCode::kEmptyAttention, "aafm: bias row is entirely -inf");
    for (std::size_t j = 0; j < m; ++j) c.exp_a(i, j) = std::exp(a(i, j) - rowmax);
  }
  Matrix<T> num;
  matmul(c.exp_a, ekv, num);
  matmul(c.exp_a, c.exp_k, c.denom);

  for (std::size_t i = 0; i < nq; ++i) {
    bool tiny = false;
    for (std::size_t ch = 0; ch < d && !tiny; ++ch) tiny = !(c.denom(i, ch) >= kTinyDenominator<T>);
    if (!tiny) {
      for (std::size_t ch = 0; ch < d; ++ch) c.ratio(i, ch) = num(i, ch) / c.denom(i, ch);
      continue;
    }
    // Joint shift: m_c = max_j (A_ij + K_jc) keeps the largest term at exp(0).
    c.joint_row[i] = 1;
    for (std::size_t ch = 0; ch < d; ++ch) {
      T shift = kNegInf;
      for (std::size_t j = 0; j < m; ++j) shift = std::max(shift, a(i, j) + k(j, ch));
      T nsum = 0, dsum = 0;
      for (std::size_t j = 0; j < m; ++j) {
        const T w = std::exp(a(i, j) + k(j, ch) - shift);
        nsum += w * v(j, ch);
        dsum += w;
      }
      c.denom(i, ch) = dsum;
      c.ratio(i, ch) = nsum / dsum;
    }
  }

  out.reset(nq, d);
  for (std::size_t i = 0; i < out.size(); ++i) {
    c.gate[i] = sigmoid(q[i]);
    out[i] = c.gate[i] * c.ratio[i];
  }
  if (cache) {
    c.q = q;
    c.k = k;
    c.v = v;
    c.a = a;
    c.recorded = true;
  }
}

template <typename T>
void aafm_backward(const Matrix<T>& dout, const AafmCache<T>& c, Matrix<T>& dq, Matrix<T>& dk,
                   Matrix<T>& dv, Matrix<T>& da) {
  if (!c.recorded) throw Error(ErrorCode::kStateError, "aafm_backward: no recorded forward pass");
  const std::size_t nq = c.q.rows(), m = c.k.rows(), d = c.q.cols();
  require<T>(dout.rows() == nq && dout.cols() == d, "aafm_backward: gradient shape mismatch");
  dq.reset(nq, d);
  dk.reset(m, d);
  dv.reset(m, d);
  da.reset(nq, m);

  // G = dR / D with dR = dout * sigmoid(Q); rows using a joint shift are
  // excluded here and handled elementwise below.
  Matrix<T> g(nq, d), gr(nq, d);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t ch = 0; ch < d; ++ch) {
      const std::size_t idx = i * d + ch;
      const T s = c.gate[idx];
      dq[idx] = dout[idx] * c.ratio[idx] * s * (T(1) - s);
      if (c.joint_row[i]) continue;
      g[idx] = dout[idx] * s / c.denom[idx];
      gr[idx] = g[idx] * c.ratio[idx];
    }
  }

  // dV = eK * (eA^T G);  dK = eK * (V * (eA^T G) - eA^T (G R))
  Matrix<T> x1(m, d), x2(m, d);
  matmul_tn_acc(c.exp_a, g, x1);
  matmul_tn_acc(c.exp_a, gr, x2);
  for (std::size_t idx = 0; idx < m * d; ++idx) {
    dv[idx] = c.exp_k[idx] * x1[idx];
    dk[idx] = c.exp_k[idx] * (c.v[idx] * x1[idx] - x2[idx]);
  }
  // dA = eA * (G (eK V)^T - (G R) eK^T)
  Matrix<T> ekv(m, d);
  for (std::size_t idx = 0; idx < m * d; ++idx) ekv[idx] = c.exp_k[idx] * c.v[idx];
  Matrix<T> t1, t2;
  matmul_nt(g, ekv, t1);
  matmul_nt(gr, c.exp_k, t2);
  for (std::size_t idx = 0; idx < nq * m; ++idx) da[idx] = c.exp_a[idx] * (t1[idx] - t2[idx]);

  for (std::size_t i = 0; i < nq; ++i) {
    if (!c.joint_row[i]) continue;
    for (std::size_t ch = 0; ch < d; ++ch) {
      const T dr = dout(i, ch) * c.gate(i, ch);
      T shift = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < m; ++j) shift = std::max(shift, c.a(i, j) + c.k(j, ch));
      const T r = c.ratio(i, ch);
      for (std::size_t j = 0; j < m; ++j) {
        const T p = std::exp(c.a(i, j) + c.k(j, ch) - shift) / c.denom(i, ch);
        const T ds = dr * p * (c.v(j, ch) - r);
        dv(j, ch) += dr * p;
        dk(j, ch) += ds;
        da(i, j) += ds;
      }
    }
  }
}

template <typename T>
void softmax(std::span<const T> logits, std::span<T> probs) {
  require<T>(logits.size() == probs.size(), "softmax: size mismatch");
  T mx = -std::numeric_limits<T>::infinity();
  for (T u : logits) mx = std::max(mx, u);
  if (mx == -std::numeric_limits<T>::infinity())
    throw Error(ErrorCode::kEmptyFeasible, "softmax: every logit is -inf");
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = logits[i] == -std::numeric_limits<T>::infinity() ? T(0) : std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (T& p : probs) p /= sum;
}

#define L2R_INSTANTIATE(T)                                                                       \
  template void matmul<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);                       \
  template void matmul_acc<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);                   \
  template void matmul_tn_acc<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);                \
  template void matmul_nt<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);                    \
  template void matmul_nt_acc<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);                \
  template void add_row_bias<T>(Matrix<T>&, const Matrix<T>&);                                   \
  template void column_sum_acc<T>(const Matrix<T>&, Matrix<T>&);                                 \
  template void layer_norm_forward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,      \
                                      Matrix<T>&, LayerNormCache<T>*);                           \
  template void layer_norm_backward<T>(const Matrix<T>&, const Matrix<T>&,                       \
                                       const LayerNormCache<T>&, Matrix<T>&, Matrix<T>&,         \
                                       Matrix<T>&);                                              \
  template void aafm_forward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,            \
                                const Matrix<T>&, Matrix<T>&, AafmCache<T>*);                    \
  template void aafm_backward<T>(const Matrix<T>&, const AafmCache<T>&, Matrix<T>&, Matrix<T>&,  \
                                 Matrix<T>&, Matrix<T>&);                                        \
  template void softmax<T>(std::span<const T>, std::span<T>);

L2R_INSTANTIATE(float)
L2R_INSTANTIATE(double)

}  // namespace l2r
