#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "l2r/tensor.hpp"

namespace l2r {

// Dense kernels. `_acc` variants accumulate into the output, the others
// resize and overwrite it.
template <typename T> void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);
template <typename T> void matmul_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);
// out += a^T b
template <typename T> void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);
// out = a b^T
template <typename T> void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);
template <typename T> void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);
template <typename T> void add_row_bias(Matrix<T>& x, const Matrix<T>& bias);
// bias_grad += column sums of dy
template <typename T> void column_sum_acc(const Matrix<T>& dy, Matrix<T>& bias_grad);

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
struct LayerNormCache {
  Matrix<T> normalized;
  std::vector<T> inv_std;
};

template <typename T>
void layer_norm_forward(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                        Matrix<T>& y, LayerNormCache<T>* cache);
// dx is overwritten; dgain and dbias accumulate.
template <typename T>
void layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& gain, const LayerNormCache<T>& cache,
                         Matrix<T>& dx, Matrix<T>& dgain, Matrix<T>& dbias);

// Adaptation attention-free module:
//   out = sigmoid(Q) * [exp(A) (exp(K) * V)] / [exp(A) exp(K)]
// Q is q x d, K and V are m x d, A is q x m (entries may be -inf).
//
// Evaluated with the max of each K column and each A row shifted out, which
// leaves the ratio unchanged. Rows whose shifted denominator gets too small
// for the precision are recomputed with a joint per-(row, column) shift.
template <typename T>
struct AafmCache {
  Matrix<T> q, k, v;
  Matrix<T> exp_a;        // exp(A - rowmax), q x m
  Matrix<T> exp_k;        // exp(K - colmax), m x d
  Matrix<T> ratio;        // q x d
  Matrix<T> denom;        // q x d
  Matrix<T> gate;         // sigmoid(Q)
  Matrix<T> a;            // original bias, kept for the joint-shift rows
  std::vector<char> joint_row;
  bool recorded = false;
};

template <typename T>
void aafm_forward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, const Matrix<T>& a,
                  Matrix<T>& out, AafmCache<T>* cache);

// Gradients are overwritten. Throws kStateError if `cache` holds no forward.
template <typename T>
void aafm_backward(const Matrix<T>& dout, const AafmCache<T>& cache, Matrix<T>& dq,
                   Matrix<T>& dk, Matrix<T>& dv, Matrix<T>& da);

// Numerically stable softmax over `logits`; -inf entries get probability 0.
template <typename T>
void softmax(std::span<const T> logits, std::span<T> probs);

template <typename T>
inline T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace l2r
