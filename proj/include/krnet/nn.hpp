#pragma once

#include "krnet/numkit.hpp"

#include <span>
#include <stdexcept>

namespace krnet {

// Two-hidden-layer dense network producing the (s, t) pair for an affine
// coupling layer. Forward caches activations so the vector-Jacobian products
// for parameters and inputs can be evaluated without autodiff.

enum class Activation { kTanh, kSigmoid };

struct MlpParams {
  Mat w1, w2, w3;  // (hidden x in), (hidden x hidden), (2*out x hidden)
  Vec b1, b2, b3;
  Activation act = Activation::kTanh;

  int in_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  int out_dim() const { return static_cast<int>(w3.rows()) / 2; }

  int n_params() const {
    return static_cast<int>(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size());
  }
};

struct MlpCache {
  Mat x;   // (B x in)
  Mat a1;  // (B x hidden) post-activation
  Mat a2;  // (B x hidden)
};

namespace detail {
inline void activate_inplace(Mat& z, Activation act) {
  double* p = z.data();
  const Eigen::Index n = z.size();
  if (act == Activation::kTanh) {
    for (Eigen::Index i = 0; i < n; ++i) p[i] = fastmath::tanh_d(p[i]);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) p[i] = 1.0 / (1.0 + fastmath::exp_d(-p[i]));
  }
}
// multiply by the activation derivative, expressed through the cached value
inline void mul_activate_deriv(Mat& g, const Mat& a, Activation act) {
  if (act == Activation::kTanh) {
    g.array() *= 1.0 - a.array().square();
  } else {
    g.array() *= a.array() * (1.0 - a.array());
  }
}
inline Mat glorot_uniform(RngState& rng, int rows, int cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat w(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      w(i, j) = limit * (2.0 * rng.next_uniform() - 1.0);
    }
  }
  return w;
}
}  // namespace detail

// Hidden weights are Glorot-uniform; the output layer starts at zero so the
// surrounding coupling layer is the identity map at initialization.
inline MlpParams mlp_init(RngState& rng, int in_dim, int hidden, int out_dim,
                          Activation act = Activation::kTanh) {
  if (in_dim <= 0 || hidden <= 0 || out_dim <= 0) {
    throw std::invalid_argument("mlp_init: dimensions must be positive");
  }
  MlpParams p;
  p.w1 = detail::glorot_uniform(rng, hidden, in_dim);
  p.b1 = Vec::Zero(hidden);
  p.w2 = detail::glorot_uniform(rng, hidden, hidden);
  p.b2 = Vec::Zero(hidden);
  p.w3 = Mat::Zero(2 * out_dim, hidden);
  p.b3 = Vec::Zero(2 * out_dim);
  p.act = act;
  return p;
}

struct MlpOut {
  Mat s;  // (B x out), first half of the output
  Mat t;  // (B x out), second half
  MlpCache cache;
};

inline MlpOut mlp_forward(const MlpParams& p, const Mat& x) {
  if (x.cols() != p.in_dim()) {
    throw std::invalid_argument("mlp_forward: input width mismatch");
  }
  MlpOut o;
  o.cache.x = x;
  o.cache.a1.noalias() = x * p.w1.transpose();
  o.cache.a1.rowwise() += p.b1.transpose();
  detail::activate_inplace(o.cache.a1, p.act);
  o.cache.a2.noalias() = o.cache.a1 * p.w2.transpose();
  o.cache.a2.rowwise() += p.b2.transpose();
  detail::activate_inplace(o.cache.a2, p.act);
  Mat out;
  out.noalias() = o.cache.a2 * p.w3.transpose();
  out.rowwise() += p.b3.transpose();
  const int m = p.out_dim();
  o.s = out.leftCols(m);
  o.t = out.rightCols(m);
  return o;
}

struct MlpGrads {
  MlpParams g;   // gradient container with the parameter shapes
  Mat grad_x;    // (B x in), per-row input gradient
};

// Gradient of <cot_s, s> + <cot_t, t>: parameter part summed over the batch,
// input part kept per row.
inline MlpGrads mlp_vjp(const MlpParams& p, const MlpCache& cache, const Mat& cot_s,
                        const Mat& cot_t) {
  if (cache.x.rows() != cot_s.rows() || cot_s.cols() != p.out_dim() ||
      cot_t.cols() != p.out_dim()) {
    throw std::invalid_argument("mlp_vjp: cache/cotangent shape mismatch");
  }
  MlpGrads r;
  Mat g_out(cot_s.rows(), 2 * p.out_dim());
  g_out << cot_s, cot_t;

  r.g.w3.noalias() = g_out.transpose() * cache.a2;
  r.g.b3 = g_out.colwise().sum();
  Mat d2;
  d2.noalias() = g_out * p.w3;
  detail::mul_activate_deriv(d2, cache.a2, p.act);
  r.g.w2.noalias() = d2.transpose() * cache.a1;
  r.g.b2 = d2.colwise().sum();
  Mat d1;
  d1.noalias() = d2 * p.w2;
  detail::mul_activate_deriv(d1, cache.a1, p.act);
  r.g.w1.noalias() = d1.transpose() * cache.x;
  r.g.b1 = d1.colwise().sum();
  r.g.act = p.act;
  r.grad_x.noalias() = d1 * p.w1;
  return r;
}

// Flat parameter layout: w1 (row-major), b1, w2, b2, w3, b3. Shared by the
// model registry and the checkpoint format.
namespace detail {
inline void write_mat(const Mat& m, std::span<double> out, int& pos) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[pos++] = m(i, j);
}
inline void read_mat(Mat& m, std::span<const double> in, int& pos) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = in[pos++];
}
inline void write_vec(const Vec& v, std::span<double> out, int& pos) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out[pos++] = v[i];
}
inline void read_vec(Vec& v, std::span<const double> in, int& pos) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = in[pos++];
}
}  // namespace detail

inline void mlp_write_params(const MlpParams& p, std::span<double> out, int& pos) {
  detail::write_mat(p.w1, out, pos);
  detail::write_vec(p.b1, out, pos);
  detail::write_mat(p.w2, out, pos);
  detail::write_vec(p.b2, out, pos);
  detail::write_mat(p.w3, out, pos);
  detail::write_vec(p.b3, out, pos);
}

inline void mlp_read_params(MlpParams& p, std::span<const double> in, int& pos) {
  detail::read_mat(p.w1, in, pos);
  detail::read_vec(p.b1, in, pos);
  detail::read_mat(p.w2, in, pos);
  detail::read_vec(p.b2, in, pos);
  detail::read_mat(p.w3, in, pos);
  detail::read_vec(p.b3, in, pos);
}

}  // namespace krnet
