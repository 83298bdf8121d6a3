#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <functional>
#include <stdexcept>
#include <string>

namespace krnet {

// Batches are dense row-per-sample matrices; everything is double precision.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr double kTwoPi = 6.2831853071795864769;

inline void check_finite(const Mat& m, const std::string& what) {
  if (!m.allFinite()) {
    throw std::runtime_error("non-finite values in " + what);
  }
}

// ---------------------------------------------------------------------------
// Elementwise exp/tanh built from plain arithmetic (Cephes-style rational
// approximations). libm's tanh is scalar-only for doubles and dominates the
// batched network evaluations; these run ~10x faster under auto-vectorization
// and, being pure +,*,/ chains, give bit-identical results whether a value is
// processed in a SIMD lane or in a scalar loop tail.

namespace fastmath {

inline double exp_d(double x) {
  // saturate far outside the double range
  if (x > 709.0) return std::numeric_limits<double>::infinity();
  if (x < -745.0) return 0.0;
  constexpr double kLog2E = 1.4426950408889634073599;
  constexpr double kC1 = 6.93145751953125e-1;
  constexpr double kC2 = 1.42860682030941723212e-6;
  const double k = std::floor(kLog2E * x + 0.5);
  x -= k * kC1;
  x -= k * kC2;
  const double xx = x * x;
  double px = 1.26177193074810590878e-4;
  px = px * xx + 3.02994407707441961300e-2;
  px = px * xx + 9.99999999999999999910e-1;
  px *= x;
  double qx = 3.00198505138664455042e-6;
  qx = qx * xx + 2.52448340349684104192e-3;
  qx = qx * xx + 2.27265548208155028766e-1;
  qx = qx * xx + 2.00000000000000000005e0;
  double e = 1.0 + 2.0 * px / (qx - px);
  // scale by 2^k through the exponent bits
  uint64_t bits;
  std::memcpy(&bits, &e, 8);
  bits += static_cast<uint64_t>(static_cast<int64_t>(k)) << 52;
  std::memcpy(&e, &bits, 8);
  return e;
}

inline double tanh_d(double x) {
  const double ax = std::abs(x);
  if (ax >= 22.0) return x > 0.0 ? 1.0 : -1.0;  // 1 - tanh(22) underflows an ulp
  if (ax < 0.625) {
    const double z = x * x;
    double p = -9.64399179425052238628e-1;
    p = p * z - 9.92877231001918586564e1;
    p = p * z - 1.61468768441708447952e3;
    double q = z + 1.12811678491632931402e2;
    q = q * z + 2.23548839060100448583e3;
    q = q * z + 4.84406305325125486048e3;
    return x + x * z * (p / q);
  }
  const double u = exp_d(2.0 * ax);
  const double t = 1.0 - 2.0 / (u + 1.0);
  return x > 0.0 ? t : -t;
}

}  // namespace fastmath

inline void tanh_inplace(Mat& m) {
  double* p = m.data();
  const Eigen::Index n = m.size();
  for (Eigen::Index i = 0; i < n; ++i) p[i] = fastmath::tanh_d(p[i]);
}

inline Mat tanh_of(const Mat& m) {
  Mat out = m;
  tanh_inplace(out);
  return out;
}

// ---------------------------------------------------------------------------
// Counter-based splittable RNG (splitmix64 core). A stream is (key, counter);
// substreams derived via split() are independent and reproducible, so data
// generation, parameter initialization and gamma resampling never interleave.

namespace detail {
inline uint64_t sm64_mix(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

struct RngState {
  uint64_t key = 0;
  uint64_t counter = 0;
  // Box-Muller produces pairs; the spare half is kept so draws stay cheap.
  double spare = 0.0;
  bool has_spare = false;

  static RngState seeded(uint64_t seed) { return RngState{seed, 0, 0.0, false}; }

  RngState split(uint64_t stream_id) const {
    return RngState{detail::sm64_mix(key ^ detail::sm64_mix(stream_id + 0x632be59bd9b4e019ULL)), 0, 0.0, false};
  }

  uint64_t next_u64() {
    ++counter;
    return detail::sm64_mix(key + counter * 0x9e3779b97f4a7c15ULL);
  }

  // uniform on [0,1)
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_gauss() {
    if (has_spare) {
      has_spare = false;
      return spare;
    }
    const double u1 = 1.0 - next_uniform();  // (0,1], keeps log() finite
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare = r * std::sin(kTwoPi * u2);
    has_spare = true;
    return r * std::cos(kTwoPi * u2);
  }
};

inline Mat gauss_sample(RngState& rng, int rows, int cols) {
  if (rows <= 0 || cols <= 0) {
    throw std::invalid_argument("gauss_sample: shape must be positive");
  }
  Mat out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      out(i, j) = rng.next_gauss();
    }
  }
  return out;
}

inline Mat uniform_sample(RngState& rng, int rows, int cols, double lo, double hi) {
  Mat out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      out(i, j) = lo + (hi - lo) * rng.next_uniform();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

inline double logsumexp(const Vec& v) {
  if (v.size() == 0) {
    throw std::invalid_argument("logsumexp: empty input");
  }
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf (or a stray +inf) dominates
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += std::exp(v[i] - m);
  return m + std::log(acc);
}

// log of the standard-normal density, per row over all columns
inline Vec std_normal_logpdf(const Mat& x) {
  return -0.5 * x.rowwise().squaredNorm().array() - 0.5 * static_cast<double>(x.cols()) * kLog2Pi;
}

inline Mat std_normal_grad_logpdf(const Mat& x) { return -x; }

// ---------------------------------------------------------------------------
// Central-difference Jacobian, J(i,j) = (f_i(x+h e_j) - f_i(x-h e_j)) / (2h).
// Test oracle; h = 1e-5 balances truncation against cancellation in double.

inline Mat finite_diff_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
                                double h = 1e-5) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_jacobian: h must be positive");
  Vec xp = x, xm = x;
  Mat jac;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    // divide by the step actually realized in floating point
    const double denom = xp[j] - xm[j];
    const Vec fp = f(xp);
    const Vec fm = f(xm);
    if (!fp.allFinite() || !fm.allFinite()) {
      throw std::runtime_error("finite_diff_jacobian: map returned non-finite values");
    }
    if (jac.size() == 0) jac.resize(fp.size(), x.size());
    jac.col(j) = (fp - fm) / denom;
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return jac;
}

}  // namespace krnet
