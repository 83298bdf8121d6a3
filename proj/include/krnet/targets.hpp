#pragma once

#include "krnet/numkit.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

namespace krnet {

// Benchmark distributions: a sampler, a (possibly unnormalized) log-density
// with its score, and an analytic differential entropy where a closed form
// exists. Zero-density regions return a large negative sentinel instead of
// -inf so downstream arithmetic stays total.

inline constexpr double kNegInfSentinel = -1e30;

struct Normalizer {
  double ln_e_ib = 0.0;  // log of the acceptance probability E[I_B]
  double std_err = 0.0;  // standard error of ln_e_ib
  long mc_size = 0;
  uint64_t seed = 0;
};

struct TargetDistribution {
  std::string name;
  int dims = 1;
  std::function<Mat(RngState&, int)> sampler;
  std::function<Vec(const Mat&)> logpdf;
  std::function<Mat(const Mat&)> score;  // gradient of logpdf; 0 on flat/sentinel regions
  std::optional<double> entropy;         // analytic differential entropy
  std::optional<Normalizer> normalizer;  // attached for hole targets
  bool normalized = true;                // logpdf integrates to one as returned
};

inline Mat sample_target(const TargetDistribution& d, RngState& rng, int n) {
  if (n < 1) throw std::invalid_argument("sample_target: n must be >= 1");
  return d.sampler(rng, n);
}

inline Vec logpdf_target(const TargetDistribution& d, const Mat& y) {
  if (y.cols() != d.dims) throw std::invalid_argument("logpdf_target: width mismatch");
  check_finite(y, "target evaluation points");
  return d.logpdf(y);
}

inline std::optional<double> analytic_entropy(const TargetDistribution& d) { return d.entropy; }

namespace detail {

inline double uniform_open(RngState& rng) {
  // strictly inside (0,1)
  return static_cast<double>(rng.next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double logistic_logpdf_1d(double y, double s) {
  const double t = y / s;
  return -t - std::log(s) - 2.0 * softplus(-t);
}

inline double logistic_score_1d(double y, double s) {
  // d/dy log rho = (2 sigma(-y/s) - 1) / s
  const double sig = 1.0 / (1.0 + std::exp(y / s));
  return (2.0 * sig - 1.0) / s;
}

}  // namespace detail

// --------------------------------------------------------------------- simple

inline TargetDistribution make_gaussian(int dims) {
  TargetDistribution d;
  d.name = "gaussian";
  d.dims = dims;
  d.sampler = [dims](RngState& rng, int n) { return gauss_sample(rng, n, dims); };
  d.logpdf = [](const Mat& y) { return std_normal_logpdf(y); };
  d.score = [](const Mat& y) -> Mat { return -y; };
  d.entropy = 0.5 * dims * (1.0 + kLog2Pi);
  return d;
}

inline TargetDistribution make_logistic(double scale, int dims = 1) {
  TargetDistribution d;
  d.name = "logistic";
  d.dims = dims;
  d.sampler = [dims, scale](RngState& rng, int n) {
    Mat out(n, dims);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < dims; ++j) {
        const double u = detail::uniform_open(rng);
        out(i, j) = scale * std::log(u / (1.0 - u));
      }
    }
    return out;
  };
  d.logpdf = [scale](const Mat& y) {
    Vec lp = Vec::Zero(y.rows());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      for (Eigen::Index j = 0; j < y.cols(); ++j) {
        lp[i] += detail::logistic_logpdf_1d(y(i, j), scale);
      }
    }
    return lp;
  };
  d.score = [scale](const Mat& y) {
    Mat g(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      for (Eigen::Index j = 0; j < y.cols(); ++j) {
        g(i, j) = detail::logistic_score_1d(y(i, j), scale);
      }
    }
    return g;
  };
  d.entropy = dims * (std::log(scale) + 2.0);
  return d;
}

inline TargetDistribution make_lognormal() {
  TargetDistribution d;
  d.name = "lognormal";
  d.dims = 1;
  d.sampler = [](RngState& rng, int n) {
    return gauss_sample(rng, n, 1).array().exp().matrix();
  };
  d.logpdf = [](const Mat& y) {
    Vec lp(y.rows());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double v = y(i, 0);
      if (v <= 0.0) {
        lp[i] = kNegInfSentinel;
      } else {
        const double l = std::log(v);
        lp[i] = -l - 0.5 * kLog2Pi - 0.5 * l * l;
      }
    }
    return lp;
  };
  d.score = [](const Mat& y) {
    Mat g(y.rows(), 1);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double v = y(i, 0);
      g(i, 0) = v > 0.0 ? -(1.0 + std::log(v)) / v : 0.0;
    }
    return g;
  };
  d.entropy = 0.5 * kLog2Pi + 0.5;
  return d;
}

inline TargetDistribution make_uniform(double lo, double hi) {
  TargetDistribution d;
  d.name = "uniform";
  d.dims = 1;
  d.sampler = [lo, hi](RngState& rng, int n) { return uniform_sample(rng, n, 1, lo, hi); };
  d.logpdf = [lo, hi](const Mat& y) {
    Vec lp(y.rows());
    const double v = -std::log(hi - lo);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      lp[i] = (y(i, 0) >= lo && y(i, 0) <= hi) ? v : kNegInfSentinel;
    }
    return lp;
  };
  d.score = [](const Mat& y) { return Mat::Zero(y.rows(), 1); };
  d.entropy = std::log(hi - lo);
  return d;
}

// uniform on [-1.5,-0.5] u [0.5,1.5], total mass one on a length-2 support
inline TargetDistribution make_uniform_hole() {
  TargetDistribution d;
  d.name = "uniform_hole";
  d.dims = 1;
  d.sampler = [](RngState& rng, int n) {
    Mat out(n, 1);
    for (int i = 0; i < n; ++i) {
      const double mag = 0.5 + rng.next_uniform();
      out(i, 0) = rng.next_uniform() < 0.5 ? -mag : mag;
    }
    return out;
  };
  d.logpdf = [](const Mat& y) {
    Vec lp(y.rows());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double a = std::abs(y(i, 0));
      lp[i] = (a >= 0.5 && a <= 1.5) ? -std::log(2.0) : kNegInfSentinel;
    }
    return lp;
  };
  d.score = [](const Mat& y) { return Mat::Zero(y.rows(), 1); };
  d.entropy = std::log(2.0);
  return d;
}

// ------------------------------------------------------------------- mixture

// six unit Gaussians centered on a circle of radius five
inline TargetDistribution make_mixture2d() {
  TargetDistribution d;
  d.name = "mixture2d";
  d.dims = 2;
  Mat centers(6, 2);
  for (int i = 1; i <= 6; ++i) {
    centers(i - 1, 0) = 5.0 * std::cos(i * M_PI / 3.0);
    centers(i - 1, 1) = 5.0 * std::sin(i * M_PI / 3.0);
  }
  d.sampler = [centers](RngState& rng, int n) {
    Mat out = gauss_sample(rng, n, 2);
    for (int i = 0; i < n; ++i) {
      const int c = static_cast<int>(rng.next_u64() % 6);
      out.row(i) += centers.row(c);
    }
    return out;
  };
  d.logpdf = [centers](const Mat& y) {
    Vec lp(y.rows());
    Vec terms(6);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      for (int c = 0; c < 6; ++c) {
        const double sq = (y.row(i) - centers.row(c)).squaredNorm();
        terms[c] = -0.5 * sq - kLog2Pi - std::log(6.0);
      }
      lp[i] = logsumexp(terms);
    }
    return lp;
  };
  d.score = [centers](const Mat& y) {
    Mat g(y.rows(), 2);
    Vec terms(6);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      for (int c = 0; c < 6; ++c) {
        terms[c] = -0.5 * (y.row(i) - centers.row(c)).squaredNorm();
      }
      const double m = terms.maxCoeff();
      double wsum = 0.0;
      Eigen::RowVector2d acc = Eigen::RowVector2d::Zero();
      for (int c = 0; c < 6; ++c) {
        const double w = std::exp(terms[c] - m);
        wsum += w;
        acc += w * (centers.row(c) - y.row(i));
      }
      g.row(i) = acc / wsum;
    }
    return g;
  };
  return d;
}

// ------------------------------------------------------------ logistic holes

// i.i.d. logistic components constrained so every adjacent pair lies outside
// a rotated ellipse: || diag(gamma,1) R(theta_j) (y_j, y_{j+1})^T || >= C.
struct HoleSpec {
  int dims = 4;
  double scale = 2.0;       // logistic scale s
  double gamma_ell = 3.0;   // ellipse aspect
  double threshold = 7.6;   // C
};

inline bool hole_constraint_ok(const HoleSpec& spec, const Eigen::RowVectorXd& y) {
  for (int j = 1; j <= spec.dims - 1; ++j) {
    const double theta = (j % 2 == 0) ? M_PI / 4.0 : 3.0 * M_PI / 4.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double v1 = y[j - 1], v2 = y[j];
    const double r1 = spec.gamma_ell * (c * v1 - s * v2);
    const double r2 = s * v1 + c * v2;
    if (std::sqrt(r1 * r1 + r2 * r2) < spec.threshold) return false;
  }
  return true;
}

inline long count_hole_violations(const HoleSpec& spec, const Mat& y) {
  long bad = 0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (!hole_constraint_ok(spec, y.row(i))) ++bad;
  }
  return bad;
}

inline TargetDistribution make_logistic_holes(const HoleSpec& spec) {
  if (spec.dims < 2) throw std::invalid_argument("logistic holes need at least 2 dims");
  TargetDistribution d;
  d.name = "logistic_holes";
  d.dims = spec.dims;
  d.normalized = false;  // until a normalizer estimate is attached
  d.sampler = [spec](RngState& rng, int n) {
    Mat out(n, spec.dims);
    long accepted = 0, proposed = 0;
    Eigen::RowVectorXd row(spec.dims);
    while (accepted < n) {
      for (int j = 0; j < spec.dims; ++j) {
        const double u = detail::uniform_open(rng);
        row[j] = spec.scale * std::log(u / (1.0 - u));
      }
      ++proposed;
      if (hole_constraint_ok(spec, row)) {
        out.row(accepted++) = row;
      }
      if (proposed % (1 << 20) == 0 &&
          static_cast<double>(accepted) / static_cast<double>(proposed) < 1e-6) {
        throw std::runtime_error("hole sampler: acceptance rate below 1e-6");
      }
    }
    return out;
  };
  d.logpdf = [spec](const Mat& y) {
    Vec lp(y.rows());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (!hole_constraint_ok(spec, y.row(i))) {
        lp[i] = kNegInfSentinel;
        continue;
      }
      double v = 0.0;
      for (int j = 0; j < spec.dims; ++j) {
        v += detail::logistic_logpdf_1d(y(i, j), spec.scale);
      }
      lp[i] = v;
    }
    return lp;
  };
  d.score = [spec](const Mat& y) {
    Mat g = Mat::Zero(y.rows(), spec.dims);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (!hole_constraint_ok(spec, y.row(i))) continue;
      for (int j = 0; j < spec.dims; ++j) {
        g(i, j) = detail::logistic_score_1d(y(i, j), spec.scale);
      }
    }
    return g;
  };
  return d;
}

// Monte-Carlo estimate of E[I_B] under the unconstrained logistic proposal,
// reported in log form. The estimate (with its seed and size) is what makes
// the hole target's log-density normalized.
inline Normalizer estimate_normalizer(const HoleSpec& spec, RngState& rng, long n_mc) {
  if (n_mc < 10000) throw std::invalid_argument("estimate_normalizer: n_mc must be >= 1e4");
  const uint64_t seed = rng.key;
  long inside = 0;
  Eigen::RowVectorXd row(spec.dims);
  for (long i = 0; i < n_mc; ++i) {
    for (int j = 0; j < spec.dims; ++j) {
      const double u = detail::uniform_open(rng);
      row[j] = spec.scale * std::log(u / (1.0 - u));
    }
    if (hole_constraint_ok(spec, row)) ++inside;
  }
  if (inside == 0) throw std::runtime_error("estimate_normalizer: zero acceptances");
  Normalizer norm;
  const double p = static_cast<double>(inside) / static_cast<double>(n_mc);
  norm.ln_e_ib = std::log(p);
  norm.std_err = std::sqrt((1.0 - p) / (p * static_cast<double>(n_mc)));
  norm.mc_size = n_mc;
  norm.seed = seed;
  return norm;
}

inline void attach_normalizer(TargetDistribution& d, const Normalizer& norm) {
  d.normalizer = norm;
  d.normalized = true;
  auto base = d.logpdf;
  const double shift = norm.ln_e_ib;
  d.logpdf = [base, shift](const Mat& y) {
    Vec lp = base(y);
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
      if (lp[i] > kNegInfSentinel) lp[i] -= shift;
    }
    return lp;
  };
}

// ----------------------------------------------------------------- entropy MC

struct EntropyEstimate {
  double value = 0.0;
  double std_err = 0.0;
  bool std_err_defined = true;
};

inline EntropyEstimate estimate_entropy_mc(const TargetDistribution& d, RngState& rng, long n) {
  if (!d.normalized) {
    throw std::invalid_argument("estimate_entropy_mc: unnormalized target without an estimate");
  }
  Mat samples = sample_target(d, rng, static_cast<int>(n));
  Vec lp = d.logpdf(samples);
  EntropyEstimate e;
  e.value = -lp.mean();
  if (n > 1) {
    const double var = (lp.array() + e.value).square().sum() / static_cast<double>(n - 1);
    e.std_err = std::sqrt(var / static_cast<double>(n));
  } else {
    e.std_err_defined = false;
  }
  return e;
}

// ---------------------------------------------------------------- name lookup

inline TargetDistribution make_target(const std::string& name, double p1 = 0.0, double p2 = 0.0,
                                      int dims = 0) {
  if (name == "gaussian") return make_gaussian(dims > 0 ? dims : 1);
  if (name == "logistic") return make_logistic(p1 > 0.0 ? p1 : 2.0, dims > 0 ? dims : 1);
  if (name == "lognormal") return make_lognormal();
  if (name == "uniform") return make_uniform(p1, p2 > p1 ? p2 : p1 + 2.0);
  if (name == "uniform_hole") return make_uniform_hole();
  if (name == "mixture2d") return make_mixture2d();
  throw std::invalid_argument("unknown target: " + name);
}

}  // namespace krnet
