#pragma once

#include "krnet/nn.hpp"
#include "krnet/numkit.hpp"

#include <algorithm>
#include <span>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

namespace krnet {

// Every layer maps a full-width batch to a full-width batch, touching only the
// columns listed in its index set; all other columns pass through untouched.
// Each layer provides
//   forward      : out, per-sample logdet contribution, cache for vjp
//   inverse      : exact inverse (optionally accumulating the forward logdet
//                  evaluated at the reconstructed input)
//   vjp          : gradient of <cot_out, forward(x)> + <cot_ld, logdet(x)>
//                  w.r.t. parameters (accumulated into a flat slice) and input
//   inverse_vjp  : the same quantities routed through the inverse map, used by
//                  the reparameterized sampling path
// Caches are per-call; parameters are only mutated by the optimizer.

using IdxList = std::vector<int>;

// ---------------------------------------------------------------------------
// Active-dimension bookkeeping for the squeezing schedule.

struct ActiveMask {
  std::vector<bool> active;  // over total dims (augmented + data)

  int count() const { return static_cast<int>(std::count(active.begin(), active.end(), true)); }
  IdxList active_indices() const {
    IdxList idx;
    for (int i = 0; i < static_cast<int>(active.size()); ++i)
      if (active[i]) idx.push_back(i);
    return idx;
  }
  IdxList frozen_indices() const {
    IdxList idx;
    for (int i = 0; i < static_cast<int>(active.size()); ++i)
      if (!active[i]) idx.push_back(i);
    return idx;
  }
};

// Splits a batch into (active, frozen) column groups, each in original order.
inline std::pair<Mat, Mat> squeeze_partition(const ActiveMask& mask, const Mat& x) {
  if (static_cast<int>(mask.active.size()) != x.cols()) {
    throw std::invalid_argument("squeeze_partition: mask/batch width mismatch");
  }
  return {x(Eigen::all, mask.active_indices()), x(Eigen::all, mask.frozen_indices())};
}

// Exact inverse of squeeze_partition: restores the original column ordering.
inline Mat squeeze_restore(const ActiveMask& mask, const Mat& active, const Mat& frozen) {
  Mat x(active.rows(), mask.active.size());
  x(Eigen::all, mask.active_indices()) = active;
  x(Eigen::all, mask.frozen_indices()) = frozen;
  return x;
}

// ---------------------------------------------------------------------------
// Affine coupling. The updated part is rescaled by a factor that is bounded
// away from zero, so the inverse never divides by a small number:
//   discrete:  z = y .* (1 + alpha*tanh(s)) + exp(beta) .* tanh(t)
//   ode:       z = y .* (1 + dt*exp(a) .* tanh(s)) + dt*exp(beta) .* tanh(t)
// with (s, t) = net(conditioning part).

enum class CouplingForm { kDiscrete, kOde };

struct CouplingCache {
  MlpCache mlp;
  Mat tanh_s, tanh_t;  // (B x upd)
  Mat w;               // scale factor
  Mat upd_in;          // input values of the updated columns
};

struct AffineCoupling {
  MlpParams net;
  Vec beta;          // per updated dim
  double alpha = 0.6;
  Vec alpha_ode;     // trainable log-scale, ode form only
  CouplingForm form = CouplingForm::kDiscrete;
  double step_dt = 1.0;
  IdxList cond_idx, upd_idx;

  int n_params() const {
    return net.n_params() + static_cast<int>(beta.size()) +
           (form == CouplingForm::kOde ? static_cast<int>(alpha_ode.size()) : 0);
  }

  Vec scale_s() const {  // multiplier applied to tanh(s), per updated dim
    if (form == CouplingForm::kDiscrete) {
      return Vec::Constant(beta.size(), alpha);
    }
    return step_dt * alpha_ode.array().exp();
  }
  Vec scale_t() const {  // multiplier applied to tanh(t)
    if (form == CouplingForm::kDiscrete) return beta.array().exp();
    return step_dt * beta.array().exp();
  }

  Mat forward(const Mat& in, Vec& logdet, CouplingCache* cache) const {
    Mat cond = in(Eigen::all, cond_idx);
    Mat upd = in(Eigen::all, upd_idx);
    MlpOut nn = mlp_forward(net, cond);
    Mat ts = tanh_of(nn.s);
    Mat tt = tanh_of(nn.t);
    const Vec ss = scale_s();
    const Vec st = scale_t();
    Mat w = (ts * ss.asDiagonal()).array() + 1.0;
    if (form == CouplingForm::kOde && w.minCoeff() <= 1e-12) {
      throw std::runtime_error("affine coupling: nonpositive scale factor");
    }
    Mat out = in;
    out(Eigen::all, upd_idx) = upd.cwiseProduct(w) + tt * st.asDiagonal();
    logdet += w.array().log().rowwise().sum().matrix();
    if (cache) {
      cache->mlp = std::move(nn.cache);
      cache->tanh_s = std::move(ts);
      cache->tanh_t = std::move(tt);
      cache->w = std::move(w);
      cache->upd_in = std::move(upd);
    }
    return out;
  }

  Mat inverse(const Mat& in, Vec* logdet_fwd = nullptr, CouplingCache* cache = nullptr) const {
    Mat cond = in(Eigen::all, cond_idx);
    MlpOut nn = mlp_forward(net, cond);
    Mat ts = tanh_of(nn.s);
    Mat tt = tanh_of(nn.t);
    Mat w = (ts * scale_s().asDiagonal()).array() + 1.0;
    if (form == CouplingForm::kOde && w.minCoeff() <= 1e-12) {
      throw std::runtime_error("affine coupling: nonpositive scale factor in inverse");
    }
    Mat out = in;
    out(Eigen::all, upd_idx) =
        (in(Eigen::all, upd_idx) - tt * scale_t().asDiagonal()).cwiseQuotient(w);
    if (logdet_fwd) *logdet_fwd += w.array().log().rowwise().sum().matrix();
    if (cache) {
      // cache is valid at the reconstructed input (the forward orientation)
      cache->mlp = std::move(nn.cache);
      cache->tanh_s = std::move(ts);
      cache->tanh_t = std::move(tt);
      cache->upd_in = out(Eigen::all, upd_idx);
      cache->w = std::move(w);
    }
    return out;
  }

  void vjp(const CouplingCache& c, Mat& cot, const Vec& cot_ld, std::span<double> pg) const {
    Mat cot_upd = cot(Eigen::all, upd_idx);
    const Vec ss = scale_s();
    const Vec st = scale_t();
    Mat b = c.tanh_t * st.asDiagonal();

    // d/dw of <cot, z> + <cot_ld, sum log w>
    Mat dw = cot_upd.cwiseProduct(c.upd_in);
    dw.array() += cot_ld.replicate(1, c.w.cols()).array() / c.w.array();

    Mat ds_pre = (dw * ss.asDiagonal()).cwiseProduct((1.0 - c.tanh_s.array().square()).matrix());
    Mat dt_pre = (cot_upd * st.asDiagonal())
                     .cwiseProduct((1.0 - c.tanh_t.array().square()).matrix());
    MlpGrads mg = mlp_vjp(net, c.mlp, ds_pre, dt_pre);

    int pos = 0;
    // accumulate: parameter slices may be shared (tied steps), so use +=
    std::vector<double> tmp(n_params(), 0.0);
    mlp_write_params(mg.g, tmp, pos);
    Vec dbeta = cot_upd.cwiseProduct(b).colwise().sum();
    for (Eigen::Index j = 0; j < dbeta.size(); ++j) tmp[pos++] = dbeta[j];
    if (form == CouplingForm::kOde) {
      Vec dalpha = dw.cwiseProduct((c.w.array() - 1.0).matrix()).colwise().sum();
      for (Eigen::Index j = 0; j < dalpha.size(); ++j) tmp[pos++] = dalpha[j];
    }
    for (int i = 0; i < static_cast<int>(tmp.size()); ++i) pg[i] += tmp[i];

    cot(Eigen::all, upd_idx) = cot_upd.cwiseProduct(c.w);
    cot(Eigen::all, cond_idx) += mg.grad_x;
  }

  // Solves J^T v = cot in place (J = forward Jacobian at the cached input).
  void jac_transpose_solve(const CouplingCache& c, Mat& cot) const {
    Mat v_upd = cot(Eigen::all, upd_idx).cwiseQuotient(c.w);
    Mat ds_pre = (v_upd.cwiseProduct(c.upd_in) * scale_s().asDiagonal())
                     .cwiseProduct((1.0 - c.tanh_s.array().square()).matrix());
    Mat dt_pre = (v_upd * scale_t().asDiagonal())
                     .cwiseProduct((1.0 - c.tanh_t.array().square()).matrix());
    MlpGrads mg = mlp_vjp(net, c.mlp, ds_pre, dt_pre);
    cot(Eigen::all, cond_idx) -= mg.grad_x;
    cot(Eigen::all, upd_idx) = v_upd;
  }

  Mat inverse_vjp(const CouplingCache& c, const Mat& cot_x, const Vec& cot_ld,
                  std::span<double> pg) const {
    Mat v_upd = cot_x(Eigen::all, upd_idx).cwiseQuotient(c.w);
    Mat probe = Mat::Zero(cot_x.rows(), cot_x.cols());
    probe(Eigen::all, upd_idx) = -v_upd;
    vjp(c, probe, cot_ld, pg);  // pg += -J_theta^T v + cot_ld * grad_theta(logdet)
    Mat cot_z = cot_x;
    cot_z(Eigen::all, cond_idx) += probe(Eigen::all, cond_idx);
    cot_z(Eigen::all, upd_idx) = v_upd;
    return cot_z;
  }

};

// parameter IO kept out of line: layout is [net, beta, (alpha_ode)]
inline void coupling_write_params(const AffineCoupling& l, std::span<double> out, int& pos) {
  mlp_write_params(l.net, out, pos);
  detail::write_vec(l.beta, out, pos);
  if (l.form == CouplingForm::kOde) detail::write_vec(l.alpha_ode, out, pos);
}
inline void coupling_read_params(AffineCoupling& l, std::span<const double> in, int& pos) {
  mlp_read_params(l.net, in, pos);
  detail::read_vec(l.beta, in, pos);
  if (l.form == CouplingForm::kOde) detail::read_vec(l.alpha_ode, in, pos);
}

// ---------------------------------------------------------------------------
// Scale and bias (actnorm-style). Data-dependent initialization standardizes
// the first batch this layer sees; afterwards a and b train freely.

struct SbCache {
  Mat x;  // (B x k) input on active columns
};

struct ScaleBias {
  Vec a, b;
  bool initialized = false;
  IdxList idx;

  int n_params() const { return static_cast<int>(a.size() + b.size()); }

  void initialize_from(const Mat& x_active) {
    const double n = static_cast<double>(x_active.rows());
    Vec mean = x_active.colwise().mean();
    Vec var = (x_active.rowwise() - mean.transpose()).array().square().colwise().sum() / n;
    for (Eigen::Index j = 0; j < var.size(); ++j) {
      if (var[j] < 1e-20) {
        throw std::runtime_error("scale-bias init: zero standard deviation in column " +
                                 std::to_string(j));
      }
    }
    Vec sd = var.array().sqrt();
    a = sd.cwiseInverse();
    b = -mean.cwiseQuotient(sd);
    initialized = true;
  }

  Mat forward(const Mat& in, Vec& logdet, SbCache* cache) const {
    if (!initialized) {
      throw std::runtime_error("scale-bias: forward before initialization (use forward_init)");
    }
    Mat x = in(Eigen::all, idx);
    Mat out = in;
    out(Eigen::all, idx) = (x * a.asDiagonal()).rowwise() + b.transpose();
    logdet.array() += a.array().abs().log().sum();
    if (cache) cache->x = std::move(x);
    return out;
  }

  // First forward over a data batch fixes a and b from that batch's per-column
  // statistics; afterwards both train as ordinary parameters.
  Mat forward_init(const Mat& in, Vec& logdet) {
    if (!initialized) initialize_from(in(Eigen::all, idx));
    return forward(in, logdet, nullptr);
  }

  Mat inverse(const Mat& in, Vec* logdet_fwd = nullptr, SbCache* cache = nullptr) const {
    if (!initialized) throw std::runtime_error("scale-bias: inverse before initialization");
    Mat out = in;
    out(Eigen::all, idx) =
        (in(Eigen::all, idx).rowwise() - b.transpose()) * a.cwiseInverse().asDiagonal();
    if (logdet_fwd) logdet_fwd->array() += a.array().abs().log().sum();
    if (cache) cache->x = out(Eigen::all, idx);
    return out;
  }

  void vjp(const SbCache& c, Mat& cot, const Vec& cot_ld, std::span<double> pg) const {
    Mat g = cot(Eigen::all, idx);
    const double ld_sum = cot_ld.sum();
    Vec da = g.cwiseProduct(c.x).colwise().sum().transpose() + ld_sum * a.cwiseInverse();
    Vec db = g.colwise().sum();
    int pos = 0;
    for (Eigen::Index j = 0; j < da.size(); ++j) pg[pos++] += da[j];
    for (Eigen::Index j = 0; j < db.size(); ++j) pg[pos++] += db[j];
    cot(Eigen::all, idx) = g * a.asDiagonal();
  }

  void jac_transpose_solve(const SbCache&, Mat& cot) const {
    cot(Eigen::all, idx) = cot(Eigen::all, idx) * a.cwiseInverse().asDiagonal();
  }

  Mat inverse_vjp(const SbCache& c, const Mat& cot_x, const Vec& cot_ld,
                  std::span<double> pg) const {
    Mat cot_z = cot_x;
    jac_transpose_solve(c, cot_z);
    Mat probe = Mat::Zero(cot_x.rows(), cot_x.cols());
    probe(Eigen::all, idx) = -cot_z(Eigen::all, idx);
    vjp(c, probe, cot_ld, pg);
    return cot_z;
  }
};

inline void scale_bias_write_params(const ScaleBias& l, std::span<double> out, int& pos) {
  detail::write_vec(l.a, out, pos);
  detail::write_vec(l.b, out, pos);
}
inline void scale_bias_read_params(ScaleBias& l, std::span<const double> in, int& pos) {
  detail::read_vec(l.a, in, pos);
  detail::read_vec(l.b, in, pos);
}

// ---------------------------------------------------------------------------
// Rotation via a trainable LU factorization, applied to the active data
// dimensions only. L has unit diagonal; logdet = sum log |u_ii|.

struct RotCache {
  Mat x;   // input on rotated columns
  Mat xu;  // x * U^T
};

struct Rotation {
  Mat lower;  // strict lower-triangular entries used
  Mat upper;  // upper-triangular entries (incl. diagonal) used
  IdxList idx;

  int k() const { return static_cast<int>(upper.rows()); }
  int n_params() const { return k() * k(); }

  static Rotation identity(const IdxList& dims) {
    Rotation r;
    const int n = static_cast<int>(dims.size());
    r.lower = Mat::Zero(n, n);
    r.upper = Mat::Identity(n, n);
    r.idx = dims;
    return r;
  }

  Mat unit_lower() const {
    Mat l = lower.triangularView<Eigen::StrictlyLower>();
    l.diagonal().setOnes();
    return l;
  }

  void check_diagonal() const {
    for (int i = 0; i < k(); ++i) {
      if (std::abs(upper(i, i)) < 1e-12) {
        throw std::runtime_error("rotation layer: singular U diagonal");
      }
    }
  }

  double logdet_value() const {
    double s = 0.0;
    for (int i = 0; i < k(); ++i) s += std::log(std::abs(upper(i, i)));
    return s;
  }

  Mat forward(const Mat& in, Vec& logdet, RotCache* cache) const {
    check_diagonal();
    Mat x = in(Eigen::all, idx);
    Mat xu = x * upper.triangularView<Eigen::Upper>().transpose();
    Mat out = in;
    out(Eigen::all, idx) = xu * unit_lower().transpose();
    logdet.array() += logdet_value();
    if (cache) {
      cache->x = std::move(x);
      cache->xu = std::move(xu);
    }
    return out;
  }

  Mat inverse(const Mat& in, Vec* logdet_fwd = nullptr, RotCache* cache = nullptr) const {
    check_diagonal();
    Mat l = unit_lower();
    Mat zt = in(Eigen::all, idx).transpose();
    Mat t = l.triangularView<Eigen::UnitLower>().solve(zt);  // t = U x
    Mat xt = upper.triangularView<Eigen::Upper>().solve(t);
    Mat out = in;
    out(Eigen::all, idx) = xt.transpose();
    if (logdet_fwd) logdet_fwd->array() += logdet_value();
    if (cache) {
      cache->x = xt.transpose();
      cache->xu = t.transpose();
    }
    return out;
  }

  void vjp(const RotCache& c, Mat& cot, const Vec& cot_ld, std::span<double> pg) const {
    Mat g = cot(Eigen::all, idx);
    Mat l = unit_lower();
    Mat dl = g.transpose() * c.xu;              // keep strict lower
    Mat du = (g * l).transpose() * c.x;         // keep upper
    const double ld_sum = cot_ld.sum();
    const int n = k();
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < i; ++j) pg[pos++] += dl(i, j);
    }
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) {
        double v = du(i, j);
        if (i == j) v += ld_sum / upper(i, i);
        pg[pos++] += v;
      }
    }
    cot(Eigen::all, idx) = g * (l * upper.triangularView<Eigen::Upper>().toDenseMatrix());
  }

  void jac_transpose_solve(const RotCache&, Mat& cot) const {
    Mat l = unit_lower();
    Mat ct = cot(Eigen::all, idx).transpose();
    Mat t = upper.transpose().triangularView<Eigen::Lower>().solve(ct);
    Mat vt = l.transpose().triangularView<Eigen::UnitUpper>().solve(t);
    cot(Eigen::all, idx) = vt.transpose();
  }

  Mat inverse_vjp(const RotCache& c, const Mat& cot_x, const Vec& cot_ld,
                  std::span<double> pg) const {
    Mat cot_z = cot_x;
    jac_transpose_solve(c, cot_z);
    Mat probe = Mat::Zero(cot_x.rows(), cot_x.cols());
    probe(Eigen::all, idx) = -cot_z(Eigen::all, idx);
    vjp(c, probe, cot_ld, pg);
    return cot_z;
  }
};

inline void rotation_write_params(const Rotation& l, std::span<double> out, int& pos) {
  const int n = l.k();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) out[pos++] = l.lower(i, j);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) out[pos++] = l.upper(i, j);
}
inline void rotation_read_params(Rotation& l, std::span<const double> in, int& pos) {
  const int n = l.k();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) l.lower(i, j) = in[pos++];
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) l.upper(i, j) = in[pos++];
}

// ---------------------------------------------------------------------------
// Squeezing. Values pass through unchanged; the layer records which
// dimensions are frozen from here on. The (partition, restore) pair above is
// the data-layout view of the same operation.

struct SqueezeCache {};

struct Squeeze {
  ActiveMask mask_after;   // active set once this layer has been applied
  IdxList newly_frozen;

  int n_params() const { return 0; }
  Mat forward(const Mat& in, Vec&, SqueezeCache*) const { return in; }
  Mat inverse(const Mat& in, Vec* = nullptr, SqueezeCache* = nullptr) const { return in; }
  void vjp(const SqueezeCache&, Mat&, const Vec&, std::span<double>) const {}
  void jac_transpose_solve(const SqueezeCache&, Mat&) const {}
  Mat inverse_vjp(const SqueezeCache&, const Mat& cot_x, const Vec&, std::span<double>) const {
    return cot_x;
  }
};

// ---------------------------------------------------------------------------
// Component-wise nonlinear invertible map. On [-a, a] the map is the CDF of a
// trainable piecewise-linear density (affinely rescaled to [0,1] and back),
// so each element's restriction is quadratic and inverts in closed form; the
// tails are linear with a small positive slope.
//
// Node densities: p_i = exp(theta_i) / Z with Z the trapezoidal normalizer,
// which makes p a positive density integrating to one by construction.

struct CdfTables {
  Mat p;  // (k x n_p) node densities
  Mat c;  // (k x n_p) cumulative F at the knots, c(.,0) = 0
};

struct CdfCache {
  CdfTables tab;
  Eigen::MatrixXi elem;  // element index, or -1 (left tail) / -2 (right tail)
  Mat xi;                // offset from the element's left knot (unit interval)
  Mat dens;              // dz/dx: density inside, tail slope outside
};

struct PiecewiseCdf {
  Mat theta;        // (k x n_p) unconstrained node weights
  Vec knots;        // (n_p) mesh on [0,1], knots[0] = 0, knots[n_p-1] = 1
  Vec widths;       // (n_p - 1)
  double half_width = 20.0;
  double tail_slope = 1e-10;
  IdxList idx;

  int n_nodes() const { return static_cast<int>(knots.size()); }
  int n_elems() const { return n_nodes() - 1; }
  int n_params() const { return static_cast<int>(theta.size()); }

  // Element widths grow geometrically from the center outward and are scaled
  // to sum to one; the mesh is a pure function of (n_elems, ratio).
  static std::pair<Vec, Vec> make_mesh(int n_elems, double ratio) {
    if (n_elems < 2 || n_elems % 2 != 0) {
      throw std::invalid_argument("cdf mesh: element count must be even and >= 2");
    }
    const int half = n_elems / 2;
    Vec w(n_elems);
    for (int i = 0; i < half; ++i) {
      const double v = std::pow(ratio, i);
      w[half + i] = v;
      w[half - 1 - i] = v;
    }
    w /= w.sum();
    Vec k(n_elems + 1);
    k[0] = 0.0;
    for (int i = 0; i < n_elems; ++i) k[i + 1] = k[i] + w[i];
    k[n_elems] = 1.0;
    return {k, w};
  }

  static PiecewiseCdf build(const IdxList& dims, int n_elems, double ratio, double a,
                            double slope) {
    PiecewiseCdf l;
    auto [k, w] = make_mesh(n_elems, ratio);
    l.knots = k;
    l.widths = w;
    l.theta = Mat::Zero(dims.size(), k.size());
    l.half_width = a;
    l.tail_slope = slope;
    l.idx = dims;
    return l;
  }

  CdfTables tables() const {
    CdfTables t;
    Mat ph = theta.array().exp();
    const int np = n_nodes();
    t.p.resize(ph.rows(), np);
    t.c.resize(ph.rows(), np);
    for (Eigen::Index d = 0; d < ph.rows(); ++d) {
      double z = 0.0;
      for (int e = 0; e < n_elems(); ++e) z += 0.5 * (ph(d, e) + ph(d, e + 1)) * widths[e];
      t.p.row(d) = ph.row(d) / z;
      t.c(d, 0) = 0.0;
      for (int e = 0; e < n_elems(); ++e) {
        t.c(d, e + 1) = t.c(d, e) + 0.5 * (t.p(d, e) + t.p(d, e + 1)) * widths[e];
      }
      t.c(d, np - 1) = 1.0;
    }
    return t;
  }

  int locate_u(double u) const {
    // last knot <= u, clamped to a valid element
    const double* beg = knots.data();
    const double* end = beg + knots.size();
    int e = static_cast<int>(std::upper_bound(beg, end, u) - beg) - 1;
    return std::clamp(e, 0, n_elems() - 1);
  }

  Mat forward(const Mat& in, Vec& logdet, CdfCache* cache) const {
    CdfTables tab = tables();
    const double a = half_width;
    Mat out = in;
    Eigen::MatrixXi elem(in.rows(), static_cast<Eigen::Index>(idx.size()));
    Mat xi(in.rows(), idx.size()), dens(in.rows(), idx.size());
    for (size_t dj = 0; dj < idx.size(); ++dj) {
      const int col = idx[dj];
      for (Eigen::Index i = 0; i < in.rows(); ++i) {
        const double x = in(i, col);
        double z, dzdx, off = 0.0;
        int e;
        if (x < -a) {
          z = tail_slope * (x + a) - a;
          dzdx = tail_slope;
          e = -1;
        } else if (x > a) {
          z = tail_slope * (x - a) + a;
          dzdx = tail_slope;
          e = -2;
        } else {
          const double u = (x + a) / (2.0 * a);
          e = locate_u(u);
          off = u - knots[e];
          const double pe = tab.p(dj, e);
          const double slope = (tab.p(dj, e + 1) - pe) / widths[e];
          const double f = tab.c(dj, e) + pe * off + 0.5 * slope * off * off;
          z = 2.0 * a * f - a;
          dzdx = pe + slope * off;
        }
        out(i, col) = z;
        elem(i, dj) = e;
        xi(i, dj) = off;
        dens(i, dj) = dzdx;
        logdet[i] += std::log(dzdx);
      }
    }
    if (cache) {
      cache->tab = std::move(tab);
      cache->elem = std::move(elem);
      cache->xi = std::move(xi);
      cache->dens = std::move(dens);
    }
    return out;
  }

  Mat inverse(const Mat& in, Vec* logdet_fwd = nullptr, CdfCache* cache = nullptr) const {
    CdfTables tab = tables();
    const double a = half_width;
    Mat out = in;
    if (cache) {
      cache->elem.resize(in.rows(), static_cast<Eigen::Index>(idx.size()));
      cache->xi.resize(in.rows(), idx.size());
      cache->dens.resize(in.rows(), idx.size());
    }
    for (size_t dj = 0; dj < idx.size(); ++dj) {
      const int col = idx[dj];
      for (Eigen::Index i = 0; i < in.rows(); ++i) {
        const double z = in(i, col);
        double x, dzdx;
        int elem_out;
        double off_out = 0.0;
        if (z < -a) {
          x = (z + a) / tail_slope - a;
          dzdx = tail_slope;
          elem_out = -1;
        } else if (z > a) {
          x = (z - a) / tail_slope + a;
          dzdx = tail_slope;
          elem_out = -2;
        } else {
          const double ft = (z + a) / (2.0 * a);
          // locate the element whose cumulative range contains ft
          int e = 0;
          {
            int lo = 0, hi = n_elems() - 1;
            while (lo < hi) {
              const int mid = (lo + hi + 1) / 2;
              if (tab.c(dj, mid) <= ft) {
                lo = mid;
              } else {
                hi = mid - 1;
              }
            }
            e = lo;
          }
          const double pe = tab.p(dj, e);
          const double slope = (tab.p(dj, e + 1) - pe) / widths[e];
          const double df = std::max(ft - tab.c(dj, e), 0.0);
          // stable root of  (slope/2) xi^2 + pe xi - df = 0  inside the element
          const double disc = std::sqrt(pe * pe + 2.0 * slope * df);
          const double off = 2.0 * df / (pe + disc);
          x = 2.0 * a * (knots[e] + off) - a;
          dzdx = pe + slope * off;
          elem_out = e;
          off_out = off;
        }
        out(i, col) = x;
        if (logdet_fwd) (*logdet_fwd)[i] += std::log(dzdx);
        if (cache) {
          cache->elem(i, dj) = elem_out;
          cache->xi(i, dj) = off_out;
          cache->dens(i, dj) = dzdx;
        }
      }
    }
    if (cache) cache->tab = std::move(tab);
    return out;
  }

  void vjp(const CdfCache& c, Mat& cot, const Vec& cot_ld, std::span<double> pg) const {
    const double a = half_width;
    const int np = n_nodes();
    const int ne = n_elems();
    for (size_t dj = 0; dj < idx.size(); ++dj) {
      const int col = idx[dj];
      Vec cot_p = Vec::Zero(np);
      Vec pref = Vec::Zero(ne);  // per-element sum of cot_F for prefix terms
      for (Eigen::Index i = 0; i < c.elem.rows(); ++i) {
        const int e = c.elem(i, dj);
        const double g = cot(i, col);
        if (e < 0) {
          cot(i, col) = g * tail_slope;  // logdet constant in the tails
          continue;
        }
        const double off = c.xi(i, dj);
        const double h = widths[e];
        const double dens = c.dens(i, dj);
        const double cot_f = g * 2.0 * a;
        pref[e] += cot_f;
        cot_p[e] += cot_f * (off - off * off / (2.0 * h));
        cot_p[e + 1] += cot_f * (off * off / (2.0 * h));
        const double r = cot_ld[i] / dens;
        cot_p[e] += r * (1.0 - off / h);
        cot_p[e + 1] += r * (off / h);
        const double slope = (c.tab.p(dj, e + 1) - c.tab.p(dj, e)) / h;
        cot(i, col) = g * dens + cot_ld[i] * slope / (2.0 * a * dens);
      }
      // prefix (cumulative) contributions: element k's area feeds every F
      // evaluated in a later element
      double suffix = 0.0;
      for (int k = ne - 1; k >= 0; --k) {
        // suffix = sum of cot_F over samples in elements > k
        suffix += (k + 1 <= ne - 1) ? pref[k + 1] : 0.0;
        cot_p[k] += suffix * widths[k] * 0.5;
        cot_p[k + 1] += suffix * widths[k] * 0.5;
      }
      // chain through the normalized exponential parameterization
      double q = 0.0;
      for (int j = 0; j < np; ++j) q += cot_p[j] * c.tab.p(dj, j);
      for (int j = 0; j < np; ++j) {
        const double cj =
            0.5 * ((j > 0 ? widths[j - 1] : 0.0) + (j < ne ? widths[j] : 0.0));
        pg[dj * np + j] += c.tab.p(dj, j) * (cot_p[j] - cj * q);
      }
    }
  }

  void jac_transpose_solve(const CdfCache& c, Mat& cot) const {
    for (size_t dj = 0; dj < idx.size(); ++dj) {
      const int col = idx[dj];
      for (Eigen::Index i = 0; i < c.dens.rows(); ++i) cot(i, col) /= c.dens(i, dj);
    }
  }

  Mat inverse_vjp(const CdfCache& c, const Mat& cot_x, const Vec& cot_ld,
                  std::span<double> pg) const {
    const double a = half_width;
    Mat cot_z = cot_x;
    for (size_t dj = 0; dj < idx.size(); ++dj) {
      const int col = idx[dj];
      for (Eigen::Index i = 0; i < c.dens.rows(); ++i) {
        const int e = c.elem(i, dj);
        double u = cot_x(i, col);
        if (e >= 0) {
          const double slope = (c.tab.p(dj, e + 1) - c.tab.p(dj, e)) / widths[e];
          u += cot_ld[i] * slope / (2.0 * a * c.dens(i, dj));
        }
        cot_z(i, col) = u / c.dens(i, dj);
      }
    }
    Mat probe = Mat::Zero(cot_x.rows(), cot_x.cols());
    probe(Eigen::all, idx) = -cot_z(Eigen::all, idx);
    vjp(c, probe, cot_ld, pg);
    return cot_z;
  }
};

inline void cdf_write_params(const PiecewiseCdf& l, std::span<double> out, int& pos) {
  detail::write_mat(l.theta, out, pos);
}
inline void cdf_read_params(PiecewiseCdf& l, std::span<const double> in, int& pos) {
  detail::read_mat(l.theta, in, pos);
}

// ---------------------------------------------------------------------------
// Logistic preprocessing transform, mapping (0,1) to the real line:
//   y = (s/2) log(x / (1-x)),   x = (tanh(y/s) + 1) / 2
// Not trainable; used to align compactly supported data with the prior.

struct LogitCache {
  Mat x;  // inputs on the mapped columns
};

struct LogitTransform {
  double scale = 2.0;
  IdxList idx;

  int n_params() const { return 0; }

  Mat forward(const Mat& in, Vec& logdet, LogitCache* cache) const {
    Mat x = in(Eigen::all, idx);
    if (x.minCoeff() <= 0.0 || x.maxCoeff() >= 1.0) {
      throw std::domain_error("logit transform: inputs must lie in (0,1)");
    }
    Mat out = in;
    out(Eigen::all, idx) = (0.5 * scale) * (x.array() / (1.0 - x.array())).log().matrix();
    logdet += (scale / (2.0 * x.array() * (1.0 - x.array()))).log().rowwise().sum().matrix();
    if (cache) cache->x = std::move(x);
    return out;
  }

  Mat inverse(const Mat& in, Vec* logdet_fwd = nullptr, LogitCache* cache = nullptr) const {
    Mat y = in(Eigen::all, idx);
    Mat x = 0.5 * (tanh_of(y / scale).array() + 1.0).matrix();
    Mat out = in;
    out(Eigen::all, idx) = x;
    if (logdet_fwd) {
      *logdet_fwd +=
          (scale / (2.0 * x.array() * (1.0 - x.array()))).log().rowwise().sum().matrix();
    }
    if (cache) cache->x = std::move(x);
    return out;
  }

  void vjp(const LogitCache& c, Mat& cot, const Vec& cot_ld, std::span<double>) const {
    // dy/dx = s / (2 x (1-x));  d logdet / dx = (2x - 1) / (x (1-x))
    Eigen::ArrayXXd x = c.x.array();
    Eigen::ArrayXXd dydx = scale / (2.0 * x * (1.0 - x));
    Eigen::ArrayXXd dld = (2.0 * x - 1.0) / (x * (1.0 - x));
    Mat g = cot(Eigen::all, idx);
    cot(Eigen::all, idx) =
        (g.array() * dydx + dld.colwise() * cot_ld.array()).matrix();
  }

  void jac_transpose_solve(const LogitCache& c, Mat& cot) const {
    Eigen::ArrayXXd x = c.x.array();
    Eigen::ArrayXXd dydx = scale / (2.0 * x * (1.0 - x));
    cot(Eigen::all, idx) = (cot(Eigen::all, idx).array() / dydx).matrix();
  }

  Mat inverse_vjp(const LogitCache& c, const Mat& cot_x, const Vec& cot_ld,
                  std::span<double>) const {
    Eigen::ArrayXXd x = c.x.array();
    Eigen::ArrayXXd dydx = scale / (2.0 * x * (1.0 - x));
    Eigen::ArrayXXd dld = (2.0 * x - 1.0) / (x * (1.0 - x));
    Mat cot_z = cot_x;
    cot_z(Eigen::all, idx) =
        ((cot_x(Eigen::all, idx).array() + dld.colwise() * cot_ld.array()) / dydx).matrix();
    return cot_z;
  }
};

// ---------------------------------------------------------------------------

using Layer = std::variant<AffineCoupling, ScaleBias, Rotation, Squeeze, PiecewiseCdf,
                           LogitTransform>;
using LayerCache =
    std::variant<CouplingCache, SbCache, RotCache, SqueezeCache, CdfCache, LogitCache>;

inline int layer_n_params(const Layer& l) {
  return std::visit([](const auto& x) { return x.n_params(); }, l);
}

inline Mat layer_forward(const Layer& l, const Mat& in, Vec& logdet, LayerCache* cache) {
  return std::visit(
      [&](const auto& x) -> Mat {
        using T = std::decay_t<decltype(x)>;
        using C = typename std::conditional_t<
            std::is_same_v<T, AffineCoupling>, CouplingCache,
            std::conditional_t<std::is_same_v<T, ScaleBias>, SbCache,
            std::conditional_t<std::is_same_v<T, Rotation>, RotCache,
            std::conditional_t<std::is_same_v<T, Squeeze>, SqueezeCache,
            std::conditional_t<std::is_same_v<T, PiecewiseCdf>, CdfCache, LogitCache>>>>>;
        if (cache) {
          *cache = C{};
          return x.forward(in, logdet, &std::get<C>(*cache));
        }
        return x.forward(in, logdet, static_cast<C*>(nullptr));
      },
      l);
}

inline Mat layer_inverse(const Layer& l, const Mat& in, Vec* logdet_fwd = nullptr) {
  return std::visit([&](const auto& x) { return x.inverse(in, logdet_fwd); }, l);
}

// Inverse that also leaves behind the cache a subsequent vjp needs, evaluated
// at the reconstructed input; one network evaluation instead of two.
inline Mat layer_inverse_cached(const Layer& l, const Mat& in, Vec* logdet_fwd,
                                LayerCache& cache) {
  return std::visit(
      [&](const auto& x) -> Mat {
        using T = std::decay_t<decltype(x)>;
        using C = typename std::conditional_t<
            std::is_same_v<T, AffineCoupling>, CouplingCache,
            std::conditional_t<std::is_same_v<T, ScaleBias>, SbCache,
            std::conditional_t<std::is_same_v<T, Rotation>, RotCache,
            std::conditional_t<std::is_same_v<T, Squeeze>, SqueezeCache,
            std::conditional_t<std::is_same_v<T, PiecewiseCdf>, CdfCache, LogitCache>>>>>;
        cache = C{};
        return x.inverse(in, logdet_fwd, &std::get<C>(cache));
      },
      l);
}

// Gradient of <cot, out> + <cot_ld, logdet> w.r.t. layer input (in place) and
// parameters (accumulated into pg).
inline void layer_vjp(const Layer& l, const LayerCache& c, Mat& cot, const Vec& cot_ld,
                      std::span<double> pg) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        using C = typename std::conditional_t<
            std::is_same_v<T, AffineCoupling>, CouplingCache,
            std::conditional_t<std::is_same_v<T, ScaleBias>, SbCache,
            std::conditional_t<std::is_same_v<T, Rotation>, RotCache,
            std::conditional_t<std::is_same_v<T, Squeeze>, SqueezeCache,
            std::conditional_t<std::is_same_v<T, PiecewiseCdf>, CdfCache, LogitCache>>>>>;
        x.vjp(std::get<C>(c), cot, cot_ld, pg);
      },
      l);
}

inline Mat layer_inverse_vjp(const Layer& l, const LayerCache& c, const Mat& cot_x,
                             const Vec& cot_ld, std::span<double> pg) {
  return std::visit(
      [&](const auto& x) -> Mat {
        using T = std::decay_t<decltype(x)>;
        using C = typename std::conditional_t<
            std::is_same_v<T, AffineCoupling>, CouplingCache,
            std::conditional_t<std::is_same_v<T, ScaleBias>, SbCache,
            std::conditional_t<std::is_same_v<T, Rotation>, RotCache,
            std::conditional_t<std::is_same_v<T, Squeeze>, SqueezeCache,
            std::conditional_t<std::is_same_v<T, PiecewiseCdf>, CdfCache, LogitCache>>>>>;
        return x.inverse_vjp(std::get<C>(c), cot_x, cot_ld, pg);
      },
      l);
}

inline void layer_write_params(const Layer& l, std::span<double> out, int& pos) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, AffineCoupling>) coupling_write_params(x, out, pos);
        else if constexpr (std::is_same_v<T, ScaleBias>) scale_bias_write_params(x, out, pos);
        else if constexpr (std::is_same_v<T, Rotation>) rotation_write_params(x, out, pos);
        else if constexpr (std::is_same_v<T, PiecewiseCdf>) cdf_write_params(x, out, pos);
      },
      l);
}

inline void layer_read_params(Layer& l, std::span<const double> in, int& pos) {
  std::visit(
      [&](auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, AffineCoupling>) coupling_read_params(x, in, pos);
        else if constexpr (std::is_same_v<T, ScaleBias>) scale_bias_read_params(x, in, pos);
        else if constexpr (std::is_same_v<T, Rotation>) rotation_read_params(x, in, pos);
        else if constexpr (std::is_same_v<T, PiecewiseCdf>) cdf_read_params(x, in, pos);
      },
      l);
}

}  // namespace krnet
