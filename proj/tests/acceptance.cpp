// Acceptance suite: runs the numbered criteria end to end at their stated
// tolerances and prints exactly one PASS/FAIL line per criterion.
//
//   krnet_acceptance --criterion N     run one criterion
//   krnet_acceptance --all             run every criterion
//   krnet_acceptance --list            list criteria

#include "krnet/krnet.hpp"
#include "krnet/repro.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace krnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

void note(Outcome& o, bool ok, const std::string& what) {
  if (!o.detail.empty()) o.detail += "; ";
  o.detail += what;
  o.pass = o.pass && ok;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// model zoo shared by the structural criteria
FlowConfig cfg_2d_krnet_rn() {
  FlowConfig c;
  c.n_data = 2; c.m_aug = 0; c.K = 2; c.block_sizes = {1, 1};
  c.L = 4; c.hidden0 = 24; c.width_decay = 0.9;
  c.use_rotation = true; c.use_cdf_layer = true;
  return c;
}
FlowConfig cfg_2d_aug_rn() {
  FlowConfig c = cfg_2d_krnet_rn();
  c.m_aug = 1;
  return c;
}
FlowConfig cfg_1d_aug(int L = 2) {
  FlowConfig c;
  c.n_data = 1; c.m_aug = 1; c.K = 1; c.block_sizes = {1}; c.L = L; c.hidden0 = 24;
  return c;
}
FlowConfig cfg_4d_aug() {
  FlowConfig c;
  c.n_data = 4; c.m_aug = 1; c.K = 4; c.block_sizes = {1, 1, 1, 1};
  c.L = 2; c.hidden0 = 24; c.width_decay = 0.9;
  return c;
}
FlowConfig cfg_real_nvp_4d() {
  FlowConfig c;
  c.n_data = 4; c.m_aug = 0; c.K = 2; c.block_sizes = {2, 2}; c.L = 4; c.hidden0 = 24;
  return c;
}
FlowConfig cfg_ode(int n_data, int L, int steps) {
  FlowConfig c;
  c.n_data = n_data; c.m_aug = 1; c.K = n_data;
  c.block_sizes.assign(n_data, 1);
  c.L = L; c.hidden0 = 24; c.width_decay = 0.9;
  c.ode = OdeSpec{steps, 1.0 / steps};
  return c;
}

std::vector<std::pair<std::string, FlowConfig>> model_zoo() {
  return {{"KRnet_2d_R&N", cfg_2d_krnet_rn()},
          {"KRnet_aug_2d_R&N", cfg_2d_aug_rn()},
          {"KRnet_aug_1d", cfg_1d_aug()},
          {"KRnet_aug_4d", cfg_4d_aug()},
          {"realNVP_4d", cfg_real_nvp_4d()},
          {"KRnet_ODE_1d", cfg_ode(1, 2, 10)},
          {"KRnet_ODE_2d", cfg_ode(2, 2, 20)}};
}

FlowModel perturbed_model(const FlowConfig& cfg, uint64_t seed, double scale = 0.2) {
  RngState rng = RngState::seeded(seed);
  FlowModel m = build_model(cfg, rng);
  RngState prng = rng.split(1);
  Vec p = m.get_params();
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += scale * prng.next_gauss();
  m.set_params(p);
  return m;
}

// ------------------------------------------------------------- criterion 1

Outcome criterion1() {
  Outcome o;
  const int n = 10000;
  RngState rng = RngState::seeded(101);

  {  // discrete and ode couplings
    for (auto form : {CouplingForm::kDiscrete, CouplingForm::kOde}) {
      AffineCoupling cp;
      cp.cond_idx = {0, 1};
      cp.upd_idx = {2, 3};
      cp.net = mlp_init(rng, 2, 24, 2);
      cp.net.w3 = 0.6 * gauss_sample(rng, 4, 24);
      cp.net.b3 = 0.3 * gauss_sample(rng, 4, 1).col(0);
      cp.beta = 0.4 * gauss_sample(rng, 2, 1).col(0);
      cp.form = form;
      cp.step_dt = 0.1;
      if (form == CouplingForm::kOde) cp.alpha_ode = 0.4 * gauss_sample(rng, 2, 1).col(0);
      Mat x = gauss_sample(rng, n, 4);
      Vec ld = Vec::Zero(n);
      Mat z = cp.forward(x, ld, nullptr);
      const double err = (cp.inverse(z) - x).cwiseAbs().maxCoeff();
      note(o, err <= 1e-10, std::string("coupling ") +
                                (form == CouplingForm::kDiscrete ? "discrete " : "ode ") +
                                fmt(err));
    }
  }
  {  // scale-bias
    ScaleBias sb;
    sb.idx = {0, 1, 2};
    sb.a = (0.4 + gauss_sample(rng, 3, 1).array().abs()).matrix().col(0);
    sb.b = gauss_sample(rng, 3, 1).col(0);
    sb.initialized = true;
    Mat x = gauss_sample(rng, n, 3);
    Vec ld = Vec::Zero(n);
    const double err = (sb.inverse(sb.forward(x, ld, nullptr)) - x).cwiseAbs().maxCoeff();
    note(o, err <= 1e-10, "scale-bias " + fmt(err));
  }
  {  // rotation
    Rotation rot = Rotation::identity({0, 1, 2, 3});
    rot.lower += 0.4 * gauss_sample(rng, 4, 4);
    Mat bump = 0.4 * gauss_sample(rng, 4, 4);
    rot.upper += bump.triangularView<Eigen::Upper>();
    Mat x = gauss_sample(rng, n, 4);
    Vec ld = Vec::Zero(n);
    const double err = (rot.inverse(rot.forward(x, ld, nullptr)) - x).cwiseAbs().maxCoeff();
    note(o, err <= 1e-10, "rotation " + fmt(err));
  }
  {  // squeeze partition/restore
    ActiveMask mask;
    mask.active = {true, false, true, false};
    Mat x = gauss_sample(rng, n, 4);
    auto [act, froz] = squeeze_partition(mask, x);
    const double err = (squeeze_restore(mask, act, froz) - x).cwiseAbs().maxCoeff();
    note(o, err == 0.0, "squeeze " + fmt(err));
  }
  {  // nonlinear cdf layer
    PiecewiseCdf cdf = PiecewiseCdf::build({0, 1}, 32, 1.15, 20.0, 1e-10);
    cdf.theta = 0.7 * gauss_sample(rng, 2, 33);
    Mat x = 5.0 * gauss_sample(rng, n, 2);
    Vec ld = Vec::Zero(n);
    const double err = (cdf.inverse(cdf.forward(x, ld, nullptr)) - x).cwiseAbs().maxCoeff();
    note(o, err <= 1e-8, "cdf " + fmt(err));
  }
  {  // logit preprocessing
    LogitTransform lt;
    lt.scale = 2.0;
    lt.idx = {0};
    Mat x = uniform_sample(rng, n, 1, 0.01, 0.99);
    Vec ld = Vec::Zero(n);
    const double err = (lt.inverse(lt.forward(x, ld, nullptr)) - x).cwiseAbs().maxCoeff();
    note(o, err <= 1e-10, "logit " + fmt(err));
  }
  // assembled variants
  uint64_t seed = 111;
  for (auto& [name, cfg] : model_zoo()) {
    FlowModel m = perturbed_model(cfg, seed++, 0.15);
    RngState r2 = RngState::seeded(seed);
    Mat x = gauss_sample(r2, n, cfg.total_dims());
    auto [z, ld] = m.forward(x);
    const double e1 = (m.inverse(z) - x).cwiseAbs().maxCoeff();
    Mat zz = gauss_sample(r2, n, cfg.total_dims());
    auto [z2, ld2] = m.forward(m.inverse(zz));
    const double e2 = (z2 - zz).cwiseAbs().maxCoeff();
    note(o, std::max(e1, e2) <= 1e-8, name + " " + fmt(std::max(e1, e2)));
  }
  return o;
}

// ------------------------------------------------------------- criterion 2

Outcome criterion2() {
  Outcome o;
  uint64_t seed = 202;
  for (auto& [name, cfg] : model_zoo()) {
    if (cfg.total_dims() > 4) continue;
    FlowModel m = perturbed_model(cfg, seed++, 0.2);
    RngState rng = RngState::seeded(seed);
    double worst = 0.0;
    for (int p = 0; p < 100; ++p) {
      Vec x0 = gauss_sample(rng, 1, cfg.total_dims()).row(0).transpose();
      auto f = [&](const Vec& v) -> Vec {
        return m.forward(v.transpose()).first.row(0).transpose();
      };
      Mat jac = finite_diff_jacobian(f, x0);
      auto [z, ld] = m.forward(x0.transpose());
      worst = std::max(worst, std::abs(ld[0] - std::log(std::abs(jac.determinant()))));
    }
    note(o, worst <= 1e-4, name + " " + fmt(worst));
  }
  return o;
}

// ------------------------------------------------------------- criterion 3

double fd_probe_error(FlowModel& m, const Mat& y, const Mat* gamma, const Vec& grad,
                      int n_probes, uint64_t seed) {
  const Vec base = m.get_params();
  RngState rng = RngState::seeded(seed);
  double worst = 0.0;
  Vec v = base;
  for (int p = 0; p < n_probes; ++p) {
    const int j = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(base.size()));
    v[j] = base[j] + 1e-5;
    m.set_params(v);
    const double lp = nll_loss(m, y, gamma);
    v[j] = base[j] - 1e-5;
    m.set_params(v);
    const double lm = nll_loss(m, y, gamma);
    v[j] = base[j];
    const double fd = (lp - lm) / 2e-5;
    worst = std::max(worst, std::abs(fd - grad[j]) /
                                std::max({std::abs(fd), std::abs(grad[j]), 1e-3}));
  }
  m.set_params(base);
  return worst;
}

Outcome check_gradients_for(Outcome o, const std::string& tag, FlowModel& m, const Mat& y,
                            const Mat* gamma, uint64_t seed) {
  GradResult adj = adjoint_grad(m, y, gamma);
  GradResult bp = backprop_grad(m, y, gamma);
  const double disc =
      (adj.grad - bp.grad).cwiseAbs().maxCoeff() / (bp.grad.cwiseAbs().maxCoeff() + 1e-12);
  note(o, disc <= 1e-9, tag + " adj-vs-bp " + fmt(disc));
  const double fd_adj = fd_probe_error(m, y, gamma, adj.grad, 50, seed);
  const double fd_bp = fd_probe_error(m, y, gamma, bp.grad, 50, seed + 1);
  note(o, fd_adj <= 1e-4 && fd_bp <= 1e-4,
       tag + " fd(adj) " + fmt(fd_adj) + " fd(bp) " + fmt(fd_bp));
  return o;
}

Outcome criterion3() {
  Outcome o;
  // before training: random discrete, augmented, and ODE models
  struct Case {
    std::string name;
    FlowConfig cfg;
  };
  for (const Case& c : {Case{"discrete", cfg_2d_krnet_rn()}, Case{"augmented", cfg_2d_aug_rn()},
                        Case{"ode", cfg_ode(2, 2, 20)}}) {
    FlowModel m = perturbed_model(c.cfg, 303, 0.2);
    RngState rng = RngState::seeded(304);
    Mat y = gauss_sample(rng, 24, c.cfg.n_data);
    Mat gamma;
    const Mat* gp = nullptr;
    if (c.cfg.m_aug > 0) {
      gamma = gauss_sample(rng, 24, c.cfg.m_aug);
      gp = &gamma;
    }
    o = check_gradients_for(std::move(o), c.name + "/init", m, y, gp, 305);
  }

  // after training: short desk runs of the same three families
  {
    ExperimentConfig cfg = repro::config_mixture("KRnet_R&N", 2, 30, 9);
    cfg.budgets.train_size = 16000;
    TrainResult r = train(cfg, TrainMode::kEstimation);
    RngState rng = RngState::seeded(306);
    Mat y = sample_target(r.target, rng, 24);
    o = check_gradients_for(std::move(o), "discrete/trained", r.model, y, nullptr, 307);
  }
  {
    ExperimentConfig cfg = repro::config_mixture("KRnet_aug_R&N", 2, 30, 9);
    cfg.budgets.train_size = 16000;
    TrainResult r = train(cfg, TrainMode::kEstimation);
    RngState rng = RngState::seeded(308);
    Mat y = sample_target(r.target, rng, 24);
    Mat gamma = gauss_sample(rng, 24, 1);
    o = check_gradients_for(std::move(o), "augmented/trained", r.model, y, &gamma, 309);
  }
  {
    ExperimentConfig cfg = repro::config_1d("logistic", 2, 60, 9);
    cfg.model.ode = OdeSpec{10, 0.1};
    cfg.variant = "KRnet_ODE";
    cfg.budgets.train_size = 16000;
    TrainResult r = train(cfg, TrainMode::kEstimation);
    RngState rng = RngState::seeded(310);
    Mat y = sample_target(r.target, rng, 24);
    Mat gamma = gauss_sample(rng, 24, 1);
    o = check_gradients_for(std::move(o), "ode/trained", r.model, y, &gamma, 311);
  }
  return o;
}

// ------------------------------------------------------------- criterion 4

Outcome criterion4() {
  Outcome o;
  std::vector<std::pair<std::string, FlowConfig>> cfgs = {
      {"aug_2d_L2_r1", cfg_2d_aug_rn()},
      {"aug_4d_L2", cfg_4d_aug()},
      {"krnet_4d_m2", cfg_real_nvp_4d()},
      {"aug_1d_L2", cfg_1d_aug()}};
  cfgs[0].second.L = 2;
  cfgs[0].second.width_decay = 1.0;
  cfgs[2].second.use_rotation = true;
  cfgs[2].second.use_cdf_layer = true;
  for (auto& [name, cfg] : cfgs) {
    RngState rng = RngState::seeded(401);
    FlowModel m = build_model(cfg, rng);
    ParamCountReport rep = count_params(m);
    const bool eq = rep.prediction_valid && rep.coupling == rep.pred_coupling &&
                    rep.scale_bias == rep.pred_scale_bias &&
                    rep.rotation == rep.pred_rotation && rep.cdf == rep.pred_cdf &&
                    rep.total == rep.pred_total && rep.total == m.n_params;
    note(o, eq, name + " total " + std::to_string(rep.total));
    if (rep.uniform_closed_forms) {
      note(o, rep.rotation == rep.rotation_closed_form,
           name + " rotation closed form " + std::to_string(rep.rotation_closed_form));
    }
  }
  // documented per-pair value at n1 = 3, width 24
  {
    FlowConfig cfg = cfg_2d_aug_rn();
    cfg.L = 2;
    cfg.width_decay = 1.0;
    cfg.use_rotation = false;
    cfg.use_cdf_layer = false;
    RngState rng = RngState::seeded(402);
    FlowModel m = build_model(cfg, rng);
    long stage1 = 0;
    for (int i = 0; i < m.n_layers(); ++i) {
      if (m.stage_of[i] == 1 && m.category[i] == ParamCategory::kCoupling) {
        stage1 += layer_n_params(m.layers[i]);
      }
    }
    note(o, stage1 == 1473, "stage-1 pair 1473");
  }
  return o;
}

// ------------------------------------------------------------- criterion 5

Outcome criterion5() {
  Outcome o;
  uint64_t seed = 505;
  for (auto& [name, steps] :
       std::vector<std::pair<std::string, FlowConfig>>{{"ode_1d_L2", cfg_ode(1, 2, 10)},
                                                       {"ode_2d_L2", cfg_ode(2, 2, 20)},
                                                       {"ode_2d_L4", cfg_ode(2, 4, 20)}}) {
    FlowModel m = perturbed_model(steps, seed++, 0.3);
    RngState rng = RngState::seeded(seed);
    Mat y = gauss_sample(rng, 64, steps.total_dims());
    auto rows = ode_limit_probe(m, y, {0.1, 0.05, 0.025});
    bool ok = true;
    std::string rr;
    for (size_t i = 1; i < rows.size(); ++i) {
      const double ratio = rows[i].diff_norm / rows[i - 1].diff_norm;
      ok = ok && ratio >= 0.35 && ratio <= 0.65;
      rr += (rr.empty() ? "" : ",") + fmt(ratio);
    }
    note(o, ok, name + " ratios " + rr);
  }
  return o;
}

// ------------------------------------------------------------- criterion 6

Outcome criterion6() {
  Outcome o;
  struct Case {
    std::string target;
    int L;
    long epochs;
    double bound;
  };
  for (const Case& c : {Case{"logistic", 2, repro::kEpochs1dLogistic, 1e-2},
                        Case{"lognormal", 4, repro::kEpochs1dLognormal, 2e-2},
                        Case{"uniform", 4, repro::kEpochs1dUniform, 5e-2}}) {
    ExperimentConfig cfg = repro::config_1d(c.target, c.L, c.epochs, 7);
    TrainResult r = train(cfg, TrainMode::kEstimation);
    note(o, r.final_metric <= c.bound,
         c.target + " delta " + fmt(r.final_metric) + " (bound " + fmt(c.bound) + ")");
  }
  return o;
}

// ------------------------------------------------------------- criterion 7

Outcome criterion7() {
  Outcome o;
  std::map<std::string, double> mean_delta;
  for (const std::string variant : {"KRnet_aug_R&N", "KRnet_aug", "KRnet"}) {
    double acc = 0.0;
    for (uint64_t s = 1; s <= 3; ++s) {
      ExperimentConfig cfg = repro::config_mixture(variant, 6, repro::kEpochsMixtureTable, s);
      TrainResult r = train(cfg, TrainMode::kEstimation);
      acc += r.final_metric;
      std::fprintf(stderr, "  [c7] %s seed %llu delta %.4g (%.0fs)\n", variant.c_str(),
                   static_cast<unsigned long long>(s), r.final_metric,
                   r.history.rows.back().seconds);
    }
    mean_delta[variant] = acc / 3.0;
  }
  note(o, mean_delta["KRnet_aug_R&N"] <= 5e-3,
       "mean delta aug_R&N " + fmt(mean_delta["KRnet_aug_R&N"]) + " (bound 5e-3)");
  note(o, mean_delta["KRnet_aug_R&N"] <= mean_delta["KRnet_aug"],
       "aug_R&N " + fmt(mean_delta["KRnet_aug_R&N"]) + " <= aug " +
           fmt(mean_delta["KRnet_aug"]));
  note(o, mean_delta["KRnet_aug"] <= mean_delta["KRnet"],
       "aug " + fmt(mean_delta["KRnet_aug"]) + " <= KRnet " + fmt(mean_delta["KRnet"]));
  return o;
}

// ------------------------------------------------------------- criterion 8

Outcome criterion8() {
  Outcome o;
  ExperimentConfig cfg = repro::config_mixture("KRnet_aug_R&N", 6, repro::kEpochsMixtureApprox, 3);
  TrainResult r = train(cfg, TrainMode::kApproximation);
  note(o, r.final_loss <= 5e-2, "reverse KL " + fmt(r.final_loss) + " (bound 5e-2)");

  RngState srng = RngState::seeded(808);
  SampleResult s = sample(r.model, srng, 10000);
  std::vector<double> share(6, 0.0);
  for (int i = 0; i < 10000; ++i) {
    int best = 0;
    double bd = 1e300;
    for (int c = 1; c <= 6; ++c) {
      const double cx = 5.0 * std::cos(c * M_PI / 3.0);
      const double cy = 5.0 * std::sin(c * M_PI / 3.0);
      const double d = std::pow(s.y(i, 0) - cx, 2) + std::pow(s.y(i, 1) - cy, 2);
      if (d < bd) {
        bd = d;
        best = c - 1;
      }
    }
    share[best] += 1e-4;
  }
  double min_share = 1.0;
  for (double v : share) min_share = std::min(min_share, v);
  note(o, min_share >= 0.05, "min mode share " + fmt(min_share) + " (bound 0.05)");
  return o;
}

// ------------------------------------------------------------- criterion 9

Outcome criterion9() {
  Outcome o;
  ExperimentConfig aug = repro::config_holes("KRnet_aug", 4, 4, repro::kEpochsHoles4d, 5, 24);
  ExperimentConfig nvp =
      repro::config_holes("realNVP-equivalent", 4, 12, repro::kEpochsHoles4d, 5, 24);
  {
    RngState r0 = RngState::seeded(0);
    const long d_aug = build_model(aug.model, r0).n_params;
    const long d_nvp = build_model(nvp.model, r0).n_params;
    note(o, std::abs(d_aug - d_nvp) <= 0.1 * d_nvp,
         "DOFs " + std::to_string(d_aug) + " vs " + std::to_string(d_nvp));
  }
  TrainResult ra = train(aug, TrainMode::kEstimation);
  std::fprintf(stderr, "  [c9] aug rel-KL %.4g (%.0fs)\n", ra.final_metric,
               ra.history.rows.back().seconds);
  TrainResult rn = train(nvp, TrainMode::kEstimation);
  std::fprintf(stderr, "  [c9] realNVP rel-KL %.4g (%.0fs)\n", rn.final_metric,
               rn.history.rows.back().seconds);
  note(o, ra.final_metric < rn.final_metric,
       "rel-KL aug " + fmt(ra.final_metric) + " < realNVP " + fmt(rn.final_metric));

  RngState srng = RngState::seeded(909);
  SampleResult s = sample(ra.model, srng, 10000);
  HoleSpec spec{4, 2.0, 3.0, 7.6};
  const double frac = count_hole_violations(spec, s.y) / 10000.0;
  note(o, frac <= 1e-2, "hole violations " + fmt(frac) + " (bound 0.01)");
  return o;
}

// ------------------------------------------------------------- criterion 10

Outcome criterion10() {
  Outcome o;
  ExperimentConfig cfg = repro::config_1d("logistic", 2, 400, 7);
  TrainResult r = train(cfg, TrainMode::kEstimation);

  RngState trng = RngState::seeded(1010);
  Mat pts = sample_target(r.target, trng, 100);
  Vec star = marginal_logdensity(r.model, pts, MarginalMethod::kGammaStar);
  RngState mrng = RngState::seeded(1011);
  Vec mc = marginal_logdensity(r.model, pts, MarginalMethod::kMonteCarlo, 100, &mrng);
  const double gap = (mc - star).cwiseAbs().maxCoeff();
  note(o, gap <= 0.05, "max |mc - gamma*| " + fmt(gap) + " (bound 0.05)");

  // 1d quadrature of the gamma* marginal
  double integral = 0.0;
  {
    const int n = 1600;
    const double lo = -60.0, hi = 60.0, h = (hi - lo) / n;
    Mat grid(n + 1, 1);
    for (int i = 0; i <= n; ++i) grid(i, 0) = lo + i * h;
    Vec lp = marginal_logdensity(r.model, grid, MarginalMethod::kGammaStar);
    for (int i = 0; i <= n; ++i) {
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      integral += w * std::exp(lp[i]);
    }
    integral *= h / 3.0;
  }
  note(o, std::abs(integral - 1.0) <= 1e-2, "gamma* marginal integral " + fmt(integral));
  return o;
}

// ------------------------------------------------------------- criterion 11

Outcome criterion11() {
  Outcome o;
  const fs::path scratch = fs::temp_directory_path() / "krnet_acceptance_c11";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  auto run = [&](const std::string& out) {
    const std::string cmd = std::string(KRNET_CLI_PATH) + " repro --case 1d-logistic --out " +
                            (scratch / out).string() + " > " + (scratch / (out + ".log")).string() +
                            " 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  const int rc1 = run("a");
  const int rc2 = run("b");
  note(o, rc1 == 0 && rc2 == 0, "repro exit codes " + std::to_string(rc1) + "," + std::to_string(rc2));
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  const std::string h1 = slurp(scratch / "a" / "aug_L2" / "run0" / "history.csv");
  const std::string h2 = slurp(scratch / "b" / "aug_L2" / "run0" / "history.csv");
  note(o, !h1.empty() && h1 == h2, "history files byte-identical");
  return o;
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> fn;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> cs = {
      {1, "invertibility round trips", criterion1},
      {2, "logdet vs numeric jacobian", criterion2},
      {3, "gradient exactness (adjoint, backprop, finite differences)", criterion3},
      {4, "parameter-count audit", criterion4},
      {5, "first-order ode limit", criterion5},
      {6, "1d estimation accuracy", criterion6},
      {7, "2d mixture estimation table", criterion7},
      {8, "2d mixture approximation", criterion8},
      {9, "4d holes estimation vs realNVP baseline", criterion9},
      {10, "marginal recovery consistency", criterion10},
      {11, "deterministic repro histories", criterion11},
  };
  return cs;
}

int run_one(const Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = c.fn();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("CRITERION %2d: %s — %s (%s) [%.1fs]\n", c.id, o.pass ? "PASS" : "FAIL", c.title,
              o.detail.c_str(), secs);
  std::fflush(stdout);
  return o.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  int which = 0;
  bool all = false, list = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      which = std::atoi(argv[++i]);
    } else if (std::strcmp(argv[i], "--all") == 0) {
      all = true;
    } else if (std::strcmp(argv[i], "--list") == 0) {
      list = true;
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N | --all | --list]\n", argv[0]);
      return 2;
    }
  }
  if (list) {
    for (const auto& c : criteria()) std::printf("%2d  %s\n", c.id, c.title);
    return 0;
  }
  int failures = 0;
  if (all || which == 0) {
    for (const auto& c : criteria()) failures += run_one(c);
  } else {
    bool found = false;
    for (const auto& c : criteria()) {
      if (c.id == which) {
        failures += run_one(c);
        found = true;
      }
    }
    if (!found) {
      std::fprintf(stderr, "unknown criterion %d\n", which);
      return 2;
    }
  }
  return failures == 0 ? 0 : 1;
}
