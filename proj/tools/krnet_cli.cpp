// Command-line front end: fit / approx / eval / gradcheck / paramcount /
// repro. Exit codes: 0 success, 2 usage or configuration error, 3 numerical
// failure.

#include "krnet/krnet.hpp"
#include "krnet/repro.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace krnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------ artifacts

void write_history_files(const fs::path& dir, const TrainHistory& h, const std::string& hash,
                         uint64_t seed) {
  std::ostringstream hist, times;
  hist << "# config_hash=" << hash << " seed=" << seed << "\n";
  hist << "epoch,loss,metric\n";
  times << "# config_hash=" << hash << " seed=" << seed << "\n";
  times << "epoch,seconds\n";
  for (const auto& r : h.rows) {
    hist << r.epoch << "," << fmt_double(r.loss) << "," << fmt_double(r.metric) << "\n";
    times << r.epoch << "," << fmt_double(r.seconds) << "\n";
  }
  write_text_file((dir / "history.csv").string(), hist.str());
  write_text_file((dir / "timings.csv").string(), times.str());
}

std::vector<std::string> dim_names(int n, const std::string& prefix) {
  std::vector<std::string> names;
  for (int i = 1; i <= n; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

// share of samples landing nearest to each of the six mixture modes
std::vector<double> mixture_mode_shares(const Mat& samples) {
  std::vector<double> shares(6, 0.0);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    int best = 0;
    double bestd = 1e300;
    for (int c = 1; c <= 6; ++c) {
      const double cx = 5.0 * std::cos(c * M_PI / 3.0);
      const double cy = 5.0 * std::sin(c * M_PI / 3.0);
      const double d = (samples(i, 0) - cx) * (samples(i, 0) - cx) +
                       (samples(i, 1) - cy) * (samples(i, 1) - cy);
      if (d < bestd) {
        bestd = d;
        best = c - 1;
      }
    }
    shares[best] += 1.0;
  }
  for (double& s : shares) s /= static_cast<double>(samples.rows());
  return shares;
}

struct RunOutput {
  double final_loss = 0.0;
  double metric = 0.0;
  bool metric_is_rel_kl = false;
  double hole_violation_fraction = -1.0;
  std::vector<double> mode_shares;
  double seconds = 0.0;
};

RunOutput run_one(const ExperimentConfig& cfg, TrainMode mode, const fs::path& dir, bool svg) {
  fs::create_directories(dir);
  const std::string hash = config_hash(cfg);
  TrainResult res = train(cfg, mode);

  RunOutput out;
  out.final_loss = res.final_loss;
  out.metric = res.final_metric;
  out.metric_is_rel_kl = res.metric_is_rel_kl;
  out.seconds = res.history.rows.empty() ? 0.0 : res.history.rows.back().seconds;

  write_history_files(dir, res.history, hash, cfg.seed);
  save_checkpoint((dir / "checkpoint.json").string(), res.model, cfg, cfg.budgets.epochs,
                  RngState::seeded(cfg.seed));

  RngState srng = RngState::seeded(cfg.seed).split(9);
  SampleResult samples = sample(res.model, srng, 10000);
  write_samples_csv((dir / "samples.csv").string(), samples.y,
                    dim_names(cfg.model.n_data, "y"), hash, cfg.seed);
  if (svg && cfg.model.n_data >= 2) {
    write_svg_scatter((dir / "samples.svg").string(), samples.y, 0, 1,
                      cfg.variant + " samples");
  }

  Json metrics;
  metrics["config_hash"] = hash;
  metrics["seed"] = cfg.seed;
  metrics["variant"] = cfg.variant;
  metrics["grad_path"] = cfg.grad_path;
  metrics["final_loss"] = res.final_loss;
  metrics["metric"] = res.final_metric;
  metrics["metric_kind"] = res.metric_is_rel_kl ? "rel_kl" : "delta";
  if (!res.metric_is_rel_kl) metrics["entropy_ref"] = res.entropy_ref;
  metrics["seconds"] = out.seconds;
  if (cfg.target.name == "logistic_holes") {
    HoleSpec spec{cfg.target.dims, cfg.target.scale, cfg.target.gamma_ell,
                  cfg.target.threshold};
    out.hole_violation_fraction =
        static_cast<double>(count_hole_violations(spec, samples.y)) / 10000.0;
    metrics["hole_violation_fraction"] = out.hole_violation_fraction;
  }
  if (cfg.target.name == "mixture2d") {
    out.mode_shares = mixture_mode_shares(samples.y);
    metrics["mode_shares"] = out.mode_shares;
  }
  write_text_file((dir / "metrics.json").string(), metrics.dump(1) + "\n");
  return out;
}

// runs run_count seeds and writes the per-run artifacts plus a summary
double run_many(const ExperimentConfig& base, TrainMode mode, const fs::path& out_root,
                bool svg, std::vector<RunOutput>* outputs = nullptr) {
  fs::create_directories(out_root);
  write_text_file((out_root / "config.json").string(),
                  experiment_config_to_json(base).dump(1) + "\n");
  Json summary;
  summary["config_hash"] = config_hash(base);
  summary["runs"] = Json::array();
  double mean_metric = 0.0;
  for (int r = 0; r < base.run_count; ++r) {
    ExperimentConfig cfg = base;
    cfg.seed = base.seed + static_cast<uint64_t>(r);
    RunOutput o = run_one(cfg, mode, out_root / ("run" + std::to_string(r)), svg);
    summary["runs"].push_back(Json{{"seed", cfg.seed},
                                   {"metric", o.metric},
                                   {"final_loss", o.final_loss},
                                   {"seconds", o.seconds}});
    mean_metric += o.metric;
    if (outputs) outputs->push_back(o);
    std::printf("  run %d (seed %llu): loss %.6g metric %.6g [%.1fs]\n", r,
                static_cast<unsigned long long>(cfg.seed), o.final_loss, o.metric, o.seconds);
    std::fflush(stdout);
  }
  mean_metric /= base.run_count;
  summary["mean_metric"] = mean_metric;
  write_text_file((out_root / "summary.json").string(), summary.dump(1) + "\n");
  return mean_metric;
}

ExperimentConfig load_config_file(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const std::exception& e) {
    throw UsageError(std::string("config parse error: ") + e.what());
  }
  try {
    return parse_experiment_config(j);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void apply_overrides(ExperimentConfig& cfg, uint64_t seed, bool seed_set,
                     const std::string& out, int runs, const std::string& grad_path) {
  if (seed_set) cfg.seed = seed;
  if (!out.empty()) cfg.out_dir = out;
  if (runs > 0) cfg.run_count = runs;
  if (!grad_path.empty()) {
    if (grad_path != "adjoint" && grad_path != "backprop") {
      throw UsageError("--grad-path must be adjoint or backprop");
    }
    cfg.grad_path = grad_path;
  }
}

// ------------------------------------------------------------------- commands

int cmd_fit(const std::string& config_path, uint64_t seed, bool seed_set,
            const std::string& out, int runs, const std::string& grad_path, bool svg,
            TrainMode mode) {
  ExperimentConfig cfg = load_config_file(config_path);
  apply_overrides(cfg, seed, seed_set, out, runs, grad_path);
  const double mean = run_many(cfg, mode, cfg.out_dir, svg);
  std::printf("mean metric over %d run(s): %.6g\n", cfg.run_count, mean);
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path, long n_valid,
             const std::string& method, const std::string& out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  if (!config_path.empty()) {
    ExperimentConfig other = load_config_file(config_path);
    if (config_hash(other) != config_hash(ck.config)) {
      throw UsageError("config hash mismatch: refusing to compare " + config_hash(other) +
                       " against checkpoint " + config_hash(ck.config));
    }
  }
  TargetDistribution target = prepare_target(ck.config);
  if (target.dims != ck.config.model.n_data) {
    throw UsageError("dimension mismatch between checkpoint model and target");
  }
  const MarginalMethod mm =
      method == "mc" ? MarginalMethod::kMonteCarlo : MarginalMethod::kGammaStar;

  RngState root = RngState::seeded(ck.config.seed);
  RngState vrng = root.split(kStreamEval);
  Mat valid = sample_target(target, vrng, static_cast<int>(n_valid));

  Json out_json;
  out_json["config_hash"] = config_hash(ck.config);
  out_json["seed"] = ck.config.seed;
  out_json["n_valid"] = n_valid;

  if (ck.config.target.name == "logistic_holes") {
    RngState mc_rng = root.split(kStreamModelNoise);
    const double rk = metric_rel_kl(ck.model, valid, target, mm, 100, &mc_rng);
    out_json["rel_kl"] = rk;
    RngState srng = root.split(9);
    SampleResult s = sample(ck.model, srng, 10000);
    HoleSpec spec{ck.config.target.dims, ck.config.target.scale, ck.config.target.gamma_ell,
                  ck.config.target.threshold};
    out_json["hole_violation_fraction"] =
        static_cast<double>(count_hole_violations(spec, s.y)) / 10000.0;
  } else {
    double loss;
    if (ck.config.model.m_aug > 0) {
      RngState grng = root.split(kStreamGamma);
      Mat g = gauss_sample(grng, static_cast<int>(valid.rows()), ck.config.model.m_aug);
      loss = estimation_loss_value(ck.model, valid, &g);
    } else {
      loss = estimation_loss_value(ck.model, valid, nullptr);
    }
    double h;
    if (target.entropy) {
      h = *target.entropy;
    } else {
      RngState erng = root.split(kStreamEntropy);
      h = estimate_entropy_mc(target, erng, 1000000).value;
    }
    out_json["loss"] = loss;
    out_json["entropy_ref"] = h;
    out_json["delta"] = metric_delta(loss, h).value;
  }

  if (ck.config.model.m_aug > 0) {
    // side-by-side marginal recovery on up to 100 validation points
    const int np = static_cast<int>(std::min<long>(100, valid.rows()));
    Mat probe = valid.topRows(np);
    RngState mrng = root.split(kStreamModelNoise + 100);
    Vec lp_mc = marginal_logdensity(ck.model, probe, MarginalMethod::kMonteCarlo, 100, &mrng);
    Vec lp_star = marginal_logdensity(ck.model, probe, MarginalMethod::kGammaStar);
    out_json["marginal_mc_mean"] = lp_mc.mean();
    out_json["marginal_gamma_star_mean"] = lp_star.mean();
    out_json["marginal_max_abs_diff"] = (lp_mc - lp_star).cwiseAbs().maxCoeff();
  }

  const std::string text = out_json.dump(1) + "\n";
  std::fputs(text.c_str(), stdout);
  if (!out.empty()) write_text_file(out, text);
  return kExitOk;
}

int cmd_gradcheck(const std::string& config_path, int probes, double eps) {
  ExperimentConfig cfg = load_config_file(config_path);
  TargetDistribution target = prepare_target(cfg);
  RngState root = RngState::seeded(cfg.seed);
  RngState init_rng = root.split(kStreamInit);
  FlowModel model = build_model(cfg.model, init_rng);
  RngState prng = root.split(11);
  Vec params = model.get_params();
  for (Eigen::Index i = 0; i < params.size(); ++i) params[i] += 0.1 * prng.next_gauss();
  model.set_params(params);

  RngState drng = root.split(kStreamData);
  Mat y = sample_target(target, drng, 64);
  Mat gamma;
  const Mat* gp = nullptr;
  if (cfg.model.m_aug > 0) {
    RngState grng = root.split(kStreamGamma);
    gamma = gauss_sample(grng, 64, cfg.model.m_aug);
    gp = &gamma;
  }

  GradResult adj = adjoint_grad(model, y, gp);
  GradResult bp = backprop_grad(model, y, gp);
  const double disc =
      (adj.grad - bp.grad).cwiseAbs().maxCoeff() / (bp.grad.cwiseAbs().maxCoeff() + 1e-12);
  RngState crng = root.split(12);
  GradCheckResult fd = grad_check(model, y, gp, eps, probes, crng);

  std::printf("adjoint-vs-backprop max relative discrepancy: %.3e  [%s]\n", disc,
              disc <= 1e-9 ? "PASS" : "FAIL");
  std::printf("finite-difference max relative error (%d probes, eps=%.1e): %.3e  [%s]\n",
              probes, eps, fd.max_rel_err, fd.max_rel_err <= 1e-4 ? "PASS" : "FAIL");
  if (fd.no_probes) std::printf("warning: no probes requested\n");
  return kExitOk;
}

int cmd_paramcount(const std::string& config_path) {
  ExperimentConfig cfg = load_config_file(config_path);
  RngState rng = RngState::seeded(cfg.seed);
  FlowModel model = build_model(cfg.model, rng);
  ParamCountReport rep = count_params(model);

  auto row = [](const char* name, long got, long pred, bool valid) {
    if (valid) {
      std::printf("%-12s enumerated %8ld   formula %8ld   [%s]\n", name, got, pred,
                  got == pred ? "PASS" : "FAIL");
    } else {
      std::printf("%-12s enumerated %8ld   formula      n/a\n", name, got);
    }
  };
  row("coupling", rep.coupling, rep.pred_coupling, rep.prediction_valid);
  row("scale_bias", rep.scale_bias, rep.pred_scale_bias, rep.prediction_valid);
  row("rotation", rep.rotation, rep.pred_rotation, rep.prediction_valid);
  row("cdf", rep.cdf, rep.pred_cdf, rep.prediction_valid);
  row("total", rep.total, rep.pred_total, rep.prediction_valid);
  if (rep.uniform_closed_forms) {
    std::printf("rotation closed form (uniform partition): %ld  [%s]\n",
                rep.rotation_closed_form,
                rep.rotation == rep.rotation_closed_form ? "PASS" : "FAIL");
    std::printf("coupling + scale-bias (uniform partition): %ld\n", rep.n_akr_times_l);
  }
  return kExitOk;
}

// ----------------------------------------------------------------- repro cases

struct ReproRow {
  std::string name;
  double value = 0.0;
  double expect = 0.0;
  bool lower_is_pass = true;
  std::string flag;
};

std::string flag_for(double value, double expect) {
  if (value <= expect) return "PASS";
  if (value <= 2.0 * expect) return "TOLERANCE";
  return "FAIL";
}

void emit_report(const fs::path& out_root, std::vector<ReproRow>& rows) {
  std::ostringstream csv;
  csv << "name,value,expected,flag\n";
  std::printf("%-44s %12s %12s  %s\n", "metric", "value", "expected", "flag");
  for (auto& r : rows) {
    r.flag = flag_for(r.value, r.expect);
    std::printf("%-44s %12.5g %12.5g  %s\n", r.name.c_str(), r.value, r.expect,
                r.flag.c_str());
    csv << r.name << "," << fmt_double(r.value) << "," << fmt_double(r.expect) << "," << r.flag
        << "\n";
  }
  write_text_file((out_root / "repro_report.csv").string(), csv.str());
}

int cmd_repro(const std::string& case_id, uint64_t seed, bool seed_set, const std::string& out,
              int runs) {
  const std::vector<std::string> cases = {"1d-logistic",      "1d-lognormal", "1d-uniform",
                                          "1d-uniform-hole",  "2d-mixture-table",
                                          "2d-mixture-approx", "holes-4d",    "holes-8d"};
  auto known = std::find(cases.begin(), cases.end(), case_id) != cases.end();
  if (!known) {
    std::fprintf(stderr, "unknown case '%s'; available cases:\n", case_id.c_str());
    for (const auto& c : cases) std::fprintf(stderr, "  %s\n", c.c_str());
    return kExitUsage;
  }
  const fs::path out_root = out.empty() ? fs::path("runs") / case_id : fs::path(out);
  fs::create_directories(out_root);
  std::vector<ReproRow> rows;

  auto run_case = [&](ExperimentConfig cfg, TrainMode mode, const std::string& label,
                      std::vector<RunOutput>* outs = nullptr) {
    if (seed_set) cfg.seed = seed;
    if (runs > 0) cfg.run_count = runs;
    cfg.out_dir = (out_root / label).string();
    std::printf("[%s] %s\n", case_id.c_str(), label.c_str());
    return run_many(cfg, mode, cfg.out_dir, true, outs);
  };

  if (case_id == "1d-logistic") {
    rows.push_back({"delta (KRnet_aug L=2)",
                    run_case(repro::config_1d("logistic", 2, repro::kEpochs1dLogistic, 7), TrainMode::kEstimation, "aug_L2"),
                    1e-2});
  } else if (case_id == "1d-lognormal") {
    rows.push_back({"delta (KRnet_aug L=4)",
                    run_case(repro::config_1d("lognormal", 4, repro::kEpochs1dLognormal, 7), TrainMode::kEstimation,
                             "aug_L4"),
                    2e-2});
  } else if (case_id == "1d-uniform") {
    rows.push_back({"delta (KRnet_aug L=4)",
                    run_case(repro::config_1d("uniform", 4, repro::kEpochs1dUniform, 7), TrainMode::kEstimation, "aug_L4"),
                    5e-2});
  } else if (case_id == "1d-uniform-hole") {
    rows.push_back({"delta (KRnet_aug L=6, desk budget)",
                    run_case(repro::config_1d("uniform_hole", 6, repro::kEpochs1dUniformHole, 7), TrainMode::kEstimation,
                             "aug_L6"),
                    1e-1});
  } else if (case_id == "2d-mixture-table") {
    // rows per variant, columns per L; the paper-anchored check sits at L=6
    std::map<std::string, std::map<int, double>> table;
    for (const std::string variant : {"KRnet", "KRnet_aug", "KRnet_aug_R&N"}) {
      for (int L : {2, 4, 6}) {
        ExperimentConfig cfg = repro::config_mixture(variant, L, repro::kEpochsMixtureTable, 1);
        cfg.run_count = 3;
        std::string label = variant + "_L" + std::to_string(L);
        for (char& ch : label) {
          if (ch == '&') ch = '_';
        }
        table[variant][L] = run_case(cfg, TrainMode::kEstimation, label);
      }
    }
    std::printf("\n%-16s %10s %10s %10s\n", "variant", "L=2", "L=4", "L=6");
    for (const auto& [variant, by_l] : table) {
      std::printf("%-16s %10.3e %10.3e %10.3e\n", variant.c_str(), by_l.at(2), by_l.at(4),
                  by_l.at(6));
    }
    rows.push_back({"mean delta (KRnet_aug_R&N L=6)", table["KRnet_aug_R&N"][6], 5e-3});
    rows.push_back({"ordering aug_R&N <= aug at L=6",
                    table["KRnet_aug_R&N"][6] <= table["KRnet_aug"][6] ? 0.0 : 1.0, 0.5});
    rows.push_back({"ordering aug <= KRnet at L=6",
                    table["KRnet_aug"][6] <= table["KRnet"][6] ? 0.0 : 1.0, 0.5});
  } else if (case_id == "2d-mixture-approx") {
    ExperimentConfig cfg = repro::config_mixture("KRnet_aug_R&N", 6, repro::kEpochsMixtureApprox, 3);
    std::vector<RunOutput> outs;
    const double kl = run_case(cfg, TrainMode::kApproximation, "aug_RN_L6_approx", &outs);
    rows.push_back({"reverse KL (KRnet_aug_R&N L=6)", kl, 5e-2});
    double min_share = 1.0;
    for (double s : outs.front().mode_shares) min_share = std::min(min_share, s);
    rows.push_back({"min mode share (want >= 0.05)", 0.05 - min_share, 0.0});
  } else if (case_id == "holes-4d") {
    std::map<std::string, double> kl;
    std::map<std::string, long> dofs;
    struct Sweep {
      std::string variant;
      int L;
    };
    for (const Sweep& s : {Sweep{"KRnet_aug", 2}, Sweep{"KRnet_aug", 4}, Sweep{"KRnet", 2},
                           Sweep{"KRnet", 4}, Sweep{"realNVP-equivalent", 6},
                           Sweep{"realNVP-equivalent", 12}}) {
      ExperimentConfig cfg = repro::config_holes(s.variant, 4, s.L, repro::kEpochsHoles4d, 5, 24);
      std::string label = s.variant + "_L" + std::to_string(s.L);
      for (char& ch : label) {
        if (ch == '&') ch = '_';
      }
      RngState r0 = RngState::seeded(0);
      dofs[label] = build_model(cfg.model, r0).n_params;
      std::vector<RunOutput> outs;
      kl[label] = run_case(cfg, TrainMode::kEstimation, label, &outs);
      if (s.variant == "KRnet_aug" && s.L == 4) {
        rows.push_back({"hole violation fraction (aug L=4)",
                        outs.front().hole_violation_fraction, 1e-2});
      }
    }
    std::printf("\n%-26s %10s %12s\n", "model", "DOFs", "rel KL");
    for (const auto& [label, v] : kl) {
      std::printf("%-26s %10ld %12.4g\n", label.c_str(), dofs[label], v);
    }
    rows.push_back({"rel KL (KRnet_aug L=4)", kl["KRnet_aug_L4"], 0.2});
    rows.push_back({"aug below realNVP at matched DOFs",
                    kl["KRnet_aug_L4"] < kl["realNVP-equivalent_L12"] ? 0.0 : 1.0, 0.5});
  } else if (case_id == "holes-8d") {
    ExperimentConfig cfg = repro::config_holes("KRnet_aug", 8, 2, repro::kEpochsHoles8d, 5, 32);
    std::vector<RunOutput> outs;
    const double kl = run_case(cfg, TrainMode::kEstimation, "aug_L2", &outs);
    rows.push_back({"rel KL (KRnet_aug 8d L=2, desk budget)", kl, 0.25});
    rows.push_back({"hole violation fraction", outs.front().hole_violation_fraction, 1e-2});
  }

  emit_report(out_root, rows);
  for (const auto& r : rows) {
    if (r.flag == "FAIL") return kExitNumerical;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KRnet normalizing-flow toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, grad_path, case_id, ckpt_path, method = "gamma_star";
  uint64_t seed = 0;
  bool svg = false;
  int runs = -1, probes = 50;
  long n_valid = 20000;
  double eps = 1e-5;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    if (needs_config) cmd->add_option("--config", config_path, "experiment config JSON")->required();
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--out", out, "override the output directory");
    cmd->add_option("--runs", runs, "override run_count");
    cmd->add_option("--grad-path", grad_path, "adjoint|backprop");
    cmd->add_flag("--svg", svg, "emit an SVG scatter of generated samples");
  };

  CLI::App* fit = app.add_subcommand("fit", "density estimation from target samples");
  add_common(fit, true);
  CLI::App* approx = app.add_subcommand("approx", "density approximation by reverse KL");
  add_common(approx, true);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--config", config_path, "optional config; hash must match the checkpoint");
  eval->add_option("--n-valid", n_valid, "validation sample count");
  eval->add_option("--method", method, "marginal method: mc|gamma_star");
  eval->add_option("--out", out, "also write the metrics JSON here");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--config", config_path)->required();
  gradcheck->add_option("--probes", probes, "number of FD probes");
  gradcheck->add_option("--eps", eps, "FD step");

  CLI::App* paramcount = app.add_subcommand("paramcount", "parameter-count audit");
  paramcount->add_option("--config", config_path)->required();

  CLI::App* repro = app.add_subcommand("repro", "run a pinned benchmark case");
  repro->add_option("--case", case_id, "case id")->required();
  repro->add_option("--seed", seed, "override the case seed");
  repro->add_option("--out", out, "output directory");
  repro->add_option("--runs", runs, "override run count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (fit->parsed()) {
      return cmd_fit(config_path, seed, fit->count("--seed") > 0, out, runs, grad_path, svg,
                     TrainMode::kEstimation);
    }
    if (approx->parsed()) {
      return cmd_fit(config_path, seed, approx->count("--seed") > 0, out, runs, grad_path, svg,
                     TrainMode::kApproximation);
    }
    if (eval->parsed()) return cmd_eval(ckpt_path, config_path, n_valid, method, out);
    if (gradcheck->parsed()) return cmd_gradcheck(config_path, probes, eps);
    if (paramcount->parsed()) return cmd_paramcount(config_path);
    if (repro->parsed()) {
      return cmd_repro(case_id, seed, repro->count("--seed") > 0, out, runs);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const TrainAbort& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  }
  return kExitOk;
}
