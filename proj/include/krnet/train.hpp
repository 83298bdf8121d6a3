#pragma once

#include "krnet/config.hpp"
#include "krnet/gradients.hpp"
#include "krnet/targets.hpp"

#include <chrono>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace krnet {

// ------------------------------------------------------------------ optimizer

struct AdamState {
  Vec m, v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(int n_params) {
    AdamState s;
    s.m = Vec::Zero(n_params);
    s.v = Vec::Zero(n_params);
    return s;
  }
};

inline void adam_step(AdamState& s, Vec& params, const Vec& grad) {
  if (params.size() != s.m.size() || grad.size() != s.m.size()) {
    throw std::invalid_argument("adam_step: length mismatch");
  }
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params -= (s.lr / c1) * s.m.cwiseQuotient(((s.v / c2).cwiseSqrt().array() + s.eps).matrix());
}

// --------------------------------------------------------------------- losses

enum class GradPath { kAdjoint, kBackprop };

struct LossResult {
  double loss = 0.0;
  Vec grad;
};

// Likelihood-style loss. For augmented models this is
//   mean[ log p_gamma(gamma) - log p_joint(gamma, y) ],
// whose infimum over a perfectly fitted model is the differential entropy of
// the data density; the gamma term carries no parameter dependence.
inline LossResult estimation_loss(const FlowModel& m, const Mat& y, const Mat* gamma,
                                  GradPath path = GradPath::kAdjoint) {
  GradResult g = (path == GradPath::kAdjoint) ? adjoint_grad(m, y, gamma)
                                              : backprop_grad(m, y, gamma);
  double loss = g.loss;
  if (m.cfg.m_aug > 0) loss += std_normal_logpdf(*gamma).mean();
  return {loss, std::move(g.grad)};
}

inline double estimation_loss_value(const FlowModel& m, const Mat& y, const Mat* gamma) {
  double loss = nll_loss(m, y, gamma);
  if (m.cfg.m_aug > 0) loss += std_normal_logpdf(*gamma).mean();
  return loss;
}

// Reverse-KL loss against a (possibly unnormalized) target: minibatches are
// sampled from the model itself, and the gradient flows through both the
// sampling path and the density path.
inline LossResult approximation_loss(const FlowModel& m, RngState& rng, int batch_size,
                                     const TargetDistribution& target) {
  if (target.dims != m.cfg.n_data) {
    throw std::invalid_argument("approximation_loss: target dimension mismatch");
  }
  Mat z = gauss_sample(rng, batch_size, m.total_dims);
  ReverseKlTarget t;
  t.logpdf = target.logpdf;
  t.score = target.score;
  GradResult g = reverse_kl_grad(m, z, t);
  return {g.loss, std::move(g.grad)};
}

// -------------------------------------------------------------------- metrics

struct DeltaMetric {
  double value = 0.0;
  bool negative_entropy = false;
};

// relative error of the converged loss against the differential entropy
inline DeltaMetric metric_delta(double loss, double entropy) {
  if (entropy == 0.0) throw std::invalid_argument("metric_delta: zero entropy");
  return {std::abs(loss - entropy) / entropy, entropy < 0.0};
}

// KL(p_ref || p_model) / h(p_ref), approximated on a validation set drawn
// from p_ref; augmented models are scored through their data marginal.
inline double metric_rel_kl(const FlowModel& m, const Mat& validation,
                            const TargetDistribution& target,
                            MarginalMethod method = MarginalMethod::kGammaStar,
                            int mc_samples = 100, RngState* rng = nullptr) {
  if (!target.normalized) {
    throw std::invalid_argument("metric_rel_kl: target lacks a normalizer estimate");
  }
  if (!target.entropy) {
    throw std::invalid_argument("metric_rel_kl: target lacks an entropy estimate");
  }
  Vec lp_ref = target.logpdf(validation);
  Vec lp_model;
  if (m.cfg.m_aug > 0) {
    lp_model = marginal_logdensity(m, validation, method, mc_samples, rng);
  } else {
    lp_model = forward_logdensity(m, validation).logp;
  }
  return (lp_ref - lp_model).mean() / *target.entropy;
}

// ------------------------------------------------------------------- training

struct HistoryRow {
  long epoch = 0;
  double loss = 0.0;
  double metric = 0.0;   // delta or relative KL, re-evaluated every eval_every
  double seconds = 0.0;  // wall time; kept out of the deterministic exports
};

struct TrainHistory {
  std::vector<HistoryRow> rows;
};

struct TrainAbort : std::runtime_error {
  TrainHistory history;
  TrainAbort(const std::string& msg, TrainHistory h)
      : std::runtime_error(msg), history(std::move(h)) {}
};

enum class TrainMode { kEstimation, kApproximation };

struct TrainResult {
  TrainHistory history;
  FlowModel model;
  TargetDistribution target;  // with normalizer / entropy attachments
  double final_loss = 0.0;
  double final_metric = 0.0;
  double entropy_ref = 0.0;  // h used by the delta metric (or MC estimate)
  bool metric_is_rel_kl = false;
  Mat validation;  // rel-KL validation set (empty otherwise)
};

namespace detail {

inline std::vector<int> shuffled_indices(int n, RngState& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

}  // namespace detail

// Fixed substream labels so data, initialization, gamma draws, shuffling and
// evaluation never interleave.
enum RngStream : uint64_t {
  kStreamData = 1,
  kStreamInit = 2,
  kStreamGamma = 3,
  kStreamShuffle = 4,
  kStreamEval = 5,
  kStreamModelNoise = 6,
  kStreamNormalizer = 7,
  kStreamEntropy = 8,
};

// Prepares the target with normalizer / entropy attachments so that metrics
// are well defined; deterministic given the seed.
inline TargetDistribution prepare_target(const ExperimentConfig& cfg) {
  TargetDistribution target = make_target_from_config(cfg.target);
  RngState root = RngState::seeded(cfg.seed);
  if (cfg.target.name == "logistic_holes") {
    HoleSpec spec{cfg.target.dims, cfg.target.scale, cfg.target.gamma_ell, cfg.target.threshold};
    RngState nrng = root.split(kStreamNormalizer);
    attach_normalizer(target, estimate_normalizer(spec, nrng, cfg.target.normalizer_mc));
    RngState erng = root.split(kStreamEntropy);
    target.entropy = estimate_entropy_mc(target, erng, 200000).value;
  }
  return target;
}

inline TrainResult train(const ExperimentConfig& cfg, TrainMode mode) {
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  RngState root = RngState::seeded(cfg.seed);
  RngState data_rng = root.split(kStreamData);
  RngState init_rng = root.split(kStreamInit);
  RngState gamma_rng = root.split(kStreamGamma);
  RngState shuffle_rng = root.split(kStreamShuffle);
  RngState eval_rng = root.split(kStreamEval);
  RngState noise_rng = root.split(kStreamModelNoise);

  TrainResult res;
  res.target = prepare_target(cfg);
  const GradPath path =
      cfg.grad_path == "backprop" ? GradPath::kBackprop : GradPath::kAdjoint;
  const bool aug = cfg.model.m_aug > 0;
  const int mdim = cfg.model.m_aug;

  // metric plumbing: entropy-bearing targets report delta, hole targets the
  // relative KL on a held-out validation set
  res.metric_is_rel_kl = (cfg.target.name == "logistic_holes");
  if (res.metric_is_rel_kl) {
    res.validation = sample_target(res.target, eval_rng, static_cast<int>(cfg.budgets.valid_size));
  } else if (res.target.entropy) {
    res.entropy_ref = *res.target.entropy;
  } else {
    RngState erng = root.split(kStreamEntropy);
    res.entropy_ref = estimate_entropy_mc(res.target, erng, 1000000).value;
  }

  // training data (estimation mode only)
  Mat train_y;
  if (mode == TrainMode::kEstimation) {
    if (cfg.budgets.train_size < 1) throw std::invalid_argument("train: empty training set");
    train_y = sample_target(res.target, data_rng, static_cast<int>(cfg.budgets.train_size));
  }

  const bool data_init = cfg.budgets.epochs > 0;
  res.model = build_model(cfg.model, init_rng, data_init);

  const long n_mb = cfg.budgets.minibatches;
  const long n_train = cfg.budgets.train_size;
  const int batch_size = static_cast<int>(n_train / n_mb);

  if (data_init && cfg.budgets.epochs > 0) {
    // data-dependent scale-bias initialization from the first minibatch,
    // before any gradient is taken
    if (mode == TrainMode::kEstimation) {
      Mat head_y = train_y.topRows(std::min<long>(batch_size, train_y.rows()));
      Mat full;
      if (aug) {
        RngState g0 = gamma_rng;  // peek; the epoch loop re-draws its own
        Mat head_g = gauss_sample(g0, static_cast<int>(head_y.rows()), mdim);
        full = assemble_full(res.model, head_y, &head_g);
      } else {
        full = assemble_full(res.model, head_y, nullptr);
      }
      res.model.initialize_scale_bias(full);
    } else {
      RngState n0 = noise_rng;
      Mat z = gauss_sample(n0, std::max(batch_size, 256), res.model.total_dims);
      res.model.initialize_scale_bias(res.model.inverse(z));
    }
  }

  AdamState adam = AdamState::init(res.model.n_params);
  Vec params = res.model.get_params();

  auto evaluate_metric = [&]() -> double {
    if (mode == TrainMode::kApproximation) return res.final_loss;
    if (res.metric_is_rel_kl) {
      return metric_rel_kl(res.model, res.validation, res.target);
    }
    RngState er = eval_rng;  // fixed probe stream, fresh gammas per call site
    double loss_full;
    if (aug) {
      Mat g = gauss_sample(er, static_cast<int>(train_y.rows()), mdim);
      loss_full = estimation_loss_value(res.model, train_y, &g);
    } else {
      loss_full = estimation_loss_value(res.model, train_y, nullptr);
    }
    return metric_delta(loss_full, res.entropy_ref).value;
  };

  for (long epoch = 1; epoch <= cfg.budgets.epochs; ++epoch) {
    double epoch_loss = 0.0;
    long seen = 0;
    if (mode == TrainMode::kEstimation) {
      std::vector<int> order = detail::shuffled_indices(static_cast<int>(n_train), shuffle_rng);
      Mat gamma_epoch;
      if (aug && !cfg.gamma_per_minibatch) {
        gamma_epoch = gauss_sample(gamma_rng, static_cast<int>(n_train), mdim);
      }
      for (long mb = 0; mb < n_mb; ++mb) {
        const long lo = mb * batch_size;
        const long hi = (mb == n_mb - 1) ? n_train : lo + batch_size;
        std::vector<int> rows(order.begin() + lo, order.begin() + hi);
        Mat yb = train_y(rows, Eigen::all);
        LossResult lr;
        if (aug) {
          Mat gb = cfg.gamma_per_minibatch
                       ? gauss_sample(gamma_rng, static_cast<int>(rows.size()), mdim)
                       : Mat(gamma_epoch(rows, Eigen::all));
          lr = estimation_loss(res.model, yb, &gb, path);
        } else {
          lr = estimation_loss(res.model, yb, nullptr, path);
        }
        adam_step(adam, params, lr.grad);
        res.model.set_params(params);
        epoch_loss += lr.loss * static_cast<double>(hi - lo);
        seen += hi - lo;
      }
    } else {
      const int approx_batch = batch_size > 0 ? batch_size : 1024;
      for (long mb = 0; mb < n_mb; ++mb) {
        LossResult lr = approximation_loss(res.model, noise_rng, approx_batch, res.target);
        adam_step(adam, params, lr.grad);
        res.model.set_params(params);
        epoch_loss += lr.loss * approx_batch;
        seen += approx_batch;
      }
    }
    epoch_loss /= static_cast<double>(seen);
    res.final_loss = epoch_loss;

    if (!std::isfinite(epoch_loss) || epoch_loss > 1e6) {
      HistoryRow row{epoch, epoch_loss, std::numeric_limits<double>::quiet_NaN(), elapsed()};
      res.history.rows.push_back(row);
      throw TrainAbort("training diverged at epoch " + std::to_string(epoch), res.history);
    }

    const bool eval_now = (epoch % cfg.eval_every == 0) || epoch == cfg.budgets.epochs;
    if (eval_now) res.final_metric = evaluate_metric();
    res.history.rows.push_back({epoch, epoch_loss, res.final_metric, elapsed()});
  }

  if (cfg.budgets.epochs == 0) {
    res.final_loss = 0.0;
    res.final_metric = 0.0;
  } else {
    res.final_metric = evaluate_metric();
    if (!res.history.rows.empty()) res.history.rows.back().metric = res.final_metric;
  }
  return res;
}

}  // namespace krnet
