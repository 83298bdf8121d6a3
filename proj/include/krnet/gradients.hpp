#pragma once

#include "krnet/flow.hpp"

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace krnet {

// Two independent routes to the same gradient:
//   backprop_grad  keeps every layer cache from one forward pass and sweeps
//                  the cotangents backward through them;
//   adjoint_grad   stores only the terminal state and reconstructs each layer
//                  input by exact inversion, re-running one local forward per
//                  layer, so the retained state is O(batch x dims) no matter
//                  how deep the stack is.
// Both average the per-sample gradients of -log p over the batch.

struct GradResult {
  double loss = 0.0;
  Vec grad;
};

struct AdjointStats {
  size_t retained_doubles = 0;          // state carried across the backward sweep
  size_t peak_layer_cache_doubles = 0;  // transient, single-layer cache
};

namespace detail {

inline int worker_count() {
  static const int n = [] {
    if (const char* env = std::getenv("KRNET_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }();
  return n;
}

inline constexpr int kShardRows = 2048;  // fixed so reductions are reproducible

// Runs fn(row_begin, row_end, grad_shard) over fixed-size row shards, possibly
// in parallel, then reduces losses and gradients in shard order.
template <class Fn>
std::pair<double, Vec> sharded_accumulate(int rows, int n_params, Fn&& fn) {
  const int n_shards = (rows + kShardRows - 1) / kShardRows;
  std::vector<Vec> grads(n_shards);
  std::vector<double> losses(n_shards, 0.0);
  auto run_shard = [&](int s) {
    const int lo = s * kShardRows;
    const int hi = std::min(rows, lo + kShardRows);
    grads[s] = Vec::Zero(n_params);
    losses[s] = fn(lo, hi, grads[s]);
  };
  const int workers = std::min(worker_count(), n_shards);
  if (workers <= 1) {
    for (int s = 0; s < n_shards; ++s) run_shard(s);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int s = next.fetch_add(1); s < n_shards; s = next.fetch_add(1)) run_shard(s);
      });
    }
    for (auto& t : pool) t.join();
  }
  double loss = 0.0;
  Vec grad = Vec::Zero(n_params);
  for (int s = 0; s < n_shards; ++s) {  // fixed reduction order
    loss += losses[s];
    grad += grads[s];
  }
  return {loss, std::move(grad)};
}

inline size_t cache_doubles(const LayerCache& c) {
  return std::visit(
      [](const auto& x) -> size_t {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, CouplingCache>) {
          return x.mlp.x.size() + x.mlp.a1.size() + x.mlp.a2.size() + x.tanh_s.size() +
                 x.tanh_t.size() + x.w.size() + x.upd_in.size();
        } else if constexpr (std::is_same_v<T, SbCache>) {
          return x.x.size();
        } else if constexpr (std::is_same_v<T, RotCache>) {
          return x.x.size() + x.xu.size();
        } else if constexpr (std::is_same_v<T, CdfCache>) {
          return x.tab.p.size() + x.tab.c.size() + x.elem.size() + x.xi.size() + x.dens.size();
        } else if constexpr (std::is_same_v<T, LogitCache>) {
          return x.x.size();
        } else {
          return 0;
        }
      },
      c);
}

inline void check_grad_inputs(const FlowModel& m, const Mat& full) {
  if (full.rows() == 0) throw std::invalid_argument("gradient: empty batch");
  if (!m.scale_bias_ready()) {
    throw std::runtime_error("gradient: scale-bias layers not initialized");
  }
  check_finite(full, "gradient input batch");
}

}  // namespace detail

// Mean negative log-density without any gradient bookkeeping.
inline double nll_loss(const FlowModel& m, const Mat& y, const Mat* gamma = nullptr) {
  Vec lp = forward_logdensity(m, y, gamma).logp;
  return -lp.mean();
}

inline GradResult backprop_grad(const FlowModel& m, const Mat& y, const Mat* gamma = nullptr,
                                Mat* grad_input = nullptr) {
  Mat full = assemble_full(m, y, gamma);
  detail::check_grad_inputs(m, full);
  const int rows = static_cast<int>(full.rows());
  if (grad_input) grad_input->resize(rows, full.cols());

  auto [loss_sum, grad] = detail::sharded_accumulate(
      rows, m.n_params, [&](int lo, int hi, Vec& g) -> double {
        const int nb = hi - lo;
        auto fwd = m.forward_cached(full.middleRows(lo, nb));
        const Vec logp = std_normal_logpdf(fwd.z) + fwd.logdet;
        Mat cot = fwd.z;  // d(-log p_Z)/dz, per sample
        const Vec cot_ld = Vec::Constant(nb, -1.0);
        for (int i = m.n_layers() - 1; i >= 0; --i) {
          layer_vjp(m.layers[i], fwd.caches[i], cot, cot_ld, m.grad_slice(g, i));
        }
        if (grad_input) grad_input->middleRows(lo, nb) = cot;
        return -logp.sum();
      });
  const double b = static_cast<double>(rows);
  GradResult r;
  r.loss = loss_sum / b;
  r.grad = grad / b;
  if (grad_input) *grad_input /= b;
  if (!std::isfinite(r.loss)) throw std::runtime_error("backprop_grad: non-finite loss");
  return r;
}

// Lemma-style backward recursion: lambda starts at z (the gradient of the
// negative Gaussian log-prior), states are reconstructed by exact inverses,
// and each layer re-runs its own forward to expose the local products.
inline GradResult adjoint_grad(const FlowModel& m, const Mat& y, const Mat* gamma = nullptr,
                               Mat* grad_input = nullptr, AdjointStats* stats = nullptr) {
  Mat full = assemble_full(m, y, gamma);
  detail::check_grad_inputs(m, full);
  const int rows = static_cast<int>(full.rows());
  if (grad_input) grad_input->resize(rows, full.cols());
  std::atomic<size_t> peak_cache{0};

  auto [loss_sum, grad] = detail::sharded_accumulate(
      rows, m.n_params, [&](int lo, int hi, Vec& g) -> double {
        const int nb = hi - lo;
        auto [z, ld] = m.forward(full.middleRows(lo, nb));
        const double nll = -(std_normal_logpdf(z) + ld).sum();
        Mat state = std::move(z);
        Mat lambda = state;
        const Vec cot_ld = Vec::Constant(nb, -1.0);
        for (int i = m.n_layers() - 1; i >= 0; --i) {
          LayerCache cache;
          state = layer_inverse_cached(m.layers[i], state, nullptr, cache);
          const size_t cd = detail::cache_doubles(cache);
          size_t prev = peak_cache.load();
          while (prev < cd && !peak_cache.compare_exchange_weak(prev, cd)) {
          }
          layer_vjp(m.layers[i], cache, lambda, cot_ld, m.grad_slice(g, i));
        }
        if (grad_input) grad_input->middleRows(lo, nb) = lambda;
        return nll;
      });
  const double b = static_cast<double>(rows);
  GradResult r;
  r.loss = loss_sum / b;
  r.grad = grad / b;
  if (grad_input) *grad_input /= b;
  if (stats) {
    stats->retained_doubles = 2 * static_cast<size_t>(std::min(rows, detail::kShardRows)) *
                              static_cast<size_t>(full.cols());
    stats->peak_layer_cache_doubles = peak_cache.load();
  }
  if (!std::isfinite(r.loss)) throw std::runtime_error("adjoint_grad: non-finite loss");
  return r;
}

// ---------------------------------------------------------------------------
// Reparameterized reverse-KL gradient: y = f^{-1}(z) for fixed prior noise z,
// loss = mean[ log p_model(y) - log p_target(y) ], with the model term
// written as log p_Z(z) + sum of forward logdets at the recovered states.
// The backward sweep runs in forward-layer order through the inverse graph.

struct ReverseKlTarget {
  std::function<Vec(const Mat&)> logpdf;  // on the data columns, may be unnormalized
  std::function<Mat(const Mat&)> score;   // gradient of logpdf (0 where flat/sentinel)
};

inline GradResult reverse_kl_grad(const FlowModel& m, const Mat& z, const ReverseKlTarget& t,
                                  Vec* per_sample_loss = nullptr) {
  if (z.rows() == 0) throw std::invalid_argument("reverse_kl_grad: empty batch");
  if (!m.scale_bias_ready()) {
    throw std::runtime_error("reverse_kl_grad: scale-bias layers not initialized");
  }
  const int rows = static_cast<int>(z.rows());
  if (per_sample_loss) per_sample_loss->resize(rows);
  std::atomic<long> sentinel_hits{0};

  auto [loss_sum, grad] = detail::sharded_accumulate(
      rows, m.n_params, [&](int lo, int hi, Vec& g) -> double {
        const int nb = hi - lo;
        auto trace = m.inverse_trace(z.middleRows(lo, nb));
        const Mat& x0 = trace.states[0];
        Mat y = x0.rightCols(m.cfg.n_data);
        Vec lp_t = t.logpdf(y);
        for (Eigen::Index i = 0; i < lp_t.size(); ++i) {
          if (lp_t[i] <= -1e29) sentinel_hits.fetch_add(1);
        }
        Vec loss = std_normal_logpdf(z.middleRows(lo, nb)) + trace.logdet - lp_t;
        if (m.cfg.m_aug > 0) {
          loss -= std_normal_logpdf(x0.leftCols(m.cfg.m_aug));
        }
        if (per_sample_loss) per_sample_loss->segment(lo, nb) = loss;

        Mat cot = Mat::Zero(nb, m.total_dims);
        cot.rightCols(m.cfg.n_data) = -t.score(y);
        if (m.cfg.m_aug > 0) {
          cot.leftCols(m.cfg.m_aug) = x0.leftCols(m.cfg.m_aug);  // -d log p_gamma
        }
        const Vec cot_ld = Vec::Constant(nb, 1.0);
        Vec dummy = Vec::Zero(nb);
        for (int i = 0; i < m.n_layers(); ++i) {
          LayerCache cache;
          dummy.setZero();
          layer_forward(m.layers[i], trace.states[i], dummy, &cache);
          cot = layer_inverse_vjp(m.layers[i], cache, cot, cot_ld, m.grad_slice(g, i));
        }
        return loss.sum();
      });
  if (sentinel_hits.load() == rows) {
    throw std::runtime_error("reverse_kl_grad: every model sample hit the -inf target region");
  }
  const double b = static_cast<double>(rows);
  GradResult r;
  r.loss = loss_sum / b;
  r.grad = grad / b;
  if (!std::isfinite(r.loss)) throw std::runtime_error("reverse_kl_grad: non-finite loss");
  return r;
}

// ---------------------------------------------------------------------------
// Finite-difference audit of the adjoint gradient on randomly chosen
// parameters. The relative error uses a 1e-3 floor so probes with near-zero
// gradient are judged against difference noise, not against zero.

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool no_probes = false;
};

inline GradCheckResult grad_check(FlowModel& m, const Mat& y, const Mat* gamma, double eps,
                                  int n_probes, RngState& rng) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  GradCheckResult res;
  if (n_probes <= 0) {
    res.no_probes = true;
    return res;
  }
  const GradResult gr = adjoint_grad(m, y, gamma);
  const Vec base = m.get_params();
  Vec params = base;
  for (int p = 0; p < n_probes; ++p) {
    const int j = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(m.n_params));
    params[j] = base[j] + eps;
    m.set_params(params);
    const double lp = nll_loss(m, y, gamma);
    params[j] = base[j] - eps;
    m.set_params(params);
    const double lm = nll_loss(m, y, gamma);
    params[j] = base[j];
    const double fd = (lp - lm) / (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(gr.grad[j]), 1e-3});
    res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - gr.grad[j]) / denom);
  }
  m.set_params(base);
  return res;
}

}  // namespace krnet
