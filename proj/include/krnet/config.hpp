#pragma once

#include "krnet/flow.hpp"
#include "krnet/io.hpp"
#include "krnet/targets.hpp"

#include <json.hpp>

#include <optional>
#include <set>
#include <string>

namespace krnet {

using Json = nlohmann::json;

// A fully explicit description of one training run. Parsing is strict:
// unknown keys are rejected, and the canonical re-serialization spells out
// every field so a saved run has no hidden defaults.

struct TargetConfig {
  std::string name;
  int dims = 1;
  double scale = 2.0;        // logistic targets
  double lo = -1.0, hi = 1.0;  // uniform
  double gamma_ell = 3.0;    // hole ellipse aspect
  double threshold = 7.6;    // hole cutoff C
  long normalizer_mc = 400000;
};

struct Budgets {
  long epochs = 0;
  long minibatches = 1;
  long train_size = 0;
  long valid_size = 0;
};

struct ExperimentConfig {
  std::string variant;  // KRnet | KRnet_aug | KRnet_R&N | KRnet_aug_R&N |
                        // KRnet_ODE | realNVP-equivalent
  FlowConfig model;
  TargetConfig target;
  Budgets budgets;
  uint64_t seed = 1;
  int run_count = 1;
  std::string out_dir = "runs";
  long eval_every = 50;
  std::string grad_path = "adjoint";  // adjoint | backprop
  bool gamma_per_minibatch = false;
};

namespace detail {

inline void require_keys(const Json& j, const std::set<std::string>& allowed,
                         const std::set<std::string>& required, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
    }
  }
  for (const auto& k : required) {
    if (!j.contains(k)) {
      throw std::invalid_argument("config: missing key '" + k + "' in " + where);
    }
  }
}

}  // namespace detail

inline FlowConfig parse_flow_config(const Json& j) {
  detail::require_keys(j,
                       {"n_data", "m_aug", "K", "block_sizes", "L", "hidden0", "width_decay",
                        "use_rotation", "use_cdf_layer", "alpha", "head_init_scale", "cdf",
                        "ode"},
                       {"n_data", "m_aug", "K", "block_sizes", "L", "hidden0"}, "model");
  FlowConfig c;
  c.n_data = j.at("n_data").get<int>();
  c.m_aug = j.at("m_aug").get<int>();
  c.K = j.at("K").get<int>();
  c.block_sizes = j.at("block_sizes").get<std::vector<int>>();
  c.L = j.at("L").get<int>();
  c.hidden0 = j.at("hidden0").get<int>();
  c.width_decay = j.value("width_decay", 1.0);
  c.use_rotation = j.value("use_rotation", false);
  c.use_cdf_layer = j.value("use_cdf_layer", false);
  c.alpha = j.value("alpha", 0.6);
  c.head_init_scale = j.value("head_init_scale", 0.0);
  if (j.contains("cdf")) {
    const Json& cj = j.at("cdf");
    detail::require_keys(cj, {"a", "n_elements", "ratio", "tail_slope", "include_aug"}, {},
                         "model.cdf");
    c.cdf.a = cj.value("a", 20.0);
    c.cdf.n_elements = cj.value("n_elements", 32);
    c.cdf.ratio = cj.value("ratio", 1.15);
    c.cdf.tail_slope = cj.value("tail_slope", 1e-10);
    c.cdf.include_aug = cj.value("include_aug", false);
  }
  if (j.contains("ode") && !j.at("ode").is_null()) {
    const Json& oj = j.at("ode");
    detail::require_keys(oj, {"n_steps", "dt"}, {"n_steps", "dt"}, "model.ode");
    c.ode = OdeSpec{oj.at("n_steps").get<int>(), oj.at("dt").get<double>()};
  }
  c.validate();
  return c;
}

inline Json flow_config_to_json(const FlowConfig& c) {
  Json j;
  j["n_data"] = c.n_data;
  j["m_aug"] = c.m_aug;
  j["K"] = c.K;
  j["block_sizes"] = c.block_sizes;
  j["L"] = c.L;
  j["hidden0"] = c.hidden0;
  j["width_decay"] = c.width_decay;
  j["use_rotation"] = c.use_rotation;
  j["use_cdf_layer"] = c.use_cdf_layer;
  j["alpha"] = c.alpha;
  j["head_init_scale"] = c.head_init_scale;
  j["cdf"] = {{"a", c.cdf.a},
              {"n_elements", c.cdf.n_elements},
              {"ratio", c.cdf.ratio},
              {"tail_slope", c.cdf.tail_slope},
              {"include_aug", c.cdf.include_aug}};
  if (c.ode) {
    j["ode"] = {{"n_steps", c.ode->n_steps}, {"dt", c.ode->dt}};
  } else {
    j["ode"] = nullptr;
  }
  return j;
}

inline TargetConfig parse_target_config(const Json& j) {
  detail::require_keys(
      j, {"name", "dims", "scale", "lo", "hi", "gamma_ell", "threshold", "normalizer_mc"},
      {"name"}, "target");
  TargetConfig t;
  t.name = j.at("name").get<std::string>();
  t.dims = j.value("dims", 1);
  t.scale = j.value("scale", 2.0);
  t.lo = j.value("lo", -1.0);
  t.hi = j.value("hi", 1.0);
  t.gamma_ell = j.value("gamma_ell", 3.0);
  t.threshold = j.value("threshold", 7.6);
  t.normalizer_mc = j.value("normalizer_mc", 400000L);
  return t;
}

inline Json target_config_to_json(const TargetConfig& t) {
  return Json{{"name", t.name},         {"dims", t.dims},
              {"scale", t.scale},       {"lo", t.lo},
              {"hi", t.hi},             {"gamma_ell", t.gamma_ell},
              {"threshold", t.threshold}, {"normalizer_mc", t.normalizer_mc}};
}

inline TargetDistribution make_target_from_config(const TargetConfig& t) {
  if (t.name == "gaussian") return make_gaussian(t.dims);
  if (t.name == "logistic") return make_logistic(t.scale, t.dims);
  if (t.name == "lognormal") return make_lognormal();
  if (t.name == "uniform") return make_uniform(t.lo, t.hi);
  if (t.name == "uniform_hole") return make_uniform_hole();
  if (t.name == "mixture2d") return make_mixture2d();
  if (t.name == "logistic_holes") {
    HoleSpec spec;
    spec.dims = t.dims;
    spec.scale = t.scale;
    spec.gamma_ell = t.gamma_ell;
    spec.threshold = t.threshold;
    return make_logistic_holes(spec);
  }
  throw std::invalid_argument("config: unknown target '" + t.name + "'");
}

inline void validate_variant(const ExperimentConfig& c) {
  const std::string& v = c.variant;
  const FlowConfig& m = c.model;
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("config: variant '" + v + "' " + why);
  };
  if (v == "KRnet") {
    if (m.m_aug != 0 || m.use_rotation || m.use_cdf_layer || m.ode) {
      fail("requires m_aug=0 and no rotation/cdf/ode");
    }
  } else if (v == "KRnet_aug") {
    if (m.m_aug == 0 || m.use_rotation || m.use_cdf_layer || m.ode) {
      fail("requires m_aug>0 and no rotation/cdf/ode");
    }
  } else if (v == "KRnet_R&N") {
    if (m.m_aug != 0 || !m.use_rotation || !m.use_cdf_layer || m.ode) {
      fail("requires m_aug=0 with rotation and cdf layers");
    }
  } else if (v == "KRnet_aug_R&N") {
    if (m.m_aug == 0 || !m.use_rotation || !m.use_cdf_layer || m.ode) {
      fail("requires m_aug>0 with rotation and cdf layers");
    }
  } else if (v == "KRnet_ODE") {
    if (!m.ode) fail("requires the ode block");
  } else if (v == "realNVP-equivalent") {
    if (m.m_aug != 0 || m.K != 2 || m.use_rotation || m.use_cdf_layer || m.ode) {
      fail("requires m_aug=0, K=2, and no rotation/cdf/ode");
    }
  } else {
    fail("is not a known variant tag");
  }
}

inline ExperimentConfig parse_experiment_config(const Json& j) {
  detail::require_keys(j,
                       {"variant", "model", "target", "budgets", "seed", "run_count", "out_dir",
                        "eval_every", "grad_path", "gamma_per_minibatch"},
                       {"variant", "model", "target", "budgets", "seed", "run_count", "out_dir"},
                       "experiment");
  ExperimentConfig c;
  c.variant = j.at("variant").get<std::string>();
  c.model = parse_flow_config(j.at("model"));
  c.target = parse_target_config(j.at("target"));
  const Json& b = j.at("budgets");
  detail::require_keys(b, {"epochs", "minibatches", "train_size", "valid_size"},
                       {"epochs", "minibatches", "train_size", "valid_size"}, "budgets");
  c.budgets.epochs = b.at("epochs").get<long>();
  c.budgets.minibatches = b.at("minibatches").get<long>();
  c.budgets.train_size = b.at("train_size").get<long>();
  c.budgets.valid_size = b.at("valid_size").get<long>();
  c.seed = j.at("seed").get<uint64_t>();
  c.run_count = j.at("run_count").get<int>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.eval_every = j.value("eval_every", 50L);
  c.grad_path = j.value("grad_path", std::string("adjoint"));
  c.gamma_per_minibatch = j.value("gamma_per_minibatch", false);
  if (c.grad_path != "adjoint" && c.grad_path != "backprop") {
    throw std::invalid_argument("config: grad_path must be adjoint or backprop");
  }
  if (c.budgets.minibatches < 1 || c.budgets.epochs < 0 || c.budgets.train_size < 0) {
    throw std::invalid_argument("config: invalid budgets");
  }
  if (c.run_count < 1) throw std::invalid_argument("config: run_count must be >= 1");
  validate_variant(c);
  return c;
}

inline ExperimentConfig parse_experiment_config_text(const std::string& text) {
  Json j = Json::parse(text);
  return parse_experiment_config(j);
}

inline Json experiment_config_to_json(const ExperimentConfig& c) {
  Json j;
  j["variant"] = c.variant;
  j["model"] = flow_config_to_json(c.model);
  j["target"] = target_config_to_json(c.target);
  j["budgets"] = {{"epochs", c.budgets.epochs},
                  {"minibatches", c.budgets.minibatches},
                  {"train_size", c.budgets.train_size},
                  {"valid_size", c.budgets.valid_size}};
  j["seed"] = c.seed;
  j["run_count"] = c.run_count;
  j["out_dir"] = c.out_dir;
  j["eval_every"] = c.eval_every;
  j["grad_path"] = c.grad_path;
  j["gamma_per_minibatch"] = c.gamma_per_minibatch;
  return j;
}

// Canonical dump (nlohmann objects iterate in sorted key order). The output
// directory is provenance, not experiment identity, so it is excluded.
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = experiment_config_to_json(c);
  j.erase("out_dir");
  return hash_hex(fnv1a64(j.dump()));
}

}  // namespace krnet
