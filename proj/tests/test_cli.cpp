#include "krnet/checkpoint.hpp"
#include "krnet/train.hpp"

#include "support/models.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace krnet;
using namespace krnet::testing;
namespace fs = std::filesystem;

namespace {

const fs::path kScratch = fs::temp_directory_path() / "krnet_cli_scratch";

int run_cli(const std::string& args, const std::string& log_name = "out.log") {
  const std::string cmd = std::string(KRNET_CLI_PATH) + " " + args + " > " +
                          (kScratch / log_name).string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string tiny_fit_config(uint64_t seed, const std::string& out_dir) {
  Json j;
  j["variant"] = "KRnet_aug";
  j["model"] = {{"n_data", 1}, {"m_aug", 1},   {"K", 1},      {"block_sizes", {1}},
                {"L", 2},      {"hidden0", 8}, {"width_decay", 1.0}};
  j["target"] = {{"name", "logistic"}, {"scale", 2.0}};
  j["budgets"] = {{"epochs", 3}, {"minibatches", 2}, {"train_size", 1024}, {"valid_size", 0}};
  j["seed"] = seed;
  j["run_count"] = 1;
  j["out_dir"] = out_dir;
  j["eval_every"] = 2;
  return j.dump(1);
}

struct ScratchSetup {
  ScratchSetup() {
    fs::remove_all(kScratch);
    fs::create_directories(kScratch);
  }
};

}  // namespace

TEST_CASE("checkpoint round trip reproduces the density bit for bit", "[cli]") {
  ExperimentConfig cfg;
  cfg.variant = "KRnet_aug_R&N";
  cfg.model = cfg_2d_aug(4, true);
  cfg.target.name = "mixture2d";
  cfg.target.dims = 2;
  cfg.budgets = {2, 4, 2048, 0};
  cfg.seed = 17;
  cfg.run_count = 1;
  cfg.out_dir = "unused";
  cfg.eval_every = 1;
  TrainResult res = train(cfg, TrainMode::kEstimation);  // exercises sb data-init

  fs::create_directories(kScratch);
  const std::string path = (kScratch / "roundtrip.ckpt").string();
  save_checkpoint(path, res.model, cfg, cfg.budgets.epochs, RngState::seeded(cfg.seed));
  Checkpoint ck = load_checkpoint(path);

  RngState rng = RngState::seeded(99);
  Mat y = gauss_sample(rng, 64, 2);
  Mat gamma = gauss_sample(rng, 64, 1);
  Vec a = forward_logdensity(res.model, y, &gamma).logp;
  Vec b = forward_logdensity(ck.model, y, &gamma).logp;
  REQUIRE((a - b).cwiseAbs().maxCoeff() == 0.0);  // bit-identical
  REQUIRE(ck.epoch == cfg.budgets.epochs);
  REQUIRE(config_hash(ck.config) == config_hash(cfg));

  // tied ODE models survive the round trip too
  FlowModel ode = random_model(cfg_ode_1d(2, 4), 18, 0.2);
  tie_ode_steps(ode);
  ExperimentConfig ocfg;
  ocfg.variant = "KRnet_ODE";
  ocfg.model = cfg_ode_1d(2, 4);
  ocfg.target.name = "logistic";
  ocfg.budgets = {1, 1, 128, 0};
  ocfg.seed = 3;
  const std::string opath = (kScratch / "ode.ckpt").string();
  save_checkpoint(opath, ode, ocfg, 0, RngState::seeded(3));
  Checkpoint ock = load_checkpoint(opath);
  REQUIRE(ock.model.tied_steps);
  Mat y1 = gauss_sample(rng, 32, 1);
  Mat g1 = gauss_sample(rng, 32, 1);
  Vec la = forward_logdensity(ode, y1, &g1).logp;
  Vec lb = forward_logdensity(ock.model, y1, &g1).logp;
  REQUIRE((la - lb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoint format validation", "[cli]") {
  fs::create_directories(kScratch);
  const std::string bad = (kScratch / "bad.ckpt").string();
  write_text_file(bad, "not a checkpoint\n{}");
  REQUIRE_THROWS_AS(load_checkpoint(bad), std::runtime_error);

  // format_version is mandatory
  write_text_file(bad, std::string(kCheckpointHeader) + "\n{\"config\": {}}\n");
  REQUIRE_THROWS_AS(load_checkpoint(bad), std::runtime_error);
}

TEST_CASE("config parsing rejects unknown keys and bad variants", "[cli]") {
  Json j = Json::parse(tiny_fit_config(1, "x"));
  REQUIRE_NOTHROW(parse_experiment_config(j));

  Json unknown = j;
  unknown["surprise"] = 1;
  REQUIRE_THROWS_AS(parse_experiment_config(unknown), std::invalid_argument);

  Json nested = j;
  nested["model"]["what"] = 2;
  REQUIRE_THROWS_AS(parse_experiment_config(nested), std::invalid_argument);

  Json badvar = j;
  badvar["variant"] = "KRnet_mega";
  REQUIRE_THROWS_AS(parse_experiment_config(badvar), std::invalid_argument);

  Json inconsistent = j;
  inconsistent["variant"] = "KRnet";  // m_aug=1 contradicts the tag
  REQUIRE_THROWS_AS(parse_experiment_config(inconsistent), std::invalid_argument);

  // canonical round trip: parse(dump(cfg)) == cfg (by hash)
  ExperimentConfig cfg = parse_experiment_config(j);
  ExperimentConfig back = parse_experiment_config(experiment_config_to_json(cfg));
  REQUIRE(config_hash(cfg) == config_hash(back));
}

TEST_CASE("cli fit produces deterministic artifacts", "[cli]") {
  static ScratchSetup setup;
  const fs::path out1 = kScratch / "fit1";
  const fs::path out2 = kScratch / "fit2";
  const fs::path cfg_path = kScratch / "tiny.json";
  write_text_file(cfg_path.string(), tiny_fit_config(5, out1.string()));

  REQUIRE(run_cli("fit --config " + cfg_path.string()) == 0);
  REQUIRE(fs::exists(out1 / "run0" / "history.csv"));
  REQUIRE(fs::exists(out1 / "run0" / "checkpoint.json"));
  REQUIRE(fs::exists(out1 / "run0" / "samples.csv"));
  REQUIRE(fs::exists(out1 / "run0" / "metrics.json"));
  REQUIRE(fs::exists(out1 / "summary.json"));

  // byte-identical history on a rerun with the same seed
  REQUIRE(run_cli("fit --config " + cfg_path.string() + " --out " + out2.string()) == 0);
  REQUIRE(slurp(out1 / "run0" / "history.csv") == slurp(out2 / "run0" / "history.csv"));

  // samples file: provenance line, then a header row, then 10^4 rows
  std::istringstream samples(slurp(out1 / "run0" / "samples.csv"));
  std::string line;
  std::getline(samples, line);
  REQUIRE(line.find("# config_hash=") == 0);
  std::getline(samples, line);
  REQUIRE(line == "y1");
  long rows = 0;
  while (std::getline(samples, line)) {
    if (!line.empty()) ++rows;
  }
  REQUIRE(rows == 10000);

  // history embeds the config hash and seed
  REQUIRE(slurp(out1 / "run0" / "history.csv").find("seed=5") != std::string::npos);
}

TEST_CASE("cli eval consumes checkpoints and refuses mixed hashes", "[cli]") {
  static ScratchSetup setup;
  const fs::path out = kScratch / "eval_run";
  const fs::path cfg_path = kScratch / "eval.json";
  write_text_file(cfg_path.string(), tiny_fit_config(6, out.string()));
  REQUIRE(run_cli("fit --config " + cfg_path.string()) == 0);

  const std::string ckpt = (out / "run0" / "checkpoint.json").string();
  REQUIRE(run_cli("eval --checkpoint " + ckpt + " --n-valid 2000 --out " +
                  (kScratch / "eval.json.out").string()) == 0);
  Json metrics = Json::parse(slurp(kScratch / "eval.json.out"));
  REQUIRE(metrics.contains("delta"));
  REQUIRE(metrics.contains("marginal_max_abs_diff"));

  // a different config (different seed -> different hash) must be refused
  const fs::path other_cfg = kScratch / "other.json";
  write_text_file(other_cfg.string(), tiny_fit_config(7, out.string()));
  REQUIRE(run_cli("eval --checkpoint " + ckpt + " --config " + other_cfg.string()) == 2);
}

TEST_CASE("cli exit codes for usage and numerical failures", "[cli]") {
  static ScratchSetup setup;
  REQUIRE(run_cli("repro --case does-not-exist") == 2);
  REQUIRE(run_cli("fit --config /nonexistent/file.json") == 2);

  // invalid variant tag in the config file
  Json j = Json::parse(tiny_fit_config(1, (kScratch / "x").string()));
  j["variant"] = "bogus";
  const fs::path bad = kScratch / "bad_variant.json";
  write_text_file(bad.string(), j.dump());
  REQUIRE(run_cli("fit --config " + bad.string()) == 2);

  // unknown config key
  Json j2 = Json::parse(tiny_fit_config(1, (kScratch / "x").string()));
  j2["mystery"] = true;
  const fs::path bad2 = kScratch / "bad_key.json";
  write_text_file(bad2.string(), j2.dump());
  REQUIRE(run_cli("fit --config " + bad2.string()) == 2);

  // divergence: an absurdly wide uniform target blows the loss guard
  Json j3 = Json::parse(tiny_fit_config(1, (kScratch / "diverge").string()));
  j3["target"] = {{"name", "uniform"}, {"lo", -1e7}, {"hi", 1e7}};
  const fs::path div = kScratch / "diverge.json";
  write_text_file(div.string(), j3.dump());
  REQUIRE(run_cli("fit --config " + div.string()) == 3);
}

TEST_CASE("cli gradcheck and paramcount report audits", "[cli]") {
  static ScratchSetup setup;
  const fs::path cfg_path = kScratch / "audit.json";
  Json j = Json::parse(tiny_fit_config(8, (kScratch / "audit_out").string()));
  j["model"] = {{"n_data", 2},  {"m_aug", 1},          {"K", 2},
                {"block_sizes", {1, 1}}, {"L", 2},     {"hidden0", 24},
                {"width_decay", 1.0},    {"use_rotation", true}, {"use_cdf_layer", true}};
  j["variant"] = "KRnet_aug_R&N";
  j["target"] = {{"name", "mixture2d"}, {"dims", 2}};
  write_text_file(cfg_path.string(), j.dump());

  REQUIRE(run_cli("gradcheck --config " + cfg_path.string() + " --probes 20", "gc.log") == 0);
  const std::string gc = slurp(kScratch / "gc.log");
  REQUIRE(gc.find("adjoint-vs-backprop") != std::string::npos);
  REQUIRE(gc.find("finite-difference") != std::string::npos);
  REQUIRE(gc.find("FAIL") == std::string::npos);

  REQUIRE(run_cli("paramcount --config " + cfg_path.string(), "pc.log") == 0);
  const std::string pc = slurp(kScratch / "pc.log");
  REQUIRE(pc.find("PASS") != std::string::npos);
  REQUIRE(pc.find("FAIL") == std::string::npos);

  // non-uniform partition: formulas may not apply, enumeration still printed
  Json nu = Json::parse(tiny_fit_config(8, (kScratch / "nu_out").string()));
  nu["variant"] = "KRnet_ODE";
  nu["model"] = {{"n_data", 2}, {"m_aug", 1}, {"K", 2}, {"block_sizes", {1, 1}},
                 {"L", 2},      {"hidden0", 8}, {"ode", {{"n_steps", 5}, {"dt", 0.2}}}};
  nu["target"] = {{"name", "mixture2d"}, {"dims", 2}};
  const fs::path nup = kScratch / "nu.json";
  write_text_file(nup.string(), nu.dump());
  REQUIRE(run_cli("paramcount --config " + nup.string(), "pc2.log") == 0);
  REQUIRE(slurp(kScratch / "pc2.log").find("n/a") != std::string::npos);
}
