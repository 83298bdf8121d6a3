#pragma once

#include "krnet/config.hpp"
#include "krnet/io.hpp"

#include <string>

namespace krnet {

// Checkpoint file: one plain-text header line followed by a JSON document.
// Parameters are stored per owner layer as base64 little-endian 64-bit
// floats, so load(save(m)) reproduces the model bit for bit.

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointHeader = "# krnet-checkpoint format-version 1";

struct Checkpoint {
  ExperimentConfig config;
  FlowModel model;
  long epoch = 0;
  RngState rng;
};

inline std::string checkpoint_to_text(const FlowModel& m, const ExperimentConfig& cfg,
                                      long epoch, const RngState& rng) {
  Json j;
  j["format_version"] = kCheckpointVersion;
  j["config"] = experiment_config_to_json(cfg);
  j["config_hash"] = config_hash(cfg);
  j["epoch"] = epoch;
  j["tied_steps"] = m.tied_steps;
  uint64_t spare_bits;
  std::memcpy(&spare_bits, &rng.spare, 8);
  j["rng"] = {{"key", rng.key},
              {"counter", rng.counter},
              {"spare_bits", spare_bits},
              {"has_spare", rng.has_spare}};
  Json sb = Json::array();
  for (const auto& l : m.layers) {
    if (const auto* s = std::get_if<ScaleBias>(&l)) sb.push_back(s->initialized);
  }
  j["sb_initialized"] = sb;
  Json blocks = Json::array();
  for (int i = 0; i < m.n_layers(); ++i) {
    if (m.owner[i] != i) continue;
    const int n = layer_n_params(m.layers[i]);
    if (n == 0) continue;
    Vec v(n);
    int pos = 0;
    layer_write_params(m.layers[i], {v.data(), static_cast<size_t>(n)}, pos);
    blocks.push_back(Json{{"layer", i}, {"data", encode_doubles(v)}});
  }
  j["params"] = blocks;
  return std::string(kCheckpointHeader) + "\n" + j.dump(1) + "\n";
}

inline void save_checkpoint(const std::string& path, const FlowModel& m,
                            const ExperimentConfig& cfg, long epoch, const RngState& rng) {
  write_text_file(path, checkpoint_to_text(m, cfg, epoch, rng));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::string text = read_text_file(path);
  const size_t nl = text.find('\n');
  if (nl == std::string::npos || text.substr(0, nl) != kCheckpointHeader) {
    throw std::runtime_error("checkpoint: missing or unsupported header line");
  }
  Json j = Json::parse(text.substr(nl + 1));
  if (!j.contains("format_version")) {
    throw std::runtime_error("checkpoint: format_version field is mandatory");
  }
  if (j.at("format_version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format version");
  }
  Checkpoint c;
  c.config = parse_experiment_config(j.at("config"));
  c.epoch = j.at("epoch").get<long>();
  const Json& r = j.at("rng");
  c.rng.key = r.at("key").get<uint64_t>();
  c.rng.counter = r.at("counter").get<uint64_t>();
  const uint64_t spare_bits = r.at("spare_bits").get<uint64_t>();
  std::memcpy(&c.rng.spare, &spare_bits, 8);
  c.rng.has_spare = r.at("has_spare").get<bool>();

  RngState build_rng = RngState::seeded(0);  // weights come from the blocks below
  c.model = build_model(c.config.model, build_rng);
  if (j.at("tied_steps").get<bool>()) tie_ode_steps(c.model);

  size_t sbi = 0;
  const Json& sb = j.at("sb_initialized");
  for (auto& l : c.model.layers) {
    if (auto* s = std::get_if<ScaleBias>(&l)) {
      s->initialized = sb.at(sbi++).get<bool>();
    }
  }
  for (const Json& block : j.at("params")) {
    const int i = block.at("layer").get<int>();
    if (i < 0 || i >= c.model.n_layers() || c.model.owner[i] != i) {
      throw std::runtime_error("checkpoint: bad layer index in parameter block");
    }
    Vec v = decode_doubles(block.at("data").get<std::string>());
    if (v.size() != layer_n_params(c.model.layers[i])) {
      throw std::runtime_error("checkpoint: parameter block size mismatch");
    }
    int pos = 0;
    layer_read_params(c.model.layers[i], {v.data(), static_cast<size_t>(v.size())}, pos);
  }
  // propagate owner values into tied copies
  c.model.set_params(c.model.get_params());
  return c;
}

}  // namespace krnet
