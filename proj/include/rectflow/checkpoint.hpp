#pragma once

// Versioned binary checkpoints: config header plus shape-tagged f64
// parameter blobs. Round trips are bit-exact.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rectflow/adam.hpp"
#include "rectflow/networks.hpp"

namespace rectflow {

// A velocity model plus its (optional) frozen-able condition encoder.
struct ModelBundle {
  std::shared_ptr<VelocityModel> model;
  std::shared_ptr<ConditionEncoder> encoder;  // null for unconditional runs

  bool conditional() const { return encoder != nullptr; }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  // FNV-1a over the architecture line and every parameter byte in order;
  // identifies the exact generator of a pair set.
  std::uint64_t fingerprint() const;

  Tensor encode_tokens(const std::vector<std::vector<int>>& sequences) const;

  ModelBundle deep_copy() const;
};

ModelBundle make_bundle(const VelocityModelConfig& model_cfg,
                        const std::optional<ConditionEncoderConfig>& enc_cfg,
                        std::uint64_t init_seed);

struct Checkpoint {
  std::string stage;
  std::uint64_t iteration = 0;
  std::string config_hash;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;
  ModelBundle bundle;

  // Optimizer state for the parameter subset that the stage trains,
  // keyed by parameter name.
  AdamConfig adam_cfg;
  std::uint64_t adam_step = 0;
  std::vector<std::pair<std::string, std::vector<double>>> adam_m;
  std::vector<std::pair<std::string, std::vector<double>>> adam_v;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace rectflow
