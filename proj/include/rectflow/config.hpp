#pragma once

// Run configuration: one strict JSON document drives every stage. Unknown
// keys are rejected with their full path; every run writes the resolved
// document (defaults expanded) next to its outputs.

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "rectflow/networks.hpp"
#include "rectflow/ode_solvers.hpp"
#include "rectflow/toy_data.hpp"

namespace rectflow {

struct TrainStageParams {
  std::uint64_t iterations = 0;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t log_interval = 100;
};

struct Seeds {
  std::uint64_t data = 1;
  std::uint64_t init = 2;
  std::uint64_t train = 3;
  std::uint64_t pairs = 4;
  std::uint64_t eval = 5;
};

struct MetricsParams {
  std::size_t n_samples = 4096;
  std::size_t sw_projections = 256;
  std::size_t straightness_probe_steps = 64;
};

struct RunConfig {
  Distribution dataset;

  std::size_t teacher_width = 64;
  std::size_t student_width = 24;
  std::size_t depth = 4;
  std::size_t time_embed_dim = 16;
  double time_max_period = 100.0;
  std::optional<ConditionEncoderConfig> encoder;

  TrainStageParams teacher{4000, 256, 1e-3, 100};
  std::size_t pair_count = 50000;
  TrainStageParams anneal{4000, 256, 5e-4, 100};
  std::uint64_t k_a_step = 3000;
  TrainStageParams distill{2000, 256, 2.5e-4, 100};
  bool distill_two_step = true;

  SolverConfig solver;
  MetricsParams metrics;
  Seeds seeds;
  std::string output_dir = "out";
  std::size_t threads = 1;

  VelocityModelConfig teacher_model_config() const;
  VelocityModelConfig student_model_config() const;
  std::size_t condition_dim() const;

  void validate() const;
  nlohmann::json to_json() const;
  std::string hash() const;  // hex FNV over the resolved document

  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_config_file(const std::string& path);

// "stages.teacher.iterations=100"-style override; the value text is parsed
// as JSON (bare words fall back to strings). Flags win over the file.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace rectflow
