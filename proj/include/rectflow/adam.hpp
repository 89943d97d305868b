#pragma once

#include <cstdint>
#include <vector>

#include "rectflow/tensor.hpp"

namespace rectflow {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. Moment buffers are shape-congruent with their
// parameters; the step counter advances by exactly one per update.
class AdamState {
 public:
  AdamState() = default;
  AdamState(AdamConfig cfg, const std::vector<Tensor>& params);

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return step_; }

  // Applies one update using each parameter's attached gradient buffer
  // (an absent gradient counts as zero), then zeroes the gradients.
  void step(std::vector<Tensor>& params);

  // Explicit-gradient variant; grads[i] may be empty (treated as zero).
  void step(std::vector<Tensor>& params,
            const std::vector<std::vector<double>>& grads);

  // Serialization access for checkpoints.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::uint64_t step, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  void apply(std::vector<Tensor>& params,
             const std::vector<const std::vector<double>*>& grads);

  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace rectflow
