#pragma once

// Loss functionals and interpolation rules: the rectified-flow objective,
// annealing reflow with its beta(k) noise-mixing schedule, one-step
// distillation, and the two-step flow-guided regularizer.

#include <cstdint>
#include <vector>

#include "rectflow/tensor.hpp"
#include "rectflow/vector_field.hpp"

namespace rectflow {

struct AnnealSchedule {
  std::uint64_t k_a_step = 3000;

  // beta(k) = 1 - min(1, k / k_a_step): linear ramp from 1 to 0.
  double beta(std::uint64_t k) const {
    if (k_a_step == 0 || k >= k_a_step) return 0.0;
    return 1.0 - static_cast<double>(k) / static_cast<double>(k_a_step);
  }
};

// Uniform draws on the open interval, clamped to [1e-5, 1 - 1e-5].
struct TimeSampler {
  std::uint64_t seed = 0;

  double draw(std::uint64_t index) const;
  std::vector<double> draw_batch(std::size_t n, std::uint64_t start_index) const;
};

// t * x1 + (1 - t) * x0, elementwise.
std::vector<double> interpolate(const std::vector<double>& x0,
                                const std::vector<double>& x1, double t);
// Batch form with one t per row; x0, x1 are [n x d], t has n entries.
Tensor interpolate_batch(const Tensor& x0, const Tensor& x1,
                         const std::vector<double>& t);

// Mean over the batch of per-sample squared distance between the field at
// x_t and the displacement x1 - x0.
Tensor rf_loss(const VectorField& field, const Tensor& x0, const Tensor& x1,
               const Tensor* cond, const std::vector<double>& t);

// sqrt(1 - beta^2) * x1 + beta * x1_prime; the endpoints return the
// corresponding input unchanged so the beta = 0 reduction is exact.
std::vector<double> mix_noise(const std::vector<double>& x1,
                              const std::vector<double>& x1_prime,
                              double beta);
Tensor mix_noise_batch(const Tensor& x1, const Tensor& x1_prime, double beta);

// Reflow on (x0_hat, mixed noise): at beta(k) = 0 this is bitwise the
// deterministic-pair reflow objective, at beta(k) = 1 a random re-pairing
// with fresh noise.
Tensor annealing_reflow_loss(const VectorField& student, const Tensor& x1,
                             const Tensor& x0_hat, const Tensor* cond,
                             const Tensor& x1_prime, std::uint64_t k,
                             const AnnealSchedule& sched,
                             const std::vector<double>& t);

// || (x1 - x0_hat) - v(x1, 1, c) ||^2, batch mean: the one-step endpoint
// map x1 - v(x1, 1, c) against the solver endpoint x0_hat.
Tensor distill_loss(const VectorField& student, const Tensor& x1,
                    const Tensor& x0_hat, const Tensor* cond);

// Two-step teacher composition target; gradients flow only into the
// student (teacher evaluations run detached).
Tensor two_step_loss(const VectorField& teacher, const VectorField& student,
                     const Tensor& x1, const Tensor* cond,
                     const std::vector<double>& t);

struct FgDistillParts {
  Tensor total;
  double distill_value = 0.0;
  double two_step_value = 0.0;
};

// distill + two_step with unit weights; use_two_step = false is the
// naive-distillation ablation arm.
FgDistillParts fg_distill_loss(const VectorField& teacher,
                               const VectorField& student, const Tensor& x1,
                               const Tensor& x0_hat, const Tensor* cond,
                               const std::vector<double>& t,
                               bool use_two_step);

}  // namespace rectflow
