#pragma once

// Numerical integration of dx/dt = v(x, t, c). Generation runs from t = 1
// (noise) down to t = 0 (data). Fixed-step Euler and adaptive
// Dormand-Prince 5(4) with PI step control; every vector-field evaluation
// is counted toward NFE.

#include <cstdint>
#include <utility>
#include <vector>

#include "rectflow/tensor.hpp"
#include "rectflow/vector_field.hpp"

namespace rectflow {

enum class SolverKind { euler, rk45 };

SolverKind solver_kind_from_string(const std::string& s);
std::string to_string(SolverKind kind);

struct SolverConfig {
  SolverKind kind = SolverKind::rk45;
  std::size_t euler_steps = 32;  // euler only
  double rtol = 1e-5;            // rk45 only
  double atol = 1e-5;            // rk45 only
  std::size_t max_nfe = 10000;
  bool record_trajectory = false;

  void validate() const;
};

struct SolverReport {
  std::vector<double> endpoint;
  std::size_t nfe = 0;
  std::size_t accepted = 0;  // rk45 accepted steps
  std::size_t rejected = 0;  // rk45 rejected attempts
  double wall_time = 0.0;    // seconds
  std::vector<std::pair<double, std::vector<double>>> trajectory;
};

// N uniform steps of size 1/N from t = 1 down to t = 0; exact for
// constant fields, nfe == N.
SolverReport euler_solve(const VectorField& field,
                         const std::vector<double>& x1, const Tensor* cond,
                         const SolverConfig& cfg);

// Dormand-Prince 5(4) from t = 1 to t = 0. FSAL: nfe = 1 + 6 * (accepted +
// rejected). The initial step is one tenth of the span (no field
// evaluations spent on step-size selection); the final step is clipped to
// land exactly on t = 0.
SolverReport rk45_solve(const VectorField& field, const std::vector<double>& x1,
                        const Tensor* cond, const SolverConfig& cfg);

// General-direction variant (used by the forward-reintegration diagnostic).
SolverReport rk45_solve_between(const VectorField& field,
                                const std::vector<double>& x_start,
                                const Tensor* cond, const SolverConfig& cfg,
                                double t_from, double t_to);

SolverReport solve(const VectorField& field, const std::vector<double>& x1,
                   const Tensor* cond, const SolverConfig& cfg);

// Batched fixed-step Euler on [n x d] rows sharing the time grid.
// Optionally exposes the per-step velocities (straightness probe).
Tensor euler_solve_batch(const VectorField& field, const Tensor& x1,
                         const Tensor* cond, std::size_t steps,
                         std::vector<std::vector<double>>* velocities = nullptr);

// Mean over the batch of the quadrature of || v(x_t, t, c) - (x1 - x0_end) ||^2
// along a fine Euler trajectory; zero iff the trajectory is a straight
// line traversed at constant velocity.
double straightness(const VectorField& field, const Tensor& x1,
                    const Tensor* cond, std::size_t probe_steps);

}  // namespace rectflow
