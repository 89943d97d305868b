#pragma once

// Distribution-quality and efficiency metrics: Frechet distance between
// Gaussian moment fits (the FD-analog), sliced Wasserstein distance, and
// per-sample NFE / wall-time probes.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "rectflow/ode_solvers.hpp"
#include "rectflow/vector_field.hpp"

namespace rectflow {

struct GaussianMoments {
  std::size_t dim = 0;
  std::vector<double> mean;
  std::vector<double> cov;  // dim x dim, row-major
};

// Empirical mean and unbiased covariance; needs n >= dim + 1 rows.
GaussianMoments fit_moments(const std::vector<double>& rows, std::size_t n,
                            std::size_t dim);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the matrix square
// root taken through the eigendecomposition of the symmetrized product and
// negative eigenvalues clipped at zero. Sets *degenerate when either
// covariance is rank-deficient below the 1e-10 clipping tolerance.
double frechet_from_moments(const GaussianMoments& a, const GaussianMoments& b,
                            bool* degenerate = nullptr);

double frechet_gauss_distance(const std::vector<double>& a, std::size_t na,
                              const std::vector<double>& b, std::size_t nb,
                              std::size_t dim, bool* degenerate = nullptr);

// Mean over random unit directions of the 1-D 2-Wasserstein distance
// between the projected empirical distributions (sorted-sample quadrature).
double sliced_wasserstein(const std::vector<double>& a, std::size_t na,
                          const std::vector<double>& b, std::size_t nb,
                          std::size_t dim, std::size_t n_projections,
                          std::uint64_t seed);

struct EfficiencyProbe {
  double mean_nfe = 0.0;
  double time_per_sample = 0.0;  // seconds
};

EfficiencyProbe efficiency_probe(const VectorField& field,
                                 const SolverConfig& cfg, std::size_t n,
                                 std::size_t dim, std::uint64_t seed,
                                 const Tensor* cond_rows = nullptr);

struct MetricsReport {
  double frechet_gauss = 0.0;
  double sliced_w = 0.0;
  double straightness = std::numeric_limits<double>::quiet_NaN();
  double mean_nfe = std::numeric_limits<double>::quiet_NaN();
  double time_per_sample = 0.0;
  std::size_t n_samples = 0;
  bool degenerate_cov = false;
  nlohmann::json config_echo;

  bool has_straightness() const { return straightness == straightness; }
  bool has_nfe() const { return mean_nfe == mean_nfe; }

  nlohmann::json to_json() const;
  // Wall-clock timing excluded; this is the reproducibility contract.
  nlohmann::json deterministic_json() const;
};

}  // namespace rectflow
