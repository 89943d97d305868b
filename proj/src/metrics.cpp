#include "rectflow/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "rectflow/errors.hpp"
#include "rectflow/rng.hpp"
#include "rectflow/toy_data.hpp"

namespace rectflow {

namespace {

constexpr double kRankTol = 1e-10;

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
// eigenvalues; d stays small here (data dimension), so plain sweeps are
// accurate and fast.
std::vector<double> sym_eigen(std::vector<double> m, std::size_t d,
                              std::vector<double>* vectors = nullptr) {
  std::vector<double> v;
  if (vectors) {
    v.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  }
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (std::size_t p = 0; p < d; ++p) {
      diag += std::abs(m[p * d + p]);
      for (std::size_t q = p + 1; q < d; ++q) off += std::abs(m[p * d + q]);
    }
    if (off <= 1e-15 * std::max(1.0, diag)) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = m[p * d + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = m[p * d + p], aqq = m[q * d + q];
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double mkp = m[k * d + p], mkq = m[k * d + q];
          m[k * d + p] = c * mkp - s * mkq;
          m[k * d + q] = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double mpk = m[p * d + k], mqk = m[q * d + k];
          m[p * d + k] = c * mpk - s * mqk;
          m[q * d + k] = s * mpk + c * mqk;
        }
        if (vectors) {
          for (std::size_t k = 0; k < d; ++k) {
            const double vkp = v[k * d + p], vkq = v[k * d + q];
            v[k * d + p] = c * vkp - s * vkq;
            v[k * d + q] = s * vkp + c * vkq;
          }
        }
      }
    }
  }
  std::vector<double> eig(d);
  for (std::size_t i = 0; i < d; ++i) eig[i] = m[i * d + i];
  if (vectors) *vectors = std::move(v);
  return eig;
}

std::vector<double> mat_mul(const std::vector<double>& a,
                            const std::vector<double>& b, std::size_t d) {
  std::vector<double> c(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double aik = a[i * d + k];
      for (std::size_t j = 0; j < d; ++j) c[i * d + j] += aik * b[k * d + j];
    }
  }
  return c;
}

// V diag(sqrt(max(eig, 0))) V^T for a symmetric PSD matrix.
std::vector<double> sqrt_psd(const std::vector<double>& m, std::size_t d,
                             bool* degenerate) {
  std::vector<double> vecs;
  auto eig = sym_eigen(m, d, &vecs);
  for (double& e : eig) {
    if (degenerate && e < kRankTol) *degenerate = true;
    e = e > 0.0 ? std::sqrt(e) : 0.0;
  }
  std::vector<double> out(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        acc += vecs[i * d + k] * eig[k] * vecs[j * d + k];
      }
      out[i * d + j] = acc;
    }
  }
  return out;
}

}  // namespace

GaussianMoments fit_moments(const std::vector<double>& rows, std::size_t n,
                            std::size_t dim) {
  if (n < dim + 1) {
    throw ContractError("fit_moments: need at least dim + 1 = " +
                        std::to_string(dim + 1) + " samples, got " +
                        std::to_string(n));
  }
  if (rows.size() != n * dim) {
    throw ContractError("fit_moments: row buffer size mismatch");
  }
  GaussianMoments g;
  g.dim = dim;
  g.mean.assign(dim, 0.0);
  g.cov.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dim; ++k) g.mean[k] += rows[i * dim + k];
  }
  for (double& m : g.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < dim; ++p) {
      const double dp = rows[i * dim + p] - g.mean[p];
      for (std::size_t q = p; q < dim; ++q) {
        g.cov[p * dim + q] += dp * (rows[i * dim + q] - g.mean[q]);
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(n - 1);
  for (std::size_t p = 0; p < dim; ++p) {
    for (std::size_t q = p; q < dim; ++q) {
      g.cov[p * dim + q] *= inv;
      g.cov[q * dim + p] = g.cov[p * dim + q];
    }
  }
  return g;
}

double frechet_from_moments(const GaussianMoments& a, const GaussianMoments& b,
                            bool* degenerate) {
  if (a.dim != b.dim) {
    throw ContractError("frechet: dimensions " + std::to_string(a.dim) +
                        " and " + std::to_string(b.dim) + " differ");
  }
  const std::size_t d = a.dim;
  bool degen = false;
  double dmu2 = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double dm = a.mean[k] - b.mean[k];
    dmu2 += dm * dm;
  }
  double tr_a = 0.0, tr_b = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    tr_a += a.cov[k * d + k];
    tr_b += b.cov[k * d + k];
  }

  const auto sa_half = sqrt_psd(a.cov, d, &degen);
  {
    // Flag rank deficiency of b as well; its eigenvalues are otherwise
    // only seen inside the product.
    auto eb = sym_eigen(b.cov, d);
    for (double e : eb) {
      if (e < kRankTol) degen = true;
    }
  }
  auto prod = mat_mul(mat_mul(sa_half, b.cov, d), sa_half, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const double s = 0.5 * (prod[i * d + j] + prod[j * d + i]);
      prod[i * d + j] = prod[j * d + i] = s;
    }
  }
  auto eig = sym_eigen(prod, d);
  double tr_sqrt = 0.0;
  for (double e : eig) tr_sqrt += e > 0.0 ? std::sqrt(e) : 0.0;

  if (degenerate) *degenerate = degen;
  return std::max(0.0, dmu2 + tr_a + tr_b - 2.0 * tr_sqrt);
}

double frechet_gauss_distance(const std::vector<double>& a, std::size_t na,
                              const std::vector<double>& b, std::size_t nb,
                              std::size_t dim, bool* degenerate) {
  return frechet_from_moments(fit_moments(a, na, dim),
                              fit_moments(b, nb, dim), degenerate);
}

double sliced_wasserstein(const std::vector<double>& a, std::size_t na,
                          const std::vector<double>& b, std::size_t nb,
                          std::size_t dim, std::size_t n_projections,
                          std::uint64_t seed) {
  if (n_projections < 16) {
    throw ContractError("sliced_wasserstein: need at least 16 projections");
  }
  if (na == 0 || nb == 0) {
    throw ContractError("sliced_wasserstein: empty batch");
  }
  std::vector<double> pa(na), pb(nb), dir(dim);
  double total = 0.0;
  for (std::size_t p = 0; p < n_projections; ++p) {
    rng::Prng prng(seed, rng::kProjection, p);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& x : dir) {
        x = prng.gauss();
        norm += x * x;
      }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (auto& x : dir) x /= norm;

    for (std::size_t i = 0; i < na; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < dim; ++k) acc += a[i * dim + k] * dir[k];
      pa[i] = acc;
    }
    for (std::size_t i = 0; i < nb; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < dim; ++k) acc += b[i * dim + k] * dir[k];
      pb[i] = acc;
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());

    double w2_sq = 0.0;
    if (na == nb) {
      for (std::size_t i = 0; i < na; ++i) {
        const double diff = pa[i] - pb[i];
        w2_sq += diff * diff;
      }
      w2_sq /= static_cast<double>(na);
    } else {
      const std::size_t m = std::max(na, nb);
      for (std::size_t i = 0; i < m; ++i) {
        const double q = (static_cast<double>(i) + 0.5) / m;
        const double qa = pa[std::min(na - 1, static_cast<std::size_t>(
                                                  q * static_cast<double>(na)))];
        const double qb = pb[std::min(nb - 1, static_cast<std::size_t>(
                                                  q * static_cast<double>(nb)))];
        const double diff = qa - qb;
        w2_sq += diff * diff;
      }
      w2_sq /= static_cast<double>(m);
    }
    total += std::sqrt(w2_sq);
  }
  return total / static_cast<double>(n_projections);
}

EfficiencyProbe efficiency_probe(const VectorField& field,
                                 const SolverConfig& cfg, std::size_t n,
                                 std::size_t dim, std::uint64_t seed,
                                 const Tensor* cond_rows) {
  if (n == 0) throw ContractError("efficiency_probe: n must be at least 1");
  EfficiencyProbe probe;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x1 = sample_noise_point(seed, i, dim);
    Tensor cond_row;
    const Tensor* cond = nullptr;
    if (cond_rows != nullptr) {
      cond_row = slice(*cond_rows, 0, i % cond_rows->shape()[0], 1);
      cond = &cond_row;
    }
    const auto report = solve(field, x1, cond, cfg);
    probe.mean_nfe += static_cast<double>(report.nfe);
    probe.time_per_sample += report.wall_time;
  }
  probe.mean_nfe /= static_cast<double>(n);
  probe.time_per_sample /= static_cast<double>(n);
  return probe;
}

nlohmann::json MetricsReport::deterministic_json() const {
  nlohmann::json j{
      {"fd_analog", frechet_gauss},
      {"sliced_wasserstein", sliced_w},
      {"n_samples", n_samples},
      {"degenerate_cov", degenerate_cov},
      {"config", config_echo},
  };
  if (has_nfe()) j["mean_nfe"] = mean_nfe;
  if (has_straightness()) j["straightness"] = straightness;
  return j;
}

nlohmann::json MetricsReport::to_json() const {
  auto j = deterministic_json();
  j["timing"] = {{"time_per_sample", time_per_sample}};
  return j;
}

}  // namespace rectflow
