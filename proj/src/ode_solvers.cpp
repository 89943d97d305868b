#include "rectflow/ode_solvers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "rectflow/errors.hpp"

namespace rectflow {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double kC2 = 1.0 / 5.0, kC3 = 3.0 / 10.0, kC4 = 4.0 / 5.0,
                 kC5 = 8.0 / 9.0;
constexpr double kA21 = 1.0 / 5.0;
constexpr double kA31 = 3.0 / 40.0, kA32 = 9.0 / 40.0;
constexpr double kA41 = 44.0 / 45.0, kA42 = -56.0 / 15.0, kA43 = 32.0 / 9.0;
constexpr double kA51 = 19372.0 / 6561.0, kA52 = -25360.0 / 2187.0,
                 kA53 = 64448.0 / 6561.0, kA54 = -212.0 / 729.0;
constexpr double kA61 = 9017.0 / 3168.0, kA62 = -355.0 / 33.0,
                 kA63 = 46732.0 / 5247.0, kA64 = 49.0 / 176.0,
                 kA65 = -5103.0 / 18656.0;
constexpr double kB1 = 35.0 / 384.0, kB3 = 500.0 / 1113.0, kB4 = 125.0 / 192.0,
                 kB5 = -2187.0 / 6784.0, kB6 = 11.0 / 84.0;
constexpr double kE1 = 71.0 / 57600.0, kE3 = -71.0 / 16695.0,
                 kE4 = 71.0 / 1920.0, kE5 = -17253.0 / 339200.0,
                 kE6 = 22.0 / 525.0, kE7 = -1.0 / 40.0;

// PI step-size controller constants.
constexpr double kSafe = 0.9, kBetaPi = 0.04;
constexpr double kExpo1 = 0.2 - kBetaPi * 0.75;
constexpr double kFacc1 = 5.0;   // max shrink: h / 5
constexpr double kFacc2 = 0.1;   // max growth: h * 10
constexpr double kMinStep = 1e-10;

std::vector<double> eval_field(const VectorField& field,
                               const std::vector<double>& x, double t,
                               const Tensor* cond) {
  NoGradGuard no_grad;
  auto xt = Tensor::from_values({1, x.size()}, std::vector<double>(x));
  return field.velocity(xt, {t}, cond).values();
}

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

SolverKind solver_kind_from_string(const std::string& s) {
  if (s == "euler") return SolverKind::euler;
  if (s == "rk45") return SolverKind::rk45;
  throw ConfigError("solver.kind: unknown solver '" + s + "'");
}

std::string to_string(SolverKind kind) {
  return kind == SolverKind::euler ? "euler" : "rk45";
}

void SolverConfig::validate() const {
  if (kind == SolverKind::euler && euler_steps == 0) {
    throw ConfigError("solver.euler_steps must be at least 1");
  }
  if (kind == SolverKind::rk45 && (!(rtol > 0.0) || !(atol > 0.0))) {
    throw ConfigError("solver.rtol and solver.atol must be positive");
  }
  if (max_nfe < 2) throw ConfigError("solver.max_nfe must be at least 2");
}

SolverReport euler_solve(const VectorField& field,
                         const std::vector<double>& x1, const Tensor* cond,
                         const SolverConfig& cfg) {
  cfg.validate();
  if (cfg.kind != SolverKind::euler) {
    throw ContractError("euler_solve: config.kind is not euler");
  }
  const auto start = Clock::now();
  const std::size_t n = cfg.euler_steps;
  const double dt = 1.0 / static_cast<double>(n);

  SolverReport report;
  std::vector<double> x = x1;
  if (cfg.record_trajectory) report.trajectory.emplace_back(1.0, x);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 1.0 - static_cast<double>(i) * dt;
    std::vector<double> v;
    try {
      v = eval_field(field, x, t, cond);
    } catch (const NumericFault& e) {
      throw NumericFault("euler_solve: step " + std::to_string(i) + ": " +
                         e.what());
    }
    for (std::size_t d = 0; d < x.size(); ++d) x[d] -= dt * v[d];
    if (cfg.record_trajectory) {
      report.trajectory.emplace_back(
          i + 1 == n ? 0.0 : 1.0 - static_cast<double>(i + 1) * dt, x);
    }
  }
  report.endpoint = std::move(x);
  report.nfe = n;
  report.wall_time = seconds_since(start);
  return report;
}

SolverReport rk45_solve_between(const VectorField& field,
                                const std::vector<double>& x_start,
                                const Tensor* cond, const SolverConfig& cfg,
                                double t_from, double t_to) {
  cfg.validate();
  if (t_from == t_to) {
    throw ContractError("rk45_solve: empty integration span");
  }
  const auto start = Clock::now();
  const double dir = t_to > t_from ? 1.0 : -1.0;
  const std::size_t d = x_start.size();

  SolverReport report;
  std::vector<double> x = x_start;
  std::vector<double> k1, k2(d), k3(d), k4(d), k5(d), k6(d), k7;
  std::vector<double> y(d), y5(d), err_vec(d);

  double t = t_from;
  double h = (t_to - t_from) * 0.1;
  double facold = 1e-4;

  k1 = eval_field(field, x, t, cond);
  report.nfe = 1;
  if (cfg.record_trajectory) report.trajectory.emplace_back(t, x);

  while (true) {
    if (std::abs(h) < kMinStep) {
      throw StiffnessError("rk45_solve: step size underflow at t = " +
                           std::to_string(t));
    }
    if (report.nfe + 6 > cfg.max_nfe) {
      throw SolverBudgetError("rk45_solve: evaluation budget " +
                              std::to_string(cfg.max_nfe) + " exceeded at t = " +
                              std::to_string(t));
    }
    bool last = false;
    if ((t + h - t_to) * dir >= 0.0) {
      h = t_to - t;
      last = true;
    }

    for (std::size_t i = 0; i < d; ++i) y[i] = x[i] + h * kA21 * k1[i];
    k2 = eval_field(field, y, t + kC2 * h, cond);
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = x[i] + h * (kA31 * k1[i] + kA32 * k2[i]);
    }
    k3 = eval_field(field, y, t + kC3 * h, cond);
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = x[i] + h * (kA41 * k1[i] + kA42 * k2[i] + kA43 * k3[i]);
    }
    k4 = eval_field(field, y, t + kC4 * h, cond);
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = x[i] + h * (kA51 * k1[i] + kA52 * k2[i] + kA53 * k3[i] +
                         kA54 * k4[i]);
    }
    k5 = eval_field(field, y, t + kC5 * h, cond);
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = x[i] + h * (kA61 * k1[i] + kA62 * k2[i] + kA63 * k3[i] +
                         kA64 * k4[i] + kA65 * k5[i]);
    }
    k6 = eval_field(field, y, t + h, cond);
    for (std::size_t i = 0; i < d; ++i) {
      y5[i] = x[i] + h * (kB1 * k1[i] + kB3 * k3[i] + kB4 * k4[i] +
                          kB5 * k5[i] + kB6 * k6[i]);
    }
    k7 = eval_field(field, y5, t + h, cond);
    report.nfe += 6;

    for (std::size_t i = 0; i < d; ++i) {
      err_vec[i] = h * (kE1 * k1[i] + kE3 * k3[i] + kE4 * k4[i] +
                        kE5 * k5[i] + kE6 * k6[i] + kE7 * k7[i]);
    }
    const double sc =
        std::max(cfg.atol, cfg.rtol * std::max(inf_norm(x), inf_norm(y5)));
    const double err = inf_norm(err_vec) / sc;

    const double fac11 = std::pow(err, kExpo1);
    if (err <= 1.0) {
      ++report.accepted;
      t = last ? t_to : t + h;
      x = y5;
      std::swap(k1, k7);
      if (cfg.record_trajectory) report.trajectory.emplace_back(t, x);
      if (last) break;
      facold = std::max(err, 1e-4);
      const double fac =
          std::max(kFacc2, std::min(kFacc1, fac11 / std::pow(facold, kBetaPi) /
                                                kSafe));
      h /= fac;
    } else {
      ++report.rejected;
      h /= std::min(kFacc1, fac11 / kSafe);
    }
  }

  report.endpoint = std::move(x);
  report.wall_time = seconds_since(start);
  return report;
}

SolverReport rk45_solve(const VectorField& field,
                        const std::vector<double>& x1, const Tensor* cond,
                        const SolverConfig& cfg) {
  if (cfg.kind != SolverKind::rk45) {
    throw ContractError("rk45_solve: config.kind is not rk45");
  }
  return rk45_solve_between(field, x1, cond, cfg, 1.0, 0.0);
}

SolverReport solve(const VectorField& field, const std::vector<double>& x1,
                   const Tensor* cond, const SolverConfig& cfg) {
  return cfg.kind == SolverKind::euler ? euler_solve(field, x1, cond, cfg)
                                       : rk45_solve(field, x1, cond, cfg);
}

Tensor euler_solve_batch(const VectorField& field, const Tensor& x1,
                         const Tensor* cond, std::size_t steps,
                         std::vector<std::vector<double>>* velocities) {
  if (x1.shape().size() != 2) {
    throw ContractError("euler_solve_batch: batch must be 2-D, got " +
                        shape_str(x1.shape()));
  }
  if (steps == 0) throw ContractError("euler_solve_batch: steps must be >= 1");
  NoGradGuard no_grad;
  const double dt = 1.0 / static_cast<double>(steps);
  Tensor x = x1;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) * dt;
    Tensor v = field.velocity(x, {t}, cond);
    if (velocities) velocities->push_back(v.values());
    x = sub(x, scale(v, dt));
  }
  return x;
}

double straightness(const VectorField& field, const Tensor& x1,
                    const Tensor* cond, std::size_t probe_steps) {
  if (probe_steps < 8) {
    throw ContractError("straightness: probe_steps must be at least 8");
  }
  std::vector<std::vector<double>> velocities;
  velocities.reserve(probe_steps);
  Tensor x_end = euler_solve_batch(field, x1, cond, probe_steps, &velocities);

  const std::size_t n = x1.shape()[0], d = x1.shape()[1];
  const auto& a = x1.values();
  const auto& b = x_end.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sample = 0.0;
    for (const auto& v : velocities) {
      for (std::size_t k = 0; k < d; ++k) {
        const double chord = a[i * d + k] - b[i * d + k];
        const double diff = v[i * d + k] - chord;
        sample += diff * diff;
      }
    }
    total += sample / static_cast<double>(probe_steps);
  }
  return total / static_cast<double>(n);
}

}  // namespace rectflow
