#pragma once

// Shared helpers for the test suites: finite-difference gradient checking,
// simple statistics, and a Kolmogorov-Smirnov test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rectflow/tensor.hpp"
#include "rectflow/vector_field.hpp"

namespace testsup {

// v(x, t) = c for every x: trajectories are straight lines.
struct ConstantField : rectflow::VectorField {
  std::vector<double> c;
  explicit ConstantField(std::vector<double> v) : c(std::move(v)) {}

  rectflow::Tensor velocity(const rectflow::Tensor& x,
                            const std::vector<double>&,
                            const rectflow::Tensor*) const override {
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) out[i * d + k] = c[k];
    }
    return rectflow::Tensor::from_values({n, d}, std::move(out));
  }
};

// v(x, t) = x: the exponential field, solution x(t) = x(t0) e^(t - t0).
struct LinearField : rectflow::VectorField {
  rectflow::Tensor velocity(const rectflow::Tensor& x,
                            const std::vector<double>&,
                            const rectflow::Tensor*) const override {
    return rectflow::scale(x, 1.0);
  }
};

struct GradCheckResult {
  bool ok = true;
  double worst_rel = 0.0;
  std::string detail;
};

// Central-difference check of every element of every parameter against the
// reverse-mode gradient. The loss closure must be a pure function of the
// parameter values.
inline GradCheckResult gradcheck(const std::function<rectflow::Tensor()>& loss_fn,
                                 std::vector<rectflow::Tensor> params,
                                 double tol = 1e-5, double h = 1e-4) {
  using namespace rectflow;
  GradCheckResult res;
  for (auto& p : params) p.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.push_back(p.has_grad() ? p.grad()
                                    : std::vector<double>(p.size(), 0.0));
    p.zero_grad();
  }

  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& w = params[pi].mutable_values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      w[j] = saved + h;
      const double lp = loss_fn().item();
      w[j] = saved - h;
      const double lm = loss_fn().item();
      w[j] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double a = analytic[pi][j];
      const double denom = std::max({1.0, std::abs(a), std::abs(fd)});
      const double rel = std::abs(a - fd) / denom;
      res.worst_rel = std::max(res.worst_rel, rel);
      if (rel > tol) {
        res.ok = false;
        std::ostringstream os;
        os << "param " << pi << " elem " << j << ": analytic " << a
           << " vs fd " << fd << " (rel " << rel << ")";
        res.detail = os.str();
        return res;
      }
    }
  }
  return res;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

// One-sample KS statistic against a reference CDF.
inline double ks_statistic(std::vector<double> samples,
                           const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

// Asymptotic critical value; alpha = 0.01 gives c = 1.628.
inline double ks_critical(std::size_t n, double c_alpha = 1.628) {
  return c_alpha / std::sqrt(static_cast<double>(n));
}

}  // namespace testsup
