#include "rectflow/flow_core.hpp"

#include <cmath>
#include <string>

#include "rectflow/rng.hpp"

namespace rectflow {

namespace {

void check_batch_pair(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": batch shapes " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " must be identical 2-D");
  }
}

// Column tensor [n x 1] from per-sample scalars.
Tensor column(const std::vector<double>& v) {
  return Tensor::from_values({v.size(), 1}, std::vector<double>(v));
}

Tensor batch_mean_sq(const Tensor& diff) {
  const double n = static_cast<double>(diff.shape()[0]);
  return scale(sum(square(diff)), 1.0 / n);
}

}  // namespace

double TimeSampler::draw(std::uint64_t index) const {
  rng::Prng prng(seed, rng::kTime, index);
  const double u = prng.uniform();
  return std::min(1.0 - 1e-5, std::max(1e-5, u));
}

std::vector<double> TimeSampler::draw_batch(std::size_t n,
                                            std::uint64_t start_index) const {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = draw(start_index + i);
  return out;
}

std::vector<double> interpolate(const std::vector<double>& x0,
                                const std::vector<double>& x1, double t) {
  if (x0.size() != x1.size()) {
    throw ShapeError("interpolate: sizes " + std::to_string(x0.size()) +
                     " and " + std::to_string(x1.size()) + " differ");
  }
  if (t < 0.0 || t > 1.0) {
    throw DomainError("interpolate: t = " + std::to_string(t) +
                      " outside [0, 1]");
  }
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = t * x1[i] + (1.0 - t) * x0[i];
  }
  return out;
}

Tensor interpolate_batch(const Tensor& x0, const Tensor& x1,
                         const std::vector<double>& t) {
  check_batch_pair("interpolate", x0, x1);
  if (t.size() != x0.shape()[0]) {
    throw ContractError("interpolate: " + std::to_string(t.size()) +
                        " time entries for a batch of " +
                        std::to_string(x0.shape()[0]));
  }
  std::vector<double> one_minus(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) one_minus[i] = 1.0 - t[i];
  return add(mul(x1, column(t)), mul(x0, column(one_minus)));
}

Tensor rf_loss(const VectorField& field, const Tensor& x0, const Tensor& x1,
               const Tensor* cond, const std::vector<double>& t) {
  check_batch_pair("rf_loss", x0, x1);
  const Tensor xt = interpolate_batch(x0, x1, t);
  const Tensor v = field.velocity(xt, t, cond);
  const Tensor target = sub(x1, x0);
  return batch_mean_sq(sub(v, target));
}

std::vector<double> mix_noise(const std::vector<double>& x1,
                              const std::vector<double>& x1_prime,
                              double beta) {
  if (x1.size() != x1_prime.size()) {
    throw ShapeError("mix_noise: sizes " + std::to_string(x1.size()) +
                     " and " + std::to_string(x1_prime.size()) + " differ");
  }
  if (beta < 0.0 || beta > 1.0) {
    throw DomainError("mix_noise: beta = " + std::to_string(beta) +
                      " outside [0, 1]");
  }
  if (beta == 0.0) return x1;
  if (beta == 1.0) return x1_prime;
  const double a = std::sqrt(1.0 - beta * beta);
  std::vector<double> out(x1.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a * x1[i] + beta * x1_prime[i];
  }
  return out;
}

Tensor mix_noise_batch(const Tensor& x1, const Tensor& x1_prime, double beta) {
  check_batch_pair("mix_noise", x1, x1_prime);
  if (beta < 0.0 || beta > 1.0) {
    throw DomainError("mix_noise: beta = " + std::to_string(beta) +
                      " outside [0, 1]");
  }
  if (beta == 0.0) return x1;
  if (beta == 1.0) return x1_prime;
  const double a = std::sqrt(1.0 - beta * beta);
  return add(scale(x1, a), scale(x1_prime, beta));
}

Tensor annealing_reflow_loss(const VectorField& student, const Tensor& x1,
                             const Tensor& x0_hat, const Tensor* cond,
                             const Tensor& x1_prime, std::uint64_t k,
                             const AnnealSchedule& sched,
                             const std::vector<double>& t) {
  const double beta = sched.beta(k);
  const Tensor x1_mixed = mix_noise_batch(x1, x1_prime, beta);
  return rf_loss(student, x0_hat, x1_mixed, cond, t);
}

Tensor distill_loss(const VectorField& student, const Tensor& x1,
                    const Tensor& x0_hat, const Tensor* cond) {
  check_batch_pair("distill_loss", x1, x0_hat);
  const std::vector<double> ones(x1.shape()[0], 1.0);
  const Tensor v = student.velocity(x1, ones, cond);
  const Tensor target = sub(x1, x0_hat);
  return batch_mean_sq(sub(target, v));
}

Tensor two_step_loss(const VectorField& teacher, const VectorField& student,
                     const Tensor& x1, const Tensor* cond,
                     const std::vector<double>& t) {
  if (x1.shape().size() != 2) {
    throw ContractError("two_step_loss: x1 must be a 2-D batch, got " +
                        shape_str(x1.shape()));
  }
  const std::size_t n = x1.shape()[0];
  if (t.size() != n) {
    throw ContractError("two_step_loss: " + std::to_string(t.size()) +
                        " time entries for a batch of " + std::to_string(n));
  }
  for (double ti : t) {
    if (ti <= 0.0 || ti >= 1.0) {
      throw DomainError("two_step_loss: t must lie strictly inside (0, 1)");
    }
  }

  Tensor target;
  {
    // Teacher composition runs detached: a first Euler step of size (1 - t)
    // from t = 1, then a second of size t, both with frozen parameters.
    NoGradGuard no_grad;
    const std::vector<double> ones(n, 1.0);
    std::vector<double> one_minus(n);
    for (std::size_t i = 0; i < n; ++i) one_minus[i] = 1.0 - t[i];
    const Tensor v1 = teacher.velocity(x1, ones, cond);
    const Tensor step1 =
        mul(v1, Tensor::from_values({n, 1}, std::vector<double>(one_minus)));
    const Tensor xt = sub(x1, step1);
    const Tensor v2 = teacher.velocity(xt, t, cond);
    const Tensor step2 =
        mul(v2, Tensor::from_values({n, 1}, std::vector<double>(t)));
    const Tensor x0_tilde = sub(xt, step2);
    // x1 - x0_tilde is the displacement the one-step student must match.
    target = sub(x1, x0_tilde);
  }

  const std::vector<double> ones(n, 1.0);
  const Tensor v = student.velocity(x1, ones, cond);
  return batch_mean_sq(sub(target, v));
}

FgDistillParts fg_distill_loss(const VectorField& teacher,
                               const VectorField& student, const Tensor& x1,
                               const Tensor& x0_hat, const Tensor* cond,
                               const std::vector<double>& t,
                               bool use_two_step) {
  FgDistillParts parts;
  Tensor d = distill_loss(student, x1, x0_hat, cond);
  parts.distill_value = d.item();
  if (use_two_step) {
    Tensor ts = two_step_loss(teacher, student, x1, cond, t);
    parts.two_step_value = ts.item();
    parts.total = add(d, ts);
  } else {
    parts.total = d;
  }
  return parts;
}

}  // namespace rectflow
