#include "rectflow/toy_data.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "rectflow/errors.hpp"

namespace rectflow {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

DistKind dist_kind_from_string(const std::string& s) {
  if (s == "gauss_nd") return DistKind::gauss_nd;
  if (s == "mixture_ring") return DistKind::mixture_ring;
  if (s == "checkerboard") return DistKind::checkerboard;
  if (s == "cond_seq") return DistKind::cond_seq;
  throw ConfigError("dataset.kind: unknown distribution '" + s + "'");
}

std::string to_string(DistKind kind) {
  switch (kind) {
    case DistKind::gauss_nd:
      return "gauss_nd";
    case DistKind::mixture_ring:
      return "mixture_ring";
    case DistKind::checkerboard:
      return "checkerboard";
    default:
      return "cond_seq";
  }
}

void Distribution::validate() const {
  if (dim == 0) throw ConfigError("dataset.dim must be positive");
  if (!(sigma > 0.0)) throw ConfigError("dataset.sigma must be positive");
  switch (kind) {
    case DistKind::gauss_nd:
      if (!mean.empty() && mean.size() != dim) {
        throw ConfigError("dataset.mean length " +
                          std::to_string(mean.size()) +
                          " does not match dataset.dim " +
                          std::to_string(dim));
      }
      break;
    case DistKind::mixture_ring:
    case DistKind::cond_seq:
      if (dim != 2) throw ConfigError("dataset: ring mixtures are 2-D");
      if (components == 0) {
        throw ConfigError("dataset.components must be positive");
      }
      if (!(radius > 0.0)) throw ConfigError("dataset.radius must be positive");
      if (kind == DistKind::cond_seq) {
        if (vocab == 0) throw ConfigError("dataset.vocab must be positive");
        if (seq_len == 0) throw ConfigError("dataset.seq_len must be positive");
      }
      break;
    case DistKind::checkerboard:
      if (dim != 2) throw ConfigError("dataset: checkerboard is 2-D");
      break;
  }
}

std::vector<double> sample_noise_point(std::uint64_t seed,
                                       std::uint64_t index, std::size_t dim) {
  rng::Prng prng(seed, rng::kNoise, index);
  std::vector<double> out(dim);
  prng.fill_gauss(out.data(), dim);
  return out;
}

std::vector<double> sample_noise(std::uint64_t seed, std::size_t n,
                                 std::size_t dim, std::uint64_t start_index) {
  if (n == 0) throw ContractError("sample_noise: n must be at least 1");
  std::vector<double> out(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    rng::Prng prng(seed, rng::kNoise, start_index + i);
    prng.fill_gauss(out.data() + i * dim, dim);
  }
  return out;
}

int token_class(const std::vector<int>& tokens, std::size_t vocab,
                std::size_t components) {
  std::uint64_t value = 0;
  std::uint64_t base = 1;
  for (int tok : tokens) {
    value += static_cast<std::uint64_t>(tok) * base;
    base *= vocab;
  }
  return static_cast<int>(value % components);
}

std::vector<double> ring_center(std::size_t component, std::size_t components,
                                double radius) {
  const double a =
      kTwoPi * static_cast<double>(component) / static_cast<double>(components);
  return {radius * std::cos(a), radius * std::sin(a)};
}

std::vector<int> sample_tokens(std::uint64_t seed, std::uint64_t index,
                               std::size_t vocab, std::size_t seq_len) {
  rng::Prng prng(seed, rng::kTokens, index);
  std::vector<int> tokens(seq_len);
  for (auto& t : tokens) {
    t = static_cast<int>(prng.uniform_index(vocab));
  }
  return tokens;
}

void sample_data_point(const Distribution& dist, std::uint64_t index,
                       double* out, std::vector<int>* tokens, int* cls) {
  rng::Prng prng(dist.seed, rng::kData, index);
  switch (dist.kind) {
    case DistKind::gauss_nd: {
      for (std::size_t d = 0; d < dist.dim; ++d) {
        const double mu = dist.mean.empty() ? 0.0 : dist.mean[d];
        out[d] = mu + dist.sigma * prng.gauss();
      }
      break;
    }
    case DistKind::mixture_ring: {
      const std::size_t j = prng.uniform_index(dist.components);
      const auto c = ring_center(j, dist.components, dist.radius);
      out[0] = c[0] + dist.sigma * prng.gauss();
      out[1] = c[1] + dist.sigma * prng.gauss();
      break;
    }
    case DistKind::checkerboard: {
      const std::size_t ix = prng.uniform_index(4);
      const std::size_t iy = prng.uniform_index(2);
      out[0] = -2.0 + static_cast<double>(ix) + prng.uniform();
      out[1] = -2.0 + static_cast<double>(2 * iy + ix % 2) + prng.uniform();
      break;
    }
    case DistKind::cond_seq: {
      auto toks = sample_tokens(dist.seed, index, dist.vocab, dist.seq_len);
      const int k = token_class(toks, dist.vocab, dist.components);
      const auto c = ring_center(static_cast<std::size_t>(k), dist.components,
                                 dist.radius);
      out[0] = c[0] + dist.sigma * prng.gauss();
      out[1] = c[1] + dist.sigma * prng.gauss();
      if (tokens) *tokens = std::move(toks);
      if (cls) *cls = k;
      break;
    }
  }
}

DataBatch sample_data(const Distribution& dist, std::size_t n,
                      std::uint64_t start_index) {
  dist.validate();
  if (n == 0) throw ContractError("sample_data: n must be at least 1");
  DataBatch batch;
  batch.n = n;
  batch.dim = dist.dim;
  batch.x.resize(n * dist.dim);
  const bool cond = dist.conditional();
  if (cond) {
    batch.tokens.resize(n);
    batch.classes.resize(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    sample_data_point(dist, start_index + i, batch.x.data() + i * dist.dim,
                      cond ? &batch.tokens[i] : nullptr,
                      cond ? &batch.classes[i] : nullptr);
  }
  return batch;
}

std::vector<double> analytic_velocity_gauss(const std::vector<double>& x,
                                            double t,
                                            const std::vector<double>& mu0,
                                            double sigma0) {
  if (x.size() != mu0.size()) {
    throw ContractError("analytic_velocity_gauss: point dimension " +
                        std::to_string(x.size()) + " vs mean dimension " +
                        std::to_string(mu0.size()));
  }
  if (t < 0.0 || t > 1.0) {
    throw DomainError("analytic_velocity_gauss: t = " + std::to_string(t) +
                      " outside [0, 1]");
  }
  const double s2 = sigma0 * sigma0;
  const double denom = t * t + (1.0 - t) * (1.0 - t) * s2;
  if (denom < 1e-12) {
    throw SingularityError(
        "analytic_velocity_gauss: interpolant variance vanishes at t = " +
        std::to_string(t));
  }
  const double gain = (t - (1.0 - t) * s2) / denom;
  std::vector<double> v(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) {
    v[d] = -mu0[d] + gain * (x[d] - (1.0 - t) * mu0[d]);
  }
  return v;
}

Tensor AnalyticGaussField::velocity(const Tensor& x,
                                    const std::vector<double>& t,
                                    const Tensor* cond) const {
  if (cond != nullptr) {
    throw ContractError("analytic field is unconditional");
  }
  const Shape& s = x.shape();
  if (s.size() != 2 || s[1] != mu0_.size()) {
    throw ContractError("analytic field: input shape " + shape_str(s) +
                        " does not match dimension " +
                        std::to_string(mu0_.size()));
  }
  const std::size_t n = s[0], d = s[1];
  std::vector<double> out(n * d);
  std::vector<double> row(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) row[k] = x.values()[i * d + k];
    const auto v =
        analytic_velocity_gauss(row, t.size() == 1 ? t[0] : t[i], mu0_,
                                sigma0_);
    std::copy(v.begin(), v.end(), out.begin() + i * d);
  }
  return Tensor::from_values({n, d}, std::move(out));
}

std::string batch_to_csv(const DataBatch& batch) {
  std::ostringstream os;
  for (std::size_t d = 0; d < batch.dim; ++d) {
    if (d) os << ",";
    os << "x" << d;
  }
  const bool cond = !batch.tokens.empty();
  if (cond) {
    os << ",class";
    for (std::size_t j = 0; j < batch.tokens[0].size(); ++j) {
      os << ",tok" << j;
    }
  }
  os << "\n";
  char buf[32];
  for (std::size_t i = 0; i < batch.n; ++i) {
    for (std::size_t d = 0; d < batch.dim; ++d) {
      if (d) os << ",";
      std::snprintf(buf, sizeof(buf), "%.17g", batch.x[i * batch.dim + d]);
      os << buf;
    }
    if (cond) {
      os << "," << batch.classes[i];
      for (int tok : batch.tokens[i]) os << "," << tok;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace rectflow
