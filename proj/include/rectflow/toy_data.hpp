#pragma once

// Synthetic source distributions, conditional toy datasets, and the
// closed-form Gaussian velocity-field oracle.

#include <cstdint>
#include <string>
#include <vector>

#include "rectflow/rng.hpp"
#include "rectflow/vector_field.hpp"

namespace rectflow {

enum class DistKind { gauss_nd, mixture_ring, checkerboard, cond_seq };

DistKind dist_kind_from_string(const std::string& s);
std::string to_string(DistKind kind);

struct Distribution {
  DistKind kind = DistKind::gauss_nd;
  std::size_t dim = 1;
  std::vector<double> mean;     // gauss_nd; empty means the origin
  double sigma = 1.0;           // gauss_nd scale / mixture component scale
  std::size_t components = 8;   // mixture_ring, cond_seq
  double radius = 4.0;          // mixture_ring, cond_seq
  std::size_t vocab = 4;        // cond_seq
  std::size_t seq_len = 2;      // cond_seq
  std::uint64_t seed = 1;

  void validate() const;
  bool conditional() const { return kind == DistKind::cond_seq; }
};

struct DataBatch {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> x;                 // row-major n x dim
  std::vector<std::vector<int>> tokens;  // cond_seq only
  std::vector<int> classes;              // cond_seq only
};

// All generators are pure in (seed, index): regenerating any index in
// isolation yields the same sample.
std::vector<double> sample_noise_point(std::uint64_t seed,
                                       std::uint64_t index, std::size_t dim);
std::vector<double> sample_noise(std::uint64_t seed, std::size_t n,
                                 std::size_t dim,
                                 std::uint64_t start_index = 0);

void sample_data_point(const Distribution& dist, std::uint64_t index,
                       double* out, std::vector<int>* tokens, int* cls);
DataBatch sample_data(const Distribution& dist, std::size_t n,
                      std::uint64_t start_index = 0);

// Deterministic class rule for token sequences: positional base-vocab
// value reduced modulo the component count.
int token_class(const std::vector<int>& tokens, std::size_t vocab,
                std::size_t components);
std::vector<double> ring_center(std::size_t component, std::size_t components,
                                double radius);
std::vector<int> sample_tokens(std::uint64_t seed, std::uint64_t index,
                               std::size_t vocab, std::size_t seq_len);

// Conditional expectation E[x1 - x0 | x_t = x] for x0 ~ N(mu0, sigma0^2 I)
// and x1 ~ N(0, I) under independent coupling:
//   v(x, t) = -mu0 + (t - (1-t) s^2) / (t^2 + (1-t)^2 s^2) * (x - (1-t) mu0)
std::vector<double> analytic_velocity_gauss(const std::vector<double>& x,
                                            double t,
                                            const std::vector<double>& mu0,
                                            double sigma0);

class AnalyticGaussField : public VectorField {
 public:
  AnalyticGaussField(std::vector<double> mu0, double sigma0)
      : mu0_(std::move(mu0)), sigma0_(sigma0) {}

  Tensor velocity(const Tensor& x, const std::vector<double>& t,
                  const Tensor* cond) const override;

 private:
  std::vector<double> mu0_;
  double sigma0_;
};

// CSV dump: header row with coordinate columns, then optional class and
// token columns for conditional batches.
std::string batch_to_csv(const DataBatch& batch);

}  // namespace rectflow
