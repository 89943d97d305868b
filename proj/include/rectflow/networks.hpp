#pragma once

// Layer library and velocity-field network assembly.
//
// The trunk is a stack of residual MLP blocks. Each block adds learned
// projections of the time embedding and the condition vector to the hidden
// state, applies affine -> tanh -> affine, and adds the result back through
// a skip connection. Block-final affines and the output head start at zero
// so a fresh model is the zero field.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rectflow/rng.hpp"
#include "rectflow/tensor.hpp"
#include "rectflow/vector_field.hpp"

namespace rectflow {

struct SinusoidalTimeEmbedding {
  std::size_t dim = 16;
  double max_period = 100.0;

  void validate() const;
  // Interleaved frequency ladder, laid out as [sin block | cos block] with
  // frequency_i = max_period^(-i / (dim/2)). Deterministic; t must lie in
  // [0, 1].
  std::vector<double> embed(double t) const;
};

class DepthwiseSeparableConv1d {
 public:
  // Kernel size must be odd (same padding). Weights are Gaussian with
  // 1/sqrt(fan_in) scale; bias starts at zero.
  DepthwiseSeparableConv1d(std::size_t in_channels, std::size_t out_channels,
                           std::size_t kernel_size, rng::Prng& init);

  // x is [in_channels x length]; returns [out_channels x length].
  Tensor forward(const Tensor& x) const;

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel_size() const { return k_; }
  // Weight count excluding bias: in*k depthwise + in*out pointwise.
  std::size_t kernel_parameter_count() const { return in_ * k_ + in_ * out_; }
  // The dense convolution this layer replaces would carry in*out*k weights.
  std::size_t dense_equivalent_count() const { return in_ * out_ * k_; }

  Tensor depthwise;  // [in x k]
  Tensor pointwise;  // [in x out]
  Tensor bias;       // [out]

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  std::size_t k_ = 0;
};

struct ConditionEncoderConfig {
  std::size_t vocab_size = 4;
  std::size_t seq_len = 2;
  std::size_t embed_dim = 8;
  std::size_t channels = 16;
  std::size_t layers = 2;
  std::size_t kernel_size = 3;
  std::size_t condition_dim = 8;

  void validate() const;
};

// Token-sequence encoder: embedding lookup, a depthwise-separable conv
// stack over the sequence, mean pooling, and a linear head.
class ConditionEncoder {
 public:
  ConditionEncoder(const ConditionEncoderConfig& cfg, std::uint64_t init_seed);

  Tensor encode(const std::vector<int>& tokens) const;  // [1 x condition_dim]
  Tensor encode_batch(const std::vector<std::vector<int>>& sequences) const;

  const ConditionEncoderConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::size_t parameter_count() const;
  std::size_t conv_kernel_parameter_count() const;
  std::size_t dense_conv_equivalent_count() const;
  void set_requires_grad(bool value);

 private:
  ConditionEncoderConfig cfg_;
  Tensor embedding_;  // [vocab x embed_dim]
  std::vector<DepthwiseSeparableConv1d> convs_;
  Tensor proj_w_;  // [channels x condition_dim]
  Tensor proj_b_;  // [condition_dim]
};

struct VelocityModelConfig {
  std::size_t data_dim = 2;
  std::size_t width = 64;
  std::size_t depth = 4;
  std::size_t time_embed_dim = 16;
  double time_max_period = 100.0;
  std::size_t condition_dim = 0;

  void validate() const;
};

class VelocityModel : public VectorField {
 public:
  VelocityModel(const VelocityModelConfig& cfg, std::uint64_t init_seed);

  // x is [n x data_dim]; t has n entries (or 1, shared); cond must be
  // present exactly when condition_dim > 0.
  Tensor velocity(const Tensor& x, const std::vector<double>& t,
                  const Tensor* cond) const override;

  const VelocityModelConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  void set_requires_grad(bool value);

  // Exact counts from the closed-form formula; asserted against the
  // actual tensor sizes at construction.
  std::size_t parameter_count() const;
  std::size_t trunk_parameter_count() const;  // residual blocks only
  static std::size_t parameter_count_formula(const VelocityModelConfig& cfg);
  static std::size_t trunk_count_formula(const VelocityModelConfig& cfg);

 private:
  struct Block {
    Tensor time_w, time_b;  // [E x W], [W]
    Tensor cond_w, cond_b;  // [C x W], [W] (absent when unconditional)
    Tensor w1, b1;          // [W x W], [W]
    Tensor w2, b2;          // [W x W], [W], zero-initialized
  };

  VelocityModelConfig cfg_;
  SinusoidalTimeEmbedding time_embed_;
  Tensor in_w_, in_b_;    // [d x W], [W]
  std::vector<Block> blocks_;
  Tensor out_w_, out_b_;  // [W x d], [d], zero-initialized
};

// Deep-copies a model (fresh parameter storage, same values).
VelocityModel clone_model(const VelocityModel& src);
ConditionEncoder clone_encoder(const ConditionEncoder& src);

}  // namespace rectflow
