#include "rectflow/networks.hpp"

#include <cmath>
#include <string>

namespace rectflow {

namespace {

Tensor gaussian_init(Shape shape, std::size_t fan_in, std::uint64_t seed,
                     std::uint64_t ordinal) {
  rng::Prng prng(seed, rng::kInit, ordinal);
  const double scl = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = scl * prng.gauss();
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

void copy_values(Tensor& dst, const Tensor& src) {
  dst.mutable_values() = src.values();
}

}  // namespace

void SinusoidalTimeEmbedding::validate() const {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("time embedding dim must be even and positive, got " +
                      std::to_string(dim));
  }
  if (!(max_period > 0.0)) {
    throw ConfigError("time embedding max_period must be positive");
  }
}

std::vector<double> SinusoidalTimeEmbedding::embed(double t) const {
  if (t < -1e-12 || t > 1.0 + 1e-12) {
    throw DomainError("embed_time: t = " + std::to_string(t) +
                      " outside [0, 1]");
  }
  t = std::min(1.0, std::max(0.0, t));
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq =
        std::pow(max_period, -static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(freq * t);
    out[half + i] = std::cos(freq * t);
  }
  return out;
}

DepthwiseSeparableConv1d::DepthwiseSeparableConv1d(std::size_t in_channels,
                                                   std::size_t out_channels,
                                                   std::size_t kernel_size,
                                                   rng::Prng& init)
    : in_(in_channels), out_(out_channels), k_(kernel_size) {
  if (in_ == 0 || out_ == 0 || k_ == 0) {
    throw ConfigError("conv channels and kernel size must be positive");
  }
  if (k_ % 2 == 0) {
    throw ConfigError("conv kernel size must be odd for same padding, got " +
                      std::to_string(k_));
  }
  auto gauss = [&](Shape shape, std::size_t fan_in) {
    const double scl = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = scl * init.gauss();
    return Tensor::from_values(std::move(shape), std::move(v), true);
  };
  depthwise = gauss({in_, k_}, k_);
  pointwise = gauss({in_, out_}, in_);
  bias = Tensor::zeros({out_}, true);
}

Tensor DepthwiseSeparableConv1d::forward(const Tensor& x) const {
  const Shape& s = x.shape();
  if (s.size() != 2 || s[0] != in_) {
    throw ContractError("dsconv: expected [" + std::to_string(in_) +
                        " x L] input, got " + shape_str(s));
  }
  const std::size_t len = s[1];
  if (len == 0) throw ContractError("dsconv: empty sequence");
  const std::size_t pad = k_ / 2;

  Tensor acc;
  for (std::size_t j = 0; j < k_; ++j) {
    const long off = static_cast<long>(j) - static_cast<long>(pad);
    Tensor shifted;
    if (off == 0) {
      shifted = x;
    } else if (off > 0) {
      const std::size_t o = static_cast<std::size_t>(off);
      shifted = o >= len ? Tensor::zeros({in_, len})
                         : concat({slice(x, 1, o, len - o),
                                   Tensor::zeros({in_, o})},
                                  1);
    } else {
      const std::size_t o = static_cast<std::size_t>(-off);
      shifted = o >= len ? Tensor::zeros({in_, len})
                         : concat({Tensor::zeros({in_, o}),
                                   slice(x, 1, 0, len - o)},
                                  1);
    }
    auto term = mul(shifted, slice(depthwise, 1, j, 1));  // [in,L] * [in,1]
    acc = j == 0 ? term : add(acc, term);
  }
  auto y = matmul(transpose(pointwise), acc);  // [out x L]
  return add(y, reshape(bias, {out_, 1}));
}

void ConditionEncoderConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("encoder.vocab_size must be positive");
  if (seq_len == 0) throw ConfigError("encoder.seq_len must be positive");
  if (embed_dim == 0) throw ConfigError("encoder.embed_dim must be positive");
  if (channels == 0) throw ConfigError("encoder.channels must be positive");
  if (layers == 0) throw ConfigError("encoder.layers must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw ConfigError("encoder.kernel_size must be odd and positive");
  }
  if (condition_dim == 0) {
    throw ConfigError("encoder.condition_dim must be positive");
  }
}

ConditionEncoder::ConditionEncoder(const ConditionEncoderConfig& cfg,
                                   std::uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  rng::Prng prng(init_seed, rng::kInit, 0x0c0de);
  {
    std::vector<double> v(cfg_.vocab_size * cfg_.embed_dim);
    for (auto& x : v) x = prng.gauss();
    embedding_ = Tensor::from_values({cfg_.vocab_size, cfg_.embed_dim},
                                     std::move(v), true);
  }
  std::size_t in = cfg_.embed_dim;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    convs_.emplace_back(in, cfg_.channels, cfg_.kernel_size, prng);
    in = cfg_.channels;
  }
  {
    const double scl = 1.0 / std::sqrt(static_cast<double>(cfg_.channels));
    std::vector<double> v(cfg_.channels * cfg_.condition_dim);
    for (auto& x : v) x = scl * prng.gauss();
    proj_w_ = Tensor::from_values({cfg_.channels, cfg_.condition_dim},
                                  std::move(v), true);
  }
  proj_b_ = Tensor::zeros({cfg_.condition_dim}, true);
}

Tensor ConditionEncoder::encode(const std::vector<int>& tokens) const {
  if (tokens.size() != cfg_.seq_len) {
    throw ContractError("encode_condition: expected " +
                        std::to_string(cfg_.seq_len) + " tokens, got " +
                        std::to_string(tokens.size()));
  }
  std::vector<Tensor> rows;
  rows.reserve(tokens.size());
  for (int tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= cfg_.vocab_size) {
      throw DomainError("encode_condition: token " + std::to_string(tok) +
                        " outside vocabulary of size " +
                        std::to_string(cfg_.vocab_size));
    }
    rows.push_back(slice(embedding_, 0, static_cast<std::size_t>(tok), 1));
  }
  Tensor h = transpose(concat(rows, 0));  // [embed_dim x seq_len]
  for (const auto& conv : convs_) h = tanh(conv.forward(h));
  // Mean pool over positions, then the linear head.
  auto pool = Tensor::full({cfg_.seq_len, 1},
                           1.0 / static_cast<double>(cfg_.seq_len));
  Tensor pooled = transpose(matmul(h, pool));  // [1 x channels]
  return add(matmul(pooled, proj_w_), proj_b_);
}

Tensor ConditionEncoder::encode_batch(
    const std::vector<std::vector<int>>& sequences) const {
  if (sequences.empty()) throw ContractError("encode_batch: empty batch");
  std::vector<Tensor> rows;
  rows.reserve(sequences.size());
  for (const auto& seq : sequences) rows.push_back(encode(seq));
  return concat(rows, 0);
}

std::vector<std::pair<std::string, Tensor>> ConditionEncoder::named_parameters()
    const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("enc.embedding", embedding_);
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    const std::string p = "enc.conv" + std::to_string(l);
    out.emplace_back(p + ".depthwise", convs_[l].depthwise);
    out.emplace_back(p + ".pointwise", convs_[l].pointwise);
    out.emplace_back(p + ".bias", convs_[l].bias);
  }
  out.emplace_back("enc.proj.w", proj_w_);
  out.emplace_back("enc.proj.b", proj_b_);
  return out;
}

std::size_t ConditionEncoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

std::size_t ConditionEncoder::conv_kernel_parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : convs_) n += c.kernel_parameter_count();
  return n;
}

std::size_t ConditionEncoder::dense_conv_equivalent_count() const {
  std::size_t n = 0;
  for (const auto& c : convs_) n += c.dense_equivalent_count();
  return n;
}

void ConditionEncoder::set_requires_grad(bool value) {
  for (auto& [name, t] : named_parameters()) t.node()->requires_grad = value;
}

void VelocityModelConfig::validate() const {
  if (data_dim == 0) throw ConfigError("model.data_dim must be positive");
  if (width == 0) throw ConfigError("model.width must be positive");
  if (depth == 0) throw ConfigError("model.depth must be positive");
  SinusoidalTimeEmbedding e{time_embed_dim, time_max_period};
  e.validate();
}

VelocityModel::VelocityModel(const VelocityModelConfig& cfg,
                             std::uint64_t init_seed)
    : cfg_(cfg), time_embed_{cfg.time_embed_dim, cfg.time_max_period} {
  cfg_.validate();
  std::uint64_t ord = 0;
  const std::size_t d = cfg_.data_dim, w = cfg_.width;
  const std::size_t e = cfg_.time_embed_dim, c = cfg_.condition_dim;

  in_w_ = gaussian_init({d, w}, d, init_seed, ord++);
  in_b_ = Tensor::zeros({w}, true);
  for (std::size_t b = 0; b < cfg_.depth; ++b) {
    Block blk;
    blk.time_w = gaussian_init({e, w}, e, init_seed, ord++);
    blk.time_b = Tensor::zeros({w}, true);
    if (c > 0) {
      blk.cond_w = gaussian_init({c, w}, c, init_seed, ord++);
      blk.cond_b = Tensor::zeros({w}, true);
    }
    blk.w1 = gaussian_init({w, w}, w, init_seed, ord++);
    blk.b1 = Tensor::zeros({w}, true);
    blk.w2 = Tensor::zeros({w, w}, true);
    blk.b2 = Tensor::zeros({w}, true);
    blocks_.push_back(std::move(blk));
  }
  out_w_ = Tensor::zeros({w, d}, true);
  out_b_ = Tensor::zeros({d}, true);

  std::size_t actual = 0;
  for (const auto& [name, t] : named_parameters()) actual += t.size();
  if (actual != parameter_count_formula(cfg_)) {
    throw ContractError("velocity model parameter count formula out of sync");
  }
}

Tensor VelocityModel::velocity(const Tensor& x, const std::vector<double>& t,
                               const Tensor* cond) const {
  const Shape& s = x.shape();
  if (s.size() != 2 || s[1] != cfg_.data_dim) {
    throw ContractError("velocity_forward: expected [n x " +
                        std::to_string(cfg_.data_dim) + "] input, got " +
                        shape_str(s));
  }
  const std::size_t n = s[0];
  if (t.size() != n && t.size() != 1) {
    throw ContractError("velocity_forward: " + std::to_string(t.size()) +
                        " time entries for a batch of " + std::to_string(n));
  }
  if (cfg_.condition_dim == 0 && cond != nullptr) {
    throw ContractError("velocity_forward: condition passed to an "
                        "unconditional model");
  }
  if (cfg_.condition_dim > 0) {
    if (cond == nullptr) {
      throw ContractError("velocity_forward: conditional model needs a "
                          "condition batch");
    }
    const Shape& cs = cond->shape();
    if (cs.size() != 2 || cs[0] != n || cs[1] != cfg_.condition_dim) {
      throw ContractError("velocity_forward: condition shape " +
                          shape_str(cs) + " does not match [n x " +
                          std::to_string(cfg_.condition_dim) + "]");
    }
  }

  std::vector<double> emb(n * cfg_.time_embed_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = time_embed_.embed(t.size() == 1 ? t[0] : t[i]);
    std::copy(row.begin(), row.end(), emb.begin() + i * cfg_.time_embed_dim);
  }
  auto time_feats =
      Tensor::from_values({n, cfg_.time_embed_dim}, std::move(emb));

  Tensor h = add(matmul(x, in_w_), in_b_);
  for (const auto& blk : blocks_) {
    Tensor g = add(h, add(matmul(time_feats, blk.time_w), blk.time_b));
    if (cfg_.condition_dim > 0) {
      g = add(g, add(matmul(*cond, blk.cond_w), blk.cond_b));
    }
    Tensor u = tanh(add(matmul(g, blk.w1), blk.b1));
    u = add(matmul(u, blk.w2), blk.b2);
    h = add(h, u);
  }
  return add(matmul(h, out_w_), out_b_);
}

std::vector<std::pair<std::string, Tensor>> VelocityModel::named_parameters()
    const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("in.w", in_w_);
  out.emplace_back("in.b", in_b_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "block" + std::to_string(b);
    out.emplace_back(p + ".time_w", blocks_[b].time_w);
    out.emplace_back(p + ".time_b", blocks_[b].time_b);
    if (cfg_.condition_dim > 0) {
      out.emplace_back(p + ".cond_w", blocks_[b].cond_w);
      out.emplace_back(p + ".cond_b", blocks_[b].cond_b);
    }
    out.emplace_back(p + ".w1", blocks_[b].w1);
    out.emplace_back(p + ".b1", blocks_[b].b1);
    out.emplace_back(p + ".w2", blocks_[b].w2);
    out.emplace_back(p + ".b2", blocks_[b].b2);
  }
  out.emplace_back("out.w", out_w_);
  out.emplace_back("out.b", out_b_);
  return out;
}

std::vector<Tensor> VelocityModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void VelocityModel::set_requires_grad(bool value) {
  for (auto& [name, t] : named_parameters()) t.node()->requires_grad = value;
}

std::size_t VelocityModel::parameter_count_formula(
    const VelocityModelConfig& cfg) {
  const std::size_t d = cfg.data_dim, w = cfg.width;
  const std::size_t e = cfg.time_embed_dim, c = cfg.condition_dim;
  std::size_t per_block = (e * w + w) + 2 * (w * w + w);
  if (c > 0) per_block += c * w + w;
  return (d * w + w) + cfg.depth * per_block + (w * d + d);
}

std::size_t VelocityModel::trunk_count_formula(const VelocityModelConfig& cfg) {
  return cfg.depth * 2 * (cfg.width * cfg.width + cfg.width);
}

std::size_t VelocityModel::parameter_count() const {
  return parameter_count_formula(cfg_);
}

std::size_t VelocityModel::trunk_parameter_count() const {
  return trunk_count_formula(cfg_);
}

VelocityModel clone_model(const VelocityModel& src) {
  VelocityModel dst(src.config(), 0);
  auto sp = src.named_parameters();
  auto dp = dst.named_parameters();
  for (std::size_t i = 0; i < sp.size(); ++i) {
    copy_values(dp[i].second, sp[i].second);
    dp[i].second.node()->requires_grad = sp[i].second.requires_grad();
  }
  return dst;
}

ConditionEncoder clone_encoder(const ConditionEncoder& src) {
  ConditionEncoder dst(src.config(), 0);
  auto sp = src.named_parameters();
  auto dp = dst.named_parameters();
  for (std::size_t i = 0; i < sp.size(); ++i) {
    copy_values(dp[i].second, sp[i].second);
    dp[i].second.node()->requires_grad = sp[i].second.requires_grad();
  }
  return dst;
}

}  // namespace rectflow
