#include "rectflow/checkpoint.hpp"

#include <json.hpp>

#include "rectflow/io_util.hpp"
#include "rectflow/rng.hpp"

namespace rectflow {

namespace {

constexpr char kMagic[8] = {'R', 'F', 'C', 'K', 'P', 'T', '0', '1'};

nlohmann::json model_cfg_json(const VelocityModelConfig& cfg) {
  return {{"data_dim", cfg.data_dim},
          {"width", cfg.width},
          {"depth", cfg.depth},
          {"time_embed_dim", cfg.time_embed_dim},
          {"time_max_period", cfg.time_max_period},
          {"condition_dim", cfg.condition_dim}};
}

VelocityModelConfig model_cfg_from_json(const nlohmann::json& j) {
  VelocityModelConfig cfg;
  cfg.data_dim = j.at("data_dim").get<std::size_t>();
  cfg.width = j.at("width").get<std::size_t>();
  cfg.depth = j.at("depth").get<std::size_t>();
  cfg.time_embed_dim = j.at("time_embed_dim").get<std::size_t>();
  cfg.time_max_period = j.at("time_max_period").get<double>();
  cfg.condition_dim = j.at("condition_dim").get<std::size_t>();
  return cfg;
}

nlohmann::json encoder_cfg_json(const ConditionEncoderConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size},   {"seq_len", cfg.seq_len},
          {"embed_dim", cfg.embed_dim},     {"channels", cfg.channels},
          {"layers", cfg.layers},           {"kernel_size", cfg.kernel_size},
          {"condition_dim", cfg.condition_dim}};
}

ConditionEncoderConfig encoder_cfg_from_json(const nlohmann::json& j) {
  ConditionEncoderConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  cfg.seq_len = j.at("seq_len").get<std::size_t>();
  cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
  cfg.channels = j.at("channels").get<std::size_t>();
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.kernel_size = j.at("kernel_size").get<std::size_t>();
  cfg.condition_dim = j.at("condition_dim").get<std::size_t>();
  return cfg;
}

void put_blob(std::vector<std::uint8_t>& buf, const std::string& name,
              const Shape& shape, const std::vector<double>& values) {
  io::put_string(buf, name);
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) io::put<std::uint64_t>(buf, d);
  io::put_doubles(buf, values);
}

struct Blob {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

Blob get_blob(const std::vector<std::uint8_t>& buf, std::size_t& pos) {
  Blob b;
  b.name = io::get_string(buf, pos);
  const auto rank = io::get<std::uint32_t>(buf, pos);
  std::size_t total = 1;
  for (std::uint32_t d = 0; d < rank; ++d) {
    b.shape.push_back(
        static_cast<std::size_t>(io::get<std::uint64_t>(buf, pos)));
    total *= b.shape.back();
  }
  b.values = io::get_doubles(buf, pos, total);
  return b;
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelBundle::named_parameters()
    const {
  if (!model) throw ContractError("empty model bundle");
  auto out = model->named_parameters();
  if (encoder) {
    auto enc = encoder->named_parameters();
    out.insert(out.end(), enc.begin(), enc.end());
  }
  return out;
}

std::uint64_t ModelBundle::fingerprint() const {
  const auto& cfg = model->config();
  std::string arch = "v1;" + std::to_string(cfg.data_dim) + ";" +
                     std::to_string(cfg.width) + ";" +
                     std::to_string(cfg.depth) + ";" +
                     std::to_string(cfg.time_embed_dim) + ";" +
                     std::to_string(cfg.condition_dim);
  std::uint64_t h = rng::fnv1a64(arch.data(), arch.size());
  for (const auto& [name, t] : named_parameters()) {
    h = rng::fnv1a64(name.data(), name.size(), h);
    h = rng::fnv1a64(t.values().data(), t.values().size() * sizeof(double), h);
  }
  return h;
}

Tensor ModelBundle::encode_tokens(
    const std::vector<std::vector<int>>& sequences) const {
  if (!encoder) {
    throw ContractError("encode_tokens on an unconditional bundle");
  }
  return encoder->encode_batch(sequences);
}

ModelBundle ModelBundle::deep_copy() const {
  ModelBundle out;
  out.model = std::make_shared<VelocityModel>(clone_model(*model));
  if (encoder) {
    out.encoder = std::make_shared<ConditionEncoder>(clone_encoder(*encoder));
  }
  return out;
}

ModelBundle make_bundle(const VelocityModelConfig& model_cfg,
                        const std::optional<ConditionEncoderConfig>& enc_cfg,
                        std::uint64_t init_seed) {
  if (enc_cfg.has_value() &&
      enc_cfg->condition_dim != model_cfg.condition_dim) {
    throw ConfigError("encoder.condition_dim does not match the model");
  }
  if (!enc_cfg.has_value() && model_cfg.condition_dim != 0) {
    throw ConfigError("conditional model without an encoder config");
  }
  ModelBundle bundle;
  bundle.model = std::make_shared<VelocityModel>(model_cfg, init_seed);
  if (enc_cfg.has_value()) {
    bundle.encoder =
        std::make_shared<ConditionEncoder>(*enc_cfg, init_seed ^ 0xE2CDull);
  }
  return bundle;
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json header{
      {"version", 1},
      {"stage", stage},
      {"iteration", iteration},
      {"config_hash", config_hash},
      {"init_seed", init_seed},
      {"train_seed", train_seed},
      {"model", model_cfg_json(bundle.model->config())},
      {"adam",
       {{"learning_rate", adam_cfg.learning_rate},
        {"beta1", adam_cfg.beta1},
        {"beta2", adam_cfg.beta2},
        {"epsilon", adam_cfg.epsilon},
        {"step", adam_step}}},
  };
  if (bundle.encoder) {
    header["encoder"] = encoder_cfg_json(bundle.encoder->config());
  }

  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 8);
  io::put_string(buf, header.dump());

  const auto params = bundle.named_parameters();
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) put_blob(buf, name, t.shape(), t.values());

  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(adam_m.size()));
  for (const auto& [name, m] : adam_m) put_blob(buf, name, {m.size()}, m);
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(adam_v.size()));
  for (const auto& [name, v] : adam_v) put_blob(buf, name, {v.size()}, v);

  io::write_file_atomic(path, buf);
}

Checkpoint Checkpoint::load(const std::string& path) {
  const auto buf = io::read_file(path);
  std::size_t pos = 0;
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 8) != 0) {
    throw IoError("'" + path + "' is not a checkpoint file");
  }
  pos = 8;
  const auto header_text = io::get_string(buf, pos);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in '" + path + "': " + e.what());
  }

  Checkpoint ckpt;
  ckpt.stage = header.at("stage").get<std::string>();
  ckpt.iteration = header.at("iteration").get<std::uint64_t>();
  ckpt.config_hash = header.at("config_hash").get<std::string>();
  ckpt.init_seed = header.at("init_seed").get<std::uint64_t>();
  ckpt.train_seed = header.at("train_seed").get<std::uint64_t>();
  const auto& adam = header.at("adam");
  ckpt.adam_cfg.learning_rate = adam.at("learning_rate").get<double>();
  ckpt.adam_cfg.beta1 = adam.at("beta1").get<double>();
  ckpt.adam_cfg.beta2 = adam.at("beta2").get<double>();
  ckpt.adam_cfg.epsilon = adam.at("epsilon").get<double>();
  ckpt.adam_step = adam.at("step").get<std::uint64_t>();

  const auto model_cfg = model_cfg_from_json(header.at("model"));
  std::optional<ConditionEncoderConfig> enc_cfg;
  if (header.contains("encoder")) {
    enc_cfg = encoder_cfg_from_json(header.at("encoder"));
  }
  ckpt.bundle = make_bundle(model_cfg, enc_cfg, 0);

  const auto n_params = io::get<std::uint32_t>(buf, pos);
  auto live = ckpt.bundle.named_parameters();
  if (n_params != live.size()) {
    throw IoError("checkpoint '" + path + "' carries " +
                  std::to_string(n_params) + " blobs, model wants " +
                  std::to_string(live.size()));
  }
  for (std::uint32_t i = 0; i < n_params; ++i) {
    auto blob = get_blob(buf, pos);
    if (blob.name != live[i].first || blob.shape != live[i].second.shape()) {
      throw IoError("checkpoint blob '" + blob.name +
                    "' does not match parameter '" + live[i].first + "'");
    }
    live[i].second.mutable_values() = std::move(blob.values);
  }

  const auto n_m = io::get<std::uint32_t>(buf, pos);
  for (std::uint32_t i = 0; i < n_m; ++i) {
    auto blob = get_blob(buf, pos);
    ckpt.adam_m.emplace_back(blob.name, std::move(blob.values));
  }
  const auto n_v = io::get<std::uint32_t>(buf, pos);
  for (std::uint32_t i = 0; i < n_v; ++i) {
    auto blob = get_blob(buf, pos);
    ckpt.adam_v.emplace_back(blob.name, std::move(blob.values));
  }
  return ckpt;
}

}  // namespace rectflow
