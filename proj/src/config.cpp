#include "rectflow/config.hpp"

#include <fstream>
#include <sstream>

#include "rectflow/io_util.hpp"
#include "rectflow/rng.hpp"

namespace rectflow {

namespace {

using nlohmann::json;

std::string join_key(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

const json& require_object(const json& j, const std::string& path) {
  if (!j.is_object()) {
    throw ConfigError(path + ": expected an object");
  }
  return j;
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (item.key() == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key '" + join_key(path, item.key()) + "'");
    }
  }
}

std::uint64_t get_u64(const json& j, const std::string& path, const char* key,
                      std::uint64_t def, bool positive = false) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  const std::string full = join_key(path, key);
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    throw ConfigError(full + ": expected an integer, got " + v.dump());
  }
  if (v.is_number_integer() && !v.is_number_unsigned() &&
      v.get<std::int64_t>() < 0) {
    throw ConfigError(full + ": must not be negative, got " + v.dump());
  }
  const auto x = v.get<std::uint64_t>();
  if (positive && x == 0) {
    throw ConfigError(full + ": must be positive, got 0");
  }
  return x;
}

double get_f64(const json& j, const std::string& path, const char* key,
               double def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number()) {
    throw ConfigError(join_key(path, key) + ": expected a number, got " +
                      v.dump());
  }
  return v.get<double>();
}

bool get_bool(const json& j, const std::string& path, const char* key,
              bool def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_boolean()) {
    throw ConfigError(join_key(path, key) + ": expected a boolean, got " +
                      v.dump());
  }
  return v.get<bool>();
}

std::string get_str(const json& j, const std::string& path, const char* key,
                    const std::string& def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_string()) {
    throw ConfigError(join_key(path, key) + ": expected a string, got " +
                      v.dump());
  }
  return v.get<std::string>();
}

TrainStageParams parse_stage(const json& j, const std::string& path,
                             const TrainStageParams& defaults,
                             std::initializer_list<const char*> extra = {}) {
  std::vector<const char*> allowed{"iterations", "batch_size",
                                   "learning_rate", "log_interval"};
  allowed.insert(allowed.end(), extra.begin(), extra.end());
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (item.key() == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key '" + join_key(path, item.key()) + "'");
    }
  }
  TrainStageParams p = defaults;
  p.iterations = get_u64(j, path, "iterations", defaults.iterations);
  p.batch_size = static_cast<std::size_t>(
      get_u64(j, path, "batch_size", defaults.batch_size, true));
  p.learning_rate = get_f64(j, path, "learning_rate", defaults.learning_rate);
  if (!(p.learning_rate > 0.0)) {
    throw ConfigError(path + ".learning_rate: must be positive");
  }
  p.log_interval =
      get_u64(j, path, "log_interval", defaults.log_interval, true);
  return p;
}

}  // namespace

VelocityModelConfig RunConfig::teacher_model_config() const {
  VelocityModelConfig cfg;
  cfg.data_dim = dataset.dim;
  cfg.width = teacher_width;
  cfg.depth = depth;
  cfg.time_embed_dim = time_embed_dim;
  cfg.time_max_period = time_max_period;
  cfg.condition_dim = condition_dim();
  return cfg;
}

VelocityModelConfig RunConfig::student_model_config() const {
  auto cfg = teacher_model_config();
  cfg.width = student_width;
  return cfg;
}

std::size_t RunConfig::condition_dim() const {
  return encoder.has_value() ? encoder->condition_dim : 0;
}

void RunConfig::validate() const {
  dataset.validate();
  solver.validate();
  teacher_model_config().validate();
  student_model_config().validate();
  if (encoder.has_value()) encoder->validate();
  if (dataset.conditional() != encoder.has_value()) {
    throw ConfigError(
        "model.encoder must be present exactly for cond_seq datasets");
  }
  if (student_width >= teacher_width) {
    throw ConfigError("model.student_width must be below model.teacher_width");
  }
  if (k_a_step > anneal.iterations) {
    throw ConfigError(
        "stages.anneal_reflow.k_a_step must not exceed the stage iterations");
  }
  if (threads == 0) throw ConfigError("threads: must be positive");
  if (metrics.sw_projections < 16) {
    throw ConfigError("metrics.sw_projections: must be at least 16");
  }
  if (metrics.straightness_probe_steps < 8) {
    throw ConfigError("metrics.straightness_probe_steps: must be at least 8");
  }
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

RunConfig RunConfig::from_json(const json& root) {
  require_object(root, "config");
  check_keys(root, "", {"dataset", "model", "stages", "solver", "metrics",
                        "seeds", "output_dir", "threads"});
  RunConfig cfg;

  if (root.contains("dataset")) {
    const auto& d = require_object(root.at("dataset"), "dataset");
    check_keys(d, "dataset",
               {"kind", "dim", "mean", "sigma", "components", "radius",
                "vocab", "seq_len"});
    cfg.dataset.kind =
        dist_kind_from_string(get_str(d, "dataset", "kind", "gauss_nd"));
    const std::size_t default_dim =
        cfg.dataset.kind == DistKind::gauss_nd ? 1 : 2;
    cfg.dataset.dim = static_cast<std::size_t>(
        get_u64(d, "dataset", "dim", default_dim, true));
    if (d.contains("mean")) {
      const auto& m = d.at("mean");
      if (!m.is_array()) {
        throw ConfigError("dataset.mean: expected an array of numbers");
      }
      for (const auto& v : m) {
        if (!v.is_number()) {
          throw ConfigError("dataset.mean: expected an array of numbers");
        }
        cfg.dataset.mean.push_back(v.get<double>());
      }
    }
    cfg.dataset.sigma = get_f64(d, "dataset", "sigma", 1.0);
    cfg.dataset.components = static_cast<std::size_t>(
        get_u64(d, "dataset", "components", 8, true));
    cfg.dataset.radius = get_f64(d, "dataset", "radius", 4.0);
    cfg.dataset.vocab =
        static_cast<std::size_t>(get_u64(d, "dataset", "vocab", 4, true));
    cfg.dataset.seq_len =
        static_cast<std::size_t>(get_u64(d, "dataset", "seq_len", 2, true));
  }

  if (root.contains("model")) {
    const auto& m = require_object(root.at("model"), "model");
    check_keys(m, "model",
               {"teacher_width", "student_width", "depth", "time_embed_dim",
                "time_max_period", "encoder"});
    cfg.teacher_width = static_cast<std::size_t>(
        get_u64(m, "model", "teacher_width", 64, true));
    cfg.student_width = static_cast<std::size_t>(
        get_u64(m, "model", "student_width", 24, true));
    cfg.depth =
        static_cast<std::size_t>(get_u64(m, "model", "depth", 4, true));
    cfg.time_embed_dim = static_cast<std::size_t>(
        get_u64(m, "model", "time_embed_dim", 16, true));
    cfg.time_max_period = get_f64(m, "model", "time_max_period", 100.0);
    if (m.contains("encoder")) {
      const auto& e = require_object(m.at("encoder"), "model.encoder");
      check_keys(e, "model.encoder",
                 {"embed_dim", "channels", "layers", "kernel_size",
                  "condition_dim"});
      ConditionEncoderConfig enc;
      enc.embed_dim = static_cast<std::size_t>(
          get_u64(e, "model.encoder", "embed_dim", 8, true));
      enc.channels = static_cast<std::size_t>(
          get_u64(e, "model.encoder", "channels", 16, true));
      enc.layers = static_cast<std::size_t>(
          get_u64(e, "model.encoder", "layers", 2, true));
      enc.kernel_size = static_cast<std::size_t>(
          get_u64(e, "model.encoder", "kernel_size", 3, true));
      enc.condition_dim = static_cast<std::size_t>(
          get_u64(e, "model.encoder", "condition_dim", 8, true));
      cfg.encoder = enc;
    }
  }
  // The encoder rides the dataset's token layout; cond_seq datasets get a
  // default encoder when none was configured.
  if (cfg.dataset.conditional() && !cfg.encoder.has_value()) {
    cfg.encoder = ConditionEncoderConfig{};
  }
  if (cfg.encoder.has_value()) {
    if (!cfg.dataset.conditional()) {
      throw ConfigError(
          "model.encoder: only valid for cond_seq datasets");
    }
    cfg.encoder->vocab_size = cfg.dataset.vocab;
    cfg.encoder->seq_len = cfg.dataset.seq_len;
  }

  if (root.contains("stages")) {
    const auto& s = require_object(root.at("stages"), "stages");
    check_keys(s, "stages",
               {"teacher", "gen_pairs", "anneal_reflow", "distill"});
    if (s.contains("teacher")) {
      cfg.teacher = parse_stage(require_object(s.at("teacher"),
                                               "stages.teacher"),
                                "stages.teacher", cfg.teacher);
    }
    if (s.contains("gen_pairs")) {
      const auto& g = require_object(s.at("gen_pairs"), "stages.gen_pairs");
      check_keys(g, "stages.gen_pairs", {"count"});
      cfg.pair_count = static_cast<std::size_t>(
          get_u64(g, "stages.gen_pairs", "count", cfg.pair_count, true));
    }
    if (s.contains("anneal_reflow")) {
      const auto& a =
          require_object(s.at("anneal_reflow"), "stages.anneal_reflow");
      cfg.anneal = parse_stage(a, "stages.anneal_reflow", cfg.anneal,
                               {"k_a_step"});
      cfg.k_a_step =
          get_u64(a, "stages.anneal_reflow", "k_a_step", cfg.k_a_step);
    }
    if (s.contains("distill")) {
      const auto& d = require_object(s.at("distill"), "stages.distill");
      cfg.distill =
          parse_stage(d, "stages.distill", cfg.distill, {"two_step"});
      cfg.distill_two_step =
          get_bool(d, "stages.distill", "two_step", cfg.distill_two_step);
    }
  }

  if (root.contains("solver")) {
    const auto& s = require_object(root.at("solver"), "solver");
    check_keys(s, "solver",
               {"kind", "euler_steps", "rtol", "atol", "max_nfe"});
    cfg.solver.kind =
        solver_kind_from_string(get_str(s, "solver", "kind", "rk45"));
    cfg.solver.euler_steps = static_cast<std::size_t>(
        get_u64(s, "solver", "euler_steps", cfg.solver.euler_steps, true));
    cfg.solver.rtol = get_f64(s, "solver", "rtol", cfg.solver.rtol);
    cfg.solver.atol = get_f64(s, "solver", "atol", cfg.solver.atol);
    cfg.solver.max_nfe = static_cast<std::size_t>(
        get_u64(s, "solver", "max_nfe", cfg.solver.max_nfe, true));
  }

  if (root.contains("metrics")) {
    const auto& m = require_object(root.at("metrics"), "metrics");
    check_keys(m, "metrics",
               {"n_samples", "sw_projections", "straightness_probe_steps"});
    cfg.metrics.n_samples = static_cast<std::size_t>(
        get_u64(m, "metrics", "n_samples", cfg.metrics.n_samples, true));
    cfg.metrics.sw_projections = static_cast<std::size_t>(get_u64(
        m, "metrics", "sw_projections", cfg.metrics.sw_projections, true));
    cfg.metrics.straightness_probe_steps = static_cast<std::size_t>(
        get_u64(m, "metrics", "straightness_probe_steps",
                cfg.metrics.straightness_probe_steps, true));
  }

  if (root.contains("seeds")) {
    const auto& s = require_object(root.at("seeds"), "seeds");
    check_keys(s, "seeds", {"data", "init", "train", "pairs", "eval"});
    cfg.seeds.data = get_u64(s, "seeds", "data", cfg.seeds.data);
    cfg.seeds.init = get_u64(s, "seeds", "init", cfg.seeds.init);
    cfg.seeds.train = get_u64(s, "seeds", "train", cfg.seeds.train);
    cfg.seeds.pairs = get_u64(s, "seeds", "pairs", cfg.seeds.pairs);
    cfg.seeds.eval = get_u64(s, "seeds", "eval", cfg.seeds.eval);
  }

  cfg.output_dir = get_str(root, "", "output_dir", cfg.output_dir);
  cfg.threads =
      static_cast<std::size_t>(get_u64(root, "", "threads", cfg.threads, true));

  cfg.dataset.seed = cfg.seeds.data;
  cfg.validate();
  return cfg;
}

nlohmann::json RunConfig::to_json() const {
  json dataset_j{{"kind", to_string(dataset.kind)},
                 {"dim", dataset.dim},
                 {"sigma", dataset.sigma}};
  if (!dataset.mean.empty()) dataset_j["mean"] = dataset.mean;
  if (dataset.kind == DistKind::mixture_ring ||
      dataset.kind == DistKind::cond_seq) {
    dataset_j["components"] = dataset.components;
    dataset_j["radius"] = dataset.radius;
  }
  if (dataset.kind == DistKind::cond_seq) {
    dataset_j["vocab"] = dataset.vocab;
    dataset_j["seq_len"] = dataset.seq_len;
  }

  json model_j{{"teacher_width", teacher_width},
               {"student_width", student_width},
               {"depth", depth},
               {"time_embed_dim", time_embed_dim},
               {"time_max_period", time_max_period}};
  if (encoder.has_value()) {
    model_j["encoder"] = {{"embed_dim", encoder->embed_dim},
                          {"channels", encoder->channels},
                          {"layers", encoder->layers},
                          {"kernel_size", encoder->kernel_size},
                          {"condition_dim", encoder->condition_dim}};
  }

  auto stage_j = [](const TrainStageParams& p) {
    return json{{"iterations", p.iterations},
                {"batch_size", p.batch_size},
                {"learning_rate", p.learning_rate},
                {"log_interval", p.log_interval}};
  };
  json stages_j{{"teacher", stage_j(teacher)},
                {"gen_pairs", {{"count", pair_count}}},
                {"anneal_reflow", stage_j(anneal)},
                {"distill", stage_j(distill)}};
  stages_j["anneal_reflow"]["k_a_step"] = k_a_step;
  stages_j["distill"]["two_step"] = distill_two_step;

  return json{
      {"dataset", dataset_j},
      {"model", model_j},
      {"stages", stages_j},
      {"solver",
       {{"kind", to_string(solver.kind)},
        {"euler_steps", solver.euler_steps},
        {"rtol", solver.rtol},
        {"atol", solver.atol},
        {"max_nfe", solver.max_nfe}}},
      {"metrics",
       {{"n_samples", metrics.n_samples},
        {"sw_projections", metrics.sw_projections},
        {"straightness_probe_steps", metrics.straightness_probe_steps}}},
      {"seeds",
       {{"data", seeds.data},
        {"init", seeds.init},
        {"train", seeds.train},
        {"pairs", seeds.pairs},
        {"eval", seeds.eval}}},
      {"output_dir", output_dir},
      {"threads", threads},
  };
}

std::string RunConfig::hash() const {
  const std::string dump = to_json().dump();
  const std::uint64_t h = rng::fnv1a64(dump.data(), dump.size());
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(h));
  return hex;
}

RunConfig load_config_file(const std::string& path) {
  if (!io::file_exists(path)) {
    throw ConfigError("config file '" + path + "' does not exist");
  }
  const auto bytes = io::read_file(path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return RunConfig::from_json(doc);
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment +
                      "' is not of the form key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string value_text = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(value_text);
  } catch (const json::exception&) {
    value = value_text;  // bare word: treat as a string
  }

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) {
      throw ConfigError("override '" + assignment + "' has an empty key");
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace rectflow
