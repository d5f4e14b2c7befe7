// TrainConfig parsing: TOML files are converted to JSON and read through the
// same strict reader used for checkpoint snapshots.

#include <fstream>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "cast/errors.hpp"
#include "cast/trainer.hpp"

namespace cast {
using nlohmann::json;

void AblationFlags::validate() const {
  if (no_de && (mix_de || one_de)) {
    throw ConfigError("ablation no_de cannot be combined with mix_de or one_de");
  }
  if (mix_de && one_de) {
    throw ConfigError("ablations mix_de and one_de are mutually exclusive");
  }
}

void TrainConfig::validate() const {
  if (iterations <= 0) throw ConfigError("iterations must be positive");
  if (batch <= 0) throw ConfigError("batch must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (image_size <= 0 || image_size % 8 != 0) {
    throw ConfigError("image_size must be a positive multiple of 8");
  }
  if (bank_capacity <= 0) throw ConfigError("bank_capacity must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (msp_pretrain_steps < 0) throw ConfigError("msp_pretrain_steps must be non-negative");
  if (head_hidden <= 0) throw ConfigError("head_hidden must be positive");
  weights.validate();
  flags.validate();
  try {
    augment.validate_for(image_size);
    projector.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (projector.layers() != kNumTaps) {
    throw ConfigError("projector must have one head per feature tap");
  }
}

namespace {

void require_known_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) {
    throw ConfigError("config section '" + where + "' must be a table");
  }
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) {
      throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::string pooling_name(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::max_avg_concat:
      return "max_avg_concat";
    case PoolingMode::avg:
      return "avg";
    case PoolingMode::max:
      return "max";
  }
  return "";
}

PoolingMode parse_pooling(const std::string& name) {
  if (name == "max_avg_concat") return PoolingMode::max_avg_concat;
  if (name == "avg") return PoolingMode::avg;
  if (name == "max") return PoolingMode::max;
  throw ConfigError("unknown pooling mode '" + name + "'");
}

std::pair<double, double> read_range(const json& v, const char* key) {
  if (!v.is_array() || v.size() != 2) {
    throw ConfigError(std::string("'") + key + "' must be a two-element array");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

json TrainConfig::to_json() const {
  return json{
      {"iterations", iterations},
      {"batch", batch},
      {"lr", lr},
      {"beta1", beta1},
      {"beta2", beta2},
      {"image_size", image_size},
      {"seed", seed},
      {"bank_capacity", bank_capacity},
      {"checkpoint_every", checkpoint_every},
      {"msp_pretrain_steps", msp_pretrain_steps},
      {"extractor_weights", extractor_weights},
      {"extractor_seed", extractor_seed},
      {"head_hidden", head_hidden},
      {"weights", {{"adv", weights.adv}, {"cyc", weights.cyc}, {"contra", weights.contra}, {"tau", weights.tau}}},
      {"ablation",
       {{"no_de", flags.no_de},
        {"mix_de", flags.mix_de},
        {"one_de", flags.one_de},
        {"half_cycle", flags.half_cycle},
        {"gram_substitute", flags.gram_substitute},
        {"joint_msp_grad", flags.joint_msp_grad},
        {"saturating_adv", flags.saturating_adv},
        {"augment_both", flags.augment_both}}},
      {"augment",
       {{"scale", {augment.scale_range.first, augment.scale_range.second}},
        {"rotation", {augment.rotation_range.first, augment.rotation_range.second}},
        {"crop", augment.crop_size}}},
      {"projector",
       {{"code_dims", projector.code_dims},
        {"hidden_widths", projector.hidden_widths},
        {"pooling", pooling_name(projector.pooling)}}},
  };
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    require_known_keys(j,
                       {"iterations", "batch", "lr", "beta1", "beta2", "image_size", "seed", "bank_capacity",
                        "checkpoint_every", "msp_pretrain_steps", "extractor_weights", "extractor_seed", "head_hidden",
                        "weights", "ablation", "augment", "projector"},
                       "");
    read(j, "iterations", c.iterations);
    read(j, "batch", c.batch);
    read(j, "lr", c.lr);
    read(j, "beta1", c.beta1);
    read(j, "beta2", c.beta2);
    read(j, "image_size", c.image_size);
    read(j, "seed", c.seed);
    read(j, "bank_capacity", c.bank_capacity);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "msp_pretrain_steps", c.msp_pretrain_steps);
    read(j, "extractor_weights", c.extractor_weights);
    read(j, "extractor_seed", c.extractor_seed);
    read(j, "head_hidden", c.head_hidden);
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      require_known_keys(w, {"adv", "cyc", "contra", "tau"}, "weights");
      read(w, "adv", c.weights.adv);
      read(w, "cyc", c.weights.cyc);
      read(w, "contra", c.weights.contra);
      read(w, "tau", c.weights.tau);
    }
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      require_known_keys(a,
                         {"no_de", "mix_de", "one_de", "half_cycle", "gram_substitute", "joint_msp_grad",
                          "saturating_adv", "augment_both"},
                         "ablation");
      read(a, "no_de", c.flags.no_de);
      read(a, "mix_de", c.flags.mix_de);
      read(a, "one_de", c.flags.one_de);
      read(a, "half_cycle", c.flags.half_cycle);
      read(a, "gram_substitute", c.flags.gram_substitute);
      read(a, "joint_msp_grad", c.flags.joint_msp_grad);
      read(a, "saturating_adv", c.flags.saturating_adv);
      read(a, "augment_both", c.flags.augment_both);
    }
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      require_known_keys(a, {"scale", "rotation", "crop"}, "augment");
      if (a.contains("scale")) c.augment.scale_range = read_range(a["scale"], "augment.scale");
      if (a.contains("rotation")) c.augment.rotation_range = read_range(a["rotation"], "augment.rotation");
      read(a, "crop", c.augment.crop_size);
    }
    if (j.contains("projector")) {
      const auto& p = j["projector"];
      require_known_keys(p, {"code_dims", "hidden_widths", "pooling"}, "projector");
      read(p, "code_dims", c.projector.code_dims);
      read(p, "hidden_widths", c.projector.hidden_widths);
      if (p.contains("pooling")) c.projector.pooling = parse_pooling(p["pooling"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_toml_string(std::string_view text) {
  toml::table table;
  try {
    table = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML parse error: " << e.description() << " at " << e.source().begin;
    throw ConfigError(msg.str());
  }
  std::ostringstream as_json;
  as_json << toml::json_formatter{table};
  return from_json(json::parse(as_json.str()));
}

TrainConfig TrainConfig::from_toml_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config file '" + path.string() + "'");
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_toml_string(buffer.str());
}

}  // namespace cast
