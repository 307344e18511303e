#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "disent/discovery.hpp"
#include "disent/metrics.hpp"
#include "disent/models.hpp"
#include "disent/training.hpp"

namespace disent {

using nlohmann::json;

// Raised for malformed config files, unknown keys, and bad overrides.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a referenced input file (dataset, checkpoint) does not exist.
struct MissingInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The complete key schema with defaults. Every supported key appears here:
// user files and overrides may only set keys present in this tree.
inline json default_config_json() {
  return json{
      {"seed", 0},
      {"out_dir", "runs/default"},
      {"checkpoint", ""},
      {"data",
       {{"path", ""}, {"count", 8192}, {"resolution", 32}, {"seed", 0}}},
      {"model",
       {{"latent_dim", 6},
        {"resolution", 32},
        {"base_channels", 32},
        {"first_layer_mode", "bare"}}},
      {"train",
       {{"iters", 30000},
        {"batch", 16},
        {"lr_g", 2e-4},
        {"lr_d", 2e-4},
        {"beta1", 0.5},
        {"beta2", 0.999},
        {"eval_every", 1000},
        {"checkpoint_every", 5000}}},
      {"penalty",
       {{"kind", "orojar"},
        {"lambda", 10.0},
        {"epsilon", 0.1},
        {"k_samples", 2},
        {"layers", json::array({1, 2, 3})}}},
      {"metrics",
       {{"vp_pairs", 10000},
        {"vp_epochs", 10},
        {"vp_delta", 1.0},
        {"vp_batch", 64},
        {"vp_lr", 1e-3},
        {"vp_repeats", 3},
        {"act_n_z", 64},
        {"act_n_steps", 9},
        {"path_n", 256},
        {"path_eps", 0.01}}},
      {"discover",
       {{"n_dirs", 0}, {"eta", 1.0}, {"lr", 1e-3}, {"iters", 2000}, {"batch", 8}}},
      {"traverse", {{"steps", 9}, {"range", 2.0}}},
  };
}

namespace detail {

inline bool value_fits(const json& slot, const json& v) {
  if (slot.is_number_integer() && v.is_number_integer()) return true;
  if (slot.is_number_float() && v.is_number()) return true;  // int promotes to float
  if (slot.is_string() && v.is_string()) return true;
  if (slot.is_boolean() && v.is_boolean()) return true;
  if (slot.is_array() && v.is_array()) return true;
  return false;
}

inline void merge_user_json(json& schema, const json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError("config section \"" + (prefix.empty() ? "<root>" : prefix) +
                      "\" must be an object");
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config key \"" + path + "\"");
    json& slot = schema[it.key()];
    if (slot.is_object()) {
      merge_user_json(slot, it.value(), path);
    } else if (value_fits(slot, it.value())) {
      slot = it.value();
    } else {
      throw ConfigError("config key \"" + path + "\" has the wrong type (expected " +
                        std::string(slot.type_name()) + ")");
    }
  }
}

inline void list_leaves(const json& node, const std::string& prefix,
                        std::vector<std::pair<std::string, std::string>>& out) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object()) {
      list_leaves(it.value(), path, out);
    } else {
      out.emplace_back(path, it.value().dump());
    }
  }
}

}  // namespace detail

// Applies one "dotted.path=value" assignment onto the schema tree. The value
// is parsed as JSON when possible and treated as a bare string otherwise.
inline void apply_override(json& schema, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override \"" + assignment + "\" must have the form key=value");
  }
  std::string path = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // unquoted strings like bare/orojar

  json* node = &schema;
  std::string consumed;
  std::istringstream is(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(is, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    consumed = consumed.empty() ? parts[i] : consumed + "." + parts[i];
    if (!node->contains(parts[i])) throw ConfigError("unknown config key \"" + consumed + "\"");
    node = &(*node)[parts[i]];
    if (i + 1 < parts.size() && !node->is_object()) {
      throw ConfigError("config key \"" + consumed + "\" has no sub-keys");
    }
  }
  if (node->is_object()) {
    throw ConfigError("config key \"" + path + "\" is a section, not a value");
  }
  if (!detail::value_fits(*node, value)) {
    throw ConfigError("override \"" + path + "\" has the wrong type (expected " +
                      std::string(node->type_name()) + ")");
  }
  *node = value;
}

// Loads the schema, merges an optional JSON file and then the overrides, and
// returns the fully resolved tree.
inline json resolve_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
  json schema = default_config_json();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw MissingInputError("config file not found: " + config_path);
    json user = json::parse(f, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config file is not valid JSON: " + config_path);
    detail::merge_user_json(schema, user, "");
  }
  for (const auto& ov : overrides) apply_override(schema, ov);
  return schema;
}

// One line per key: "path = default". Backs the --help key reference.
inline std::string config_key_reference() {
  std::vector<std::pair<std::string, std::string>> leaves;
  detail::list_leaves(default_config_json(), "", leaves);
  std::ostringstream os;
  for (const auto& [k, v] : leaves) os << "  " << k << " = " << v << "\n";
  return os.str();
}

// Typed view over a resolved tree.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string checkpoint;

  std::string data_path;
  std::int64_t data_count = 0;
  std::int64_t data_resolution = 0;
  std::uint64_t data_seed = 0;

  GeneratorConfig model;
  TrainConfig train;
  MetricsConfig metrics;

  std::int64_t discover_n_dirs = 0;
  double discover_eta = 1.0;
  double discover_lr = 1e-3;
  std::int64_t discover_iters = 2000;
  std::int64_t discover_batch = 8;

  std::int64_t traverse_steps = 9;
  double traverse_range = 2.0;

  DiscoverConfig discover_config() const {
    DiscoverConfig d;
    d.penalty = train.penalty;
    d.n_dirs = discover_n_dirs;
    d.eta = discover_eta;
    d.lr = discover_lr;
    d.iters = discover_iters;
    d.batch = discover_batch;
    return d;
  }
};

inline ExperimentConfig typed_config(const json& j) {
  ExperimentConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.checkpoint = j.at("checkpoint").get<std::string>();

  const json& d = j.at("data");
  c.data_path = d.at("path").get<std::string>();
  c.data_count = d.at("count").get<std::int64_t>();
  c.data_resolution = d.at("resolution").get<std::int64_t>();
  c.data_seed = d.at("seed").get<std::uint64_t>();

  const json& m = j.at("model");
  c.model.latent_dim = m.at("latent_dim").get<std::int64_t>();
  c.model.resolution = m.at("resolution").get<std::int64_t>();
  c.model.base_channels = m.at("base_channels").get<std::int64_t>();
  c.model.first_layer_mode = m.at("first_layer_mode").get<std::string>();

  const json& t = j.at("train");
  c.train.model = c.model;
  c.train.iters = t.at("iters").get<std::int64_t>();
  c.train.batch = t.at("batch").get<std::int64_t>();
  c.train.lr_g = t.at("lr_g").get<double>();
  c.train.lr_d = t.at("lr_d").get<double>();
  c.train.beta1 = t.at("beta1").get<double>();
  c.train.beta2 = t.at("beta2").get<double>();
  c.train.eval_every = t.at("eval_every").get<std::int64_t>();
  c.train.checkpoint_every = t.at("checkpoint_every").get<std::int64_t>();
  c.train.seed = c.seed;

  const json& p = j.at("penalty");
  try {
    c.train.penalty_kind = penalty_kind_from_string(p.at("kind").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.train.penalty.lambda = p.at("lambda").get<double>();
  c.train.penalty.epsilon = p.at("epsilon").get<double>();
  c.train.penalty.k_samples = p.at("k_samples").get<std::int64_t>();
  c.train.penalty.layers = p.at("layers").get<std::vector<std::int64_t>>();

  const json& me = j.at("metrics");
  c.metrics.vp.n_pairs = me.at("vp_pairs").get<std::int64_t>();
  c.metrics.vp.epochs = me.at("vp_epochs").get<std::int64_t>();
  c.metrics.vp.delta = me.at("vp_delta").get<double>();
  c.metrics.vp.batch = me.at("vp_batch").get<std::int64_t>();
  c.metrics.vp.lr = me.at("vp_lr").get<double>();
  c.metrics.vp.repeats = me.at("vp_repeats").get<std::int64_t>();
  c.metrics.act_n_z = me.at("act_n_z").get<std::int64_t>();
  c.metrics.act_n_steps = me.at("act_n_steps").get<std::int64_t>();
  c.metrics.path_n = me.at("path_n").get<std::int64_t>();
  c.metrics.path_eps = me.at("path_eps").get<double>();
  c.metrics.seed = c.seed;

  const json& dis = j.at("discover");
  c.discover_n_dirs = dis.at("n_dirs").get<std::int64_t>();
  c.discover_eta = dis.at("eta").get<double>();
  c.discover_lr = dis.at("lr").get<double>();
  c.discover_iters = dis.at("iters").get<std::int64_t>();
  c.discover_batch = dis.at("batch").get<std::int64_t>();

  const json& tr = j.at("traverse");
  c.traverse_steps = tr.at("steps").get<std::int64_t>();
  c.traverse_range = tr.at("range").get<double>();
  return c;
}

}  // namespace disent
