#include "feat/config.hpp"

#include <fstream>
#include <limits>

#include "feat/errors.hpp"
#include "feat/random.hpp"

namespace feat {

using nlohmann::json;

namespace {

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Overlays `user` onto `base`, rejecting keys `base` does not have.
void merge_known(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError(prefix, "expected an object");
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = join(prefix, it.key());
    if (!base.contains(it.key())) {
      throw ConfigError(path, "unknown configuration key");
    }
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_known(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

const json& at(const json& j, const std::string& path) {
  const json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) {
      throw ConfigError(path, "missing");
    }
    node = &(*node)[key];
    if (dot == std::string::npos) return *node;
    start = dot + 1;
  }
}

int get_int(const json& j, const std::string& path) {
  const json& v = at(j, path);
  if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw ConfigError(path, "integer out of range");
  }
  return static_cast<int>(x);
}

std::size_t get_size(const json& j, const std::string& path) {
  const json& v = at(j, path);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ConfigError(path, "expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::uint64_t get_u64(const json& j, const std::string& path) {
  const json& v = at(j, path);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(path, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double get_double(const json& j, const std::string& path) {
  const json& v = at(j, path);
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  return v.get<double>();
}

bool get_bool(const json& j, const std::string& path) {
  const json& v = at(j, path);
  if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
  return v.get<bool>();
}

std::string get_string(const json& j, const std::string& path) {
  const json& v = at(j, path);
  if (!v.is_string()) throw ConfigError(path, "expected a string");
  return v.get<std::string>();
}

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  return json{
      {"dataset",
       {{"classes", c.dataset.classes},
        {"per_class", c.dataset.per_class},
        {"input_dim", c.dataset.input_dim},
        {"spread", c.dataset.spread}}},
      {"clients", c.clients},
      {"tasks", c.tasks},
      {"rounds", c.rounds},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"dirichlet_beta", c.dirichlet_beta},
      {"holdout_fraction", c.holdout_fraction},
      {"replay",
       {{"capacity", c.replay.capacity}, {"per_task", c.replay.per_task}, {"policy", to_string(c.replay.policy)}}},
      {"model",
       {{"kind", to_string(c.model.kind)}, {"hidden_dim", c.model.hidden_dim}, {"feature_dim", c.model.feature_dim}}},
      {"gsa", {{"temperature", c.gsa.temperature}, {"lambda", c.gsa.weight}, {"enabled", c.gsa.enabled}}},
      {"egc", {{"rho", c.egc.ema_decay}, {"epsilon", c.egc.epsilon}, {"enabled", c.egc.enabled}}},
      {"weighted_model_aggregation", c.weighted_model_aggregation},
      {"parallel_clients", c.parallel_clients},
      {"master_seed", c.master_seed},
  };
}

ExperimentConfig config_from_json(const json& user) {
  json doc = config_to_json(ExperimentConfig{});
  merge_known(doc, user, "");

  ExperimentConfig c;
  c.dataset.classes = get_int(doc, "dataset.classes");
  c.dataset.per_class = get_int(doc, "dataset.per_class");
  c.dataset.input_dim = get_int(doc, "dataset.input_dim");
  c.dataset.spread = get_double(doc, "dataset.spread");
  c.clients = get_int(doc, "clients");
  c.tasks = get_int(doc, "tasks");
  c.rounds = get_int(doc, "rounds");
  c.epochs = get_int(doc, "epochs");
  c.batch_size = get_int(doc, "batch_size");
  c.lr = get_double(doc, "lr");
  c.weight_decay = get_double(doc, "weight_decay");
  c.dirichlet_beta = get_double(doc, "dirichlet_beta");
  c.holdout_fraction = get_double(doc, "holdout_fraction");
  c.replay.capacity = get_size(doc, "replay.capacity");
  c.replay.per_task = get_size(doc, "replay.per_task");
  try {
    c.replay.policy = parse_replay_policy(get_string(doc, "replay.policy"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("replay.policy", e.what());
  }
  try {
    c.model.kind = parse_extractor_kind(get_string(doc, "model.kind"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("model.kind", e.what());
  }
  c.model.hidden_dim = get_int(doc, "model.hidden_dim");
  c.model.feature_dim = get_int(doc, "model.feature_dim");
  c.gsa.temperature = get_double(doc, "gsa.temperature");
  c.gsa.weight = get_double(doc, "gsa.lambda");
  c.gsa.enabled = get_bool(doc, "gsa.enabled");
  c.egc.ema_decay = get_double(doc, "egc.rho");
  c.egc.epsilon = get_double(doc, "egc.epsilon");
  c.egc.enabled = get_bool(doc, "egc.enabled");
  c.weighted_model_aggregation = get_bool(doc, "weighted_model_aggregation");
  c.parallel_clients = get_bool(doc, "parallel_clients");
  c.master_seed = get_u64(doc, "master_seed");
  validate(c);
  return c;
}

void validate(const ExperimentConfig& c) {
  require(c.tasks >= 1, "tasks", "must be at least 1");
  require(c.dataset.classes >= 2 * c.tasks, "dataset.classes",
          "every task needs at least 2 classes (classes >= 2 * tasks)");
  require(c.dataset.per_class >= 1, "dataset.per_class", "must be at least 1");
  require(c.dataset.input_dim >= 1, "dataset.input_dim", "must be at least 1");
  require(c.dataset.spread >= 0.0, "dataset.spread", "must be non-negative");
  require(c.clients >= 1, "clients", "must be at least 1");
  require(c.rounds >= 0, "rounds", "must be non-negative");
  require(c.epochs >= 0, "epochs", "must be non-negative");
  require(c.batch_size >= 1, "batch_size", "must be at least 1");
  require(c.lr >= 0.0, "lr", "must be non-negative");
  require(c.weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(c.dirichlet_beta > 0.0, "dirichlet_beta", "must be positive");
  require(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0, "holdout_fraction", "must lie in (0, 1)");
  require(c.model.feature_dim >= c.dataset.classes, "model.feature_dim",
          "must be at least the total class count");
  require(c.model.kind == ExtractorKind::kLinear || c.model.hidden_dim >= 1, "model.hidden_dim",
          "must be at least 1");
  require(c.gsa.temperature > 0.0, "gsa.temperature", "must be positive");
  require(c.gsa.weight >= 0.0, "gsa.lambda", "must be non-negative");
  require(c.egc.ema_decay > 0.0 && c.egc.ema_decay <= 1.0, "egc.rho", "must lie in (0, 1]");
  require(c.egc.epsilon > 0.0, "egc.epsilon", "must be positive");
}

void apply_override(json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("", "override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) {
      throw ConfigError(path, "unknown configuration key");
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) {
    throw ConfigError(path, "cannot override a whole section");
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = std::move(value);
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("", "cannot open config file " + path.string());
  }
  json user = json::parse(in, nullptr, false);
  if (user.is_discarded()) {
    throw ConfigError("", "config file " + path.string() + " is not valid JSON");
  }
  json doc = config_to_json(ExperimentConfig{});
  merge_known(doc, user, "");
  for (const std::string& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

std::string ablation_tag(const ExperimentConfig& cfg) {
  const bool gsa = cfg.gsa.enabled && cfg.gsa.weight > 0.0;
  if (gsa && cfg.egc.enabled) return "gsa+egc";
  if (gsa) return "gsa";
  if (cfg.egc.enabled) return "egc";
  return "replay-only";
}

ExperimentSeeds experiment_seeds(std::uint64_t master_seed) {
  return {derive_seed(master_seed, {1}), derive_seed(master_seed, {2}), derive_seed(master_seed, {3}),
          derive_seed(master_seed, {4}), derive_seed(master_seed, {5}), derive_seed(master_seed, {6}),
          derive_seed(master_seed, {7})};
}

}  // namespace feat
