#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "feat/egc.hpp"
#include "feat/model.hpp"
#include "feat/replay.hpp"

namespace feat {

struct ReplayConfig {
  std::size_t capacity = 10;  // M
  std::size_t per_task = 5;   // N
  ReplayPolicy policy = ReplayPolicy::kClassBalancedUniform;
};

struct ModelConfig {
  ExtractorKind kind = ExtractorKind::kMlp2;
  int hidden_dim = 64;
  int feature_dim = 32;
};

struct GsaSettings {
  double temperature = 0.1;
  double weight = 0.5;
  bool enabled = true;
};

/// Everything a run depends on. Sub-seeds are derived from master_seed, see
/// experiment_seeds().
struct ExperimentConfig {
  SyntheticSpec dataset{10, 200, 20, 0.3};
  int clients = 5;
  int tasks = 3;
  int rounds = 20;
  int epochs = 2;
  int batch_size = 32;
  double lr = 0.1;
  double weight_decay = 1e-5;
  double dirichlet_beta = 0.5;
  double holdout_fraction = 0.2;
  ReplayConfig replay;
  ModelConfig model;
  GsaSettings gsa;
  EgcConfig egc;
  bool weighted_model_aggregation = false;
  bool parallel_clients = false;
  std::uint64_t master_seed = 0;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Reads a config from JSON. Missing keys keep their defaults; unknown keys,
/// wrong types and invalid values raise ConfigError naming the dotted field.
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Throws ConfigError on the first invalid field.
void validate(const ExperimentConfig& cfg);

/// Applies a "dotted.path=value" override to a config document. The value is
/// parsed as JSON when possible (numbers, true/false, quoted strings) and used
/// as a bare string otherwise. The path must name an existing key.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// File -> defaults-merged document -> overrides -> validated config.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

/// Ablation label of a config: "replay-only", "gsa", "egc" or "gsa+egc".
std::string ablation_tag(const ExperimentConfig& cfg);

/// Sub-seeds used by a run.
struct ExperimentSeeds {
  std::uint64_t data;
  std::uint64_t partition;
  std::uint64_t basis;
  std::uint64_t model_init;
  std::uint64_t holdout;
  std::uint64_t clients;  // client k uses derive_seed(clients, {k})
  std::uint64_t replay;   // client k buffer uses derive_seed(replay, {k})
};

ExperimentSeeds experiment_seeds(std::uint64_t master_seed);

}  // namespace feat
