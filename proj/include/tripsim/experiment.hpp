#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "tripsim/keys.hpp"
#include "tripsim/router.hpp"
#include "tripsim/synthetic.hpp"

namespace tripsim {

/// Component removals for ablation runs; ablation_row() stacks them cumulatively.
struct AblationFlags {
  bool no_capacity = false;
  bool no_static_keys = false;
  bool random_assignment = false;
  bool no_kl = false;

  bool operator==(const AblationFlags&) const = default;
};

struct SeedConfig {
  std::uint64_t data = 0;        ///< dataset generation and train/eval split
  std::uint64_t model = 1;       ///< text head, keys, expert init, batch order
  std::uint64_t clustering = 2;  ///< k-means++ seeding and random routing

  bool operator==(const SeedConfig&) const = default;
};

struct ExperimentConfig {
  std::size_t experts = 4;
  std::size_t prompt_tokens = 32;
  std::size_t dims = 64;
  double alpha_train = 1.0;
  double alpha_infer = 2.0;
  double beta = 0.8;
  double tau = 0.07;
  double lr = 4e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 16;
  std::size_t rounds = 15;
  std::size_t local_epochs = 1;
  KeyStrategy key_strategy = KeyStrategy::orthogonal;
  double expert_init_std = 0.02;
  std::size_t cluster_max_iters = 10;
  double cluster_tol = 1e-4;
  double eta_theta = 0.1;
  /// Synthetic corpus; `dims` and `seed` come from this config, not from here.
  GeneratorConfig generator;
  /// JSON-lines fixture to load instead of generating; empty means generate.
  std::string fixture;
  std::size_t target_domain = 3;
  double train_fraction = 0.9;
  SeedConfig seeds;
  AblationFlags ablation;

  /// Throws ConfigError with the offending field path.
  void validate() const;

  double effective_beta() const { return ablation.no_kl ? 0.0 : beta; }
  RouterOptions router_options(double alpha) const;
  GeneratorConfig generator_config() const;

  /// Expert parameters moved per client per direction per round: M * L * D.
  std::size_t expert_payload() const { return experts * prompt_tokens * dims; }
  /// One-time key broadcast per client: M * D.
  std::size_t key_payload() const { return experts * dims; }

  bool operator==(const ExperimentConfig&) const = default;
};

/// "trip" (M=4, L=32) or "trip-lite" (M=2, L=1) on top of the defaults.
ExperimentConfig preset(std::string_view name);

/// Ablation lattice row 0..4: full, -capacity, -keys, -clustering, -KL.
AblationFlags ablation_row(std::size_t row);

nlohmann::json to_json(const ExperimentConfig& cfg);

/// Strict parse: unknown keys, wrong types and invalid values raise
/// ConfigError naming the JSON path (e.g. "config.generator.noise").
ExperimentConfig config_from_json(const nlohmann::json& j);

}  // namespace tripsim
