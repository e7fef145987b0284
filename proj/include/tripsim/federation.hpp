#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tripsim/experiment.hpp"
#include "tripsim/keys.hpp"
#include "tripsim/proxy_model.hpp"
#include "tripsim/report.hpp"
#include "tripsim/router.hpp"
#include "tripsim/synthetic.hpp"

namespace tripsim {

// Simulation bus messages. Clients can only ever upload an expert set plus
// its sample count; there is no message type that carries samples.
struct KeyBroadcast {
  StaticKeySet keys;
};
struct ExpertBroadcast {
  std::size_t round = 0;
  ExpertSet experts;
};
struct ExpertUpload {
  std::size_t client_id = 0;
  ExpertSet experts;
  std::size_t sample_count = 0;
};
using ServerMessage = std::variant<KeyBroadcast, ExpertBroadcast>;
using ClientMessage = std::variant<ExpertUpload>;

/// Learnable parameters carried by a message (sample counts are metadata).
std::size_t parameter_count(const ServerMessage& msg);
std::size_t parameter_count(const ClientMessage& msg);

struct LedgerEntry {
  std::size_t round = 0;
  std::size_t uplink_params = 0;    ///< summed over clients
  std::size_t downlink_params = 0;  ///< summed over clients, keys included
  std::size_t key_params = 0;       ///< part of downlink spent on keys
};

/// Per-round parameter traffic, filled only by the orchestrator.
class RoundLedger {
 public:
  void record_downlink(std::size_t round, const ServerMessage& msg);
  void record_uplink(std::size_t round, const ClientMessage& msg);

  const std::vector<LedgerEntry>& entries() const noexcept { return entries_; }
  /// Rounds in which any key payload was sent.
  std::size_t key_broadcast_rounds() const;

 private:
  LedgerEntry& entry(std::size_t round);
  std::vector<LedgerEntry> entries_;
};

struct ClientState {
  std::size_t id = 0;
  std::size_t domain = 0;
  std::vector<Sample> train;
  std::vector<Sample> eval;
  ExpertSet experts;
  AdamWState optimizer;
  std::optional<StaticKeySet> keys;  ///< set by the one-time key broadcast

  std::size_t sample_count() const noexcept { return train.size(); }
  void receive(const ServerMessage& msg);
  ClientMessage upload() const;
};

/// Called for every routed training image, after the batch finishes.
using RouteObserver = std::function<void(const RoutedPrompt&, const ExpertSet&)>;

/// Everything local training needs besides the client itself.
struct TrainSettings {
  const FrozenTextHead* head = nullptr;
  RouterOptions router;
  AdamWConfig optimizer;
  double beta = 0.8;
  double tau = 0.07;
  std::size_t batch_size = 16;
  std::uint64_t model_seed = 0;
  std::uint64_t clustering_seed = 0;
  std::size_t round = 0;
  RouteObserver observer;
};

struct LocalTrainResult {
  TrainMetrics metrics;
  std::vector<double> utilization_sum;  ///< sum of pi per expert over routed images
  std::size_t routed_images = 0;
};

/// `epochs` passes over the client's shuffled training set in mini-batches:
/// route each image at the training capacity, backpropagate the combined
/// loss to the experts, average over the batch, take one AdamW step.
/// The optimizer state restarts with each call. Throws ConfigError when the
/// client has no training samples.
LocalTrainResult local_train(ClientState& client, const StaticKeySet& keys,
                             const TrainSettings& settings, std::size_t epochs);

/// FedAvg: expert_m = sum_k (|S_k| / |S|) expert_m^k.
ExpertSet aggregate(const std::vector<ClientState>& clients);
ExpertSet aggregate(const std::vector<ExpertUpload>& uploads);

struct EvalSettings {
  const FrozenTextHead* head = nullptr;
  RouterOptions router;
  double beta = 0.8;
  double tau = 0.07;
  std::uint64_t clustering_seed = 0;
};

/// Routed top-1 accuracy (ties go to the lowest class id), mean ce and
/// kl against the zero-shot reference, and the dropped-token rate.
DomainMetrics evaluate(const ExpertSet& experts, const StaticKeySet& keys,
                       const std::vector<Sample>& samples, const EvalSettings& settings);

/// Zero-shot metrics from the fixed reference prompt (no routing).
DomainMetrics evaluate_zero_shot(const FrozenTextHead& head, const std::vector<Sample>& samples,
                                 double tau);

struct RunHooks {
  RouteObserver on_route;
  /// Called after each aggregation with the round number and server keys.
  std::function<void(std::size_t, const StaticKeySet&, const ExpertSet&)> on_round;
};

struct RunResult {
  RunReport report;
  ExpertSet global_experts;
  StaticKeySet keys;
};

/// Builds the world (dataset, split, text head, keys, initial experts) for a config.
struct World {
  Dataset data;
  FederatedSplit split;
  FrozenTextHead head;
  StaticKeySet keys;
  ExpertSet initial_experts;
};
World build_world(const ExperimentConfig& cfg);
World build_world(const ExperimentConfig& cfg, Dataset data);

/// Full leave-one-domain-out federation: R rounds of broadcast, local
/// training, upload and aggregation, evaluating the global experts on the
/// target and every source eval split after each round.
RunResult run(const ExperimentConfig& cfg, const RunHooks& hooks = {});
RunResult run(const ExperimentConfig& cfg, World world, const RunHooks& hooks = {});

}  // namespace tripsim
