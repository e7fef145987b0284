#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tripsim/experiment.hpp"

namespace tripsim {

struct DomainMetrics {
  std::size_t domain = 0;
  std::string role;  ///< "target" or "source"
  std::size_t samples = 0;
  double accuracy = 0.0;
  double ce = 0.0;
  double kl = 0.0;
  double dropped_rate = 0.0;
  std::vector<double> per_class_accuracy;

  bool operator==(const DomainMetrics&) const = default;
};

struct TrainMetrics {
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double dropped_rate = 0.0;

  bool operator==(const TrainMetrics&) const = default;
};

struct RoundRecord {
  std::size_t round = 0;
  TrainMetrics train;
  std::vector<DomainMetrics> eval;
  std::vector<double> expert_utilization;  ///< mean pi per expert over the round's routed images
  std::size_t uplink_params = 0;
  std::size_t downlink_params = 0;
  std::size_t key_params = 0;

  bool operator==(const RoundRecord&) const = default;
};

struct CommSummary {
  std::size_t clients = 0;
  std::size_t params_per_client_round = 0;  ///< M * L * D
  std::size_t key_params_per_client = 0;    ///< M * D, sent once
  std::size_t key_broadcast_rounds = 0;
  std::size_t total_uplink = 0;
  std::size_t total_downlink = 0;

  bool operator==(const CommSummary&) const = default;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<DomainMetrics> zero_shot;
  std::vector<RoundRecord> rounds;
  double zero_shot_target_accuracy = 0.0;
  double final_target_accuracy = 0.0;
  CommSummary comm;

  bool operator==(const RunReport&) const = default;
};

nlohmann::json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

/// Canonical report.json text (2-space indent, sorted keys, trailing newline).
std::string report_json_text(const RunReport& report);
/// round,domain,accuracy,ce,kl,dropped_rate
std::string metrics_csv(const RunReport& report);
/// round,uplink_params,downlink_params
std::string comm_csv(const RunReport& report);

/// Shortest round-trip decimal form of a double.
std::string format_number(double v);

/// Writes report.json, metrics.csv and comm.csv into `out_dir` (created if
/// missing). I/O failures raise std::runtime_error naming the path.
void emit_report(const RunReport& report, const std::filesystem::path& out_dir);

}  // namespace tripsim
