#include "tripsim/report.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace tripsim {

namespace {

using nlohmann::json;

json to_json(const DomainMetrics& m) {
  return {{"domain", m.domain},     {"role", m.role}, {"samples", m.samples},
          {"accuracy", m.accuracy}, {"ce", m.ce},     {"kl", m.kl},
          {"dropped_rate", m.dropped_rate}, {"per_class_accuracy", m.per_class_accuracy}};
}

DomainMetrics metrics_from_json(const json& j) {
  DomainMetrics m;
  m.domain = j.at("domain").get<std::size_t>();
  m.role = j.at("role").get<std::string>();
  m.samples = j.at("samples").get<std::size_t>();
  m.accuracy = j.at("accuracy").get<double>();
  m.ce = j.at("ce").get<double>();
  m.kl = j.at("kl").get<double>();
  m.dropped_rate = j.at("dropped_rate").get<double>();
  m.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
  return m;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

json to_json(const RunReport& r) {
  json zero = json::array();
  for (const auto& m : r.zero_shot) zero.push_back(to_json(m));
  json rounds = json::array();
  for (const auto& rec : r.rounds) {
    json eval = json::array();
    for (const auto& m : rec.eval) eval.push_back(to_json(m));
    rounds.push_back({{"round", rec.round},
                      {"train",
                       {{"ce", rec.train.ce},
                        {"kl", rec.train.kl},
                        {"total", rec.train.total},
                        {"dropped_rate", rec.train.dropped_rate}}},
                      {"eval", eval},
                      {"expert_utilization", rec.expert_utilization},
                      {"uplink_params", rec.uplink_params},
                      {"downlink_params", rec.downlink_params},
                      {"key_params", rec.key_params}});
  }
  return {{"config", to_json(r.config)},
          {"seeds",
           {{"data", r.config.seeds.data},
            {"model", r.config.seeds.model},
            {"clustering", r.config.seeds.clustering}}},
          {"zero_shot", zero},
          {"rounds", rounds},
          {"zero_shot_target_accuracy", r.zero_shot_target_accuracy},
          {"final_target_accuracy", r.final_target_accuracy},
          {"comm",
           {{"clients", r.comm.clients},
            {"params_per_client_round", r.comm.params_per_client_round},
            {"key_params_per_client", r.comm.key_params_per_client},
            {"key_broadcast_rounds", r.comm.key_broadcast_rounds},
            {"total_uplink", r.comm.total_uplink},
            {"total_downlink", r.comm.total_downlink}}}};
}

RunReport report_from_json(const json& j) {
  RunReport r;
  r.config = config_from_json(j.at("config"));
  for (const auto& m : j.at("zero_shot")) r.zero_shot.push_back(metrics_from_json(m));
  for (const auto& rj : j.at("rounds")) {
    RoundRecord rec;
    rec.round = rj.at("round").get<std::size_t>();
    const auto& t = rj.at("train");
    rec.train = {t.at("ce").get<double>(), t.at("kl").get<double>(), t.at("total").get<double>(),
                 t.at("dropped_rate").get<double>()};
    for (const auto& m : rj.at("eval")) rec.eval.push_back(metrics_from_json(m));
    rec.expert_utilization = rj.at("expert_utilization").get<std::vector<double>>();
    rec.uplink_params = rj.at("uplink_params").get<std::size_t>();
    rec.downlink_params = rj.at("downlink_params").get<std::size_t>();
    rec.key_params = rj.at("key_params").get<std::size_t>();
    r.rounds.push_back(std::move(rec));
  }
  r.zero_shot_target_accuracy = j.at("zero_shot_target_accuracy").get<double>();
  r.final_target_accuracy = j.at("final_target_accuracy").get<double>();
  const auto& c = j.at("comm");
  r.comm.clients = c.at("clients").get<std::size_t>();
  r.comm.params_per_client_round = c.at("params_per_client_round").get<std::size_t>();
  r.comm.key_params_per_client = c.at("key_params_per_client").get<std::size_t>();
  r.comm.key_broadcast_rounds = c.at("key_broadcast_rounds").get<std::size_t>();
  r.comm.total_uplink = c.at("total_uplink").get<std::size_t>();
  r.comm.total_downlink = c.at("total_downlink").get<std::size_t>();
  return r;
}

std::string report_json_text(const RunReport& report) { return to_json(report).dump(2) + "\n"; }

std::string metrics_csv(const RunReport& report) {
  std::string out = "round,domain,accuracy,ce,kl,dropped_rate\n";
  for (const auto& rec : report.rounds) {
    for (const auto& m : rec.eval) {
      out += std::to_string(rec.round) + "," + std::to_string(m.domain) + "," +
             format_number(m.accuracy) + "," + format_number(m.ce) + "," + format_number(m.kl) +
             "," + format_number(m.dropped_rate) + "\n";
    }
  }
  return out;
}

std::string comm_csv(const RunReport& report) {
  std::string out = "round,uplink_params,downlink_params\n";
  for (const auto& rec : report.rounds) {
    out += std::to_string(rec.round) + "," + std::to_string(rec.uplink_params) + "," +
           std::to_string(rec.downlink_params) + "\n";
  }
  return out;
}

void emit_report(const RunReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir.string() + ": " + ec.message());
  write_file(out_dir / "report.json", report_json_text(report));
  write_file(out_dir / "metrics.csv", metrics_csv(report));
  write_file(out_dir / "comm.csv", comm_csv(report));
}

}  // namespace tripsim
