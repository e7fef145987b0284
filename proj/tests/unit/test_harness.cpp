#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tripsim/errors.hpp"
#include "tripsim/federation.hpp"
#include "tripsim/report.hpp"

using namespace tripsim;
namespace fs = std::filesystem;

namespace {

const nlohmann::json kTinyJson = {
    {"experts", 2},
    {"prompt_tokens", 2},
    {"dims", 16},
    {"rounds", 2},
    {"batch_size", 4},
    {"generator", {{"classes", 3}, {"regions", 2}, {"tokens", 5}, {"samples_per_class", 4}}}};

ExperimentConfig tiny() { return config_from_json(kTinyJson); }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tripsim_harness_" + name);
  fs::remove_all(p);
  return p;
}

struct CliResult {
  int code = 0;
  std::string out;
};

CliResult cli(const std::string& args) {
  const fs::path log = scratch("cli.log");
  const std::string cmd = std::string("\"") + TRIPSIM_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = status == -1 ? -1 : WEXITSTATUS(status);
  r.out = read_file(log);
  return r;
}

void check_config_error(const nlohmann::json& j, const std::string& path) {
  try {
    config_from_json(j);
    FAIL("expected a configuration error naming " << path);
  } catch (const ConfigError& e) {
    CHECK_MESSAGE(std::string(e.what()).find(path) != std::string::npos, e.what());
  }
}

}  // namespace

TEST_CASE("empty config gives the defaults") {
  const ExperimentConfig c = config_from_json(nlohmann::json::object());
  CHECK(c == ExperimentConfig{});
  CHECK(c.experts == 4);
  CHECK(c.prompt_tokens == 32);
  CHECK(c.alpha_train == 1.0);
  CHECK(c.alpha_infer == 2.0);
  CHECK(c.beta == 0.8);
  CHECK(c.tau == 0.07);
  CHECK(c.lr == 4e-4);
  CHECK(c.rounds == 15);
  CHECK(c.generator.classes == 7);
  CHECK(c.generator.domains == 4);
  CHECK(c.generator.tokens == 17);
  CHECK(c.generator.regions == 4);
  CHECK(c.generator.samples_per_class == 40);
}

TEST_CASE("config survives a json round trip") {
  ExperimentConfig c = tiny();
  c.ablation.no_kl = true;
  c.key_strategy = KeyStrategy::binary;
  c.seeds = {5, 6, 7};
  c.generator.domain_specs = derive_domain_specs(c.generator_config());
  CHECK(config_from_json(to_json(c)) == c);
  CHECK(config_from_json(nlohmann::json::parse(to_json(c).dump())) == c);
}

TEST_CASE("config parsing is strict and names the field") {
  check_config_error({{"bogus", 1}}, "config.bogus");
  check_config_error({{"generator", {{"noize", 0.1}}}}, "config.generator.noize");
  check_config_error({{"generator", {{"noise", "high"}}}}, "config.generator.noise");
  check_config_error({{"experts", 0}}, "config.experts");
  check_config_error({{"experts", -2}}, "config.experts");
  check_config_error({{"experts", 1.5}}, "config.experts");
  check_config_error({{"tau", 0.0}}, "config.tau");
  check_config_error({{"key_strategy", "spiral"}}, "config.key_strategy");
  check_config_error({{"seeds", {{"model", "x"}}}}, "config.seeds.model");
  check_config_error({{"ablation", {{"no_kl", 1}}}}, "config.ablation.no_kl");
  check_config_error({{"target_domain", 4}}, "config.target_domain");
  check_config_error({{"preset", "huge"}}, "preset");
  check_config_error(nlohmann::json::array(), "config");
}

TEST_CASE("presets") {
  const auto trip = preset("trip");
  CHECK(trip.experts == 4);
  CHECK(trip.prompt_tokens == 32);
  const auto lite = preset("trip-lite");
  CHECK(lite.experts == 2);
  CHECK(lite.prompt_tokens == 1);
  CHECK_THROWS_AS(preset("tripx"), ConfigError);
  const auto j = config_from_json({{"preset", "trip-lite"}, {"dims", 512}});
  CHECK(j.expert_payload() == 1024);
  CHECK(j.key_payload() == 1024);
  auto big = preset("trip");
  big.dims = 512;
  CHECK(big.expert_payload() == 65536);
}

TEST_CASE("ablation lattice removes components cumulatively") {
  CHECK(ablation_row(0) == AblationFlags{});
  CHECK(ablation_row(1) == AblationFlags{true, false, false, false});
  CHECK(ablation_row(2) == AblationFlags{true, true, false, false});
  CHECK(ablation_row(3) == AblationFlags{true, true, true, false});
  CHECK(ablation_row(4) == AblationFlags{true, true, true, true});
  CHECK_THROWS_AS(ablation_row(5), ConfigError);
  ExperimentConfig c;
  c.ablation = ablation_row(4);
  CHECK(c.effective_beta() == 0.0);
  CHECK(c.router_options(1.0).capacity.capacity_enabled == false);
  CHECK(c.router_options(1.0).mode == RoutingMode::random_tokens);
}

TEST_CASE("numbers print in shortest round-trip form") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(3.0) == "3");
  CHECK(format_number(-2.5e-7) == "-2.5e-07");
  for (double v : {1.0 / 3.0, 6.02214076e23, 4.9e-324, 0.7}) CHECK(std::strtod(format_number(v).c_str(), nullptr) == v);
}

TEST_CASE("report json and csv") {
  const RunResult r = run(tiny());
  const RunReport& rep = r.report;
  const std::string text = report_json_text(rep);
  CHECK(text.back() == '\n');
  const RunReport back = report_from_json(nlohmann::json::parse(text));
  CHECK(back == rep);
  CHECK(report_json_text(back) == text);

  const auto j = nlohmann::json::parse(text);
  for (const char* key : {"config", "seeds", "zero_shot", "rounds", "zero_shot_target_accuracy",
                          "final_target_accuracy", "comm"})
    CHECK_MESSAGE(j.contains(key), key);

  const std::string metrics = metrics_csv(rep);
  CHECK(metrics.rfind("round,domain,accuracy,ce,kl,dropped_rate\n", 0) == 0);
  CHECK(count_lines(metrics) == 1 + 2 * 4);
  const std::string comm = comm_csv(rep);
  CHECK(comm.rfind("round,uplink_params,downlink_params\n", 0) == 0);
  CHECK(count_lines(comm) == 1 + 2);
  CHECK(comm.find("\n1,192,288\n") != std::string::npos);
  CHECK(comm.find("\n2,192,192\n") != std::string::npos);
}

TEST_CASE("a zero-round report has headers only") {
  auto c = tiny();
  c.rounds = 0;
  const RunReport rep = run(c).report;
  CHECK(count_lines(metrics_csv(rep)) == 1);
  CHECK(count_lines(comm_csv(rep)) == 1);
  CHECK(report_from_json(nlohmann::json::parse(report_json_text(rep))) == rep);
}

TEST_CASE("emit_report writes three files and reports bad paths") {
  const RunReport rep = run(tiny()).report;
  const fs::path dir = scratch("emit") / "nested";
  emit_report(rep, dir);
  CHECK(read_file(dir / "report.json") == report_json_text(rep));
  CHECK(read_file(dir / "metrics.csv") == metrics_csv(rep));
  CHECK(read_file(dir / "comm.csv") == comm_csv(rep));

  const fs::path blocker = scratch("blocker");
  std::ofstream(blocker) << "x";
  try {
    emit_report(rep, blocker / "sub");
    FAIL("expected an I/O error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("blocker") != std::string::npos);
  }
  fs::remove_all(scratch("emit"));
  fs::remove(blocker);
}

TEST_CASE("report parsing rejects malformed input") {
  CHECK_THROWS(report_from_json(nlohmann::json::object()));
  CHECK_THROWS(report_from_json(nlohmann::json::array()));
}

TEST_CASE("cli: parameter counts") {
  auto r = cli("run --preset trip-lite --dims 512 --comm-only");
  CHECK(r.code == 0);
  CHECK(r.out.find("1024 parameters/round/client") != std::string::npos);
  r = cli("run --preset trip --dims 512 --comm-only");
  CHECK(r.code == 0);
  CHECK(r.out.find("65536 parameters/round/client") != std::string::npos);
  r = cli("comm --experts 3 --tokens 5 --dims 16");
  CHECK(r.code == 0);
  CHECK(r.out.find("240 parameters/round/client") != std::string::npos);
  CHECK(r.out.find("48 key parameters/client") != std::string::npos);
}

TEST_CASE("cli: bad input exits nonzero with a diagnostic") {
  auto r = cli("run --bogus-flag");
  CHECK(r.code != 0);
  CHECK_FALSE(r.out.empty());
  r = cli("");
  CHECK(r.code != 0);
  r = cli("run --experts 0 --comm-only");
  CHECK(r.code == 2);
  CHECK(r.out.find("config.experts") != std::string::npos);

  const fs::path cfg = scratch("bad_config.json");
  std::ofstream(cfg) << R"({"experts": 2, "typo": true})";
  r = cli("run --comm-only --config \"" + cfg.string() + "\"");
  CHECK(r.code == 2);
  CHECK(r.out.find("config.typo") != std::string::npos);
  fs::remove(cfg);
}

TEST_CASE("cli: gen, run from the fixture, and a zero-round run") {
  const fs::path cfg = scratch("tiny.json");
  std::ofstream(cfg) << kTinyJson.dump();
  const fs::path fixture = scratch("tiny.jsonl");
  auto r = cli("gen --config \"" + cfg.string() + "\" --out \"" + fixture.string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(load_fixture(fixture) == generate(tiny().generator_config()));

  const fs::path out = scratch("run_out");
  r = cli("run --config \"" + cfg.string() + "\" --fixture \"" + fixture.string() + "\" --rounds 1 --out \"" +
          out.string() + "\"");
  REQUIRE(r.code == 0);
  const RunReport rep = report_from_json(nlohmann::json::parse(read_file(out / "report.json")));
  CHECK(rep.rounds.size() == 1);
  auto direct = tiny();
  direct.rounds = 1;
  direct.fixture = fixture.string();
  CHECK(rep == run(direct).report);

  const fs::path zero = scratch("zero_out");
  r = cli("run --config \"" + cfg.string() + "\" --rounds 0 --out \"" + zero.string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(count_lines(read_file(zero / "metrics.csv")) == 1);
  CHECK(report_from_json(nlohmann::json::parse(read_file(zero / "report.json"))).rounds.empty());

  for (const auto& p : {cfg, fixture, out, zero}) fs::remove_all(p);
}

TEST_CASE("cli: ablate prints the five-row lattice") {
  const fs::path cfg = scratch("ablate.json");
  auto j = kTinyJson;
  j["rounds"] = 1;
  std::ofstream(cfg) << j.dump();
  const auto r = cli("ablate --seeds 1 --config \"" + cfg.string() + "\"");
  REQUIRE(r.code == 0);
  std::istringstream in(r.out);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "row,capacity,keys,cluster,l_kl,mean_target_accuracy");
  CHECK(lines[1].rfind("0,y,y,y,y,", 0) == 0);
  CHECK(lines[2].rfind("1,-,y,y,y,", 0) == 0);
  CHECK(lines[3].rfind("2,-,-,y,y,", 0) == 0);
  CHECK(lines[4].rfind("3,-,-,-,y,", 0) == 0);
  CHECK(lines[5].rfind("4,-,-,-,-,", 0) == 0);
  fs::remove(cfg);
}

TEST_CASE("cli: sweep over experts") {
  const fs::path cfg = scratch("sweep.json");
  auto j = kTinyJson;
  j["rounds"] = 1;
  std::ofstream(cfg) << j.dump();
  auto r = cli("sweep --param experts --values 1 2 --config \"" + cfg.string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("experts,mean_target_accuracy\n1,", 0) == 0);
  CHECK(r.out.find("\n2,") != std::string::npos);
  r = cli("sweep --param experts --values 1.5 --config \"" + cfg.string() + "\"");
  CHECK(r.code == 2);
  fs::remove(cfg);
}
