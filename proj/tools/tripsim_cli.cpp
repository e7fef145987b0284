#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tripsim/errors.hpp"
#include "tripsim/experiment.hpp"
#include "tripsim/federation.hpp"
#include "tripsim/report.hpp"
#include "tripsim/synthetic.hpp"

namespace fs = std::filesystem;
using namespace tripsim;

namespace {

// flags shared by run/ablate/sweep; anything left unset keeps the config value
struct Overrides {
  std::string config_path;
  std::string preset;
  std::optional<std::size_t> experts, tokens, dims, rounds, epochs, batch, target;
  std::optional<double> alpha_train, alpha_infer, beta, lr, weight_decay, tau;
  std::optional<std::uint64_t> seed_data, seed_model, seed_clustering;
  std::optional<std::string> keys, fixture;
  bool no_capacity = false, no_static_keys = false, random_assignment = false, no_kl = false;
};

void add_config_options(CLI::App* app, Overrides& o, bool with_flags) {
  app->add_option("--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app->add_option("--preset", o.preset, "trip or trip-lite")->check(CLI::IsMember({"trip", "trip-lite"}));
  app->add_option("--experts", o.experts, "number of prompt experts M");
  app->add_option("--tokens", o.tokens, "prompt tokens per expert L");
  app->add_option("--dims", o.dims, "embedding dimension D");
  app->add_option("--rounds", o.rounds, "communication rounds");
  app->add_option("--epochs", o.epochs, "local epochs per round");
  app->add_option("--batch", o.batch, "batch size");
  app->add_option("--target", o.target, "held-out target domain id");
  app->add_option("--alpha-train", o.alpha_train, "capacity factor while training");
  app->add_option("--alpha-infer", o.alpha_infer, "capacity factor at inference");
  app->add_option("--beta", o.beta, "weight of the KL term");
  app->add_option("--lr", o.lr, "AdamW learning rate");
  app->add_option("--weight-decay", o.weight_decay, "AdamW weight decay");
  app->add_option("--tau", o.tau, "softmax temperature");
  app->add_option("--seed-data", o.seed_data, "dataset and split seed");
  app->add_option("--seed-model", o.seed_model, "text head, keys, init and batch order seed");
  app->add_option("--seed-clustering", o.seed_clustering, "clustering seed");
  app->add_option("--keys", o.keys, "key strategy")
      ->check(CLI::IsMember({"uniform", "normal", "binary", "orthogonal"}));
  app->add_option("--fixture", o.fixture, "JSON-lines dataset fixture")->check(CLI::ExistingFile);
  if (with_flags) {
    app->add_flag("--no-capacity", o.no_capacity, "disable the capacity constraint");
    app->add_flag("--no-static-keys", o.no_static_keys, "match clusters to the experts instead of keys");
    app->add_flag("--random-assignment", o.random_assignment, "route tokens to random experts");
    app->add_flag("--no-kl", o.no_kl, "drop the KL term");
  }
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ExperimentConfig build_config(const Overrides& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = config_from_json(read_json_file(o.config_path));
  if (!o.preset.empty()) {
    const ExperimentConfig p = preset(o.preset);
    cfg.experts = p.experts;
    cfg.prompt_tokens = p.prompt_tokens;
  }
  if (o.experts) cfg.experts = *o.experts;
  if (o.tokens) cfg.prompt_tokens = *o.tokens;
  if (o.dims) cfg.dims = *o.dims;
  if (o.rounds) cfg.rounds = *o.rounds;
  if (o.epochs) cfg.local_epochs = *o.epochs;
  if (o.batch) cfg.batch_size = *o.batch;
  if (o.target) cfg.target_domain = *o.target;
  if (o.alpha_train) cfg.alpha_train = *o.alpha_train;
  if (o.alpha_infer) cfg.alpha_infer = *o.alpha_infer;
  if (o.beta) cfg.beta = *o.beta;
  if (o.lr) cfg.lr = *o.lr;
  if (o.weight_decay) cfg.weight_decay = *o.weight_decay;
  if (o.tau) cfg.tau = *o.tau;
  if (o.seed_data) cfg.seeds.data = *o.seed_data;
  if (o.seed_model) cfg.seeds.model = *o.seed_model;
  if (o.seed_clustering) cfg.seeds.clustering = *o.seed_clustering;
  if (o.keys) cfg.key_strategy = parse_key_strategy(*o.keys);
  if (o.fixture) cfg.fixture = *o.fixture;
  cfg.ablation.no_capacity = cfg.ablation.no_capacity || o.no_capacity;
  cfg.ablation.no_static_keys = cfg.ablation.no_static_keys || o.no_static_keys;
  cfg.ablation.random_assignment = cfg.ablation.random_assignment || o.random_assignment;
  cfg.ablation.no_kl = cfg.ablation.no_kl || o.no_kl;
  cfg.validate();
  return cfg;
}

void print_comm(const ExperimentConfig& cfg) {
  std::cout << "experts=" << cfg.experts << " tokens=" << cfg.prompt_tokens << " dims=" << cfg.dims << "\n"
            << cfg.expert_payload() << " parameters/round/client\n"
            << cfg.key_payload() << " key parameters/client (sent once)\n";
}

std::string pct(double acc) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * acc);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// one run per seed offset; returns final target accuracies
std::vector<double> run_seeds(ExperimentConfig cfg, std::size_t seeds, const std::string& out_dir,
                              const std::string& tag) {
  std::vector<double> acc;
  const SeedConfig base = cfg.seeds;
  for (std::size_t s = 0; s < seeds; ++s) {
    cfg.seeds = {base.data + s, base.model + s, base.clustering + s};
    const RunResult r = run(cfg);
    acc.push_back(r.report.final_target_accuracy);
    if (!out_dir.empty()) emit_report(r.report, fs::path(out_dir) / (tag + "_seed" + std::to_string(s)));
  }
  return acc;
}

int cmd_gen(const Overrides& o, const std::string& out) {
  const ExperimentConfig cfg = build_config(o);
  const Dataset data = generate(cfg.generator_config());
  save_fixture(data, out);
  std::cout << "wrote " << data.samples.size() << " samples (" << data.domains.size() << " domains, "
            << data.classes << " classes, " << data.tokens << " tokens, D=" << data.dims << ") to " << out
            << "\n";
  return 0;
}

int cmd_run(const Overrides& o, bool comm_only, const std::string& out) {
  const ExperimentConfig cfg = build_config(o);
  if (comm_only) {
    print_comm(cfg);
    return 0;
  }
  const RunResult r = run(cfg);
  emit_report(r.report, out);
  std::cout << "zero-shot target accuracy " << pct(r.report.zero_shot_target_accuracy) << "\n";
  for (const auto& rec : r.report.rounds) {
    std::cout << "round " << rec.round << " train ce " << format_number(rec.train.ce) << " target "
              << pct(rec.eval.front().accuracy) << "\n";
  }
  std::cout << "final target accuracy " << pct(r.report.final_target_accuracy) << "\nreport written to " << out
            << "\n";
  return 0;
}

int cmd_ablate(const Overrides& o, std::size_t seeds, const std::string& out) {
  const ExperimentConfig base = build_config(o);
  std::cout << "row,capacity,keys,cluster,l_kl,mean_target_accuracy\n";
  for (std::size_t row = 0; row < 5; ++row) {
    ExperimentConfig cfg = base;
    cfg.ablation = ablation_row(row);
    const auto acc = run_seeds(cfg, seeds, out, "row" + std::to_string(row));
    const auto mark = [](bool removed) { return removed ? "-" : "y"; };
    std::cout << row << "," << mark(cfg.ablation.no_capacity) << "," << mark(cfg.ablation.no_static_keys) << ","
              << mark(cfg.ablation.random_assignment) << "," << mark(cfg.ablation.no_kl) << ","
              << pct(mean(acc)) << "\n";
  }
  return 0;
}

int cmd_sweep(const Overrides& o, const std::string& param, const std::vector<double>& values, std::size_t seeds,
              const std::string& out) {
  const ExperimentConfig base = build_config(o);
  std::cout << param << ",mean_target_accuracy\n";
  for (double v : values) {
    ExperimentConfig cfg = base;
    const auto as_count = [&](const char* what) {
      if (v < 1.0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
        throw ConfigError(std::string(what) + " sweep values must be positive integers");
      }
      return static_cast<std::size_t>(v);
    };
    if (param == "alpha-train") cfg.alpha_train = v;
    else if (param == "alpha-infer") cfg.alpha_infer = v;
    else if (param == "beta") cfg.beta = v;
    else if (param == "experts") cfg.experts = as_count("experts");
    else cfg.prompt_tokens = as_count("tokens");
    cfg.validate();
    const auto acc = run_seeds(cfg, seeds, out, param + "_" + format_number(v));
    std::cout << format_number(v) << "," << pct(mean(acc)) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated prompt-expert routing simulator"};
  app.require_subcommand(1);

  Overrides gen_o, run_o, ablate_o, sweep_o, comm_o;

  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "generate and export a dataset fixture");
  add_config_options(gen, gen_o, false);
  gen->add_option("--out", gen_out, "fixture path")->required();

  bool comm_only = false;
  std::string run_out = "out";
  auto* runc = app.add_subcommand("run", "run one federated experiment");
  add_config_options(runc, run_o, true);
  runc->add_flag("--comm-only", comm_only, "print the parameter count and exit");
  runc->add_option("--out", run_out, "output directory");

  std::size_t ablate_seeds = 3;
  std::string ablate_out;
  auto* ablate = app.add_subcommand("ablate", "five-row cumulative ablation lattice");
  add_config_options(ablate, ablate_o, false);
  ablate->add_option("--seeds", ablate_seeds, "seeds per row")->check(CLI::PositiveNumber);
  ablate->add_option("--out", ablate_out, "directory for per-run reports");

  std::string sweep_param;
  std::vector<double> sweep_values;
  std::size_t sweep_seeds = 1;
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep", "grid over one hyperparameter");
  add_config_options(sweep, sweep_o, true);
  sweep->add_option("--param", sweep_param, "parameter to vary")
      ->required()
      ->check(CLI::IsMember({"alpha-train", "alpha-infer", "beta", "experts", "tokens"}));
  sweep->add_option("--values", sweep_values, "grid values")->required();
  sweep->add_option("--seeds", sweep_seeds, "seeds per point")->check(CLI::PositiveNumber);
  sweep->add_option("--out", sweep_out, "directory for per-run reports");

  auto* comm = app.add_subcommand("comm", "parameter-count report");
  add_config_options(comm, comm_o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen(gen_o, gen_out);
    if (*runc) return cmd_run(run_o, comm_only, run_out);
    if (*ablate) return cmd_ablate(ablate_o, ablate_seeds, ablate_out);
    if (*sweep) return cmd_sweep(sweep_o, sweep_param, sweep_values, sweep_seeds, sweep_out);
    print_comm(build_config(comm_o));
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
