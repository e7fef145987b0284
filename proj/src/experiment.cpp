#include "tripsim/experiment.hpp"

#include <cmath>
#include <set>
#include <string>

#include "tripsim/errors.hpp"

namespace tripsim {

namespace {

using nlohmann::json;

// Walks one JSON object, checking types and rejecting keys nobody consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    const std::string p = path_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(p + ": expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError(p + ": expected a non-negative integer");
      }
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(p + ": expected a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(p + ": expected a string");
      out = v.get<std::string>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
  }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(path_ + "." + k + ": unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json specs_to_json(const std::vector<DomainSpec>& specs) {
  json arr = json::array();
  for (const auto& s : specs) {
    arr.push_back({{"id", s.id},
                   {"shift", s.shift},
                   {"rotation_seed", s.rotation_seed},
                   {"rotation_strength", s.rotation_strength},
                   {"noise", s.noise}});
  }
  return arr;
}

std::vector<DomainSpec> specs_from_json(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array");
  std::vector<DomainSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    ObjectReader r(j[i], p);
    DomainSpec s;
    r.read("id", s.id);
    r.read("rotation_seed", s.rotation_seed);
    r.read("rotation_strength", s.rotation_strength);
    r.read("noise", s.noise);
    if (const json* shift = r.child("shift")) {
      if (!shift->is_array()) throw ConfigError(p + ".shift: expected an array of numbers");
      for (const auto& v : *shift) {
        if (!v.is_number()) throw ConfigError(p + ".shift: expected an array of numbers");
        s.shift.push_back(v.get<double>());
      }
    }
    r.finish();
    out.push_back(std::move(s));
  }
  return out;
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path + ": " + what);
}

}  // namespace

RouterOptions ExperimentConfig::router_options(double alpha) const {
  RouterOptions opt;
  opt.capacity.clusters = experts;
  opt.capacity.alpha = alpha;
  opt.capacity.max_iters = cluster_max_iters;
  opt.capacity.tol = cluster_tol;
  opt.capacity.eta_theta = eta_theta;
  opt.capacity.capacity_enabled = !ablation.no_capacity;
  if (ablation.random_assignment) {
    opt.mode = RoutingMode::random_tokens;
  } else if (ablation.no_static_keys) {
    opt.mode = RoutingMode::expert_keys;
  } else {
    opt.mode = RoutingMode::static_keys;
  }
  return opt;
}

GeneratorConfig ExperimentConfig::generator_config() const {
  GeneratorConfig g = generator;
  g.dims = dims;
  g.seed = seeds.data;
  return g;
}

void ExperimentConfig::validate() const {
  require(experts >= 1, "config.experts", "must be >= 1");
  require(prompt_tokens >= 1, "config.prompt_tokens", "must be >= 1");
  require(dims >= 1, "config.dims", "must be >= 1");
  require(alpha_train > 0.0 && std::isfinite(alpha_train), "config.alpha_train", "must be > 0");
  require(alpha_infer > 0.0 && std::isfinite(alpha_infer), "config.alpha_infer", "must be > 0");
  require(beta >= 0.0 && std::isfinite(beta), "config.beta", "must be >= 0");
  require(tau > 0.0 && std::isfinite(tau), "config.tau", "must be > 0");
  require(lr >= 0.0 && std::isfinite(lr), "config.lr", "must be >= 0");
  require(weight_decay >= 0.0 && std::isfinite(weight_decay), "config.weight_decay", "must be >= 0");
  require(batch_size >= 1, "config.batch_size", "must be >= 1");
  require(expert_init_std >= 0.0, "config.expert_init_std", "must be >= 0");
  require(cluster_max_iters >= 1, "config.cluster_max_iters", "must be >= 1");
  require(cluster_tol >= 0.0, "config.cluster_tol", "must be >= 0");
  require(eta_theta > 0.0, "config.eta_theta", "must be > 0");
  require(train_fraction > 0.0 && train_fraction <= 1.0, "config.train_fraction", "must be in (0, 1]");
  if (key_strategy == KeyStrategy::orthogonal) {
    require(experts <= dims, "config.experts", "orthogonal keys need experts <= dims");
  }
  if (fixture.empty()) {
    generator_config().validate();
    require(target_domain < generator.domains, "config.target_domain",
            "must name one of the generated domains");
    require(generator.domains >= 2, "config.generator.domains", "leave-one-domain-out needs >= 2");
    require(generator.tokens >= experts, "config.generator.tokens", "need at least one token per expert");
  }
}

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig cfg;
  if (name == "trip") {
    cfg.experts = 4;
    cfg.prompt_tokens = 32;
  } else if (name == "trip-lite") {
    cfg.experts = 2;
    cfg.prompt_tokens = 1;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected trip|trip-lite)");
  }
  return cfg;
}

AblationFlags ablation_row(std::size_t row) {
  if (row > 4) throw ConfigError("ablation row must be 0..4");
  AblationFlags f;
  f.no_capacity = row >= 1;
  f.no_static_keys = row >= 2;
  f.random_assignment = row >= 3;
  f.no_kl = row >= 4;
  return f;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  const GeneratorConfig& g = c.generator;
  json gen = {{"classes", g.classes},
              {"regions", g.regions},
              {"tokens", g.tokens},
              {"domains", g.domains},
              {"samples_per_class", g.samples_per_class},
              {"noise", g.noise},
              {"shift_scale", g.shift_scale},
              {"rotation_strength", g.rotation_strength},
              {"text_misalignment", g.text_misalignment},
              {"domain_specs", specs_to_json(g.domain_specs)}};
  return {{"experts", c.experts},
          {"prompt_tokens", c.prompt_tokens},
          {"dims", c.dims},
          {"alpha_train", c.alpha_train},
          {"alpha_infer", c.alpha_infer},
          {"beta", c.beta},
          {"tau", c.tau},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"rounds", c.rounds},
          {"local_epochs", c.local_epochs},
          {"key_strategy", to_string(c.key_strategy)},
          {"expert_init_std", c.expert_init_std},
          {"cluster_max_iters", c.cluster_max_iters},
          {"cluster_tol", c.cluster_tol},
          {"eta_theta", c.eta_theta},
          {"generator", gen},
          {"fixture", c.fixture},
          {"target_domain", c.target_domain},
          {"train_fraction", c.train_fraction},
          {"seeds", {{"data", c.seeds.data}, {"model", c.seeds.model}, {"clustering", c.seeds.clustering}}},
          {"ablation",
           {{"no_capacity", c.ablation.no_capacity},
            {"no_static_keys", c.ablation.no_static_keys},
            {"random_assignment", c.ablation.random_assignment},
            {"no_kl", c.ablation.no_kl}}}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "config");
  if (const json* p = r.child("preset")) {
    if (!p->is_string()) throw ConfigError("config.preset: expected a string");
    c = preset(p->get<std::string>());
  }
  r.read("experts", c.experts);
  r.read("prompt_tokens", c.prompt_tokens);
  r.read("dims", c.dims);
  r.read("alpha_train", c.alpha_train);
  r.read("alpha_infer", c.alpha_infer);
  r.read("beta", c.beta);
  r.read("tau", c.tau);
  r.read("lr", c.lr);
  r.read("weight_decay", c.weight_decay);
  r.read("batch_size", c.batch_size);
  r.read("rounds", c.rounds);
  r.read("local_epochs", c.local_epochs);
  std::string strategy = to_string(c.key_strategy);
  r.read("key_strategy", strategy);
  try {
    c.key_strategy = parse_key_strategy(strategy);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config.key_strategy: ") + e.what());
  }
  r.read("expert_init_std", c.expert_init_std);
  r.read("cluster_max_iters", c.cluster_max_iters);
  r.read("cluster_tol", c.cluster_tol);
  r.read("eta_theta", c.eta_theta);
  r.read("fixture", c.fixture);
  r.read("target_domain", c.target_domain);
  r.read("train_fraction", c.train_fraction);
  if (const json* g = r.child("generator")) {
    ObjectReader gr(*g, "config.generator");
    GeneratorConfig& gen = c.generator;
    gr.read("classes", gen.classes);
    gr.read("regions", gen.regions);
    gr.read("tokens", gen.tokens);
    gr.read("domains", gen.domains);
    gr.read("samples_per_class", gen.samples_per_class);
    gr.read("noise", gen.noise);
    gr.read("shift_scale", gen.shift_scale);
    gr.read("rotation_strength", gen.rotation_strength);
    gr.read("text_misalignment", gen.text_misalignment);
    if (const json* specs = gr.child("domain_specs")) {
      gen.domain_specs = specs_from_json(*specs, "config.generator.domain_specs");
    }
    gr.finish();
  }
  if (const json* s = r.child("seeds")) {
    ObjectReader sr(*s, "config.seeds");
    sr.read("data", c.seeds.data);
    sr.read("model", c.seeds.model);
    sr.read("clustering", c.seeds.clustering);
    sr.finish();
  }
  if (const json* a = r.child("ablation")) {
    ObjectReader ar(*a, "config.ablation");
    ar.read("no_capacity", c.ablation.no_capacity);
    ar.read("no_static_keys", c.ablation.no_static_keys);
    ar.read("random_assignment", c.ablation.random_assignment);
    ar.read("no_kl", c.ablation.no_kl);
    ar.finish();
  }
  r.finish();
  c.validate();
  return c;
}

}  // namespace tripsim
