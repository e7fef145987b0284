#include "tripsim/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "tripsim/errors.hpp"
#include "tripsim/keys.hpp"
#include "tripsim/rng.hpp"

namespace tripsim {

namespace {

constexpr const char* kFixtureFormat = "tripsim-fixture";
constexpr int kFixtureVersion = 1;

struct Givens {
  std::size_t i, j;
  double c, s;
};

std::vector<Givens> rotation_for(const DomainSpec& spec, std::size_t dims) {
  std::vector<Givens> out;
  if (spec.rotation_strength == 0.0 || dims < 2) return out;
  Rng rng(spec.rotation_seed);
  for (std::size_t k = 0; k < dims; ++k) {
    const auto i = static_cast<std::size_t>(rng.below(dims));
    auto j = static_cast<std::size_t>(rng.below(dims - 1));
    if (j >= i) ++j;
    const double angle = spec.rotation_strength * rng.normal();
    out.push_back({i, j, std::cos(angle), std::sin(angle)});
  }
  return out;
}

Vec styled(std::span<const double> centre, const std::vector<Givens>& rot, const Vec& shift) {
  Vec v(centre.begin(), centre.end());
  for (const Givens& g : rot) {
    const double a = v[g.i], b = v[g.j];
    v[g.i] = g.c * a - g.s * b;
    v[g.j] = g.s * a + g.c * b;
  }
  for (std::size_t k = 0; k < v.size(); ++k) v[k] += shift[k];
  return v;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (classes < 1) throw ConfigError("generator.classes: must be >= 1");
  if (regions < 2) throw ConfigError("generator.regions: must be >= 2");
  if (tokens < regions + 1) {
    throw ConfigError("generator.tokens: need at least one patch token per region plus CLS");
  }
  if (dims < 1) throw ConfigError("generator.dims: must be >= 1");
  if (classes > dims) {
    throw ConfigError("generator.classes: " + std::to_string(classes) +
                      " orthogonal class prototypes do not fit in " + std::to_string(dims) + " dims");
  }
  if (classes + regions - 1 > dims) {
    throw ConfigError("generator.regions: class and background prototypes exceed dims");
  }
  if (domains < 1) throw ConfigError("generator.domains: must be >= 1");
  if (samples_per_class < 1) throw ConfigError("generator.samples_per_class: must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("generator.noise: must be >= 0");
  if (!(shift_scale >= 0.0)) throw ConfigError("generator.shift_scale: must be >= 0");
  if (!(rotation_strength >= 0.0)) throw ConfigError("generator.rotation_strength: must be >= 0");
  if (!(text_misalignment >= 0.0)) throw ConfigError("generator.text_misalignment: must be >= 0");
  if (!domain_specs.empty()) {
    if (domain_specs.size() != domains) {
      throw ConfigError("generator.domain_specs: expected " + std::to_string(domains) + " entries");
    }
    for (std::size_t d = 0; d < domain_specs.size(); ++d) {
      const auto& s = domain_specs[d];
      const std::string path = "generator.domain_specs[" + std::to_string(d) + "]";
      if (s.shift.size() != dims) throw ConfigError(path + ".shift: length must equal dims");
      if (!(s.noise >= 0.0)) throw ConfigError(path + ".noise: must be >= 0");
      if (!(s.rotation_strength >= 0.0)) throw ConfigError(path + ".rotation_strength: must be >= 0");
    }
  }
}

std::vector<DomainSpec> derive_domain_specs(const GeneratorConfig& cfg) {
  Rng root = Rng(cfg.seed).derive({0xD0});
  std::vector<DomainSpec> specs;
  const double per_coord = cfg.shift_scale / std::sqrt(static_cast<double>(cfg.dims));
  for (std::size_t d = 0; d < cfg.domains; ++d) {
    Rng rng = root.derive({d});
    DomainSpec s;
    s.id = d;
    s.shift.resize(cfg.dims);
    for (double& v : s.shift) v = per_coord * rng.normal();
    s.rotation_seed = rng.next_u64();
    s.rotation_strength = cfg.rotation_strength;
    s.noise = cfg.noise;
    specs.push_back(std::move(s));
  }
  return specs;
}

Dataset generate(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::size_t backgrounds = cfg.regions - 1;
  Rng root(cfg.seed);

  Rng proto_rng = root.derive({0xA1});
  const Mat protos = orthonormal_rows(cfg.classes + backgrounds, cfg.dims, proto_rng);

  Dataset data;
  data.classes = cfg.classes;
  data.dims = cfg.dims;
  data.tokens = cfg.tokens;
  data.anchors = Mat(cfg.classes, cfg.dims);
  Rng tilt_rng = root.derive({0xA2});
  const double tilt = cfg.text_misalignment / std::sqrt(static_cast<double>(cfg.dims));
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    Vec a(protos.row(c).begin(), protos.row(c).end());
    for (double& v : a) v += tilt * tilt_rng.normal();
    const Vec u = normalize(a);
    std::copy(u.begin(), u.end(), data.anchors.row(c).begin());
  }

  const std::vector<DomainSpec> specs =
      cfg.domain_specs.empty() ? derive_domain_specs(cfg) : cfg.domain_specs;

  // Patch tokens 1..N split into contiguous region blocks.
  const std::size_t patches = cfg.tokens - 1;
  std::vector<std::size_t> region_of(cfg.tokens, 0);
  for (std::size_t t = 1; t < cfg.tokens; ++t) region_of[t] = (t - 1) * cfg.regions / patches;

  for (std::size_t d = 0; d < cfg.domains; ++d) {
    const DomainSpec& spec = specs[d];
    data.domains.push_back(spec.id);
    const auto rot = rotation_for(spec, cfg.dims);
    std::vector<Vec> centres;  // class prototypes, then backgrounds, after styling
    for (std::size_t p = 0; p < protos.rows(); ++p) centres.push_back(styled(protos.row(p), rot, spec.shift));

    Rng noise_root = root.derive({0xB0, d});
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      for (std::size_t k = 0; k < cfg.samples_per_class; ++k) {
        Rng rng = noise_root.derive({c, k});
        Sample s;
        s.label = c;
        s.domain = spec.id;
        s.tokens = Mat(cfg.tokens, cfg.dims);
        for (std::size_t t = 0; t < cfg.tokens; ++t) {
          const std::size_t region = region_of[t];
          const Vec& centre = (t == 0 || region == 0) ? centres[c] : centres[cfg.classes + region - 1];
          auto row = s.tokens.row(t);
          for (std::size_t j = 0; j < cfg.dims; ++j) row[j] = centre[j] + spec.noise * rng.normal();
        }
        data.samples.push_back(std::move(s));
      }
    }
  }
  return data;
}

FederatedSplit leave_one_out(const Dataset& data, std::size_t target_domain, double train_fraction,
                             std::uint64_t seed) {
  if (data.domains.size() < 2) throw ConfigError("leave_one_out: need at least two domains");
  if (std::find(data.domains.begin(), data.domains.end(), target_domain) == data.domains.end()) {
    throw ConfigError("target_domain: unknown domain id " + std::to_string(target_domain));
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train_fraction: must be in (0, 1]");
  }
  FederatedSplit split;
  split.target_domain = target_domain;
  std::vector<std::size_t> sources;
  for (std::size_t d : data.domains) {
    if (d != target_domain) sources.push_back(d);
  }
  std::sort(sources.begin(), sources.end());

  for (const Sample& s : data.samples) {
    if (s.domain == target_domain) split.target.push_back(s);
  }
  Rng root = Rng(seed).derive({0x5B});
  for (std::size_t d : sources) {
    std::vector<const Sample*> pool;
    for (const Sample& s : data.samples) {
      if (s.domain == d) pool.push_back(&s);
    }
    Rng rng = root.derive({d});
    for (std::size_t i = pool.size(); i > 1; --i) {
      std::swap(pool[i - 1], pool[static_cast<std::size_t>(rng.below(i))]);
    }
    auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(pool.size())));
    n_train = std::clamp<std::size_t>(n_train, pool.empty() ? 0 : 1, pool.size());
    ClientData client;
    client.domain = d;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      (i < n_train ? client.train : client.eval).push_back(*pool[i]);
    }
    split.clients.push_back(std::move(client));
  }
  return split;
}

void save_fixture(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open fixture for writing: " + path.string());
  nlohmann::json header = {
      {"format", kFixtureFormat}, {"version", kFixtureVersion}, {"C", data.classes},
      {"D", data.dims},           {"tokens", data.tokens},      {"domains", data.domains},
      {"anchors", data.anchors.values()}};
  out << header.dump() << '\n';
  for (const Sample& s : data.samples) {
    nlohmann::json rec = {{"domain", s.domain}, {"label", s.label}, {"tokens", s.tokens.values()}};
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing fixture: " + path.string());
}

Dataset load_fixture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("fixture: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("fixture: missing header in " + path.string());
  Dataset data;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format") != kFixtureFormat || header.at("version") != kFixtureVersion) {
      throw ConfigError("fixture: unsupported format in " + path.string());
    }
    data.classes = header.at("C").get<std::size_t>();
    data.dims = header.at("D").get<std::size_t>();
    data.tokens = header.at("tokens").get<std::size_t>();
    data.domains = header.at("domains").get<std::vector<std::size_t>>();
    data.anchors = Mat(data.classes, data.dims, header.at("anchors").get<std::vector<double>>());
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      Sample s;
      s.domain = rec.at("domain").get<std::size_t>();
      s.label = rec.at("label").get<std::size_t>();
      s.tokens = Mat(data.tokens, data.dims, rec.at("tokens").get<std::vector<double>>());
      if (s.label >= data.classes) {
        throw ConfigError("fixture line " + std::to_string(lineno) + ": label out of range");
      }
      if (std::find(data.domains.begin(), data.domains.end(), s.domain) == data.domains.end()) {
        throw ConfigError("fixture line " + std::to_string(lineno) + ": unknown domain");
      }
      data.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("fixture: malformed " + path.string() + ": " + e.what());
  } catch (const StructuralError& e) {
    throw ConfigError("fixture: " + std::string(e.what()));
  }
  return data;
}

}  // namespace tripsim
