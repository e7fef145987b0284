#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "tripsim/tensor.hpp"

namespace tripsim {

/// Style of one domain: tokens are rotated by a seeded product of Givens
/// rotations, translated by `shift`, then perturbed with N(0, noise^2) noise.
struct DomainSpec {
  std::size_t id = 0;
  Vec shift;
  std::uint64_t rotation_seed = 0;
  double rotation_strength = 0.0;  ///< std-dev of each Givens angle (radians)
  double noise = 0.0;

  bool operator==(const DomainSpec&) const = default;
};

struct GeneratorConfig {
  std::size_t classes = 7;
  std::size_t regions = 4;        ///< one object region plus regions-1 background regions
  std::size_t tokens = 17;        ///< N+1, including the CLS-analog token
  std::size_t dims = 64;
  std::size_t domains = 4;
  std::size_t samples_per_class = 40;  ///< per (domain, class)
  double noise = 0.25;
  double shift_scale = 0.6;       ///< expected norm of each domain's translation
  double rotation_strength = 0.3;
  double text_misalignment = 1.0; ///< scale of the random tilt between class prototypes and text anchors
  std::uint64_t seed = 0;
  /// Explicit per-domain styles; derived from `seed` when empty.
  std::vector<DomainSpec> domain_specs;

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

struct Sample {
  Mat tokens;  ///< tokens x dims
  std::size_t label = 0;
  std::size_t domain = 0;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::size_t classes = 0;
  std::size_t dims = 0;
  std::size_t tokens = 0;
  std::vector<std::size_t> domains;
  Mat anchors;  ///< classes x dims text-side class anchors (unit rows)
  std::vector<Sample> samples;

  bool operator==(const Dataset&) const = default;
};

/// Deterministic domain styles for `cfg` (ignores cfg.domain_specs).
std::vector<DomainSpec> derive_domain_specs(const GeneratorConfig& cfg);

/// Seeded multi-domain token dataset.
///
/// Class object prototypes and shared background prototypes form one
/// orthonormal family. Patch tokens are split into `regions` contiguous blocks:
/// block 0 is centred on the class prototype, the rest on background
/// prototypes. The CLS-analog token is centred on the class prototype. Every
/// token centre passes through its domain's rotation and shift before noise.
/// Text anchors are the class prototypes tilted by `text_misalignment` times a
/// seeded Gaussian direction, renormalised.
Dataset generate(const GeneratorConfig& cfg);

struct ClientData {
  std::size_t domain = 0;
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

struct FederatedSplit {
  std::vector<ClientData> clients;  ///< one per source domain, ascending domain id
  std::size_t target_domain = 0;
  std::vector<Sample> target;
};

/// Holds `target_domain` out; each remaining domain becomes one client whose
/// samples are shuffled with a seeded permutation and split train/eval.
FederatedSplit leave_one_out(const Dataset& data, std::size_t target_domain,
                             double train_fraction = 0.9, std::uint64_t seed = 0);

/// JSON-lines fixture: a header line, then one line per sample with
/// domain id, label and row-major token values. Round trips bit-exactly.
void save_fixture(const Dataset& data, const std::filesystem::path& path);
Dataset load_fixture(const std::filesystem::path& path);

}  // namespace tripsim
