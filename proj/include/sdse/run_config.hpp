#pragma once

// JSON run configurations for the toy and mesh-edit commands, and the digest
// stamped on every output file.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdse/experiments.hpp"

namespace sdse {

inline constexpr const char* kToolVersion = "0.3.0";

/// FNV-1a 64-bit hash of the compact dump of `doc`, as 16 hex digits.
std::string config_digest(const nlohmann::json& doc);

struct ToyConfig {
  std::string mixture_path;  // empty means the built-in toy mixture
  std::vector<EstimatorKind> estimators{kAllEstimators.begin(), kAllEstimators.end()};
  GuidanceWeights weights;
  std::optional<double> ssd_omega;
  StageThresholds thresholds;
  TimestepSampler sampler{SamplerKind::NonIncreasing, 1, 800, 1, 0.0};
  std::optional<int> fixed_t;
  std::map<Phase, int> phase_t{{Phase::EarlyLarge, 900}, {Phase::Middle, 700}, {Phase::Small, 50}};
  double lr = 1e-2;
  int steps = 2000;
  std::uint64_t seed = 0;
  int num_seeds = 20;
  Vec theta0 = default_theta0();
  int record_every = 1;
  int ema_window = 50;
  double divergence_bound = 1e3;
  double tol = 0.05;
  double grad_tol = 1e-3;
  NoisingMode noising = NoisingMode::Forward;

  std::vector<std::uint64_t> seeds() const;
  EstimatorSettings estimator_settings() const;
  OptimizeOptions optimize_options() const;
};

/// Field-path errors such as "sampler.t_min: expected an integer".
/// Relative mixture paths resolve against `base_dir`.
ToyConfig toy_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
nlohmann::json toy_config_to_json(const ToyConfig& cfg);
ToyConfig load_toy_config(const std::filesystem::path& path);

struct MeshRunConfig {
  std::string mesh_path;  // empty means the built-in fixture named by `fixture`
  std::string fixture = "grid";  // "grid" (10×25) or "icosphere" (162 vertices)
  std::string mixture_path;
  std::string profile = "clown";
  MeshEditConfig edit;
  std::uint64_t seed = 0;
  int num_seeds = 1;
  Vec init_code = default_theta0();
  int table_total = 50000;  // |V| of the scaled allocation table

  std::vector<std::uint64_t> seeds() const;
};

MeshRunConfig mesh_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
nlohmann::json mesh_config_to_json(const MeshRunConfig& cfg);
MeshRunConfig load_mesh_config(const std::filesystem::path& path);

/// Mixture named by a config, or the built-in toy mixture.
ConditionedMixture resolve_mixture(const std::string& path);
LatentMesh resolve_mesh(const MeshRunConfig& cfg);

/// SDSE_SEED, when set to an unsigned integer, replaces `seed`.
std::uint64_t seed_from_env(std::uint64_t seed);

nlohmann::json read_json_file(const std::filesystem::path& path, const std::string& what);

}  // namespace sdse
