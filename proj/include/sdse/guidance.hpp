#pragma once

// Classifier-free guidance assembly, its decomposition into the four guidance
// terms m1..m4, the score-distillation estimators built from them, and the
// timestep samplers that drive an optimization.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "sdse/score_oracle.hpp"
#include "sdse/trajectory.hpp"

namespace sdse {

using Rng = std::mt19937_64;

struct GuidanceWeights {
  double omega_text = 7.5;   // ω_t
  double omega_image = 1.5;  // ω_I

  void validate() const;
};

/// The decomposed guidance at one (z_t, t):
///   cfg_residual = (ω_I - 1) m1 + m2
///   m2           = (ω_t - 1) m3 + m4
struct TermBundle {
  Vec m1;  // ε̂(∅,I) - ε̂(∅,∅)      baseline shift
  Vec m2;  // ω_t m3 + ε̂(∅,I) - ε   condition integration
  Vec m3;  // ε̂(y,I) - ε̂(∅,I)      condition divergence
  Vec m4;  // ε̂(y,I) - ε            full condition
  Vec cfg_residual;
  Vec epsilon;
};

struct StageThresholds {
  int small_max = 150;   // M: t <= M is "small"
  int middle_max = 800;  // L: t > L is excluded

  void validate(int schedule_steps) const;
};

enum class EstimatorKind { SDS, SSD, M1Only, M3Only, M4Only, SDSE, SDSEPrime };

inline constexpr std::array<EstimatorKind, 7> kAllEstimators{
    EstimatorKind::SDS,    EstimatorKind::SSD,  EstimatorKind::M1Only,   EstimatorKind::M3Only,
    EstimatorKind::M4Only, EstimatorKind::SDSE, EstimatorKind::SDSEPrime};

std::string_view to_string(EstimatorKind kind);
/// Accepts "sds", "ssd", "m1", "m3", "m4", "sdse", "sdse-prime".
EstimatorKind parse_estimator(std::string_view name);

/// w(t) in the SDS gradient. Empty means w(t) = 1.
using TimeWeighting = std::function<double(int)>;

Vec cfg_combine(const Vec& eps_uncond, const Vec& eps_img, const Vec& eps_full, const GuidanceWeights& w);

TermBundle decompose_terms(const Vec& eps_uncond, const Vec& eps_img, const Vec& eps_full,
                           const Vec& epsilon, const GuidanceWeights& w);

/// w(t) (ε̂_CFG - ε)
Vec sds_residual(const NoisePredictor& oracle, const Vec& z_t, int t, const Vec& epsilon,
                 const GuidanceWeights& w, const TimeWeighting& weighting = {});

/// Single-condition decomposition with (y,I) as the condition and (∅,∅) as the
/// reference; the mode-disengaging part is dropped for t <= M.
Vec ssd_residual(const NoisePredictor& oracle, const Vec& z_t, int t, const Vec& epsilon, double omega,
                 const StageThresholds& th);

/// ω_t (ε̂(y,I) - ε̂(∅,I)) + ε̂(∅,I) - ε. Throws for t > L.
Vec sdse_residual(const NoisePredictor& oracle, const Vec& z_t, int t, const Vec& epsilon,
                  const GuidanceWeights& w, const StageThresholds& th);

/// m4 for t <= M, SDS-E otherwise. Throws for t > L.
Vec sdse_prime_residual(const NoisePredictor& oracle, const Vec& z_t, int t, const Vec& epsilon,
                        const GuidanceWeights& w, const StageThresholds& th);

struct EstimatorSettings {
  GuidanceWeights weights;
  StageThresholds thresholds;
  TimeWeighting time_weighting;
  /// Guidance scale of the SSD baseline; defaults to ω_t when unset.
  std::optional<double> ssd_omega;
};

Vec term_residual(EstimatorKind kind, const NoisePredictor& oracle, const Vec& z_t, int t,
                  const Vec& epsilon, const EstimatorSettings& settings);

enum class SamplerKind { Uniform, NonIncreasing };

std::string_view to_string(SamplerKind kind);
SamplerKind parse_sampler(std::string_view name);

struct TimestepSampler {
  SamplerKind kind = SamplerKind::NonIncreasing;
  int t_min = 1;
  int t_max = 800;
  int total_steps = 1;
  double jitter = 0.0;  // std of the Gaussian perturbation around the envelope

  static TimestepSampler fixed(int t, int total_steps = 1) {
    return {SamplerKind::Uniform, t, t, total_steps, 0.0};
  }
  void validate(int schedule_steps) const;
};

/// t_max - (t_max - t_min) * step / (total_steps - 1)
double envelope(const TimestepSampler& sampler, int step);

/// Uniform: integer uniform on [t_min, t_max]. NonIncreasing: rounded envelope
/// plus jitter, clipped into [t_min, min(t_max, previous)] so the emitted
/// sequence never increases. `previous` is the last emitted timestep.
int sample_timestep(const TimestepSampler& sampler, int step, Rng& rng, std::optional<int> previous = {});

/// Stateful wrapper that feeds each emitted timestep back as `previous`.
class TimestepStream {
 public:
  TimestepStream(TimestepSampler sampler, Rng& rng) : sampler_(sampler), rng_(rng) {}
  int next(int step);

 private:
  TimestepSampler sampler_;
  Rng& rng_;
  std::optional<int> previous_;
};

struct OptimizeOptions {
  double lr = 1e-2;
  int steps = 2000;
  std::uint64_t seed = 0;
  double divergence_bound = 1e3;
  int record_stride = 1;  // keep every n-th state (the last state is always kept)
  int ema_window = 50;    // residual EMA uses smoothing 1 / ema_window
};

/// θ ← θ - lr · residual, with the residual evaluated at z_t = forward_diffuse(θ, t, ε)
/// for fresh ε each step (the same ε enters the residual). The sampler's
/// total_steps is taken from options.steps. A run whose iterate leaves the
/// ball of radius divergence_bound stops early with `diverged` set.
Trajectory optimize_point(const Vec& theta0, EstimatorKind kind, const TimestepSampler& sampler,
                          const NoisePredictor& oracle, const EstimatorSettings& settings,
                          const OptimizeOptions& options);

}  // namespace sdse
