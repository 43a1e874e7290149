#pragma once

// Toy-phase reproductions on the labelled 2D mixture, convergence
// classification, density diagnostics and the synthetic mesh-edit ablations.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sdse/guidance.hpp"
#include "sdse/latent_mesh.hpp"

namespace sdse {

enum class Phase { EarlyLarge, Middle, Small };

std::string_view to_string(Phase phase);
/// Accepts "early", "middle", "small".
Phase parse_phase(std::string_view name);

struct PhaseSpec {
  Phase phase = Phase::Middle;
  std::optional<int> fixed_t;  // constant timestep; otherwise `sampler` is used
  TimestepSampler sampler;
  std::vector<EstimatorKind> estimators;
  Vec theta0;  // empty means the image-conditional mode [0.5, 1]
  OptimizeOptions options;

  TimestepSampler policy() const;
  /// EarlyLarge needs every t > L, Middle t in (M, L], Small t <= M.
  void validate(const StageThresholds& th, int schedule_steps) const;
};

/// [0.5, 1]: the θ0 used when a phase leaves it unset.
Vec default_theta0();

/// One trajectory per (estimator, seed), estimators in the order given and seeds
/// ascending within each estimator.
std::vector<Trajectory> run_toy_phase(const PhaseSpec& spec, const NoisePredictor& oracle,
                                      const EstimatorSettings& settings, std::vector<std::uint64_t> seeds);

enum class Classification { Converged, IntermediateTrap, Diverged, Wandering };
std::string_view to_string(Classification c);

struct ConvergenceReport {
  Vec final_theta;
  Vec nearest_mode;
  double distance = 0.0;
  double residual_ema_norm = 0.0;
  Classification classification = Classification::Wandering;
};

/// Means of the components labelled as requiring both conditions.
std::vector<Vec> full_condition_modes(const ConditionedMixture& mix);

/// Converged: final distance < tol to a mode. IntermediateTrap: residual EMA
/// norm < grad_tol with distance >= tol. Diverged: the guard tripped.
/// Otherwise Wandering.
ConvergenceReport convergence_check(const Trajectory& traj, const std::vector<Vec>& modes, double tol = 0.05,
                                    double grad_tol = 1e-3);

struct ScheduleResult {
  Trajectory trajectory;
  ConvergenceReport report;
};

/// SDSE variants need sampler.t_max <= L.
std::vector<ScheduleResult> run_full_schedule(EstimatorKind estimator, const TimestepSampler& sampler,
                                              const NoisePredictor& oracle, const EstimatorSettings& settings,
                                              const OptimizeOptions& options, std::vector<std::uint64_t> seeds,
                                              double tol = 0.05, double grad_tol = 1e-3);

struct DensityRow {
  int step = 0;
  int t = 0;
  std::array<double, 4> p{};  // indexed like kAllConditions
  double log_img_over_uncond = 0.0;   // log p(θ;I) / p(θ)
  double log_text_over_uncond = 0.0;  // log p(θ;y) / p(θ)
  double log_full_over_img = 0.0;     // log p(θ;y,I) / p(θ;I)
  double log_full_over_text = 0.0;    // log p(θ;y,I) / p(θ;y)
};

/// Densities of the un-noised conditional mixtures along a trajectory.
/// Conditions without support give NaN.
std::vector<DensityRow> density_diagnostics(const Trajectory& traj, const NoisePredictor& oracle);
void write_density_csv(const std::filesystem::path& path, const std::vector<DensityRow>& rows,
                       const std::string& digest = {});

// ---------------------------------------------------------------------------

struct InstructionProfile {
  std::string name;
  std::vector<Condition> region_targets;
};

/// "clown": regions 0 and 1 (head) target (y,I); "kimono": regions 2-4
/// (body, arms) target (y,I). Remaining regions target (∅,I).
InstructionProfile instruction_profile(std::string_view name, int region_count = 5);

struct MeshEditConfig {
  InstructionProfile profile;
  EstimatorKind estimator = EstimatorKind::SDSE;
  EstimatorSettings estimator_settings;
  TimestepSampler sampler{SamplerKind::Uniform, 1, 150, 1, 0.0};
  double w1 = 300.0;
  double lr = 0.2;
  int steps = 400;
  int views_per_step = 50;  // |V| per step
  int views_per_region = 64;
  int support_size = 8;
  bool allocator = true;
  double target_threshold = 0.5;  // mean edit-vertex distance to a (y,I) mode
  bool stop_at_threshold = false;
  SmoothingStep smoothing = SmoothingStep::Implicit;

  void validate(const LatentMesh& mesh, int schedule_steps) const;
};

struct EditStepRow {
  int step = 0;
  int t = 0;
  RegionId region = 0;
  double grad_norm = 0.0;
  int views_allocated = 0;
  double smooth_loss = 0.0;
};

struct EditReport {
  std::uint64_t seed = 0;
  RegionAllocation allocation;  // counts used after the first step
  std::vector<EditStepRow> rows;
  std::vector<double> smooth_loss_curve;
  std::vector<double> target_distance_curve;  // after each step
  std::optional<int> steps_to_threshold;      // number of steps until the threshold was first met
  std::vector<double> region_dispersion;      // mean squared deviation from the region mean code
  double mean_dispersion = 0.0;               // averaged over regions
  LatentMesh final_mesh;
  std::vector<std::string> warnings;
};

/// Mean over vertices of regions targeting (y,I) of the distance from each
/// code to its nearest (y,I) mode.
double edit_target_distance(const LatentMesh& mesh, const InstructionProfile& profile,
                            const std::vector<Vec>& modes);
std::vector<double> region_dispersion(const LatentMesh& mesh);

/// The first step draws a uniform batch; with the allocator on, the region
/// weights of that step fix the per-region counts for every later step.
EditReport run_mesh_edit(const LatentMesh& mesh, const MeshEditConfig& config, const NoisePredictor& oracle,
                         std::uint64_t seed);

void write_step_report_csv(const std::filesystem::path& path, const EditReport& report,
                           const std::string& digest = {});
void write_allocation_csv(const std::filesystem::path& path, const EditReport& report,
                          const LatentMesh& mesh, const std::string& digest = {});

}  // namespace sdse
