#include "sdse/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace sdse {

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::EarlyLarge: return "early";
    case Phase::Middle: return "middle";
    case Phase::Small: return "small";
  }
  return "unknown";
}

Phase parse_phase(std::string_view name) {
  if (name == "early") return Phase::EarlyLarge;
  if (name == "middle") return Phase::Middle;
  if (name == "small") return Phase::Small;
  throw Error("unknown phase '" + std::string(name) + "' (expected early, middle or small)");
}

std::string_view to_string(Classification c) {
  switch (c) {
    case Classification::Converged: return "converged";
    case Classification::IntermediateTrap: return "intermediate-trap";
    case Classification::Diverged: return "diverged";
    case Classification::Wandering: return "wandering";
  }
  return "unknown";
}

Vec default_theta0() { return Vec{{0.5, 1.0}}; }

TimestepSampler PhaseSpec::policy() const {
  if (fixed_t) return TimestepSampler::fixed(*fixed_t, options.steps);
  TimestepSampler s = sampler;
  s.total_steps = options.steps;
  return s;
}

void PhaseSpec::validate(const StageThresholds& th, int schedule_steps) const {
  th.validate(schedule_steps);
  const TimestepSampler s = policy();
  s.validate(schedule_steps);
  const std::string range = "[" + std::to_string(s.t_min) + ", " + std::to_string(s.t_max) + "]";
  switch (phase) {
    case Phase::EarlyLarge:
      if (s.t_min <= th.middle_max)
        throw Error("early phase needs t > L=" + std::to_string(th.middle_max) + ", got " + range);
      for (EstimatorKind k : estimators)
        if (k == EstimatorKind::SDSE || k == EstimatorKind::SDSEPrime)
          throw Error("estimator " + std::string(to_string(k)) + " excludes the early phase's timesteps");
      break;
    case Phase::Middle:
      if (s.t_min <= th.small_max || s.t_max > th.middle_max)
        throw Error("middle phase needs M=" + std::to_string(th.small_max) + " < t <= L=" +
                    std::to_string(th.middle_max) + ", got " + range);
      break;
    case Phase::Small:
      if (s.t_max > th.small_max)
        throw Error("small phase needs t <= M=" + std::to_string(th.small_max) + ", got " + range);
      break;
  }
  if (estimators.empty()) throw Error("phase needs at least one estimator");
}

namespace {

void sort_seeds(std::vector<std::uint64_t>& seeds) {
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  if (seeds.empty()) throw Error("at least one seed is required");
}

}  // namespace

std::vector<Trajectory> run_toy_phase(const PhaseSpec& spec, const NoisePredictor& oracle,
                                      const EstimatorSettings& settings, std::vector<std::uint64_t> seeds) {
  spec.validate(settings.thresholds, oracle.schedule().steps());
  sort_seeds(seeds);
  const Vec theta0 = spec.theta0.size() ? spec.theta0 : default_theta0();
  const TimestepSampler policy = spec.policy();
  std::vector<Trajectory> out;
  out.reserve(spec.estimators.size() * seeds.size());
  for (EstimatorKind kind : spec.estimators) {
    for (std::uint64_t seed : seeds) {
      OptimizeOptions opt = spec.options;
      opt.seed = seed;
      out.push_back(optimize_point(theta0, kind, policy, oracle, settings, opt));
    }
  }
  return out;
}

std::vector<Vec> full_condition_modes(const ConditionedMixture& mix) {
  std::vector<Vec> modes;
  for (const auto& c : mix.components())
    if (c.label == ConditionLabel::Both) modes.push_back(c.gaussian.mean());
  return modes;
}

ConvergenceReport convergence_check(const Trajectory& traj, const std::vector<Vec>& modes, double tol,
                                    double grad_tol) {
  if (!(tol > 0.0)) throw Error("tol must be > 0");
  if (modes.empty()) throw Error("convergence check needs at least one mode");
  ConvergenceReport rep;
  rep.final_theta = traj.final_theta();
  rep.residual_ema_norm = traj.residual_ema.size() ? traj.residual_ema.norm() : 0.0;
  if (traj.diverged || !rep.final_theta.allFinite()) {
    rep.classification = Classification::Diverged;
    rep.distance = std::numeric_limits<double>::infinity();
    rep.nearest_mode = modes.front();
    return rep;
  }
  rep.distance = std::numeric_limits<double>::infinity();
  for (const Vec& m : modes) {
    if (m.size() != rep.final_theta.size()) throw Error("mode dimension does not match trajectory");
    const double d = (rep.final_theta - m).norm();
    if (d < rep.distance) {
      rep.distance = d;
      rep.nearest_mode = m;
    }
  }
  if (rep.distance < tol)
    rep.classification = Classification::Converged;
  else if (traj.residual_ema.size() && rep.residual_ema_norm < grad_tol)
    rep.classification = Classification::IntermediateTrap;
  else
    rep.classification = Classification::Wandering;
  return rep;
}

std::vector<ScheduleResult> run_full_schedule(EstimatorKind estimator, const TimestepSampler& sampler,
                                              const NoisePredictor& oracle, const EstimatorSettings& settings,
                                              const OptimizeOptions& options, std::vector<std::uint64_t> seeds,
                                              double tol, double grad_tol) {
  if ((estimator == EstimatorKind::SDSE || estimator == EstimatorKind::SDSEPrime) &&
      sampler.t_max > settings.thresholds.middle_max)
    throw Error("sampler range [" + std::to_string(sampler.t_min) + ", " + std::to_string(sampler.t_max) +
                "] exceeds L=" + std::to_string(settings.thresholds.middle_max) + " for " +
                std::string(to_string(estimator)));
  sort_seeds(seeds);
  const std::vector<Vec> modes = full_condition_modes(oracle.mixture());
  std::vector<ScheduleResult> out;
  out.reserve(seeds.size());
  for (std::uint64_t seed : seeds) {
    OptimizeOptions opt = options;
    opt.seed = seed;
    ScheduleResult r;
    r.trajectory = optimize_point(default_theta0(), estimator, sampler, oracle, settings, opt);
    r.report = convergence_check(r.trajectory, modes, tol, grad_tol);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<DensityRow> density_diagnostics(const Trajectory& traj, const NoisePredictor& oracle) {
  if (traj.states.empty()) throw Error("density diagnostics need a non-empty trajectory");
  std::vector<DensityRow> rows;
  rows.reserve(traj.states.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& s : traj.states) {
    DensityRow row;
    row.step = s.step;
    row.t = s.t;
    for (Condition c : kAllConditions) {
      const auto idx = static_cast<std::size_t>(condition_index(c));
      row.p[idx] = oracle.has_support(c) && s.theta.allFinite() ? mixture_density(oracle.conditional(c), s.theta)
                                                                : nan;
    }
    const auto& p = row.p;
    row.log_img_over_uncond = std::log(p[1] / p[0]);
    row.log_text_over_uncond = std::log(p[2] / p[0]);
    row.log_full_over_img = std::log(p[3] / p[1]);
    row.log_full_over_text = std::log(p[3] / p[2]);
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path, const std::string& digest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  if (!digest.empty()) out << "# config_digest=" << digest << '\n';
  return out;
}

}  // namespace

void write_density_csv(const std::filesystem::path& path, const std::vector<DensityRow>& rows,
                       const std::string& digest) {
  std::ofstream out = open_csv(path, digest);
  out << "step,t,p_uncond,p_img,p_text,p_full,log_img_over_uncond,log_text_over_uncond,log_full_over_img,"
         "log_full_over_text\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.t;
    for (double v : r.p) out << ',' << format_double(v);
    out << ',' << format_double(r.log_img_over_uncond) << ',' << format_double(r.log_text_over_uncond) << ','
        << format_double(r.log_full_over_img) << ',' << format_double(r.log_full_over_text) << '\n';
  }
}

// ---------------------------------------------------------------------------

InstructionProfile instruction_profile(std::string_view name, int region_count) {
  if (region_count < 5) throw Error("instruction profiles need at least 5 regions");
  InstructionProfile p;
  p.name = std::string(name);
  p.region_targets.assign(static_cast<std::size_t>(region_count), kImageOnly);
  if (name == "clown") {
    p.region_targets[0] = p.region_targets[1] = kFullCondition;
  } else if (name == "kimono") {
    p.region_targets[2] = p.region_targets[3] = p.region_targets[4] = kFullCondition;
  } else {
    throw Error("unknown instruction profile '" + std::string(name) + "' (expected clown or kimono)");
  }
  return p;
}

void MeshEditConfig::validate(const LatentMesh& mesh, int schedule_steps) const {
  if (static_cast<int>(profile.region_targets.size()) != mesh.region_count())
    throw Error("profile '" + profile.name + "' has " + std::to_string(profile.region_targets.size()) +
                " region targets for a mesh with " + std::to_string(mesh.region_count()) + " regions");
  TimestepSampler s = sampler;
  s.total_steps = std::max(1, steps);
  s.validate(schedule_steps);
  if ((estimator == EstimatorKind::SDSE || estimator == EstimatorKind::SDSEPrime) &&
      s.t_max > estimator_settings.thresholds.middle_max)
    throw Error("sampler t_max exceeds L for " + std::string(to_string(estimator)));
  if (steps < 1) throw Error("steps must be >= 1");
  if (views_per_step < 1) throw Error("views_per_step must be >= 1");
  if (views_per_region < 1) throw Error("views_per_region must be >= 1");
  if (support_size < 1) throw Error("support_size must be >= 1");
  if (!std::isfinite(w1) || w1 < 0.0) throw Error("w1 must be finite and >= 0");
  if (!std::isfinite(lr) || lr < 0.0) throw Error("lr must be finite and >= 0");
  if (!(target_threshold > 0.0)) throw Error("target_threshold must be > 0");
}

double edit_target_distance(const LatentMesh& mesh, const InstructionProfile& profile,
                            const std::vector<Vec>& modes) {
  double total = 0.0;
  int count = 0;
  for (int i = 0; i < mesh.vertex_count; ++i) {
    const auto r = static_cast<std::size_t>(mesh.regions[static_cast<std::size_t>(i)]);
    if (!(profile.region_targets[r] == kFullCondition)) continue;
    double best = std::numeric_limits<double>::infinity();
    for (const Vec& m : modes) best = std::min(best, (mesh.codes.row(i).transpose() - m).norm());
    total += best;
    ++count;
  }
  if (count == 0) throw Error("profile '" + profile.name + "' edits no vertices");
  return total / count;
}

std::vector<double> region_dispersion(const LatentMesh& mesh) {
  std::vector<double> out(static_cast<std::size_t>(mesh.region_count()), 0.0);
  for (RegionId r = 0; r < mesh.region_count(); ++r) {
    const std::vector<int> verts = mesh.region_vertices(r);
    if (verts.empty()) continue;
    Vec mean = Vec::Zero(mesh.latent_dim());
    for (int v : verts) mean += mesh.codes.row(v).transpose();
    mean /= static_cast<double>(verts.size());
    double acc = 0.0;
    for (int v : verts) acc += (mesh.codes.row(v).transpose() - mean).squaredNorm();
    out[static_cast<std::size_t>(r)] = acc / static_cast<double>(verts.size());
  }
  return out;
}

EditReport run_mesh_edit(const LatentMesh& mesh, const MeshEditConfig& config, const NoisePredictor& oracle,
                         std::uint64_t seed) {
  config.validate(mesh, oracle.schedule().steps());
  const int regions = mesh.region_count();
  const std::vector<Vec> modes = full_condition_modes(oracle.mixture());
  if (modes.empty()) throw Error("mixture has no (y,I) modes");

  EditSettings es;
  es.estimator = config.estimator;
  es.estimator_settings = config.estimator_settings;
  es.region_targets = config.profile.region_targets;
  es.w1 = config.w1;
  es.lr = config.lr;
  es.smoothing = config.smoothing;
  MeshEditor editor(mesh, oracle, es);

  // The view pool has its own stream so runs that differ only in allocator or
  // w1 see the same views.
  Rng pool_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const std::vector<ViewSpec> pool = make_region_views(mesh, config.views_per_region, config.support_size, pool_rng);
  std::vector<std::vector<const ViewSpec*>> by_region(static_cast<std::size_t>(regions));
  for (const auto& v : pool) by_region[static_cast<std::size_t>(v.region)].push_back(&v);

  EditReport report;
  report.seed = seed;
  const RegionAllocation uniform =
      allocate_views(std::vector<double>(static_cast<std::size_t>(regions), 1.0), config.views_per_step);
  for (int r = 0; r < regions; ++r)
    if (by_region[static_cast<std::size_t>(r)].empty() && uniform.counts[static_cast<std::size_t>(r)] > 0)
      throw Error("region " + std::to_string(r) + " has no vertices to view");
  report.allocation = uniform;

  Rng rng(seed);
  TimestepSampler sampler = config.sampler;
  sampler.total_steps = config.steps;
  TimestepStream timesteps(sampler, rng);
  std::vector<ViewSpec> batch;
  RegionAllocation counts = uniform;

  for (int step = 0; step < config.steps; ++step) {
    batch.clear();
    for (int r = 0; r < regions; ++r) {
      const auto& candidates = by_region[static_cast<std::size_t>(r)];
      if (candidates.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      for (int k = 0; k < counts.counts[static_cast<std::size_t>(r)]; ++k) batch.push_back(*candidates[pick(rng)]);
    }
    if (batch.empty()) throw Error("allocation produced an empty view batch");
    const int t = timesteps.next(step);
    const EditStepReport sr = editor.step(batch, t, rng);

    for (int r = 0; r < regions; ++r) {
      report.rows.push_back({step, t, r, sr.region_grad_norms[static_cast<std::size_t>(r)],
                             counts.counts[static_cast<std::size_t>(r)], sr.smooth_loss});
    }
    report.smooth_loss_curve.push_back(sr.smooth_loss);
    const double dist = edit_target_distance(editor.mesh(), config.profile, modes);
    report.target_distance_curve.push_back(dist);
    if (!report.steps_to_threshold && dist < config.target_threshold) report.steps_to_threshold = step + 1;

    if (step == 0 && config.allocator) {
      counts = allocate_views(sr.region_grad_norms, config.views_per_step, &report.warnings);
      report.allocation = counts;
    }
    if (!editor.mesh().codes.allFinite()) throw Error("mesh codes became non-finite at step " + std::to_string(step));
    if (config.stop_at_threshold && report.steps_to_threshold) break;
  }

  report.final_mesh = editor.mesh();
  report.region_dispersion = region_dispersion(report.final_mesh);
  double acc = 0.0;
  for (double d : report.region_dispersion) acc += d;
  report.mean_dispersion = acc / static_cast<double>(report.region_dispersion.size());
  return report;
}

void write_step_report_csv(const std::filesystem::path& path, const EditReport& report, const std::string& digest) {
  std::ofstream out = open_csv(path, digest);
  out << "step,region,grad_norm,views_allocated,smooth_loss\n";
  for (const auto& r : report.rows)
    out << r.step << ',' << r.region << ',' << format_double(r.grad_norm) << ',' << r.views_allocated << ','
        << format_double(r.smooth_loss) << '\n';
}

void write_allocation_csv(const std::filesystem::path& path, const EditReport& report, const LatentMesh& mesh,
                          const std::string& digest) {
  std::ofstream out = open_csv(path, digest);
  out << "region,name,weight,views\n";
  const auto& a = report.allocation;
  for (std::size_t r = 0; r < a.counts.size(); ++r) {
    const std::string name = r < mesh.region_names.size() ? mesh.region_names[r] : "region" + std::to_string(r);
    out << r << ',' << name << ',' << format_double(a.weights[r]) << ',' << a.counts[r] << '\n';
  }
}

}  // namespace sdse
