#include "sdse/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sdse {

void GuidanceWeights::validate() const {
  if (!std::isfinite(omega_text) || omega_text < 0.0) throw Error("omega_t must be finite and >= 0");
  if (!std::isfinite(omega_image) || omega_image < 0.0) throw Error("omega_i must be finite and >= 0");
}

void StageThresholds::validate(int schedule_steps) const {
  if (!(0 < small_max && small_max < middle_max && middle_max <= schedule_steps))
    throw Error("stage thresholds need 0 < M < L <= T (got M=" + std::to_string(small_max) +
                ", L=" + std::to_string(middle_max) + ", T=" + std::to_string(schedule_steps) + ")");
}

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::SDS: return "sds";
    case EstimatorKind::SSD: return "ssd";
    case EstimatorKind::M1Only: return "m1";
    case EstimatorKind::M3Only: return "m3";
    case EstimatorKind::M4Only: return "m4";
    case EstimatorKind::SDSE: return "sdse";
    case EstimatorKind::SDSEPrime: return "sdse-prime";
  }
  return "unknown";
}

EstimatorKind parse_estimator(std::string_view name) {
  for (EstimatorKind k : kAllEstimators)
    if (to_string(k) == name) return k;
  throw Error("unknown estimator '" + std::string(name) +
              "' (expected sds, ssd, m1, m3, m4, sdse, sdse-prime)");
}

namespace {

void same_dims(const Vec& a, const Vec& b, const Vec& c) {
  if (a.size() != b.size() || a.size() != c.size()) throw Error("guidance inputs differ in dimension");
}

// ω (full - img) + img - ε. Shared by decompose_terms and sdse_residual so
// both produce bit-identical vectors.
Vec condition_integration(const Vec& eps_img, const Vec& eps_full, const Vec& epsilon, double omega_text) {
  Vec out = omega_text * (eps_full - eps_img);
  out += eps_img;
  out -= epsilon;
  return out;
}

void check_middle_cap(int t, const StageThresholds& th) {
  if (t > th.middle_max)
    throw Error("large timesteps excluded: t=" + std::to_string(t) + " > L=" + std::to_string(th.middle_max));
}

}  // namespace

Vec cfg_combine(const Vec& eps_uncond, const Vec& eps_img, const Vec& eps_full, const GuidanceWeights& w) {
  same_dims(eps_uncond, eps_img, eps_full);
  // Anchored at ε̂(y,I) so unit weights return it bit-for-bit.
  Vec out = eps_full;
  out += (w.omega_text - 1.0) * (eps_full - eps_img);
  out += (w.omega_image - 1.0) * (eps_img - eps_uncond);
  return out;
}

TermBundle decompose_terms(const Vec& eps_uncond, const Vec& eps_img, const Vec& eps_full,
                           const Vec& epsilon, const GuidanceWeights& w) {
  same_dims(eps_uncond, eps_img, eps_full);
  if (epsilon.size() != eps_full.size()) throw Error("guidance inputs differ in dimension");
  TermBundle b;
  b.m1 = eps_img - eps_uncond;
  b.m3 = eps_full - eps_img;
  b.m4 = eps_full - epsilon;
  b.m2 = condition_integration(eps_img, eps_full, epsilon, w.omega_text);
  b.cfg_residual = cfg_combine(eps_uncond, eps_img, eps_full, w) - epsilon;
  b.epsilon = epsilon;
  return b;
}

Vec sds_residual(const NoisePredictor& oracle, const Vec& z_t, int t, const Vec& epsilon,
                 const GuidanceWeights& w, const TimeWeighting& weighting) {
  const Vec uncond = oracle.predict(z_t, t, kUnconditional);
  const Vec img = oracle.predict(z_t, t, kImageOnly);
  const Vec full = oracle.predict(z_t, t, kFullCondition);
  Vec r = cfg_combine(uncond, img, full, w) - epsilon;
  if (weighting) r *= weighting(t);
  return r;
}

Vec ssd_residual(const NoisePredictor& oracle, const Vec& z_t, int t, const Vec& epsilon, double omega,
                 const StageThresholds& th) {
  const Vec full = oracle.predict(z_t, t, kFullCondition);
  Vec r = full - epsilon;
  if (t > th.small_max) {
    const Vec uncond = oracle.predict(z_t, t, kUnconditional);
    r += omega * (full - uncond);
  }
  return r;
}

Vec sdse_residual(const NoisePredictor& oracle, const Vec& z_t, int t, const Vec& epsilon,
                  const GuidanceWeights& w, const StageThresholds& th) {
  check_middle_cap(t, th);
  const Vec img = oracle.predict(z_t, t, kImageOnly);
  const Vec full = oracle.predict(z_t, t, kFullCondition);
  return condition_integration(img, full, epsilon, w.omega_text);
}

Vec sdse_prime_residual(const NoisePredictor& oracle, const Vec& z_t, int t, const Vec& epsilon,
                        const GuidanceWeights& w, const StageThresholds& th) {
  check_middle_cap(t, th);
  if (t <= th.small_max) return oracle.predict(z_t, t, kFullCondition) - epsilon;
  return sdse_residual(oracle, z_t, t, epsilon, w, th);
}

Vec term_residual(EstimatorKind kind, const NoisePredictor& oracle, const Vec& z_t, int t,
                  const Vec& epsilon, const EstimatorSettings& s) {
  switch (kind) {
    case EstimatorKind::SDS:
      return sds_residual(oracle, z_t, t, epsilon, s.weights, s.time_weighting);
    case EstimatorKind::SSD:
      return ssd_residual(oracle, z_t, t, epsilon, s.ssd_omega.value_or(s.weights.omega_text), s.thresholds);
    case EstimatorKind::M1Only:
      return oracle.predict(z_t, t, kImageOnly) - oracle.predict(z_t, t, kUnconditional);
    case EstimatorKind::M3Only:
      return oracle.predict(z_t, t, kFullCondition) - oracle.predict(z_t, t, kImageOnly);
    case EstimatorKind::M4Only:
      return oracle.predict(z_t, t, kFullCondition) - epsilon;
    case EstimatorKind::SDSE:
      return sdse_residual(oracle, z_t, t, epsilon, s.weights, s.thresholds);
    case EstimatorKind::SDSEPrime:
      return sdse_prime_residual(oracle, z_t, t, epsilon, s.weights, s.thresholds);
  }
  throw Error("invalid estimator kind");
}

// ---------------------------------------------------------------------------

std::string_view to_string(SamplerKind kind) {
  return kind == SamplerKind::Uniform ? "uniform" : "non-increasing";
}

SamplerKind parse_sampler(std::string_view name) {
  if (name == "uniform") return SamplerKind::Uniform;
  if (name == "non-increasing" || name == "nonincreasing") return SamplerKind::NonIncreasing;
  throw Error("unknown sampler '" + std::string(name) + "' (expected uniform or non-increasing)");
}

void TimestepSampler::validate(int schedule_steps) const {
  if (!(1 <= t_min && t_min <= t_max && t_max <= schedule_steps))
    throw Error("sampler range needs 1 <= t_min <= t_max <= T (got [" + std::to_string(t_min) + ", " +
                std::to_string(t_max) + "], T=" + std::to_string(schedule_steps) + ")");
  if (total_steps < 1) throw Error("sampler total_steps must be positive");
  if (!std::isfinite(jitter) || jitter < 0.0) throw Error("sampler jitter must be finite and >= 0");
}

double envelope(const TimestepSampler& s, int step) {
  if (s.total_steps <= 1) return s.t_max;
  return s.t_max - static_cast<double>(s.t_max - s.t_min) * step / (s.total_steps - 1);
}

int sample_timestep(const TimestepSampler& s, int step, Rng& rng, std::optional<int> previous) {
  if (step < 0 || step >= s.total_steps)
    throw Error("sampler step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + ")");
  if (s.kind == SamplerKind::Uniform) return std::uniform_int_distribution<int>(s.t_min, s.t_max)(rng);

  double target = envelope(s, step);
  if (s.jitter > 0.0) target += s.jitter * std::normal_distribution<double>(0.0, 1.0)(rng);
  const int upper = previous ? std::min(s.t_max, *previous) : s.t_max;
  const int t = static_cast<int>(std::lround(target));
  return std::clamp(t, s.t_min, std::max(s.t_min, upper));
}

int TimestepStream::next(int step) {
  const int t = sample_timestep(sampler_, step, rng_, previous_);
  previous_ = t;
  return t;
}

// ---------------------------------------------------------------------------

Trajectory optimize_point(const Vec& theta0, EstimatorKind kind, const TimestepSampler& sampler,
                          const NoisePredictor& oracle, const EstimatorSettings& settings,
                          const OptimizeOptions& options) {
  if (theta0.size() != oracle.mixture().dimension()) throw Error("theta0 dimension does not match mixture");
  if (!theta0.allFinite()) throw Error("theta0 must be finite");
  if (options.steps < 1) throw Error("steps must be >= 1");
  if (!std::isfinite(options.lr) || options.lr < 0.0) throw Error("lr must be finite and >= 0");
  if (options.record_stride < 1) throw Error("record_stride must be >= 1");
  if (options.ema_window < 1) throw Error("ema_window must be >= 1");

  TimestepSampler schedule = sampler;
  schedule.total_steps = options.steps;
  schedule.validate(oracle.schedule().steps());
  settings.weights.validate();
  settings.thresholds.validate(oracle.schedule().steps());

  const ConditionedMixture* dens_full_mix = &oracle.mixture();
  const ConditionedMixture* dens_img = oracle.has_support(kImageOnly) ? &oracle.conditional(kImageOnly) : nullptr;
  const ConditionedMixture* dens_yi =
      oracle.has_support(kFullCondition) ? &oracle.conditional(kFullCondition) : nullptr;
  auto density = [](const ConditionedMixture* m, const Vec& z) {
    return m ? mixture_density(*m, z) : std::numeric_limits<double>::quiet_NaN();
  };

  Trajectory traj;
  traj.estimator = std::string(to_string(kind));
  traj.seed = options.seed;
  traj.theta0 = theta0;
  traj.states.reserve(static_cast<std::size_t>(options.steps / options.record_stride + 1));

  Rng rng(options.seed);
  TimestepStream timesteps(schedule, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double ema_rate = 1.0 / options.ema_window;
  const auto dim = theta0.size();

  Vec theta = theta0;
  Vec eps(dim);
  for (int step = 0; step < options.steps; ++step) {
    const int t = timesteps.next(step);
    for (Eigen::Index k = 0; k < dim; ++k) eps[k] = normal(rng);
    const Vec z_t = forward_diffuse(theta, t, eps, oracle.schedule());
    Vec residual = term_residual(kind, oracle, z_t, t, eps, settings);
    theta -= options.lr * residual;

    if (traj.residual_ema.size() == 0)
      traj.residual_ema = residual;
    else
      traj.residual_ema += ema_rate * (residual - traj.residual_ema);

    const bool blown = !theta.allFinite() || theta.norm() > options.divergence_bound;
    const bool last = step + 1 == options.steps;
    if (blown || last || step % options.record_stride == 0) {
      TrajectoryState s;
      s.step = step;
      s.t = t;
      s.theta = theta;
      s.residual = std::move(residual);
      if (theta.allFinite()) {
        s.p = density(dens_full_mix, theta);
        s.p_img = density(dens_img, theta);
        s.p_full = density(dens_yi, theta);
      }
      traj.states.push_back(std::move(s));
    }
    if (blown) {
      traj.diverged = true;
      traj.diagnostic = "iterate norm exceeded " + format_double(options.divergence_bound) + " at step " +
                        std::to_string(step) + " (t=" + std::to_string(t) + ")";
      break;
    }
  }
  return traj;
}

}  // namespace sdse
