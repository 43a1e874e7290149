#pragma once

// Closed-form densities, scores and noise predictions for Gaussian mixtures
// whose components carry condition labels. These stand in for a trained
// dual-conditioned noise predictor.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sdse/types.hpp"

namespace sdse {

enum class ConditionLabel { Unconditional, ImageOnly, TextOnly, Both };

/// Conditions attached to a noise query: text instruction y and source image I.
struct Condition {
  bool text = false;
  bool image = false;

  friend bool operator==(Condition, Condition) = default;
};

inline constexpr Condition kUnconditional{false, false};
inline constexpr Condition kImageOnly{false, true};
inline constexpr Condition kTextOnly{true, false};
inline constexpr Condition kFullCondition{true, true};
inline constexpr std::array<Condition, 4> kAllConditions{kUnconditional, kImageOnly, kTextOnly,
                                                        kFullCondition};

/// Membership table: (∅,∅) admits every label, (∅,I) admits {ImageOnly, Both},
/// (y,∅) admits {TextOnly, Both}, (y,I) admits {Both}.
bool admits(Condition cond, ConditionLabel label);

/// Dense index 0..3 in the order of kAllConditions.
int condition_index(Condition cond);

std::string to_string(Condition cond);
std::string_view to_string(ConditionLabel label);
ConditionLabel parse_label(std::string_view text);

class GaussianComponent {
 public:
  /// Throws sdse::Error unless weight >= 0 and covariance is symmetric
  /// positive definite with the mean's dimension.
  GaussianComponent(double weight, Vec mean, Mat covariance);
  static GaussianComponent isotropic(double weight, Vec mean, double variance);

  double weight() const { return weight_; }
  const Vec& mean() const { return mean_; }
  const Mat& covariance() const { return covariance_; }
  const Mat& precision() const { return precision_; }
  int dimension() const { return static_cast<int>(mean_.size()); }

  double log_pdf(const Vec& z) const;

 private:
  double weight_;
  Vec mean_;
  Mat covariance_;
  Mat precision_;
  double log_norm_;
};

struct LabeledComponent {
  GaussianComponent gaussian;
  ConditionLabel label;
};

class ConditionedMixture {
 public:
  explicit ConditionedMixture(std::vector<LabeledComponent> components);

  int dimension() const { return dimension_; }
  std::size_t size() const { return components_.size(); }
  const std::vector<LabeledComponent>& components() const { return components_; }
  const LabeledComponent& operator[](std::size_t i) const { return components_[i]; }
  double total_weight() const { return total_weight_; }

 private:
  std::vector<LabeledComponent> components_;
  int dimension_;
  double total_weight_;
};

/// Renormalized components admissible under `cond`.
/// Throws sdse::Error("condition has no support") on an empty selection.
ConditionedMixture sub_mixture(const ConditionedMixture& mix, Condition cond);

double mixture_log_density(const ConditionedMixture& mix, const Vec& z);
double mixture_density(const ConditionedMixture& mix, const Vec& z);

/// ∇_z log p(z), evaluated through log-space responsibilities.
Vec mixture_score(const ConditionedMixture& mix, const Vec& z);

/// Posterior responsibilities r_k(z); sums to one.
Vec responsibilities(const ConditionedMixture& mix, const Vec& z);

class NoiseSchedule {
 public:
  /// alphas_bar[t-1] = ᾱ_t. Values must lie in (0, 1] and strictly decrease.
  explicit NoiseSchedule(std::vector<double> alphas_bar);

  /// ᾱ_t = Π_{s<=t} (1 - β_s) with β linearly spaced from beta_start to beta_end.
  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

  int steps() const { return static_cast<int>(alphas_bar_.size()); }
  double alpha_bar(int t) const;
  double sigma(int t) const;
  const std::vector<double>& alphas_bar() const { return alphas_bar_; }

 private:
  void check(int t) const;
  std::vector<double> alphas_bar_;
};

/// Each component (w, μ, Σ) becomes (w, √ᾱ μ, ᾱ Σ + (1-ᾱ) I); labels kept.
ConditionedMixture noised_mixture(const ConditionedMixture& mix, double alpha_bar);
ConditionedMixture noised_mixture(const ConditionedMixture& mix, const NoiseSchedule& sched, int t);

/// −σ · ∇ log p_noised(z_t) for an already-noised mixture.
Vec predict_noise_from(const ConditionedMixture& noised, double sigma, const Vec& z_t);

Vec predict_noise(const ConditionedMixture& mix, const NoiseSchedule& sched, const Vec& z_t, int t,
                  Condition cond);

/// √ᾱ_t z + √(1-ᾱ_t) eps
Vec forward_diffuse(const Vec& z, int t, const Vec& eps, const NoiseSchedule& sched);

enum class NoisingMode {
  Forward,  // p_t is the forward-diffused mixture
  Raw,      // p_t = p at every timestep (sensitivity studies)
};

/// Precomputes every (condition, t) noised sub-mixture once so repeated noise
/// queries only pay for the mixture score. Conditions without support are
/// allowed at construction and raise on first query.
class NoisePredictor {
 public:
  NoisePredictor(ConditionedMixture mix, NoiseSchedule sched, NoisingMode mode = NoisingMode::Forward);

  Vec predict(const Vec& z_t, int t, Condition cond) const;

  const ConditionedMixture& mixture() const { return mixture_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  NoisingMode mode() const { return mode_; }
  bool has_support(Condition cond) const;
  /// Un-noised sub-mixture for `cond`.
  const ConditionedMixture& conditional(Condition cond) const;
  const ConditionedMixture& noised(Condition cond, int t) const;

 private:
  ConditionedMixture mixture_;
  NoiseSchedule schedule_;
  NoisingMode mode_;
  std::array<std::vector<ConditionedMixture>, 4> noised_;
  std::array<std::optional<ConditionedMixture>, 4> conditional_;
};

}  // namespace sdse
