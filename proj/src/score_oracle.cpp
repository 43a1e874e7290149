#include "sdse/score_oracle.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace sdse {

bool admits(Condition cond, ConditionLabel label) {
  if (!cond.text && !cond.image) return true;
  if (cond.text && cond.image) return label == ConditionLabel::Both;
  if (cond.image) return label == ConditionLabel::ImageOnly || label == ConditionLabel::Both;
  return label == ConditionLabel::TextOnly || label == ConditionLabel::Both;
}

int condition_index(Condition cond) { return (cond.text ? 2 : 0) + (cond.image ? 1 : 0); }

std::string to_string(Condition cond) {
  return std::string("(") + (cond.text ? "y" : "∅") + "," + (cond.image ? "I" : "∅") + ")";
}

std::string_view to_string(ConditionLabel label) {
  switch (label) {
    case ConditionLabel::Unconditional: return "unconditional";
    case ConditionLabel::ImageOnly: return "image";
    case ConditionLabel::TextOnly: return "text";
    case ConditionLabel::Both: return "both";
  }
  return "unknown";
}

ConditionLabel parse_label(std::string_view text) {
  if (text == "unconditional") return ConditionLabel::Unconditional;
  if (text == "image") return ConditionLabel::ImageOnly;
  if (text == "text") return ConditionLabel::TextOnly;
  if (text == "both") return ConditionLabel::Both;
  throw Error("unknown condition label '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------

GaussianComponent::GaussianComponent(double weight, Vec mean, Mat covariance)
    : weight_(weight), mean_(std::move(mean)), covariance_(std::move(covariance)) {
  const auto d = mean_.size();
  if (!std::isfinite(weight_) || weight_ < 0.0) throw Error("component weight must be finite and >= 0");
  if (d == 0) throw Error("component mean must be non-empty");
  if (!mean_.allFinite()) throw Error("component mean must be finite");
  if (covariance_.rows() != d || covariance_.cols() != d)
    throw Error("covariance shape does not match mean dimension");
  if (!covariance_.allFinite()) throw Error("covariance must be finite");
  const double scale = std::max(1.0, covariance_.cwiseAbs().maxCoeff());
  if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw Error("covariance must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(covariance_, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= 0.0) throw Error("covariance must be positive definite");

  Eigen::LLT<Mat> llt(covariance_);
  precision_ = llt.solve(Mat::Identity(d, d));
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  log_norm_ = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
}

GaussianComponent GaussianComponent::isotropic(double weight, Vec mean, double variance) {
  const auto d = mean.size();
  return GaussianComponent(weight, std::move(mean), variance * Mat::Identity(d, d));
}

double GaussianComponent::log_pdf(const Vec& z) const {
  const Vec diff = z - mean_;
  return log_norm_ - 0.5 * diff.dot(precision_ * diff);
}

// ---------------------------------------------------------------------------

ConditionedMixture::ConditionedMixture(std::vector<LabeledComponent> components)
    : components_(std::move(components)), dimension_(0), total_weight_(0.0) {
  if (components_.empty()) throw Error("mixture must have at least one component");
  dimension_ = components_.front().gaussian.dimension();
  for (const auto& c : components_) {
    if (c.gaussian.dimension() != dimension_) throw Error("mixture components differ in dimension");
    total_weight_ += c.gaussian.weight();
  }
  if (!(total_weight_ > 0.0)) throw Error("mixture total weight must be positive");
}

ConditionedMixture sub_mixture(const ConditionedMixture& mix, Condition cond) {
  std::vector<LabeledComponent> picked;
  double total = 0.0;
  for (const auto& c : mix.components()) {
    if (admits(cond, c.label) && c.gaussian.weight() > 0.0) {
      picked.push_back(c);
      total += c.gaussian.weight();
    }
  }
  if (picked.empty() || !(total > 0.0)) throw Error("condition " + to_string(cond) + " has no support");
  for (auto& c : picked) {
    c.gaussian = GaussianComponent(c.gaussian.weight() / total, c.gaussian.mean(), c.gaussian.covariance());
  }
  return ConditionedMixture(std::move(picked));
}

namespace {

void check_point(const ConditionedMixture& mix, const Vec& z) {
  if (z.size() != mix.dimension()) throw Error("point dimension does not match mixture");
  if (!z.allFinite()) throw Error("point must be finite");
}

// Fills log(w_k) + log N_k(z) and returns their log-sum-exp.
double log_terms(const ConditionedMixture& mix, const Vec& z, Eigen::ArrayXd& terms) {
  const auto n = static_cast<Eigen::Index>(mix.size());
  terms.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& g = mix[static_cast<std::size_t>(k)].gaussian;
    terms[k] = g.weight() > 0.0 ? std::log(g.weight()) + g.log_pdf(z)
                                : -std::numeric_limits<double>::infinity();
  }
  const double top = terms.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((terms - top).exp().sum());
}

}  // namespace

double mixture_log_density(const ConditionedMixture& mix, const Vec& z) {
  check_point(mix, z);
  Eigen::ArrayXd terms;
  return log_terms(mix, z, terms) - std::log(mix.total_weight());
}

double mixture_density(const ConditionedMixture& mix, const Vec& z) {
  return std::exp(mixture_log_density(mix, z));
}

Vec responsibilities(const ConditionedMixture& mix, const Vec& z) {
  check_point(mix, z);
  Eigen::ArrayXd terms;
  const double lse = log_terms(mix, z, terms);
  return (terms - lse).exp().matrix();
}

Vec mixture_score(const ConditionedMixture& mix, const Vec& z) {
  check_point(mix, z);
  Eigen::ArrayXd terms;
  const double lse = log_terms(mix, z, terms);
  Vec score = Vec::Zero(z.size());
  for (std::size_t k = 0; k < mix.size(); ++k) {
    const double r = std::exp(terms[static_cast<Eigen::Index>(k)] - lse);
    if (r == 0.0) continue;
    const auto& g = mix[k].gaussian;
    score.noalias() += r * (g.precision() * (g.mean() - z));
  }
  return score;
}

// ---------------------------------------------------------------------------

NoiseSchedule::NoiseSchedule(std::vector<double> alphas_bar) : alphas_bar_(std::move(alphas_bar)) {
  if (alphas_bar_.empty()) throw Error("noise schedule must have at least one step");
  for (std::size_t i = 0; i < alphas_bar_.size(); ++i) {
    const double a = alphas_bar_[i];
    if (!(a > 0.0 && a <= 1.0)) throw Error("alpha_bar values must lie in (0, 1]");
    if (i > 0 && !(a < alphas_bar_[i - 1])) throw Error("alpha_bar must be strictly decreasing in t");
  }
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw Error("schedule length must be positive");
  std::vector<double> abar(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - beta;
    abar[static_cast<std::size_t>(i)] = prod;
  }
  return NoiseSchedule(std::move(abar));
}

void NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps())
    throw Error("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
}

double NoiseSchedule::alpha_bar(int t) const {
  check(t);
  return alphas_bar_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::sigma(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

ConditionedMixture noised_mixture(const ConditionedMixture& mix, double alpha_bar) {
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0)) throw Error("alpha_bar must lie in (0, 1]");
  const double scale = std::sqrt(alpha_bar);
  const auto d = mix.dimension();
  std::vector<LabeledComponent> out;
  out.reserve(mix.size());
  for (const auto& c : mix.components()) {
    const auto& g = c.gaussian;
    Mat cov = alpha_bar * g.covariance() + (1.0 - alpha_bar) * Mat::Identity(d, d);
    out.push_back({GaussianComponent(g.weight(), scale * g.mean(), std::move(cov)), c.label});
  }
  return ConditionedMixture(std::move(out));
}

ConditionedMixture noised_mixture(const ConditionedMixture& mix, const NoiseSchedule& sched, int t) {
  return noised_mixture(mix, sched.alpha_bar(t));
}

Vec predict_noise_from(const ConditionedMixture& noised, double sigma, const Vec& z_t) {
  return -sigma * mixture_score(noised, z_t);
}

Vec predict_noise(const ConditionedMixture& mix, const NoiseSchedule& sched, const Vec& z_t, int t,
                  Condition cond) {
  return predict_noise_from(noised_mixture(sub_mixture(mix, cond), sched, t), sched.sigma(t), z_t);
}

Vec forward_diffuse(const Vec& z, int t, const Vec& eps, const NoiseSchedule& sched) {
  if (eps.size() != z.size()) throw Error("noise dimension does not match point");
  const double a = sched.alpha_bar(t);
  return std::sqrt(a) * z + std::sqrt(1.0 - a) * eps;
}

// ---------------------------------------------------------------------------

NoisePredictor::NoisePredictor(ConditionedMixture mix, NoiseSchedule sched, NoisingMode mode)
    : mixture_(std::move(mix)), schedule_(std::move(sched)), mode_(mode) {
  for (Condition cond : kAllConditions) {
    const int idx = condition_index(cond);
    try {
      conditional_[idx] = sub_mixture(mixture_, cond);
    } catch (const Error&) {
      continue;
    }
    auto& table = noised_[idx];
    table.reserve(static_cast<std::size_t>(schedule_.steps()));
    for (int t = 1; t <= schedule_.steps(); ++t) {
      table.push_back(mode_ == NoisingMode::Forward ? noised_mixture(*conditional_[idx], schedule_, t)
                                                    : *conditional_[idx]);
    }
  }
}

bool NoisePredictor::has_support(Condition cond) const {
  return conditional_[condition_index(cond)].has_value();
}

const ConditionedMixture& NoisePredictor::conditional(Condition cond) const {
  const auto& c = conditional_[condition_index(cond)];
  if (!c) throw Error("condition " + to_string(cond) + " has no support");
  return *c;
}

const ConditionedMixture& NoisePredictor::noised(Condition cond, int t) const {
  (void)conditional(cond);
  (void)schedule_.alpha_bar(t);
  return noised_[condition_index(cond)][static_cast<std::size_t>(t - 1)];
}

Vec NoisePredictor::predict(const Vec& z_t, int t, Condition cond) const {
  const double sigma = schedule_.sigma(t);
  return predict_noise_from(noised(cond, t), sigma, z_t);
}

}  // namespace sdse
