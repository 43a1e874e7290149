#include "sdse/verify.hpp"

#include <cmath>
#include <optional>
#include <numbers>

#include "sdse/guidance.hpp"
#include "sdse/latent_mesh.hpp"
#include "sdse/run_config.hpp"

namespace sdse {

using nlohmann::json;

bool VerifyReport::passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return !checks.empty();
}

json VerifyReport::to_json() const {
  json doc;
  doc["tool_version"] = kToolVersion;
  doc["passed"] = passed();
  json list = json::array();
  for (const auto& c : checks)
    list.push_back({{"name", c.name},
                    {"passed", c.passed},
                    {"max_error", c.max_error},
                    {"tolerance", c.tolerance},
                    {"detail", c.detail}});
  doc["checks"] = std::move(list);
  doc["region_table"] = region_table;
  return doc;
}

namespace {

ConditionedMixture random_mixture(Rng& rng, int dim, int count) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  constexpr std::array<ConditionLabel, 4> labels{ConditionLabel::Unconditional, ConditionLabel::ImageOnly,
                                                 ConditionLabel::TextOnly, ConditionLabel::Both};
  std::vector<LabeledComponent> comps;
  for (int k = 0; k < count; ++k) {
    Vec mean(dim);
    for (int i = 0; i < dim; ++i) mean[i] = 2.0 * n(rng);
    Mat a(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) a(i, j) = 0.4 * n(rng);
    Mat cov = a * a.transpose() + (0.05 + 0.5 * u(rng)) * Mat::Identity(dim, dim);
    cov = 0.5 * (cov + cov.transpose());
    comps.push_back({GaussianComponent(0.1 + u(rng), mean, cov), labels[static_cast<std::size_t>(k % 4)]});
  }
  return ConditionedMixture(std::move(comps));
}

Vec random_vec(Rng& rng, int dim, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = n(rng);
  return v;
}

CheckResult check_scores(Rng& rng) {
  CheckResult c{"score_finite_difference", true, 0.0, 1e-5, "100 random mixtures, central differences h=1e-5"};
  constexpr double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 1 + trial % 3;
    const ConditionedMixture mix = random_mixture(rng, dim, 2 + trial % 4);
    const Vec z = mix[0].gaussian.mean() + random_vec(rng, dim, 1.0);
    const Vec score = mixture_score(mix, z);
    Vec fd(dim);
    for (int i = 0; i < dim; ++i) {
      Vec zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      fd[i] = (mixture_log_density(mix, zp) - mixture_log_density(mix, zm)) / (2.0 * h);
    }
    const double err = (score - fd).norm() / std::max(1.0, score.norm());
    c.max_error = std::max(c.max_error, err);
  }
  c.passed = c.max_error <= c.tolerance;
  return c;
}

CheckResult check_convolution(const ConditionedMixture& mix) {
  CheckResult c{"noised_density_quadrature", true, 0.0, 1e-4,
                "alpha_bar=0.5 against midpoint quadrature of the convolution"};
  if (mix.dimension() != 2) {
    c.detail = "skipped quadrature: mixture is not 2D";
    return c;
  }
  constexpr double alpha_bar = 0.5;
  const ConditionedMixture noised = noised_mixture(mix, alpha_bar);
  const double s = std::sqrt(alpha_bar);
  const double var = 1.0 - alpha_bar;
  const double step = 0.02;
  const double lo = -4.0, hi = 7.0;
  const int n = static_cast<int>((hi - lo) / step);
  const std::vector<Vec> points{Vec{{0.0, 0.0}}, Vec{{1.0, 0.7}}, Vec{{0.35, 0.7}}, Vec{{2.0, 0.5}}, Vec{{-0.5, 1.5}}};
  std::vector<double> acc(points.size(), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vec x{{lo + (i + 0.5) * step, lo + (j + 0.5) * step}};
      const double px = mixture_density(mix, x);
      if (px < 1e-300) continue;
      for (std::size_t k = 0; k < points.size(); ++k) {
        const double d2 = (points[k] - s * x).squaredNorm();
        acc[k] += px * std::exp(-0.5 * d2 / var) / (2.0 * std::numbers::pi * var);
      }
    }
  for (std::size_t k = 0; k < points.size(); ++k) {
    const double quad = acc[k] * step * step;
    c.max_error = std::max(c.max_error, std::abs(quad - mixture_density(noised, points[k])));
  }
  c.passed = c.max_error <= c.tolerance;
  return c;
}

CheckResult check_identities(const NoisePredictor& oracle, Rng& rng) {
  CheckResult c{"guidance_identities", true, 0.0, 1e-12,
                "cfg = (w_I-1) m1 + m2, m2 = (w_t-1) m3 + m4, sdse == m2, unit weights give eps(y,I)"};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int dim = oracle.mixture().dimension();
  const int T = oracle.schedule().steps();
  StageThresholds th;
  std::string failures;
  for (int trial = 0; trial < 1000; ++trial) {
    GuidanceWeights w{0.5 + 10.0 * u(rng), 0.5 + 3.0 * u(rng)};
    const int t = std::uniform_int_distribution<int>(1, std::min(T, th.middle_max))(rng);
    const Vec z = random_vec(rng, dim, 1.5);
    const Vec eps = random_vec(rng, dim, 1.0);
    const Vec eu = oracle.predict(z, t, kUnconditional);
    const Vec ei = oracle.predict(z, t, kImageOnly);
    const Vec ef = oracle.predict(z, t, kFullCondition);
    const TermBundle b = decompose_terms(eu, ei, ef, eps, w);
    const double scale = std::max({1.0, b.cfg_residual.norm(), b.m2.norm()});
    c.max_error = std::max(c.max_error, (b.cfg_residual - ((w.omega_image - 1.0) * b.m1 + b.m2)).norm() / scale);
    c.max_error = std::max(c.max_error, (b.m2 - ((w.omega_text - 1.0) * b.m3 + b.m4)).norm() / scale);
    const Vec sdse = sdse_residual(oracle, z, t, eps, w, th);
    if (sdse != b.m2 && failures.empty()) failures = "sdse_residual differs from m2 at t=" + std::to_string(t);
    if (cfg_combine(eu, ei, ef, GuidanceWeights{1.0, 1.0}) != ef && failures.empty())
      failures = "unit-weight guidance differs from eps(y,I)";
  }
  c.passed = c.max_error <= c.tolerance && failures.empty();
  if (!failures.empty()) c.detail = failures;
  return c;
}

CheckResult check_laplacian(Rng& rng) {
  CheckResult c{"laplacian_gradient", true, 0.0, 1e-5, "random connected graphs up to 50 vertices, h=1e-6"};
  std::uniform_int_distribution<int> size(5, 50);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = size(rng);
    LatentMesh mesh;
    mesh.vertex_count = n;
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int v = 1; v < n; ++v) mesh.edges.emplace_back(v, std::uniform_int_distribution<int>(0, v - 1)(rng));
    for (int e = 0; e < n; ++e) {
      const int a = pick(rng), b = pick(rng);
      if (a != b) mesh.edges.emplace_back(a, b);
    }
    mesh.regions.assign(static_cast<std::size_t>(n), 0);
    mesh.codes = Mat::Zero(n, 2);
    const LaplacianMatrix lap = build_laplacian(mesh);
    Mat delta(n, 2);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < 2; ++k) delta(i, k) = std::normal_distribution<double>(0.0, 1.0)(rng);
    const Mat grad = smoothness_gradient(lap, delta);
    Mat fd(n, 2);
    constexpr double h = 1e-6;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < 2; ++k) {
        Mat p = delta, m = delta;
        p(i, k) += h;
        m(i, k) -= h;
        fd(i, k) = (smoothness_loss(lap, p) - smoothness_loss(lap, m)) / (2.0 * h);
      }
    c.max_error = std::max(c.max_error, (grad - fd).norm() / std::max(1.0, grad.norm()));
  }
  c.passed = c.max_error <= c.tolerance;
  return c;
}

CheckResult check_region_table(json& table) {
  struct Row {
    const char* name;
    std::vector<double> weights;
    std::vector<int> expected;
  };
  const std::vector<Row> rows{{"kimono", {0.04, 0.08, 0.47, 0.26, 0.15}, {2000, 4000, 23500, 13000, 7500}},
                              {"clown", {0.07, 0.20, 0.30, 0.31, 0.12}, {3500, 10000, 15000, 15500, 6000}}};
  CheckResult c{"region_allocation_table", true, 0.0, 0.0, "largest-remainder counts for |V|=50000"};
  for (const auto& r : rows) {
    const RegionAllocation a = allocate_views(r.weights, 50000);
    int worst = 0;
    for (std::size_t k = 0; k < r.expected.size(); ++k) worst = std::max(worst, std::abs(a.counts[k] - r.expected[k]));
    c.max_error = std::max(c.max_error, static_cast<double>(worst));
    table.push_back({{"instruction", r.name}, {"weights", r.weights}, {"views", a.counts}, {"expected", r.expected},
                     {"match", worst == 0}});
  }
  c.passed = c.max_error == 0.0;
  return c;
}

}  // namespace

VerifyReport run_verification(const VerifyOptions& options) {
  VerifyReport report;
  Rng rng(options.seed);

  CheckResult load{"mixture_file", true, 0.0, 0.0,
                   options.mixture_path.empty() ? "built-in toy mixture" : options.mixture_path};
  std::optional<NoisePredictor> oracle;
  try {
    ConditionedMixture mix = resolve_mixture(options.mixture_path);
    for (Condition cond : kAllConditions) (void)sub_mixture(mix, cond);
    oracle.emplace(std::move(mix), NoiseSchedule::linear());
  } catch (const Error& e) {
    load.passed = false;
    load.detail = e.what();
  }
  report.checks.push_back(load);

  report.checks.push_back(check_scores(rng));
  if (oracle) {
    report.checks.push_back(check_convolution(oracle->mixture()));
    report.checks.push_back(check_identities(*oracle, rng));
  } else {
    report.checks.push_back({"noised_density_quadrature", false, 0.0, 1e-4, "mixture unavailable"});
    report.checks.push_back({"guidance_identities", false, 0.0, 1e-12, "mixture unavailable"});
  }
  report.checks.push_back(check_laplacian(rng));
  report.checks.push_back(check_region_table(report.region_table));
  return report;
}

}  // namespace sdse
