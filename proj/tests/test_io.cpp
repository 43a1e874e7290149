#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdse/experiments.hpp"
#include "sdse/mesh_io.hpp"
#include "sdse/mixture_io.hpp"
#include "sdse/run_config.hpp"
#include "sdse/svg_plot.hpp"
#include "sdse/trajectory.hpp"

using namespace sdse;
using nlohmann::json;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("shipped mixture file matches the built-in toy mixture") {
  const ConditionedMixture file = load_mixture(std::filesystem::path(SDSE_DATA_DIR) / "toy_gmm.json");
  const ConditionedMixture builtin = toy_mixture();
  REQUIRE(file.size() == builtin.size());
  for (std::size_t k = 0; k < file.size(); ++k) {
    CHECK(file[k].label == builtin[k].label);
    CHECK(file[k].gaussian.weight() == builtin[k].gaussian.weight());
    CHECK(file[k].gaussian.mean() == builtin[k].gaussian.mean());
    CHECK(file[k].gaussian.covariance() == builtin[k].gaussian.covariance());
  }
}

TEST_CASE("mixture json round trip and errors") {
  const ConditionedMixture mix = toy_mixture();
  const ConditionedMixture back = mixture_from_json(mixture_to_json(mix));
  for (std::size_t k = 0; k < mix.size(); ++k) CHECK(back[k].gaussian.covariance() == mix[k].gaussian.covariance());

  json doc = {{"dimension", 2},
              {"components", {{{"weight", 1.0}, {"mean", {0.0, 0.0}}, {"covariance", {{"iso", 0.1}}}, {"label", "both"}}}}};
  CHECK(mixture_from_json(doc).size() == 1);
  json bad = doc;
  bad["components"][0].erase("label");
  CHECK_THROWS_WITH_AS(mixture_from_json(bad), "components[0].label: missing", Error);
  bad = doc;
  bad["components"][0]["label"] = "neither";
  CHECK_THROWS_AS(mixture_from_json(bad), Error);
  bad = doc;
  bad["components"][0]["mean"] = {0.0, "x"};
  CHECK_THROWS_WITH_AS(mixture_from_json(bad), "components[0].mean[1]: expected a number", Error);
  bad = doc;
  bad["dimension"] = 3;
  CHECK_THROWS_AS(mixture_from_json(bad), Error);
  bad = doc;
  bad["components"][0]["covariance"] = {{1.0, 0.0}};
  CHECK_THROWS_AS(mixture_from_json(bad), Error);
  CHECK_THROWS_AS(load_mixture("/nonexistent/mixture.json"), Error);
}

TEST_CASE("format_double round trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 1e300, 123456789.125, 0.0})
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("trajectory csv round trip") {
  const NoisePredictor oracle(toy_mixture(), NoiseSchedule::linear());
  OptimizeOptions o;
  o.steps = 25;
  o.seed = 5;
  const Trajectory tr = optimize_point(default_theta0(), EstimatorKind::SDSE, {SamplerKind::NonIncreasing, 1, 800, 1, 0.0},
                                       oracle, {}, o);
  TempDir dir("sdse_test_io_traj");
  const auto path = dir.path / "run.csv";
  write_trajectory_csv(path, tr, "0123456789abcdef");
  const std::string text = slurp(path);
  CHECK(text.rfind("# config_digest=0123456789abcdef\nstep,t,theta_0,theta_1,res_0,res_1,p,p_img,p_full\n", 0) == 0);

  const Trajectory back = read_trajectory_csv(path);
  CHECK(back.config_digest == "0123456789abcdef");
  REQUIRE(back.states.size() == tr.states.size());
  for (std::size_t i = 0; i < tr.states.size(); ++i) {
    CHECK(back.states[i].step == tr.states[i].step);
    CHECK(back.states[i].t == tr.states[i].t);
    CHECK(back.states[i].theta == tr.states[i].theta);
    CHECK(back.states[i].residual == tr.states[i].residual);
    CHECK(back.states[i].p_img == tr.states[i].p_img);
  }

  std::ofstream(dir.path / "bad.csv") << "a,b\n1,2\n";
  CHECK_THROWS_AS(read_trajectory_csv(dir.path / "bad.csv"), Error);
}

TEST_CASE("config digest") {
  const json a = {{"lr", 0.01}, {"steps", 10}};
  const json b = {{"steps", 10}, {"lr", 0.01}};
  CHECK(config_digest(a) == config_digest(b));
  CHECK(config_digest(a).size() == 16);
  CHECK(config_digest(a) != config_digest(json{{"lr", 0.02}, {"steps", 10}}));
  // FNV-1a 64 of the empty object "{}".
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : std::string("{}")) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  CHECK(config_digest(json::object()) == buf);
}

TEST_CASE("toy config parsing") {
  const ToyConfig def = load_toy_config(std::filesystem::path(SDSE_CONFIG_DIR) / "toy_default.json");
  CHECK(def.estimators.size() == 7);
  CHECK(def.lr == 0.01);
  CHECK(def.sampler.t_max == 800);
  CHECK(def.phase_t.at(Phase::Middle) == 700);
  CHECK(std::filesystem::path(def.mixture_path).filename() == "toy_gmm.json");
  CHECK(std::filesystem::exists(def.mixture_path));

  const ToyConfig back = toy_config_from_json(toy_config_to_json(def));
  CHECK(toy_config_to_json(back) == toy_config_to_json(def));

  CHECK_THROWS_WITH_AS(toy_config_from_json(json{{"lr", "fast"}}), "lr: expected a number", Error);
  CHECK_THROWS_WITH_AS(toy_config_from_json(json{{"sampler", {{"t_min", 1.5}}}}), "sampler.t_min: expected an integer",
                       Error);
  CHECK_THROWS_WITH_AS(toy_config_from_json(json{{"learning_rate", 0.1}}), "learning_rate: unknown field", Error);
  CHECK_THROWS_WITH_AS(toy_config_from_json(json{{"sampler", {{"shape", 1}}}}), "sampler.shape: unknown field", Error);
  CHECK_THROWS_AS(toy_config_from_json(json{{"estimator", {"sdse", "dds"}}}), Error);
  CHECK_THROWS_AS(toy_config_from_json(json{{"num_seeds", 0}}), Error);
  CHECK_THROWS_AS(toy_config_from_json(json{{"omega_t", -1.0}}), Error);
  CHECK_THROWS_AS(toy_config_from_json(json{{"thresholds", {{"M", 900}}}}), Error);
  CHECK_THROWS_AS(toy_config_from_json(json{{"noising", "sometimes"}}), Error);

  const ToyConfig one = toy_config_from_json(json{{"estimator", "m4"}, {"seed", 7}, {"num_seeds", 3}});
  REQUIRE(one.estimators.size() == 1);
  CHECK(one.estimators[0] == EstimatorKind::M4Only);
  CHECK(one.seeds() == std::vector<std::uint64_t>{7, 8, 9});
}

TEST_CASE("acceptance configs parse") {
  const auto dir = std::filesystem::path(SDSE_CONFIG_DIR) / "acceptance";
  for (const char* name : {"toy_small_phase.json", "toy_middle_phase.json", "toy_schedule.json", "toy_sds_baseline.json"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_toy_config(dir / name));
  }
  CHECK_NOTHROW(load_mesh_config(dir / "mesh_ablation.json"));
}

TEST_CASE("mesh config parsing") {
  const MeshRunConfig clown = load_mesh_config(std::filesystem::path(SDSE_CONFIG_DIR) / "mesh_clown.json");
  CHECK(clown.profile == "clown");
  const LatentMesh mesh = resolve_mesh(clown);
  CHECK(mesh.region_count() == 5);
  const MeshRunConfig back = mesh_config_from_json(mesh_config_to_json(clown));
  CHECK(mesh_config_to_json(back) == mesh_config_to_json(clown));
  CHECK_THROWS_AS(mesh_config_from_json(json{{"fixture", "torus"}}), Error);
  CHECK_THROWS_AS(mesh_config_from_json(json{{"views", 3}}), Error);

  const MeshRunConfig kimono = load_mesh_config(std::filesystem::path(SDSE_CONFIG_DIR) / "mesh_kimono.json");
  CHECK(resolve_mesh(kimono).vertex_count == 162);
}

TEST_CASE("shipped mesh files") {
  const LatentMesh grid = load_mesh(std::filesystem::path(SDSE_DATA_DIR) / "mesh_grid.json");
  CHECK(grid.vertex_count == 250);
  CHECK(grid.edges.size() == 465);
  const LatentMesh sphere = load_mesh(std::filesystem::path(SDSE_DATA_DIR) / "mesh_icosphere.json");
  CHECK(sphere.vertex_count == 162);
  CHECK(sphere.edges.size() == 480);

  TempDir dir("sdse_test_io_mesh");
  save_mesh(dir.path / "m.json", sphere);
  const LatentMesh back = load_mesh(dir.path / "m.json");
  CHECK(back.codes == sphere.codes);
  CHECK(back.edges == sphere.edges);
  std::ofstream(dir.path / "broken.json") << "{\"vertices\": ";
  CHECK_THROWS_AS(load_mesh(dir.path / "broken.json"), Error);
}

TEST_CASE("seed override from the environment") {
  ::unsetenv("SDSE_SEED");
  CHECK(seed_from_env(4) == 4);
  ::setenv("SDSE_SEED", "91", 1);
  CHECK(seed_from_env(4) == 91);
  ::setenv("SDSE_SEED", "-3", 1);
  CHECK_THROWS_AS(seed_from_env(4), Error);
  ::setenv("SDSE_SEED", "12abc", 1);
  CHECK_THROWS_AS(seed_from_env(4), Error);
  ::unsetenv("SDSE_SEED");
}

TEST_CASE("contour segments of a radial field") {
  const int n = 41;
  std::vector<double> values(static_cast<std::size_t>(n * n));
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const double x = -1.0 + 2.0 * i / (n - 1), y = -1.0 + 2.0 * j / (n - 1);
      values[static_cast<std::size_t>(j * n + i)] = x * x + y * y;
    }
  const auto segs = contour_segments(values, n, n, 0.25, -1.0, 1.0, -1.0, 1.0);
  REQUIRE_FALSE(segs.empty());
  double length = 0.0;
  for (const auto& [a, b] : segs) {
    CHECK(a.norm() == doctest::Approx(0.5).epsilon(0.02));
    CHECK(b.norm() == doctest::Approx(0.5).epsilon(0.02));
    length += (a - b).norm();
  }
  CHECK(length == doctest::Approx(std::numbers::pi).epsilon(0.01));
  CHECK(contour_segments(values, n, n, 5.0, -1.0, 1.0, -1.0, 1.0).empty());
}

TEST_CASE("density svg") {
  const NoisePredictor oracle(toy_mixture(), NoiseSchedule::linear());
  OptimizeOptions o;
  o.steps = 10;
  const Trajectory tr = optimize_point(default_theta0(), EstimatorKind::SDS, TimestepSampler::fixed(500), oracle, {}, o);
  PlotOptions opts;
  opts.grid = 40;
  opts.title = "sds & friends";
  const std::string svg = render_density_svg(toy_mixture(), {&tr}, {{Vec{{1.5, 1.4}}, "red", "mode"}}, opts, "feed");
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("<!-- config_digest=feed -->") != std::string::npos);
  CHECK(svg.find("sds &amp; friends") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg == render_density_svg(toy_mixture(), {&tr}, {{Vec{{1.5, 1.4}}, "red", "mode"}}, opts, "feed"));
}
