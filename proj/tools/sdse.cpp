// sdse: verification, toy-phase runs, mesh-edit ablations and plots.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "sdse/experiments.hpp"
#include "sdse/run_config.hpp"
#include "sdse/svg_plot.hpp"
#include "sdse/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sdse;

namespace {

json vec_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_json(const fs::path& path, const json& doc) { write_text_file(path, doc.dump(2) + "\n"); }

std::string run_file_name(const Trajectory& tr) { return tr.estimator + "_seed" + std::to_string(tr.seed) + ".csv"; }

std::vector<PlotMarker> mode_markers(const ConditionedMixture& mix) {
  std::vector<PlotMarker> out;
  for (const auto& c : mix.components()) {
    if (c.label == ConditionLabel::Both) out.push_back({c.gaussian.mean(), "#e41a1c", "(y,I) mode"});
    if (c.label == ConditionLabel::ImageOnly) out.push_back({c.gaussian.mean(), "#ffd92f", "image mode"});
  }
  return out;
}

// --------------------------------------------------------------------------- verify

int cmd_verify(const std::string& mixture, const std::string& report_path, std::uint64_t seed) {
  VerifyOptions opt;
  opt.mixture_path = mixture;
  opt.seed = seed;
  const VerifyReport rep = run_verification(opt);
  for (const auto& c : rep.checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << "  max_error=" << format_double(c.max_error)
              << "  tol=" << format_double(c.tolerance);
    if (!c.detail.empty()) std::cout << "  (" << c.detail << ")";
    std::cout << '\n';
  }
  for (const auto& row : rep.region_table) {
    std::cout << "  " << row["instruction"].get<std::string>() << ": views";
    for (int v : row["views"]) std::cout << ' ' << v;
    std::cout << (row["match"].get<bool>() ? "  (matches)" : "  (MISMATCH)") << '\n';
  }
  if (!report_path.empty()) {
    const fs::path p(report_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_json(p, rep.to_json());
  }
  return rep.passed() ? 0 : 1;
}

// --------------------------------------------------------------------------- toy

struct ToyFlags {
  std::string config;
  std::string out = "out/toy";
  std::string estimator;
  std::string phase;
  std::string svg = "off";
  std::optional<int> t;
  std::optional<double> lr;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<int> num_seeds;
  std::optional<int> record_every;
  std::optional<double> omega_t;
  std::optional<double> omega_i;
  std::string mixture_path;
  bool diagnostics = false;
};

int cmd_toy(const ToyFlags& f) {
  ToyConfig cfg = f.config.empty() ? ToyConfig{} : load_toy_config(f.config);
  if (!f.estimator.empty()) cfg.estimators = toy_config_from_json({{"estimator", f.estimator}}).estimators;
  if (f.lr) cfg.lr = *f.lr;
  if (f.steps) cfg.steps = *f.steps;
  if (f.seed) cfg.seed = *f.seed;
  if (f.num_seeds) cfg.num_seeds = *f.num_seeds;
  if (f.record_every) cfg.record_every = *f.record_every;
  if (f.omega_t) cfg.weights.omega_text = *f.omega_t;
  if (f.omega_i) cfg.weights.omega_image = *f.omega_i;
  if (!f.mixture_path.empty()) cfg.mixture_path = f.mixture_path;
  cfg.seed = seed_from_env(cfg.seed);
  std::optional<Phase> phase;
  if (!f.phase.empty()) phase = parse_phase(f.phase);
  if (f.t && phase) cfg.phase_t[*phase] = *f.t;
  if (f.t && !phase) cfg.fixed_t = *f.t;
  if (f.svg != "on" && f.svg != "off") throw Error("--svg: expected on or off");
  // Round-trip so the digest covers every effective setting.
  cfg = toy_config_from_json(toy_config_to_json(cfg));

  json effective = toy_config_to_json(cfg);
  if (phase) effective["phase"] = std::string(to_string(*phase));
  const std::string digest = config_digest(effective);

  NoisePredictor oracle(resolve_mixture(cfg.mixture_path), NoiseSchedule::linear(), cfg.noising);
  const EstimatorSettings settings = cfg.estimator_settings();
  const std::vector<Vec> modes = full_condition_modes(oracle.mixture());
  const fs::path out(f.out);
  fs::create_directories(out);

  std::vector<Trajectory> runs;
  if (phase) {
    PhaseSpec spec;
    spec.phase = *phase;
    spec.fixed_t = cfg.phase_t.at(*phase);
    spec.estimators = cfg.estimators;
    spec.theta0 = cfg.theta0;
    spec.options = cfg.optimize_options();
    runs = run_toy_phase(spec, oracle, settings, cfg.seeds());
  } else {
    const TimestepSampler sampler = cfg.fixed_t ? TimestepSampler::fixed(*cfg.fixed_t) : cfg.sampler;
    for (EstimatorKind kind : cfg.estimators)
      for (std::uint64_t seed : cfg.seeds()) {
        OptimizeOptions opt = cfg.optimize_options();
        opt.seed = seed;
        runs.push_back(optimize_point(cfg.theta0, kind, sampler, oracle, settings, opt));
      }
  }

  json summary;
  summary["tool_version"] = kToolVersion;
  summary["command"] = "toy";
  summary["config_digest"] = digest;
  summary["config"] = effective;
  summary["seeds"] = cfg.seeds();
  json run_list = json::array();
  std::map<std::string, std::vector<const Trajectory*>> by_estimator;
  std::map<std::string, std::vector<ConvergenceReport>> reports;
  for (auto& tr : runs) {
    tr.config_digest = digest;
    const std::string file = run_file_name(tr);
    write_trajectory_csv(out / file, tr, digest);
    if (f.diagnostics)
      write_density_csv(out / (tr.estimator + "_seed" + std::to_string(tr.seed) + "_density.csv"),
                        density_diagnostics(tr, oracle), digest);
    const ConvergenceReport rep = convergence_check(tr, modes, cfg.tol, cfg.grad_tol);
    run_list.push_back({{"estimator", tr.estimator},
                        {"seed", tr.seed},
                        {"file", file},
                        {"final_theta", vec_json(rep.final_theta)},
                        {"nearest_mode", vec_json(rep.nearest_mode)},
                        {"distance", finite_or_null(rep.distance)},
                        {"residual_ema_norm", rep.residual_ema_norm},
                        {"classification", std::string(to_string(rep.classification))},
                        {"diagnostic", tr.diagnostic}});
    by_estimator[tr.estimator].push_back(&tr);
    reports[tr.estimator].push_back(rep);
  }
  summary["runs"] = std::move(run_list);

  json aggregate = json::object();
  for (const auto& [name, reps] : reports) {
    double dist = 0.0;
    int converged = 0, trapped = 0, diverged = 0;
    for (const auto& r : reps) {
      dist += r.distance;
      converged += r.classification == Classification::Converged;
      trapped += r.classification == Classification::IntermediateTrap;
      diverged += r.classification == Classification::Diverged;
    }
    const double n = static_cast<double>(reps.size());
    aggregate[name] = {{"runs", reps.size()},
                       {"mean_distance", finite_or_null(dist / n)},
                       {"converged_fraction", converged / n},
                       {"trap_fraction", trapped / n},
                       {"diverged_fraction", diverged / n}};
    std::cout << name << ": mean distance " << format_double(dist / n) << ", converged " << converged << "/"
              << reps.size() << ", trapped " << trapped << "/" << reps.size() << '\n';
  }
  summary["by_estimator"] = std::move(aggregate);

  if (f.svg == "on") {
    json svgs = json::array();
    for (const auto& [name, trs] : by_estimator) {
      PlotOptions po;
      po.title = name + (phase ? " (" + std::string(to_string(*phase)) + " phase)" : std::string());
      const std::string file = name + ".svg";
      write_text_file(out / file, render_density_svg(oracle.mixture(), trs, mode_markers(oracle.mixture()), po, digest));
      svgs.push_back(file);
    }
    summary["svg"] = std::move(svgs);
  }
  write_json(out / "summary.json", summary);
  std::cout << "wrote " << runs.size() << " trajectories to " << out.string() << '\n';
  return 0;
}

// --------------------------------------------------------------------------- mesh-edit

struct MeshFlags {
  std::string config;
  std::string out = "out/mesh";
  std::string profile;
  bool no_allocator = false;
  bool compare_allocator = false;
  std::optional<double> w1;
  std::string paired_w1;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<int> num_seeds;
  std::string fixture;
};

struct MeshVariant {
  std::string tag;
  double w1;
  bool allocator;
};

std::string variant_tag(double w1, bool allocator) {
  return "w1-" + format_double(w1) + "_alloc-" + (allocator ? "on" : "off");
}

int cmd_mesh_edit(const MeshFlags& f) {
  MeshRunConfig cfg = f.config.empty() ? MeshRunConfig{} : load_mesh_config(f.config);
  if (f.config.empty()) cfg.edit.profile = instruction_profile(cfg.profile);
  if (!f.profile.empty()) {
    cfg.profile = f.profile;
    cfg.edit.profile = instruction_profile(f.profile);
  }
  if (!f.fixture.empty()) cfg.fixture = f.fixture;
  if (f.no_allocator) cfg.edit.allocator = false;
  if (f.w1) cfg.edit.w1 = *f.w1;
  if (f.steps) cfg.edit.steps = *f.steps;
  if (f.seed) cfg.seed = *f.seed;
  if (f.num_seeds) cfg.num_seeds = *f.num_seeds;
  cfg.seed = seed_from_env(cfg.seed);
  cfg = mesh_config_from_json(mesh_config_to_json(cfg));

  std::vector<MeshVariant> variants;
  std::vector<double> w1s{cfg.edit.w1};
  if (!f.paired_w1.empty()) {
    w1s.clear();
    std::stringstream ss(f.paired_w1);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        w1s.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw Error("--paired-w1: expected two numbers like 0,300");
      }
    }
    if (w1s.size() != 2) throw Error("--paired-w1: expected two numbers like 0,300");
  }
  std::vector<bool> allocs{cfg.edit.allocator};
  if (f.compare_allocator) allocs = {true, false};
  for (double w1 : w1s)
    for (bool a : allocs) variants.push_back({variant_tag(w1, a), w1, a});

  json effective = mesh_config_to_json(cfg);
  effective["variants"] = json::array();
  for (const auto& v : variants) effective["variants"].push_back(v.tag);
  const std::string digest = config_digest(effective);

  const LatentMesh mesh = resolve_mesh(cfg);
  NoisePredictor oracle(resolve_mixture(cfg.mixture_path), NoiseSchedule::linear());
  const fs::path out(f.out);
  fs::create_directories(out);

  json summary;
  summary["tool_version"] = kToolVersion;
  summary["command"] = "mesh-edit";
  summary["config_digest"] = digest;
  summary["config"] = effective;
  summary["seeds"] = cfg.seeds();
  json runs = json::array();
  std::map<std::string, std::vector<EditReport>> results;
  for (const auto& v : variants) {
    MeshEditConfig ec = cfg.edit;
    ec.w1 = v.w1;
    ec.allocator = v.allocator;
    for (std::uint64_t seed : cfg.seeds()) {
      EditReport rep = run_mesh_edit(mesh, ec, oracle, seed);
      const std::string stem = v.tag + "_seed" + std::to_string(seed);
      write_step_report_csv(out / ("steps_" + stem + ".csv"), rep, digest);
      write_allocation_csv(out / ("allocation_" + stem + ".csv"), rep, mesh, digest);
      for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
      const RegionAllocation table = allocate_views(rep.allocation.weights, cfg.table_total);
      runs.push_back({{"variant", v.tag},
                      {"w1", v.w1},
                      {"allocator", v.allocator},
                      {"seed", seed},
                      {"steps_file", "steps_" + stem + ".csv"},
                      {"allocation_file", "allocation_" + stem + ".csv"},
                      {"allocation", rep.allocation.counts},
                      {"region_weights", rep.allocation.weights},
                      {"table_views", table.counts},
                      {"steps_to_threshold", rep.steps_to_threshold ? json(*rep.steps_to_threshold) : json(nullptr)},
                      {"final_target_distance", rep.target_distance_curve.back()},
                      {"region_dispersion", rep.region_dispersion},
                      {"mean_dispersion", rep.mean_dispersion},
                      {"final_smooth_loss", rep.smooth_loss_curve.back()}});
      results[v.tag].push_back(std::move(rep));
    }
  }
  summary["runs"] = std::move(runs);

  auto mean_of = [](const std::vector<EditReport>& reps, auto field) {
    double acc = 0.0;
    for (const auto& r : reps) acc += field(r);
    return acc / static_cast<double>(reps.size());
  };
  json comparisons = json::array();
  if (w1s.size() == 2) {
    for (bool a : allocs) {
      const auto& lo = results[variant_tag(w1s[0], a)];
      const auto& hi = results[variant_tag(w1s[1], a)];
      const double d0 = mean_of(lo, [](const EditReport& r) { return r.mean_dispersion; });
      const double d1 = mean_of(hi, [](const EditReport& r) { return r.mean_dispersion; });
      comparisons.push_back({{"kind", "dispersion"},
                             {"allocator", a},
                             {"w1", {w1s[0], w1s[1]}},
                             {"mean_dispersion", {d0, d1}}});
      std::cout << "dispersion (allocator " << (a ? "on" : "off") << "): w1=" << format_double(w1s[0]) << " -> "
                << format_double(d0) << ", w1=" << format_double(w1s[1]) << " -> " << format_double(d1) << '\n';
    }
  }
  if (allocs.size() == 2) {
    for (double w1 : w1s) {
      const auto& on = results[variant_tag(w1, true)];
      const auto& off = results[variant_tag(w1, false)];
      auto steps = [&](const EditReport& r) {
        return static_cast<double>(r.steps_to_threshold.value_or(cfg.edit.steps + 1));
      };
      const double s_on = mean_of(on, steps), s_off = mean_of(off, steps);
      int missed = 0;
      for (const auto* group : {&on, &off})
        for (const auto& r : *group) missed += !r.steps_to_threshold;
      comparisons.push_back({{"kind", "steps_to_threshold"},
                             {"w1", w1},
                             {"mean_steps", {{"allocator_on", s_on}, {"allocator_off", s_off}}},
                             {"ratio", s_on / s_off},
                             {"runs_not_reaching_threshold", missed}});
      std::cout << "steps to threshold (w1=" << format_double(w1) << "): allocator on " << format_double(s_on)
                << ", off " << format_double(s_off);
      if (missed) std::cout << " (" << missed << " runs never reached it; counted as steps + 1)";
      std::cout << '\n';
    }
  }
  summary["comparisons"] = std::move(comparisons);
  write_json(out / "summary.json", summary);
  std::cout << "wrote " << variants.size() * cfg.seeds().size() << " edit runs to " << out.string() << '\n';
  return 0;
}

// --------------------------------------------------------------------------- emit-plot

int cmd_emit_plot(const std::vector<std::string>& inputs, const std::string& mixture, const std::string& out,
                  const std::string& title) {
  if (inputs.empty()) throw Error("emit-plot needs at least one trajectory CSV");
  std::vector<Trajectory> trs;
  for (const auto& p : inputs) trs.push_back(read_trajectory_csv(p));
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : trs) ptrs.push_back(&t);
  const ConditionedMixture mix = resolve_mixture(mixture);
  PlotOptions po;
  po.title = title;
  const std::string digest = trs.front().config_digest;
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_text_file(p, render_density_svg(mix, ptrs, mode_markers(mix), po, digest));
  std::cout << "wrote " << p.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score-distillation estimators on labelled Gaussian mixtures and synthetic latent meshes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string verify_mixture, verify_report;
  std::uint64_t verify_seed = 12345;
  auto* verify = app.add_subcommand("verify", "Run oracle, identity, Laplacian and allocation checks");
  verify->add_option("--mixture-path", verify_mixture, "Mixture JSON (default: built-in toy mixture)");
  verify->add_option("--report", verify_report, "Write the JSON report here");
  verify->add_option("--seed", verify_seed, "Seed for the randomized checks");

  ToyFlags toy_flags;
  auto* toy = app.add_subcommand("toy", "Optimize a 2D point with each estimator and write trajectories");
  toy->add_option("--config", toy_flags.config, "Toy config JSON");
  toy->add_option("--out", toy_flags.out, "Output directory");
  toy->add_option("--estimator", toy_flags.estimator, "all | sds | ssd | m1 | m3 | m4 | sdse | sdse-prime");
  toy->add_option("--phase", toy_flags.phase, "early | middle | small (fixed timestep per phase)");
  toy->add_option("--t", toy_flags.t, "Fixed timestep (overrides the phase timestep)");
  toy->add_option("--svg", toy_flags.svg, "on | off")->check(CLI::IsMember({"on", "off"}));
  toy->add_option("--lr", toy_flags.lr);
  toy->add_option("--steps", toy_flags.steps);
  toy->add_option("--seed", toy_flags.seed);
  toy->add_option("--num-seeds", toy_flags.num_seeds);
  toy->add_option("--record-every", toy_flags.record_every);
  toy->add_option("--omega-t", toy_flags.omega_t);
  toy->add_option("--omega-i", toy_flags.omega_i);
  toy->add_option("--mixture-path", toy_flags.mixture_path);
  toy->add_flag("--diagnostics", toy_flags.diagnostics, "Also write per-step density tables");

  MeshFlags mesh_flags;
  auto* mesh = app.add_subcommand("mesh-edit", "Edit a synthetic latent mesh toward per-region targets");
  mesh->add_option("--config", mesh_flags.config, "Mesh-edit config JSON");
  mesh->add_option("--out", mesh_flags.out, "Output directory");
  mesh->add_option("--profile", mesh_flags.profile, "clown | kimono");
  mesh->add_option("--fixture", mesh_flags.fixture, "grid | icosphere");
  mesh->add_flag("--no-allocator", mesh_flags.no_allocator, "Keep the uniform view allocation");
  mesh->add_flag("--compare-allocator", mesh_flags.compare_allocator, "Run with and without the allocator");
  mesh->add_option("--w1", mesh_flags.w1, "Smoothness weight");
  mesh->add_option("--paired-w1", mesh_flags.paired_w1, "Two smoothness weights, e.g. 0,300");
  mesh->add_option("--steps", mesh_flags.steps);
  mesh->add_option("--seed", mesh_flags.seed);
  mesh->add_option("--num-seeds", mesh_flags.num_seeds);

  std::vector<std::string> plot_inputs;
  std::string plot_mixture, plot_out = "plot.svg", plot_title;
  auto* plot = app.add_subcommand("emit-plot", "Draw trajectory CSVs over density contours");
  plot->add_option("trajectories", plot_inputs, "Trajectory CSV files")->required();
  plot->add_option("--mixture-path", plot_mixture);
  plot->add_option("--out", plot_out);
  plot->add_option("--title", plot_title);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    if (*verify) return cmd_verify(verify_mixture, verify_report, verify_seed);
    if (*toy) return cmd_toy(toy_flags);
    if (*mesh) return cmd_mesh_edit(mesh_flags);
    if (*plot) return cmd_emit_plot(plot_inputs, plot_mixture, plot_out, plot_title);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
