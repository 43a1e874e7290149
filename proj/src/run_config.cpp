#include "sdse/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>

#include "sdse/mesh_io.hpp"
#include "sdse/mixture_io.hpp"

namespace sdse {

using nlohmann::json;

std::string config_digest(const json& doc) {
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xf];
  return out;
}

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw Error((where.empty() ? "config" : where) + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.count(key)) throw Error((where.empty() ? "" : where + ".") + key + ": unknown field");
}

std::string path_of(const std::string& where, const char* key) {
  return where.empty() ? std::string(key) : where + "." + key;
}

double get_double(const json& obj, const std::string& where, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw Error(path_of(where, key) + ": expected a number");
  return obj[key].get<double>();
}

int get_int(const json& obj, const std::string& where, const char* key, int fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) throw Error(path_of(where, key) + ": expected an integer");
  return obj[key].get<int>();
}

std::uint64_t get_u64(const json& obj, const std::string& where, const char* key, std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj[key];
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw Error(path_of(where, key) + ": expected a non-negative integer");
  return obj[key].get<std::uint64_t>();
}

bool get_bool(const json& obj, const std::string& where, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) throw Error(path_of(where, key) + ": expected true or false");
  return obj[key].get<bool>();
}

std::string get_string(const json& obj, const std::string& where, const char* key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string()) throw Error(path_of(where, key) + ": expected a string");
  return obj[key].get<std::string>();
}

Vec get_vec(const json& obj, const std::string& where, const char* key, const Vec& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& j = obj[key];
  if (!j.is_array() || j.empty()) throw Error(path_of(where, key) + ": expected a non-empty number array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(path_of(where, key) + "[" + std::to_string(i) + "]: expected a number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json vec_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

template <typename F>
auto with_path(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(where + ": " + e.what());
  }
}

std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal().string();
}

TimestepSampler sampler_from_json(const json& j, const std::string& where, TimestepSampler s) {
  check_keys(j, where, {"kind", "t_min", "t_max", "jitter"});
  if (j.contains("kind"))
    s.kind = with_path(where + ".kind", [&] { return parse_sampler(get_string(j, where, "kind", "")); });
  s.t_min = get_int(j, where, "t_min", s.t_min);
  s.t_max = get_int(j, where, "t_max", s.t_max);
  s.jitter = get_double(j, where, "jitter", s.jitter);
  return s;
}

json sampler_json(const TimestepSampler& s) {
  return {{"kind", std::string(to_string(s.kind))}, {"t_min", s.t_min}, {"t_max", s.t_max}, {"jitter", s.jitter}};
}

StageThresholds thresholds_from_json(const json& j, const std::string& where, StageThresholds th) {
  check_keys(j, where, {"M", "L"});
  th.small_max = get_int(j, where, "M", th.small_max);
  th.middle_max = get_int(j, where, "L", th.middle_max);
  return th;
}

std::vector<EstimatorKind> estimators_from_json(const json& j, const std::string& where) {
  std::vector<EstimatorKind> out;
  if (j.is_string()) {
    const std::string name = j.get<std::string>();
    if (name == "all") return {kAllEstimators.begin(), kAllEstimators.end()};
    out.push_back(with_path(where, [&] { return parse_estimator(name); }));
    return out;
  }
  if (!j.is_array() || j.empty()) throw Error(where + ": expected \"all\", an estimator name or a list of names");
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string at = where + "[" + std::to_string(i) + "]";
    if (!j[i].is_string()) throw Error(at + ": expected a string");
    out.push_back(with_path(at, [&] { return parse_estimator(j[i].get<std::string>()); }));
  }
  return out;
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, int count) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < count; ++i) out.push_back(first + static_cast<std::uint64_t>(i));
  return out;
}

}  // namespace

std::vector<std::uint64_t> ToyConfig::seeds() const { return seed_range(seed, num_seeds); }

EstimatorSettings ToyConfig::estimator_settings() const {
  EstimatorSettings s;
  s.weights = weights;
  s.thresholds = thresholds;
  s.ssd_omega = ssd_omega;
  return s;
}

OptimizeOptions ToyConfig::optimize_options() const {
  OptimizeOptions o;
  o.lr = lr;
  o.steps = steps;
  o.seed = seed;
  o.divergence_bound = divergence_bound;
  o.record_stride = record_every;
  o.ema_window = ema_window;
  return o;
}

ToyConfig toy_config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  check_keys(doc, "", {"mixture_path", "estimator", "omega_t", "omega_i", "ssd_omega", "thresholds", "sampler",
                       "fixed_t", "phase_t", "lr", "steps", "seed", "num_seeds", "theta0", "record_every",
                       "ema_window", "divergence_bound", "tol", "grad_tol", "noising"});
  ToyConfig c;
  c.mixture_path = resolve_path(get_string(doc, "", "mixture_path", ""), base_dir);
  if (doc.contains("estimator")) c.estimators = estimators_from_json(doc["estimator"], "estimator");
  c.weights.omega_text = get_double(doc, "", "omega_t", c.weights.omega_text);
  c.weights.omega_image = get_double(doc, "", "omega_i", c.weights.omega_image);
  if (doc.contains("ssd_omega")) c.ssd_omega = get_double(doc, "", "ssd_omega", 0.0);
  if (doc.contains("thresholds")) c.thresholds = thresholds_from_json(doc["thresholds"], "thresholds", c.thresholds);
  if (doc.contains("sampler")) c.sampler = sampler_from_json(doc["sampler"], "sampler", c.sampler);
  if (doc.contains("fixed_t")) c.fixed_t = get_int(doc, "", "fixed_t", 0);
  if (doc.contains("phase_t")) {
    const json& p = doc["phase_t"];
    check_keys(p, "phase_t", {"early", "middle", "small"});
    for (Phase ph : {Phase::EarlyLarge, Phase::Middle, Phase::Small}) {
      const std::string key(to_string(ph));
      c.phase_t[ph] = get_int(p, "phase_t", key.c_str(), c.phase_t[ph]);
    }
  }
  c.lr = get_double(doc, "", "lr", c.lr);
  c.steps = get_int(doc, "", "steps", c.steps);
  c.seed = get_u64(doc, "", "seed", c.seed);
  c.num_seeds = get_int(doc, "", "num_seeds", c.num_seeds);
  c.theta0 = get_vec(doc, "", "theta0", c.theta0);
  c.record_every = get_int(doc, "", "record_every", c.record_every);
  c.ema_window = get_int(doc, "", "ema_window", c.ema_window);
  c.divergence_bound = get_double(doc, "", "divergence_bound", c.divergence_bound);
  c.tol = get_double(doc, "", "tol", c.tol);
  c.grad_tol = get_double(doc, "", "grad_tol", c.grad_tol);
  const std::string noising = get_string(doc, "", "noising", "forward");
  if (noising == "forward")
    c.noising = NoisingMode::Forward;
  else if (noising == "raw")
    c.noising = NoisingMode::Raw;
  else
    throw Error("noising: expected \"forward\" or \"raw\"");

  if (c.num_seeds < 1) throw Error("num_seeds: must be >= 1");
  if (c.steps < 1) throw Error("steps: must be >= 1");
  if (!(c.lr >= 0.0)) throw Error("lr: must be >= 0");
  if (c.record_every < 1) throw Error("record_every: must be >= 1");
  if (c.ema_window < 1) throw Error("ema_window: must be >= 1");
  if (!(c.tol > 0.0)) throw Error("tol: must be > 0");
  if (!(c.grad_tol > 0.0)) throw Error("grad_tol: must be > 0");
  with_path("omega", [&] { c.weights.validate(); return 0; });
  with_path("thresholds", [&] { c.thresholds.validate(1000); return 0; });
  return c;
}

json toy_config_to_json(const ToyConfig& c) {
  json doc;
  doc["mixture_path"] = c.mixture_path;
  json est = json::array();
  for (EstimatorKind k : c.estimators) est.push_back(std::string(to_string(k)));
  doc["estimator"] = std::move(est);
  doc["omega_t"] = c.weights.omega_text;
  doc["omega_i"] = c.weights.omega_image;
  if (c.ssd_omega) doc["ssd_omega"] = *c.ssd_omega;
  doc["thresholds"] = {{"M", c.thresholds.small_max}, {"L", c.thresholds.middle_max}};
  doc["sampler"] = sampler_json(c.sampler);
  if (c.fixed_t) doc["fixed_t"] = *c.fixed_t;
  json phases;
  for (const auto& [ph, t] : c.phase_t) phases[std::string(to_string(ph))] = t;
  doc["phase_t"] = std::move(phases);
  doc["lr"] = c.lr;
  doc["steps"] = c.steps;
  doc["seed"] = c.seed;
  doc["num_seeds"] = c.num_seeds;
  doc["theta0"] = vec_json(c.theta0);
  doc["record_every"] = c.record_every;
  doc["ema_window"] = c.ema_window;
  doc["divergence_bound"] = c.divergence_bound;
  doc["tol"] = c.tol;
  doc["grad_tol"] = c.grad_tol;
  doc["noising"] = c.noising == NoisingMode::Forward ? "forward" : "raw";
  return doc;
}

json read_json_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + what + " " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(what + " " + path.string() + ": parse error: " + e.what());
  }
}

ToyConfig load_toy_config(const std::filesystem::path& path) {
  const json doc = read_json_file(path, "config");
  return with_path(path.string(), [&] { return toy_config_from_json(doc, path.parent_path()); });
}

// ---------------------------------------------------------------------------

std::vector<std::uint64_t> MeshRunConfig::seeds() const { return seed_range(seed, num_seeds); }

MeshRunConfig mesh_config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  check_keys(doc, "", {"mesh_path", "fixture", "mixture_path", "profile", "estimator", "omega_t", "omega_i",
                       "thresholds", "sampler", "w1", "lr", "steps", "views_per_step", "views_per_region",
                       "support_size", "allocator", "target_threshold", "stop_at_threshold", "smoothing", "seed",
                       "num_seeds", "init_code", "table_total"});
  MeshRunConfig c;
  auto& e = c.edit;
  c.mesh_path = resolve_path(get_string(doc, "", "mesh_path", ""), base_dir);
  c.fixture = get_string(doc, "", "fixture", c.fixture);
  if (c.fixture != "grid" && c.fixture != "icosphere") throw Error("fixture: expected \"grid\" or \"icosphere\"");
  c.mixture_path = resolve_path(get_string(doc, "", "mixture_path", ""), base_dir);
  c.profile = get_string(doc, "", "profile", c.profile);
  if (doc.contains("estimator")) {
    const auto kinds = estimators_from_json(doc["estimator"], "estimator");
    if (kinds.size() != 1) throw Error("estimator: mesh edits take a single estimator");
    e.estimator = kinds.front();
  }
  e.estimator_settings.weights.omega_text = get_double(doc, "", "omega_t", e.estimator_settings.weights.omega_text);
  e.estimator_settings.weights.omega_image = get_double(doc, "", "omega_i", e.estimator_settings.weights.omega_image);
  if (doc.contains("thresholds"))
    e.estimator_settings.thresholds = thresholds_from_json(doc["thresholds"], "thresholds", e.estimator_settings.thresholds);
  if (doc.contains("sampler")) e.sampler = sampler_from_json(doc["sampler"], "sampler", e.sampler);
  e.w1 = get_double(doc, "", "w1", e.w1);
  e.lr = get_double(doc, "", "lr", e.lr);
  e.steps = get_int(doc, "", "steps", e.steps);
  e.views_per_step = get_int(doc, "", "views_per_step", e.views_per_step);
  e.views_per_region = get_int(doc, "", "views_per_region", e.views_per_region);
  e.support_size = get_int(doc, "", "support_size", e.support_size);
  e.allocator = get_bool(doc, "", "allocator", e.allocator);
  e.target_threshold = get_double(doc, "", "target_threshold", e.target_threshold);
  e.stop_at_threshold = get_bool(doc, "", "stop_at_threshold", e.stop_at_threshold);
  const std::string smoothing = get_string(doc, "", "smoothing", "implicit");
  if (smoothing == "implicit")
    e.smoothing = SmoothingStep::Implicit;
  else if (smoothing == "explicit")
    e.smoothing = SmoothingStep::Explicit;
  else
    throw Error("smoothing: expected \"implicit\" or \"explicit\"");
  c.seed = get_u64(doc, "", "seed", c.seed);
  c.num_seeds = get_int(doc, "", "num_seeds", c.num_seeds);
  c.init_code = get_vec(doc, "", "init_code", c.init_code);
  c.table_total = get_int(doc, "", "table_total", c.table_total);
  if (c.num_seeds < 1) throw Error("num_seeds: must be >= 1");
  if (c.table_total < 0) throw Error("table_total: must be >= 0");
  with_path("profile", [&] { e.profile = instruction_profile(c.profile); return 0; });
  with_path("omega", [&] { e.estimator_settings.weights.validate(); return 0; });
  with_path("thresholds", [&] { e.estimator_settings.thresholds.validate(1000); return 0; });
  return c;
}

json mesh_config_to_json(const MeshRunConfig& c) {
  const auto& e = c.edit;
  json doc;
  doc["mesh_path"] = c.mesh_path;
  doc["fixture"] = c.fixture;
  doc["mixture_path"] = c.mixture_path;
  doc["profile"] = c.profile;
  doc["estimator"] = std::string(to_string(e.estimator));
  doc["omega_t"] = e.estimator_settings.weights.omega_text;
  doc["omega_i"] = e.estimator_settings.weights.omega_image;
  doc["thresholds"] = {{"M", e.estimator_settings.thresholds.small_max},
                       {"L", e.estimator_settings.thresholds.middle_max}};
  doc["sampler"] = sampler_json(e.sampler);
  doc["w1"] = e.w1;
  doc["lr"] = e.lr;
  doc["steps"] = e.steps;
  doc["views_per_step"] = e.views_per_step;
  doc["views_per_region"] = e.views_per_region;
  doc["support_size"] = e.support_size;
  doc["allocator"] = e.allocator;
  doc["target_threshold"] = e.target_threshold;
  doc["stop_at_threshold"] = e.stop_at_threshold;
  doc["smoothing"] = e.smoothing == SmoothingStep::Implicit ? "implicit" : "explicit";
  doc["seed"] = c.seed;
  doc["num_seeds"] = c.num_seeds;
  doc["init_code"] = vec_json(c.init_code);
  doc["table_total"] = c.table_total;
  return doc;
}

MeshRunConfig load_mesh_config(const std::filesystem::path& path) {
  const json doc = read_json_file(path, "config");
  return with_path(path.string(), [&] { return mesh_config_from_json(doc, path.parent_path()); });
}

ConditionedMixture resolve_mixture(const std::string& path) {
  return path.empty() ? toy_mixture() : load_mixture(path);
}

LatentMesh resolve_mesh(const MeshRunConfig& cfg) {
  if (!cfg.mesh_path.empty()) return load_mesh(cfg.mesh_path);
  if (cfg.fixture == "icosphere") return make_icosphere(2, cfg.init_code);
  return make_banded_grid(10, 25, cfg.init_code);
}

std::uint64_t seed_from_env(std::uint64_t seed) {
  const char* env = std::getenv("SDSE_SEED");
  if (!env || !*env) return seed;
  std::uint64_t value = 0;
  const char* end = env + std::char_traits<char>::length(env);
  auto [ptr, ec] = std::from_chars(env, end, value);
  if (ec != std::errc() || ptr != end) throw Error("SDSE_SEED must be a non-negative integer, got '" + std::string(env) + "'");
  return value;
}

}  // namespace sdse
