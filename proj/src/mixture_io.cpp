#include "sdse/mixture_io.hpp"

#include <fstream>

namespace sdse {

using nlohmann::json;

namespace {

Vec to_vec(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw Error(where + ": expected a non-empty number array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(where + "[" + std::to_string(i) + "]: expected a number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Mat to_covariance(const json& j, Eigen::Index d, const std::string& where) {
  if (j.is_object()) {
    if (!j.contains("iso") || !j["iso"].is_number()) throw Error(where + ": expected {\"iso\": number}");
    return j["iso"].get<double>() * Mat::Identity(d, d);
  }
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != d)
    throw Error(where + ": expected " + std::to_string(d) + " rows");
  Mat m(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    const Vec row = to_vec(j[static_cast<std::size_t>(r)], where + "[" + std::to_string(r) + "]");
    if (row.size() != d) throw Error(where + "[" + std::to_string(r) + "]: wrong row length");
    m.row(r) = row.transpose();
  }
  return m;
}

}  // namespace

ConditionedMixture mixture_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("components") || !doc["components"].is_array())
    throw Error("mixture: missing \"components\" array");
  const auto& comps = doc["components"];
  std::vector<LabeledComponent> out;
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const std::string where = "components[" + std::to_string(i) + "]";
    const auto& c = comps[i];
    if (!c.is_object()) throw Error(where + ": expected an object");
    for (const char* key : {"weight", "mean", "covariance", "label"})
      if (!c.contains(key)) throw Error(where + "." + key + ": missing");
    if (!c["weight"].is_number()) throw Error(where + ".weight: expected a number");
    if (!c["label"].is_string()) throw Error(where + ".label: expected a string");
    Vec mean = to_vec(c["mean"], where + ".mean");
    Mat cov = to_covariance(c["covariance"], mean.size(), where + ".covariance");
    try {
      out.push_back({GaussianComponent(c["weight"].get<double>(), std::move(mean), std::move(cov)),
                     parse_label(c["label"].get<std::string>())});
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
  }
  ConditionedMixture mix(std::move(out));
  if (doc.contains("dimension") && doc["dimension"].get<int>() != mix.dimension())
    throw Error("mixture: \"dimension\" does not match component means");
  return mix;
}

json mixture_to_json(const ConditionedMixture& mix) {
  json comps = json::array();
  for (const auto& c : mix.components()) {
    const auto& g = c.gaussian;
    json cov;
    const auto d = g.dimension();
    const double c00 = g.covariance()(0, 0);
    if (g.covariance().isApprox(c00 * Mat::Identity(d, d), 0.0)) {
      cov = {{"iso", c00}};
    } else {
      cov = json::array();
      for (Eigen::Index r = 0; r < d; ++r) {
        json row = json::array();
        for (Eigen::Index k = 0; k < d; ++k) row.push_back(g.covariance()(r, k));
        cov.push_back(row);
      }
    }
    json mean = json::array();
    for (Eigen::Index k = 0; k < d; ++k) mean.push_back(g.mean()[k]);
    comps.push_back({{"weight", g.weight()}, {"mean", mean}, {"covariance", cov},
                     {"label", std::string(to_string(c.label))}});
  }
  return {{"dimension", mix.dimension()}, {"components", comps}};
}

ConditionedMixture load_mixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mixture file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw Error("mixture file " + path.string() + ": parse error: " + e.what());
  }
  return mixture_from_json(doc);
}

ConditionedMixture toy_mixture() {
  auto iso = [](double w, double x, double y, double var, ConditionLabel label) {
    return LabeledComponent{GaussianComponent::isotropic(w, Eigen::Vector2d(x, y), var), label};
  };
  return ConditionedMixture({
      iso(0.10, 0.0, 0.0, 0.10, ConditionLabel::Unconditional),
      iso(0.15, 3.0, 1.0, 0.10, ConditionLabel::TextOnly),
      iso(0.15, 0.5, 1.0, 0.10, ConditionLabel::ImageOnly),
      iso(0.30, 1.5, 1.4, 0.05, ConditionLabel::Both),
      iso(0.30, 1.5, 0.4, 0.05, ConditionLabel::Both),
  });
}

}  // namespace sdse
