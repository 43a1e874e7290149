#include "sdse/mesh_io.hpp"

#include <fstream>

namespace sdse {

using nlohmann::json;

namespace {

int to_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw Error(where + ": expected an integer");
  return j.get<int>();
}

Vec to_vec(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw Error(where + ": expected a non-empty number array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(where + "[" + std::to_string(i) + "]: expected a number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Mat init_codes(const json& init, int n) {
  if (!init.is_object() || !init.contains("mode") || !init["mode"].is_string())
    throw Error("init.mode: expected \"constant\" or \"gaussian\"");
  const std::string mode = init["mode"].get<std::string>();
  const json params = init.value("params", json::object());
  if (!params.is_object()) throw Error("init.params: expected an object");
  if (mode == "constant") {
    if (!params.contains("value")) throw Error("init.params.value: missing");
    const Vec value = to_vec(params["value"], "init.params.value");
    Mat codes(n, value.size());
    codes.rowwise() = value.transpose();
    return codes;
  }
  if (mode == "gaussian") {
    if (!params.contains("mean")) throw Error("init.params.mean: missing");
    const Vec mean = to_vec(params["mean"], "init.params.mean");
    const double sd = params.value("std", 0.0);
    if (!(sd >= 0.0)) throw Error("init.params.std: must be >= 0");
    Rng rng(params.value("seed", std::uint64_t{0}));
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat codes(n, mean.size());
    for (int i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < mean.size(); ++k) codes(i, k) = mean[k] + sd * normal(rng);
    return codes;
  }
  throw Error("init.mode: unknown mode '" + mode + "'");
}

}  // namespace

LatentMesh mesh_from_json(const json& doc) {
  if (!doc.is_object()) throw Error("mesh: expected an object");
  for (const char* key : {"vertices", "edges", "regions"})
    if (!doc.contains(key)) throw Error(std::string(key) + ": missing");
  LatentMesh mesh;
  mesh.vertex_count = to_int(doc["vertices"], "vertices");
  if (mesh.vertex_count < 1) throw Error("vertices: must be >= 1");

  const auto& edges = doc["edges"];
  if (!edges.is_array()) throw Error("edges: expected an array");
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const std::string where = "edges[" + std::to_string(e) + "]";
    if (!edges[e].is_array() || edges[e].size() != 2) throw Error(where + ": expected [i, j]");
    mesh.edges.emplace_back(to_int(edges[e][0], where + "[0]"), to_int(edges[e][1], where + "[1]"));
  }

  const auto& regions = doc["regions"];
  if (!regions.is_array()) throw Error("regions: expected an array");
  for (std::size_t i = 0; i < regions.size(); ++i)
    mesh.regions.push_back(to_int(regions[i], "regions[" + std::to_string(i) + "]"));

  if (doc.contains("region_names")) {
    const auto& names = doc["region_names"];
    if (!names.is_array()) throw Error("region_names: expected an array");
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (!names[i].is_string()) throw Error("region_names[" + std::to_string(i) + "]: expected a string");
      mesh.region_names.push_back(names[i].get<std::string>());
    }
  }

  if (doc.contains("codes")) {
    const auto& codes = doc["codes"];
    if (!codes.is_array() || static_cast<int>(codes.size()) != mesh.vertex_count)
      throw Error("codes: expected one row per vertex");
    for (std::size_t i = 0; i < codes.size(); ++i) {
      const Vec row = to_vec(codes[i], "codes[" + std::to_string(i) + "]");
      if (i == 0) mesh.codes.resize(mesh.vertex_count, row.size());
      if (row.size() != mesh.codes.cols()) throw Error("codes[" + std::to_string(i) + "]: wrong row length");
      mesh.codes.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
  } else if (doc.contains("init")) {
    mesh.codes = init_codes(doc["init"], mesh.vertex_count);
  } else {
    throw Error("codes: missing (give \"codes\" or \"init\")");
  }
  mesh.validate();
  return mesh;
}

json mesh_to_json(const LatentMesh& mesh) {
  json doc;
  doc["vertices"] = mesh.vertex_count;
  json edges = json::array();
  for (auto [a, b] : mesh.edges) edges.push_back({a, b});
  doc["edges"] = std::move(edges);
  doc["regions"] = mesh.regions;
  if (!mesh.region_names.empty()) doc["region_names"] = mesh.region_names;
  json codes = json::array();
  for (Eigen::Index i = 0; i < mesh.codes.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < mesh.codes.cols(); ++k) row.push_back(mesh.codes(i, k));
    codes.push_back(std::move(row));
  }
  doc["codes"] = std::move(codes);
  return doc;
}

LatentMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mesh file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("mesh file " + path.string() + ": parse error: " + e.what());
  }
  try {
    return mesh_from_json(doc);
  } catch (const Error& e) {
    throw Error("mesh file " + path.string() + ": " + e.what());
  }
}

void save_mesh(const std::filesystem::path& path, const LatentMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write mesh file " + path.string());
  out << mesh_to_json(mesh).dump(1) << '\n';
}

}  // namespace sdse
