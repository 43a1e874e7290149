#pragma once

#include <filesystem>

#include "json.hpp"
#include "sdse/latent_mesh.hpp"

namespace sdse {

/// Mesh file layout:
///   {"vertices": N, "edges": [[i, j], ...], "regions": [r_0, ..., r_{N-1}],
///    "region_names": [...]                                  (optional)
///    "codes": [[...], ...]                                  or
///    "init": {"mode": "constant", "params": {"value": [...]}}
///          | {"mode": "gaussian", "params": {"mean": [...], "std": s, "seed": n}}}
LatentMesh mesh_from_json(const nlohmann::json& doc);
nlohmann::json mesh_to_json(const LatentMesh& mesh);
LatentMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const std::filesystem::path& path, const LatentMesh& mesh);

}  // namespace sdse
