#pragma once

#include <filesystem>

#include "json.hpp"
#include "sdse/score_oracle.hpp"

namespace sdse {

/// Mixture file layout:
///   {"dimension": 2,
///    "components": [{"weight": 0.1, "mean": [0, 0],
///                    "covariance": {"iso": 0.1} | [[...], ...],
///                    "label": "unconditional" | "image" | "text" | "both"}, ...]}
ConditionedMixture mixture_from_json(const nlohmann::json& doc);
nlohmann::json mixture_to_json(const ConditionedMixture& mix);
ConditionedMixture load_mixture(const std::filesystem::path& path);

/// The five-component 2D mixture of the toy experiment.
ConditionedMixture toy_mixture();

}  // namespace sdse
