#pragma once

// Self-checks run by `sdse verify`: oracle scores against finite differences,
// the guidance decomposition identities, Laplacian gradients and the region
// allocation table.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace sdse {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::string mixture_path;  // empty means the built-in toy mixture
  std::uint64_t seed = 12345;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  nlohmann::json region_table = nlohmann::json::array();

  bool passed() const;
  nlohmann::json to_json() const;
};

VerifyReport run_verification(const VerifyOptions& options);

}  // namespace sdse
