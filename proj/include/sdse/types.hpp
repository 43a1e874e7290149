#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace sdse {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised for every contract violation in the library (bad inputs, empty
/// selections, schema errors). The message is meant to be shown verbatim.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace sdse
