#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sdse/types.hpp"

namespace sdse {

struct TrajectoryState {
  int step = 0;
  int t = 0;
  Vec theta;     // iterate after this step's update
  Vec residual;  // residual that produced the update
  double p = 0.0;
  double p_img = 0.0;
  double p_full = 0.0;
};

struct Trajectory {
  std::string estimator;
  std::uint64_t seed = 0;
  std::string config_digest;
  Vec theta0;
  std::vector<TrajectoryState> states;
  Vec residual_ema;  // exponential moving average of the residual vectors
  bool diverged = false;
  std::string diagnostic;

  const Vec& final_theta() const { return states.empty() ? theta0 : states.back().theta; }
};

/// Header: step,t,theta_0..theta_{D-1},res_0..res_{D-1},p,p_img,p_full.
/// When `digest` is non-empty a "# config_digest=<digest>" line precedes it.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const std::string& digest = {});
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                          const std::string& digest = {});
Trajectory read_trajectory_csv(const std::filesystem::path& path);

/// Shortest round-trip decimal form, locale independent.
std::string format_double(double value);

}  // namespace sdse
