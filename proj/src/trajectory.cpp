#include "sdse/trajectory.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace sdse {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const std::string& digest) {
  const auto d = traj.theta0.size();
  if (!digest.empty()) out << "# config_digest=" << digest << '\n';
  out << "step,t";
  for (Eigen::Index k = 0; k < d; ++k) out << ",theta_" << k;
  for (Eigen::Index k = 0; k < d; ++k) out << ",res_" << k;
  out << ",p,p_img,p_full\n";
  for (const auto& s : traj.states) {
    out << s.step << ',' << s.t;
    for (Eigen::Index k = 0; k < d; ++k) out << ',' << format_double(s.theta[k]);
    for (Eigen::Index k = 0; k < d; ++k) out << ',' << format_double(s.residual[k]);
    out << ',' << format_double(s.p) << ',' << format_double(s.p_img) << ',' << format_double(s.p_full)
        << '\n';
  }
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                          const std::string& digest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_trajectory_csv(out, traj, digest);
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trajectory " + path.string());
  std::string line;
  Trajectory traj;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# config_digest=", 0) == 0) {
      traj.config_digest = line.substr(16);
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header.empty()) {
      header = cells;
      if (header.size() < 5 || header[0] != "step" || header[1] != "t" || (header.size() - 5) % 2 != 0)
        throw Error(path.string() + ": not a trajectory CSV");
      continue;
    }
    if (cells.size() != header.size()) throw Error(path.string() + ": ragged row");
    const auto d = static_cast<Eigen::Index>((header.size() - 5) / 2);
    TrajectoryState s;
    s.step = std::stoi(cells[0]);
    s.t = std::stoi(cells[1]);
    s.theta.resize(d);
    s.residual.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      s.theta[k] = std::stod(cells[static_cast<std::size_t>(2 + k)]);
      s.residual[k] = std::stod(cells[static_cast<std::size_t>(2 + d + k)]);
    }
    s.p = std::stod(cells[static_cast<std::size_t>(2 + 2 * d)]);
    s.p_img = std::stod(cells[static_cast<std::size_t>(3 + 2 * d)]);
    s.p_full = std::stod(cells[static_cast<std::size_t>(4 + 2 * d)]);
    traj.states.push_back(std::move(s));
  }
  if (header.empty()) throw Error(path.string() + ": empty trajectory file");
  if (!traj.states.empty()) traj.theta0 = traj.states.front().theta;
  return traj;
}

}  // namespace sdse
