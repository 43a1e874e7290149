#include "sdse/latent_mesh.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

namespace sdse {

int LatentMesh::region_count() const {
  if (regions.empty()) return 0;
  return *std::max_element(regions.begin(), regions.end()) + 1;
}

std::vector<int> LatentMesh::region_vertices(RegionId r) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(regions.size()); ++i)
    if (regions[static_cast<std::size_t>(i)] == r) out.push_back(i);
  return out;
}

bool is_connected(int vertex_count, const std::vector<std::pair<int, int>>& edges) {
  if (vertex_count <= 0) return false;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(vertex_count));
  for (auto [a, b] : edges) {
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  std::vector<char> seen(static_cast<std::size_t>(vertex_count), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int reached = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int u : adj[static_cast<std::size_t>(v)]) {
      if (!seen[static_cast<std::size_t>(u)]) {
        seen[static_cast<std::size_t>(u)] = 1;
        ++reached;
        stack.push_back(u);
      }
    }
  }
  return reached == vertex_count;
}

void LatentMesh::validate() const {
  if (vertex_count <= 0) throw Error("mesh must have at least one vertex");
  for (std::size_t e = 0; e < edges.size(); ++e) {
    auto [a, b] = edges[e];
    if (a < 0 || b < 0 || a >= vertex_count || b >= vertex_count)
      throw Error("edges[" + std::to_string(e) + "] references a vertex outside [0, " +
                  std::to_string(vertex_count) + ")");
    if (a == b) throw Error("edges[" + std::to_string(e) + "] is a self-loop");
  }
  if (static_cast<int>(regions.size()) != vertex_count)
    throw Error("regions has " + std::to_string(regions.size()) + " entries for " + std::to_string(vertex_count) +
                " vertices");
  for (std::size_t i = 0; i < regions.size(); ++i)
    if (regions[i] < 0) throw Error("regions[" + std::to_string(i) + "] must be >= 0");
  if (codes.rows() != vertex_count) throw Error("codes must have one row per vertex");
  if (codes.cols() < 1) throw Error("codes must have at least one column");
  if (!codes.allFinite()) throw Error("codes must be finite");
  if (!region_names.empty() && static_cast<int>(region_names.size()) != region_count())
    throw Error("region_names must have one entry per region");
  if (!is_connected(vertex_count, edges)) throw Error("mesh graph is disconnected");
}

// ---------------------------------------------------------------------------

LaplacianMatrix build_laplacian(const LatentMesh& mesh) {
  const int n = mesh.vertex_count;
  if (n <= 0) throw Error("mesh must have at least one vertex");
  if (!is_connected(n, mesh.edges)) throw Error("cannot build Laplacian: mesh graph is disconnected");

  std::map<std::pair<int, int>, int> unique;
  for (auto [a, b] : mesh.edges) {
    if (a < 0 || b < 0 || a >= n || b >= n || a == b) throw Error("invalid edge in mesh");
    unique[{std::min(a, b), std::max(a, b)}] = 1;
  }
  std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
  std::vector<Eigen::Triplet<double>> trip, inc;
  trip.reserve(unique.size() * 2 + static_cast<std::size_t>(n));
  inc.reserve(unique.size() * 2);
  int row = 0;
  for (const auto& [e, _] : unique) {
    trip.emplace_back(e.first, e.second, -1.0);
    trip.emplace_back(e.second, e.first, -1.0);
    degree[static_cast<std::size_t>(e.first)] += 1.0;
    degree[static_cast<std::size_t>(e.second)] += 1.0;
    inc.emplace_back(row, e.first, 1.0);
    inc.emplace_back(row, e.second, -1.0);
    ++row;
  }
  for (int i = 0; i < n; ++i) trip.emplace_back(i, i, degree[static_cast<std::size_t>(i)]);
  SparseMat lap(n, n);
  lap.setFromTriplets(trip.begin(), trip.end());
  lap.makeCompressed();
  SparseMat b(row, n);
  b.setFromTriplets(inc.begin(), inc.end());
  b.makeCompressed();
  return LaplacianMatrix(std::move(lap), std::move(b));
}

Mat LaplacianMatrix::apply(const Mat& x) const {
  const Mat diff = incidence_ * x;
  return incidence_.transpose() * diff;
}

namespace {

void check_delta(const LaplacianMatrix& lap, const Mat& delta) {
  if (delta.rows() != lap.size()) throw Error("delta rows do not match Laplacian size");
}

}  // namespace

double smoothness_loss(const LaplacianMatrix& lap, const Mat& delta) {
  check_delta(lap, delta);
  const Mat ld = lap.apply(delta);
  return ld.squaredNorm() / lap.size();
}

Mat smoothness_gradient(const LaplacianMatrix& lap, const Mat& delta) {
  check_delta(lap, delta);
  return (2.0 / lap.size()) * lap.apply(lap.apply(delta));
}

// ---------------------------------------------------------------------------

void ViewSpec::validate(const LatentMesh& mesh) const {
  if (blend.empty()) throw Error("view has empty support");
  if (region < 0 || region >= mesh.region_count())
    throw Error("view region " + std::to_string(region) + " does not exist");
  double total = 0.0;
  for (auto [v, w] : blend) {
    if (v < 0 || v >= mesh.vertex_count) throw Error("view blend references vertex " + std::to_string(v));
    if (mesh.regions[static_cast<std::size_t>(v)] != region)
      throw Error("view blend vertex " + std::to_string(v) + " lies outside region " + std::to_string(region));
    if (!std::isfinite(w) || w < 0.0) throw Error("view blend weights must be finite and >= 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw Error("view blend weights must sum to 1");
}

Vec render_view(const LatentMesh& mesh, const ViewSpec& view) {
  if (view.blend.empty()) throw Error("view has empty support");
  Vec out = Vec::Zero(mesh.latent_dim());
  for (auto [v, w] : view.blend) {
    if (v < 0 || v >= mesh.vertex_count) throw Error("view blend references vertex " + std::to_string(v));
    out += w * mesh.codes.row(v).transpose();
  }
  return out;
}

Mat SparseRowGradient::to_dense() const {
  Mat dense = Mat::Zero(rows, values.cols());
  add_to(dense);
  return dense;
}

void SparseRowGradient::add_to(Mat& dense, double scale) const {
  for (std::size_t k = 0; k < vertices.size(); ++k)
    dense.row(vertices[k]) += scale * values.row(static_cast<Eigen::Index>(k));
}

SparseRowGradient backprop_view(const LatentMesh& mesh, const ViewSpec& view, const Vec& residual) {
  if (residual.size() != mesh.latent_dim()) throw Error("residual dimension does not match latent dimension");
  SparseRowGradient g;
  g.rows = mesh.vertex_count;
  g.vertices.reserve(view.blend.size());
  g.values.resize(static_cast<Eigen::Index>(view.blend.size()), residual.size());
  for (std::size_t k = 0; k < view.blend.size(); ++k) {
    g.vertices.push_back(view.blend[k].first);
    g.values.row(static_cast<Eigen::Index>(k)) = view.blend[k].second * residual.transpose();
  }
  return g;
}

std::vector<double> region_weights(std::span<const SparseRowGradient> per_view, const LatentMesh& mesh,
                                   std::vector<std::string>* warnings) {
  if (per_view.empty()) throw Error("region_weights needs at least one view gradient");
  const int regions = mesh.region_count();
  std::vector<double> sums(static_cast<std::size_t>(regions), 0.0);
  std::vector<int> sizes(static_cast<std::size_t>(regions), 0);
  for (RegionId r : mesh.regions) ++sizes[static_cast<std::size_t>(r)];

  for (const auto& g : per_view) {
    // Merge duplicate rows so ‖∇(i)‖ is the norm of the vertex's full gradient.
    std::map<int, Vec> rows;
    for (std::size_t k = 0; k < g.vertices.size(); ++k) {
      const Vec row = g.values.row(static_cast<Eigen::Index>(k)).transpose();
      auto [it, fresh] = rows.try_emplace(g.vertices[k], row);
      if (!fresh) it->second += row;
    }
    for (const auto& [v, row] : rows) sums[static_cast<std::size_t>(mesh.regions[static_cast<std::size_t>(v)])] += row.norm();
  }

  std::vector<double> w(static_cast<std::size_t>(regions), 0.0);
  const double views = static_cast<double>(per_view.size());
  for (int r = 0; r < regions; ++r) {
    const auto idx = static_cast<std::size_t>(r);
    if (sizes[idx] == 0) {
      if (warnings) warnings->push_back("region " + std::to_string(r) + " has no vertices; weight set to 0");
      continue;
    }
    w[idx] = sums[idx] / views / sizes[idx];
  }
  return w;
}

RegionAllocation allocate_views(const std::vector<double>& weights, int total, std::vector<std::string>* warnings) {
  if (weights.empty()) throw Error("allocate_views needs at least one region");
  if (total < 0) throw Error("total view count must be >= 0");
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw Error("region weights must be finite and >= 0");
    sum += w;
  }

  RegionAllocation out;
  out.weights = weights;
  out.total = total;
  const std::size_t n = weights.size();
  std::vector<double> quota(n);
  if (sum > 0.0) {
    for (std::size_t r = 0; r < n; ++r) quota[r] = weights[r] / sum * total;
  } else {
    out.uniform_fallback = true;
    if (warnings) warnings->push_back("all region weights are zero; using a uniform allocation");
    for (std::size_t r = 0; r < n; ++r) quota[r] = static_cast<double>(total) / static_cast<double>(n);
  }

  out.counts.resize(n);
  std::vector<double> remainder(n);
  int assigned = 0;
  for (std::size_t r = 0; r < n; ++r) {
    // Snap quotas that sit within rounding noise of an integer.
    const double nearest = std::round(quota[r]);
    const double q = std::abs(quota[r] - nearest) <= 1e-9 * std::max(1.0, nearest) ? nearest : quota[r];
    out.counts[r] = static_cast<int>(std::floor(q));
    remainder[r] = q - out.counts[r];
    assigned += out.counts[r];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (int k = 0; assigned < total; ++k, ++assigned) ++out.counts[order[static_cast<std::size_t>(k) % n]];
  return out;
}

std::vector<ViewSpec> make_region_views(const LatentMesh& mesh, int views_per_region, int support_size, Rng& rng) {
  if (views_per_region < 1) throw Error("views_per_region must be >= 1");
  if (support_size < 1) throw Error("support_size must be >= 1");
  std::vector<ViewSpec> views;
  std::exponential_distribution<double> gamma1(1.0);
  for (RegionId r = 0; r < mesh.region_count(); ++r) {
    std::vector<int> pool = mesh.region_vertices(r);
    if (pool.empty()) continue;
    const std::size_t k = std::min(pool.size(), static_cast<std::size_t>(support_size));
    for (int v = 0; v < views_per_region; ++v) {
      // Partial Fisher-Yates for a k-subset.
      for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      std::vector<int> support(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(support.begin(), support.end());
      std::vector<double> w(k);
      double total = 0.0;
      for (auto& x : w) total += (x = gamma1(rng));
      ViewSpec spec;
      spec.region = r;
      for (std::size_t i = 0; i < k; ++i) spec.blend.emplace_back(support[i], w[i] / total);
      views.push_back(std::move(spec));
    }
  }
  return views;
}

// ---------------------------------------------------------------------------

Vec edit_residual(const NoisePredictor& oracle, const EditSettings& settings, Condition target, const Vec& z_t,
                  int t, const Vec& epsilon) {
  if (target == kFullCondition)
    return term_residual(settings.estimator, oracle, z_t, t, epsilon, settings.estimator_settings);
  return oracle.predict(z_t, t, target) - epsilon;
}

struct MeshEditor::Solver {
  SparseMat smoother;  // (2/N) LᵀL
  Eigen::SimplicialLDLT<SparseMat> ldlt;
  bool factored = false;
};

MeshEditor::MeshEditor(LatentMesh mesh, const NoisePredictor& oracle, EditSettings settings)
    : mesh_(std::move(mesh)),
      oracle_(&oracle),
      settings_(std::move(settings)),
      laplacian_(build_laplacian(mesh_)),
      solver_(std::make_unique<Solver>()) {
  mesh_.validate();
  if (mesh_.latent_dim() != oracle.mixture().dimension())
    throw Error("mesh latent dimension does not match mixture dimension");
  if (static_cast<int>(settings_.region_targets.size()) != mesh_.region_count())
    throw Error("region_targets must list one target per region (got " +
                std::to_string(settings_.region_targets.size()) + " for " + std::to_string(mesh_.region_count()) +
                " regions)");
  for (Condition c : settings_.region_targets)
    if (!oracle.has_support(c)) throw Error("target condition " + to_string(c) + " has no support");
  if (!std::isfinite(settings_.w1) || settings_.w1 < 0.0) throw Error("w1 must be finite and >= 0");
  if (!std::isfinite(settings_.lr) || settings_.lr < 0.0) throw Error("lr must be finite and >= 0");

  const SparseMat& l = laplacian_.matrix();
  solver_->smoother = (2.0 / laplacian_.size()) * SparseMat(l.transpose() * l);
  const double c = settings_.lr * settings_.w1;
  if (settings_.smoothing == SmoothingStep::Implicit && c > 0.0) {
    SparseMat identity(laplacian_.size(), laplacian_.size());
    identity.setIdentity();
    const SparseMat system = identity + c * solver_->smoother;
    solver_->ldlt.compute(system);
    if (solver_->ldlt.info() != Eigen::Success) throw Error("smoothing system factorization failed");
    solver_->factored = true;
  }
}

MeshEditor::~MeshEditor() = default;
MeshEditor::MeshEditor(MeshEditor&&) noexcept = default;
MeshEditor& MeshEditor::operator=(MeshEditor&&) noexcept = default;

EditStepReport MeshEditor::step(std::span<const ViewSpec> batch, int t, Rng& rng) {
  if (batch.empty()) throw Error("edit step needs at least one view");
  const int dim = mesh_.latent_dim();
  std::normal_distribution<double> normal(0.0, 1.0);

  EditStepReport report;
  report.t = t;
  report.view_gradients.reserve(batch.size());
  Mat accum = Mat::Zero(mesh_.vertex_count, dim);
  Vec eps(dim);
  for (const ViewSpec& view : batch) {
    view.validate(mesh_);
    const Vec x = render_view(mesh_, view);
    for (int k = 0; k < dim; ++k) eps[k] = normal(rng);
    const Vec z_t = forward_diffuse(x, t, eps, oracle_->schedule());
    const Condition target = settings_.region_targets[static_cast<std::size_t>(view.region)];
    const Vec r = edit_residual(*oracle_, settings_, target, z_t, t, eps);
    report.view_gradients.push_back(backprop_view(mesh_, view, r));
  }
  for (const auto& g : report.view_gradients) g.add_to(accum);
  accum /= static_cast<double>(batch.size());
  report.region_grad_norms = region_weights(report.view_gradients, mesh_);

  const Mat candidate = -settings_.lr * accum;
  const double c = settings_.lr * settings_.w1;
  if (c == 0.0) {
    report.delta = candidate;
  } else if (settings_.smoothing == SmoothingStep::Implicit) {
    report.delta = solver_->ldlt.solve(candidate);
    if (solver_->ldlt.info() != Eigen::Success) throw Error("smoothing solve failed");
  } else {
    report.delta = candidate - c * (solver_->smoother * candidate);
  }
  report.smooth_loss = smoothness_loss(laplacian_, report.delta);
  mesh_.codes += report.delta;
  return report;
}

std::pair<LatentMesh, EditStepReport> edit_step(const LatentMesh& mesh, std::span<const ViewSpec> batch,
                                                const NoisePredictor& oracle, const EditSettings& settings,
                                                int t, Rng& rng) {
  MeshEditor editor(mesh, oracle, settings);
  EditStepReport report = editor.step(batch, t, rng);
  return {editor.mesh(), std::move(report)};
}

// ---------------------------------------------------------------------------

namespace {

Mat constant_codes(int n, const Vec& init) {
  if (init.size() < 1) throw Error("init code must be non-empty");
  Mat codes(n, init.size());
  codes.rowwise() = init.transpose();
  return codes;
}

struct Triangulated {
  std::vector<std::array<double, 3>> points;
  std::vector<std::array<int, 3>> faces;
};

Triangulated icosahedron_geometry() {
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  Triangulated m;
  m.points = {{-1, g, 0}, {1, g, 0}, {-1, -g, 0}, {1, -g, 0}, {0, -1, g}, {0, 1, g},
              {0, -1, -g}, {0, 1, -g}, {g, 0, -1}, {g, 0, 1}, {-g, 0, -1}, {-g, 0, 1}};
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (auto& p : m.points) {
    const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    for (double& x : p) x /= n;
  }
  return m;
}

Triangulated subdivide(const Triangulated& in) {
  Triangulated out;
  out.points = in.points;
  std::map<std::pair<int, int>, int> midpoints;
  auto midpoint = [&](int a, int b) {
    const auto key = std::make_pair(std::min(a, b), std::max(a, b));
    if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
    std::array<double, 3> p{};
    double n = 0.0;
    for (int k = 0; k < 3; ++k) {
      p[static_cast<std::size_t>(k)] = out.points[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)] +
                                       out.points[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
      n += p[static_cast<std::size_t>(k)] * p[static_cast<std::size_t>(k)];
    }
    n = std::sqrt(n);
    for (double& x : p) x /= n;
    out.points.push_back(p);
    const int id = static_cast<int>(out.points.size()) - 1;
    midpoints[key] = id;
    return id;
  };
  for (const auto& f : in.faces) {
    const int a = midpoint(f[0], f[1]);
    const int b = midpoint(f[1], f[2]);
    const int c = midpoint(f[2], f[0]);
    out.faces.push_back({f[0], a, c});
    out.faces.push_back({f[1], b, a});
    out.faces.push_back({f[2], c, b});
    out.faces.push_back({a, b, c});
  }
  return out;
}

std::vector<std::pair<int, int>> face_edges(const std::vector<std::array<int, 3>>& faces) {
  std::map<std::pair<int, int>, int> unique;
  for (const auto& f : faces)
    for (int k = 0; k < 3; ++k) {
      const int a = f[static_cast<std::size_t>(k)];
      const int b = f[static_cast<std::size_t>((k + 1) % 3)];
      unique[{std::min(a, b), std::max(a, b)}] = 1;
    }
  std::vector<std::pair<int, int>> edges;
  edges.reserve(unique.size());
  for (const auto& [e, _] : unique) edges.push_back(e);
  return edges;
}

}  // namespace

LatentMesh make_banded_grid(int width, int height, const Vec& init_code) {
  if (width < 1 || height < 5) throw Error("banded grid needs width >= 1 and height >= 5");
  LatentMesh mesh;
  mesh.vertex_count = width * height;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int v = y * width + x;
      if (x + 1 < width) mesh.edges.emplace_back(v, v + 1);
      if (y + 1 < height) mesh.edges.emplace_back(v, v + width);
      mesh.regions.push_back(y * 5 / height);
    }
  mesh.codes = constant_codes(mesh.vertex_count, init_code);
  mesh.region_names = {"face", "head_back", "body_front", "body_back", "arms"};
  mesh.validate();
  return mesh;
}

LatentMesh make_icosphere(int subdivisions, const Vec& init_code) {
  if (subdivisions < 0) throw Error("subdivisions must be >= 0");
  Triangulated geo = icosahedron_geometry();
  for (int i = 0; i < subdivisions; ++i) geo = subdivide(geo);

  LatentMesh mesh;
  mesh.vertex_count = static_cast<int>(geo.points.size());
  mesh.edges = face_edges(geo.faces);
  // Bands of equal size by height rank, ties by index.
  std::vector<int> order(static_cast<std::size_t>(mesh.vertex_count));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return geo.points[static_cast<std::size_t>(a)][2] > geo.points[static_cast<std::size_t>(b)][2];
  });
  mesh.regions.assign(static_cast<std::size_t>(mesh.vertex_count), 0);
  for (int rank = 0; rank < mesh.vertex_count; ++rank)
    mesh.regions[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])] = rank * 5 / mesh.vertex_count;
  mesh.codes = constant_codes(mesh.vertex_count, init_code);
  mesh.region_names = {"face", "head_back", "body_front", "body_back", "arms"};
  mesh.validate();
  return mesh;
}

LatentMesh make_icosahedron(const Vec& init_code) {
  const Triangulated geo = icosahedron_geometry();
  LatentMesh mesh;
  mesh.vertex_count = static_cast<int>(geo.points.size());
  mesh.edges = face_edges(geo.faces);
  mesh.regions.assign(static_cast<std::size_t>(mesh.vertex_count), 0);
  mesh.codes = constant_codes(mesh.vertex_count, init_code);
  mesh.validate();
  return mesh;
}

}  // namespace sdse
