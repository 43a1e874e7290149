#pragma once

// Per-vertex latent codes on a region-labelled graph: the Laplacian
// smoothness regularizer, a linear toy render map with its adjoint, and
// gradient-aware view allocation.

#include <Eigen/SparseCore>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdse/guidance.hpp"

namespace sdse {

using RegionId = int;
using SparseMat = Eigen::SparseMatrix<double>;

struct LatentMesh {
  int vertex_count = 0;
  std::vector<std::pair<int, int>> edges;  // undirected
  Mat codes;                               // vertex_count × latent dimension
  std::vector<RegionId> regions;           // region of each vertex, ids 0..R-1
  std::vector<std::string> region_names;   // optional, size R when present

  int latent_dim() const { return static_cast<int>(codes.cols()); }
  int region_count() const;
  std::vector<int> region_vertices(RegionId r) const;
  /// Throws unless edges reference valid vertices, every vertex has a region,
  /// the code matrix has one row per vertex and the graph is connected.
  void validate() const;
};

bool is_connected(int vertex_count, const std::vector<std::pair<int, int>>& edges);

/// Combinatorial Laplacian D - A, kept alongside the edge incidence matrix B
/// (L = BᵀB) so products with L are formed from edge differences.
class LaplacianMatrix {
 public:
  LaplacianMatrix(SparseMat matrix, SparseMat incidence)
      : matrix_(std::move(matrix)), incidence_(std::move(incidence)) {}
  const SparseMat& matrix() const { return matrix_; }
  const SparseMat& incidence() const { return incidence_; }
  int size() const { return static_cast<int>(matrix_.rows()); }
  /// Bᵀ (B x); exactly zero on constant columns.
  Mat apply(const Mat& x) const;

 private:
  SparseMat matrix_;
  SparseMat incidence_;
};

/// Throws sdse::Error for a disconnected graph.
LaplacianMatrix build_laplacian(const LatentMesh& mesh);

/// (1/N) Σ_i ‖(L ΔF)_i‖²
double smoothness_loss(const LaplacianMatrix& lap, const Mat& delta);

/// (2/N) Lᵀ L ΔF
Mat smoothness_gradient(const LaplacianMatrix& lap, const Mat& delta);

struct ViewSpec {
  RegionId region = 0;
  std::vector<std::pair<int, double>> blend;  // (vertex, weight), weights sum to 1

  void validate(const LatentMesh& mesh) const;
};

/// Σ_i blend_i Θ_i
Vec render_view(const LatentMesh& mesh, const ViewSpec& view);

/// Rows of an N × D gradient that are non-zero for one view.
struct SparseRowGradient {
  int rows = 0;
  std::vector<int> vertices;
  Mat values;  // vertices.size() × D

  Mat to_dense() const;
  void add_to(Mat& dense, double scale = 1.0) const;
};

/// Adjoint of render_view: row i = blend_i · residual on the support.
SparseRowGradient backprop_view(const LatentMesh& mesh, const ViewSpec& view, const Vec& residual);

/// w_r = (1/|V|)(1/|S_r|) Σ_v Σ_{i∈S_r} ‖∇_v(i)‖. Empty regions get weight 0 and
/// a message in `warnings` when one is supplied.
std::vector<double> region_weights(std::span<const SparseRowGradient> per_view, const LatentMesh& mesh,
                                   std::vector<std::string>* warnings = nullptr);

struct RegionAllocation {
  std::vector<double> weights;
  std::vector<int> counts;
  int total = 0;
  bool uniform_fallback = false;
};

/// C(r) = w_r / Σ w · total, rounded by largest remainder (ties to the lower
/// region index) so the counts sum to `total`. All-zero weights fall back to a
/// uniform split.
RegionAllocation allocate_views(const std::vector<double>& weights, int total,
                                std::vector<std::string>* warnings = nullptr);

/// Per-region pool of views: each view blends a random subset of
/// `support_size` region vertices with symmetric Dirichlet(1) weights.
std::vector<ViewSpec> make_region_views(const LatentMesh& mesh, int views_per_region, int support_size,
                                        Rng& rng);

enum class SmoothingStep {
  Implicit,  // (I + lr·w1·(2/N) LᵀL) Δ = ΔF
  Explicit,  // Δ = ΔF - lr·w1·(2/N) LᵀL ΔF
};

struct EditSettings {
  EstimatorKind estimator = EstimatorKind::SDSE;
  EstimatorSettings estimator_settings;
  std::vector<Condition> region_targets;  // target condition per region
  double w1 = 300.0;
  double lr = 0.1;
  SmoothingStep smoothing = SmoothingStep::Implicit;
};

/// Residual of one rendered view. Regions targeting (y,I) use the configured
/// estimator; any other target uses its full-condition term ε̂(target) - ε.
Vec edit_residual(const NoisePredictor& oracle, const EditSettings& settings, Condition target, const Vec& z_t,
                  int t, const Vec& epsilon);

struct EditStepReport {
  int t = 0;
  std::vector<double> region_grad_norms;  // region weights of this step's batch
  std::vector<SparseRowGradient> view_gradients;
  double smooth_loss = 0.0;  // smoothness loss of the applied delta
  Mat delta;                 // applied update
};

/// Holds a mesh and the factorized smoothing system; one step() is one
/// serialized commit of a view batch.
class MeshEditor {
 public:
  MeshEditor(LatentMesh mesh, const NoisePredictor& oracle, EditSettings settings);
  ~MeshEditor();
  MeshEditor(MeshEditor&&) noexcept;
  MeshEditor& operator=(MeshEditor&&) noexcept;

  /// Per view: fresh ε, z_t = forward_diffuse(render), residual, backprop.
  /// Gradients are averaged over the batch in batch order; ΔF = -lr · mean
  /// gradient is smoothed and applied.
  EditStepReport step(std::span<const ViewSpec> batch, int t, Rng& rng);

  const LatentMesh& mesh() const { return mesh_; }
  const LaplacianMatrix& laplacian() const { return laplacian_; }
  const EditSettings& settings() const { return settings_; }

 private:
  struct Solver;
  LatentMesh mesh_;
  const NoisePredictor* oracle_;
  EditSettings settings_;
  LaplacianMatrix laplacian_;
  std::unique_ptr<Solver> solver_;
};

/// One edit step on a copy of `mesh`.
std::pair<LatentMesh, EditStepReport> edit_step(const LatentMesh& mesh, std::span<const ViewSpec> batch,
                                                const NoisePredictor& oracle, const EditSettings& settings,
                                                int t, Rng& rng);

/// W×H 4-neighbour grid split into 5 horizontal bands of rows.
LatentMesh make_banded_grid(int width, int height, const Vec& init_code);

/// Subdivided icosahedron split into 5 bands by height.
LatentMesh make_icosphere(int subdivisions, const Vec& init_code);

/// The 12-vertex, 30-edge icosahedron graph (single region).
LatentMesh make_icosahedron(const Vec& init_code);

}  // namespace sdse
