#ifndef KFDASEG_KFDA_H_
#define KFDASEG_KFDA_H_

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "kfdaseg/kernel.h"
#include "kfdaseg/volume.h"

namespace kfdaseg {

// Voxels of a region together with their intensity vectors. `coords` are
// grid coordinates; `features` has one row per voxel.
struct RegionSamples {
  std::vector<std::array<int, 3>> coords;
  Eigen::MatrixXd features;

  std::size_t size() const { return coords.size(); }
};

// Masked voxels of `box`, raster order (x fastest).
RegionSamples gather_region(const MultiChannelVolume& vol, const Box& box);

// 26-neighbour graph over the region voxels. Only voxels present in the
// region are connected, so the neighbourhood is truncated at the region faces.
struct NeighborGraph {
  std::vector<std::pair<int, int>> edges;  // i < j
  Eigen::SparseMatrix<double> h;           // 1 on edges, -degree on the diagonal
};

NeighborGraph build_neighbor_graph(const std::vector<std::array<int, 3>>& coords);

// -sum over edges of (v_i - v_j)^2, i.e. v^T H v.
double edge_quadratic(const NeighborGraph& g, const Eigen::VectorXd& v);

// Training samples with labels -1 (class X-) and +1 (class X+). `region_index`
// refers to rows of the RegionSamples the set was drawn from.
struct TrainingSet {
  Eigen::MatrixXd x;
  std::vector<int> y;
  std::vector<int> region_index;

  std::size_t size() const { return y.size(); }
  std::size_t count(int label) const;
  void validate() const;
};

struct KfdaMatrices {
  Eigen::MatrixXd k;        // l x l Gram matrix
  Eigen::VectorXd m_minus;  // (1/l1) sum_k K(x_j, x_k-)
  Eigen::VectorXd m_plus;
  Eigen::MatrixXd m;        // (m- - m+)(m- - m+)^T
  Eigen::MatrixXd n;        // within-class scatter in feature space
  Eigen::MatrixXd penalty;  // k_c H k_c^T
  double beta = 0.0;        // ridge added to n
};

// Builds the KFDA matrices. `cross` is the l x n kernel between training
// samples and every region voxel, and `graph` is the neighbour graph of the
// region. With no region (empty graph) the penalty is zero.
KfdaMatrices build_matrices(const TrainingSet& ts, const KernelSpec& spec,
                            const Eigen::MatrixXd* cross = nullptr,
                            const NeighborGraph* graph = nullptr);

// Default ridge: 1e-3 * trace(N) / l, floored at 1e-6 * |trace(K)| / l and
// 1e-9 so that N + beta I stays positive definite, and its inverse bounded
// relative to the kernel scale, when N vanishes.
double default_beta(const Eigen::MatrixXd& n, double kernel_trace = 0.0);

struct SolveOptions {
  double tolerance = 1e-10;       // relative eigenvalue change
  double residual_tolerance = 1e-9;  // relative to ||alpha||
  int max_iterations = 10000;
  // When power iteration does not converge, take the largest eigenpair of the
  // Cholesky-symmetrized problem from a dense self-adjoint solver instead.
  bool dense_fallback = true;
};

struct KfdaModel {
  KernelSpec kernel;
  Eigen::VectorXd alpha;
  double gamma = 0.0;
  double b = 0.0;
  double lambda = 0.0;
  double beta = 0.0;
  int iterations = 0;
  double residual = 0.0;
  bool dense = false;  // eigenpair came from the dense fallback
};

// Leading eigenpair of (N + beta I)^-1 (M + lambda P) by power iteration,
// scaled so that alpha^T (N + beta I) alpha = 1 and the X+ training samples
// project to the positive side. Throws NumericalError on non-convergence
// unless the dense fallback is enabled.
KfdaModel solve_alpha(const KfdaMatrices& mats, const TrainingSet& ts, const KernelSpec& spec,
                      double lambda, const SolveOptions& opts = {});

// (N + beta I)^-1 (M + lambda P), formed explicitly.
Eigen::MatrixXd kfda_operator(const KfdaMatrices& mats, double lambda);

// sum_m alpha_m K(x_m, q) + b for every row q of `queries`.
Eigen::VectorXd project(const KfdaModel& model, const TrainingSet& ts, const Eigen::MatrixXd& queries);
double project(const KfdaModel& model, const TrainingSet& ts, const Eigen::VectorXd& query);

// alpha^T M alpha / alpha^T (N + beta I) alpha.
double fisher_criterion(const KfdaMatrices& mats, const Eigen::VectorXd& alpha);

}  // namespace kfdaseg

#endif  // KFDASEG_KFDA_H_
