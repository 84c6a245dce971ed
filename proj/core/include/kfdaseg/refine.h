#ifndef KFDASEG_REFINE_H_
#define KFDASEG_REFINE_H_

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "kfdaseg/kernel.h"

namespace kfdaseg {

// Labels in this header are class sides: -1 for X-, +1 for X+.

struct CategorizeOptions {
  double tau_band = 1.0;     // overlap band half-width, in pooled projected std
  double tau_outlier = 2.5;  // outlier distance from own centroid, in class projected std
};

// Voxel indices split by how their projection relates to their initial side.
// A projection >= 0 is on the X+ side.
struct VoxelCategories {
  std::vector<int> prototypes_minus;
  std::vector<int> prototypes_plus;
  std::vector<int> overlap_minus;  // initially X-, projected on the X+ side
  std::vector<int> overlap_plus;   // initially X+, projected on the X- side
  std::vector<int> outliers_minus;
  std::vector<int> outliers_plus;

  std::vector<int> overlap() const;
  std::vector<int> outliers() const;
  std::size_t total() const;
};

// Disagreeing voxels within the band go to the overlap set; beyond the band,
// those farther than tau_outlier class std from their own class centroid are
// outliers and the rest join the overlap set.
VoxelCategories categorize(std::span<const double> projections, std::span<const int> init_side,
                           const CategorizeOptions& opts = {});

// Assigns every query row to the class with the smaller Mahalanobis distance
// to the prototype distribution; ties keep `fallback`. Each class covariance
// (population normalized) gets a ridge of 1e-6 * trace / d + 1e-12.
struct MahalanobisModel {
  Eigen::VectorXd mean_minus, mean_plus;
  Eigen::MatrixXd inv_cov_minus, inv_cov_plus;

  static MahalanobisModel fit(const Eigen::MatrixXd& minus, const Eigen::MatrixXd& plus);
  double distance2(int side, const Eigen::VectorXd& x) const;
  int classify(const Eigen::VectorXd& x, int fallback) const;
};

std::vector<int> classify_outliers_mahalanobis(const Eigen::MatrixXd& outliers, std::span<const int> fallback,
                                               const Eigen::MatrixXd& prototypes_minus,
                                               const Eigen::MatrixXd& prototypes_plus);

// Majority vote of the k nearest prototypes in feature space, with
// d^2(x,p) = K(x,x) - 2K(x,p) + K(p,p). Returns one label vector per k in
// `k_grid`. Distance ties go to the lower prototype index.
std::vector<std::vector<int>> classify_overlap_knn(const Eigen::MatrixXd& queries,
                                                   const Eigen::MatrixXd& prototypes,
                                                   std::span<const int> prototype_side,
                                                   const KernelSpec& spec, std::span<const int> k_grid);

struct DecisionResult {
  std::vector<int> labels;
  double mssim = 0.0;
  double mssim_mahalanobis = 0.0;
  std::vector<double> mssim_knn;  // one per k in the grid; empty when the overlap set is empty
  int best_k = 0;                 // 0 when KNN was not run
  bool used_knn = false;
};

struct DecisionInput {
  const Eigen::MatrixXd* features = nullptr;  // every voxel of the region
  std::span<const int> init_side;
  const VoxelCategories* categories = nullptr;
  KernelSpec kernel;
  std::span<const int> k_grid;
  std::function<double(std::span<const int>)> score;  // MSSIM of a labelling
  std::size_t max_prototypes = 2000;                    // per class, for KNN
  std::uint64_t seed = 0;
};

// Outliers by Mahalanobis distance, then the overlap set by KNN for every k,
// keeping whichever labelling scores the higher MSSIM (KNN only when strictly better).
DecisionResult ssim_guided_decision(const DecisionInput& in);

// Up to `cap` indices drawn without replacement from `pool`, sorted, deterministic in `seed`.
std::vector<int> subsample(std::span<const int> pool, std::size_t cap, std::uint64_t seed);

}  // namespace kfdaseg

#endif  // KFDASEG_REFINE_H_
