#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "kfdaseg/error.h"
#include "kfdaseg/random.h"
#include "kfdaseg/refine.h"

using namespace kfdaseg;

namespace {

Eigen::MatrixXd gaussian_cloud(Rng& rng, int n, const Eigen::Vector3d& mean, const Eigen::Matrix3d& chol) {
  Eigen::MatrixXd x(n, 3);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
    x.row(i) = (mean + chol * z).transpose();
  }
  return x;
}

// Majority of the k nearest rows by squared feature-space distance.
int knn_oracle(const Eigen::VectorXd& q, const Eigen::MatrixXd& protos, const std::vector<int>& side,
               const KernelSpec& spec, int k) {
  const std::vector<double> qv(q.data(), q.data() + q.size());
  std::vector<std::pair<double, int>> d;
  for (Eigen::Index p = 0; p < protos.rows(); ++p) {
    const Eigen::VectorXd r = protos.row(p).transpose();
    const std::vector<double> pv(r.data(), r.data() + r.size());
    d.push_back({kernel_eval(spec, qv, qv) - 2 * kernel_eval(spec, qv, pv) + kernel_eval(spec, pv, pv),
                 static_cast<int>(p)});
  }
  std::sort(d.begin(), d.end());
  int vote = 0;
  for (int i = 0; i < k; ++i) vote += side[d[i].second];
  return vote > 0 ? 1 : -1;
}

}  // namespace

TEST(Categorize, AgreeingProjectionsGiveOnlyPrototypes) {
  Rng rng(1);
  std::vector<double> p;
  std::vector<int> side;
  for (int i = 0; i < 200; ++i) {
    const int s = i % 2 ? 1 : -1;
    side.push_back(s);
    p.push_back(s * (0.01 + rng.uniform()));
  }
  const VoxelCategories c = categorize(p, side);
  EXPECT_TRUE(c.overlap().empty());
  EXPECT_TRUE(c.outliers().empty());
  EXPECT_EQ(c.prototypes_minus.size() + c.prototypes_plus.size(), 200u);
  EXPECT_EQ(c.total(), 200u);
}

TEST(Categorize, PlantedFlipsInsideTheBandLandInOverlap) {
  Rng rng(2);
  std::vector<double> p;
  std::vector<int> side;
  for (int i = 0; i < 400; ++i) {
    const int s = i < 200 ? -1 : 1;
    side.push_back(s);
    p.push_back(s * 2.0 + 0.5 * rng.normal());
  }
  // Move three voxels just across zero: inside the band of one pooled std.
  const std::vector<int> planted{17, 150, 333};
  for (int idx : planted) p[idx] = side[idx] < 0 ? 0.05 : -0.05;
  const VoxelCategories c = categorize(p, side, CategorizeOptions{1.0, 2.5});
  // Without the plants no voxel crosses zero at 4 std.
  EXPECT_EQ(c.overlap(), planted);
  EXPECT_TRUE(c.outliers().empty());
}

TEST(Categorize, FarCrossersAreOutliers) {
  std::vector<double> p;
  std::vector<int> side;
  for (int i = 0; i < 100; ++i) {
    side.push_back(i < 50 ? -1 : 1);
    p.push_back(i < 50 ? -1.0 - 0.01 * (i % 7) : 1.0 + 0.01 * (i % 7));
  }
  p[3] = 5.0;  // an X- voxel deep on the X+ side
  const VoxelCategories c = categorize(p, side);
  EXPECT_EQ(c.outliers_minus, std::vector<int>{3});
  EXPECT_TRUE(c.overlap().empty());
}

TEST(Categorize, RejectsBadInput) {
  const std::vector<double> p{0.1, 0.2};
  const std::vector<int> bad{1, 0}, short_side{1};
  EXPECT_THROW(categorize(p, bad), ValidationError);
  EXPECT_THROW(categorize(p, short_side), ValidationError);
}

TEST(Mahalanobis, IsotropicClassesReduceToNearestMean) {
  Rng rng(3);
  // Rows at mean +/- e_i: covariance exactly (1/3) I.
  auto cross = [](const Eigen::Vector3d& m) {
    Eigen::MatrixXd x(6, 3);
    for (int i = 0; i < 3; ++i) {
      x.row(2 * i) = m.transpose();
      x.row(2 * i + 1) = m.transpose();
      x(2 * i, i) += 1.0;
      x(2 * i + 1, i) -= 1.0;
    }
    return x;
  };
  const Eigen::Vector3d m0(0, 0, 0), m1(1.5, 0.5, -0.5);
  const MahalanobisModel model = MahalanobisModel::fit(cross(m0), cross(m1));
  for (int t = 0; t < 500; ++t) {
    const Eigen::Vector3d q(3 * rng.uniform() - 1, 3 * rng.uniform() - 1, 3 * rng.uniform() - 1);
    const double e0 = (q - m0).squaredNorm(), e1 = (q - m1).squaredNorm();
    if (std::abs(e0 - e1) < 1e-9) continue;
    EXPECT_EQ(model.classify(q, 0), e0 < e1 ? -1 : 1);
    EXPECT_NEAR(model.distance2(-1, q) / e0, model.distance2(1, q) / e1, 1e-9);
  }
}

TEST(Mahalanobis, AnisotropicMatchesQuadraticFormOracle) {
  Rng rng(4);
  Eigen::Matrix3d chol;
  chol << 1.0, 0, 0, 0.8, 0.3, 0, -0.2, 0.1, 0.05;
  const Eigen::MatrixXd minus = gaussian_cloud(rng, 300, Eigen::Vector3d(0, 0, 0), chol);
  const Eigen::MatrixXd plus = gaussian_cloud(rng, 300, Eigen::Vector3d(1, 1, 0), chol.transpose());
  const MahalanobisModel model = MahalanobisModel::fit(minus, plus);
  for (int side : {-1, 1}) {
    const Eigen::MatrixXd& x = side < 0 ? minus : plus;
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (Eigen::Index i = 0; i < x.rows(); ++i) mean += x.row(i).transpose();
    mean /= static_cast<double>(x.rows());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Eigen::Vector3d d = x.row(i).transpose() - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(x.rows());
    cov += (1e-6 * cov.trace() / 3.0 + 1e-12) * Eigen::Matrix3d::Identity();
    const Eigen::Matrix3d inv = cov.inverse();
    for (int t = 0; t < 50; ++t) {
      const Eigen::Vector3d q(rng.normal(), rng.normal(), rng.normal());
      const double oracle = (q - mean).dot(inv * (q - mean));
      EXPECT_NEAR(model.distance2(side, q), oracle, 1e-9 * oracle);
    }
  }
}

TEST(Mahalanobis, OutlierVectorUsesFallbackOnlyForTies) {
  Eigen::MatrixXd minus(2, 1), plus(2, 1);
  minus << -1, 1;
  plus << 3, 5;
  Eigen::MatrixXd q(3, 1);
  q << -0.5, 4.2, 2.0;  // the last one is equidistant
  const std::vector<int> fallback{1, -1, -1};
  EXPECT_EQ(classify_outliers_mahalanobis(q, fallback, minus, plus), (std::vector<int>{-1, 1, -1}));
  EXPECT_THROW(classify_outliers_mahalanobis(q, std::vector<int>{1}, minus, plus), ValidationError);
}

TEST(Knn, SingleNeighbourTakesItsLabel) {
  Eigen::MatrixXd protos(4, 2), q(2, 2);
  protos << 0, 0, 1, 0, 0, 1, 1, 1;
  const std::vector<int> side{-1, 1, 1, -1};
  q << 0.9, 0.05, 0.1, 0.1;
  const std::vector<int> k1{1};
  const auto out = classify_overlap_knn(q, protos, side, KernelSpec::rbf(0.5), k1);
  EXPECT_EQ(out[0], (std::vector<int>{1, -1}));
}

TEST(Knn, MatchesSortOracle) {
  Rng rng(5);
  Eigen::Matrix3d chol = 0.2 * Eigen::Matrix3d::Identity();
  const Eigen::MatrixXd a = gaussian_cloud(rng, 60, Eigen::Vector3d(0.3, 0.3, 0.3), chol);
  const Eigen::MatrixXd b = gaussian_cloud(rng, 60, Eigen::Vector3d(0.6, 0.5, 0.4), chol);
  Eigen::MatrixXd protos(120, 3);
  protos << a, b;
  std::vector<int> side(60, -1);
  side.insert(side.end(), 60, 1);
  const Eigen::MatrixXd q = gaussian_cloud(rng, 80, Eigen::Vector3d(0.45, 0.4, 0.35), chol);
  const std::vector<int> grid{1, 5, 9};
  for (const KernelSpec& spec : {KernelSpec::rbf(0.5), KernelSpec::sigmoid(8.0, -0.0005), KernelSpec::linear()}) {
    const auto out = classify_overlap_knn(q, protos, side, spec, grid);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      for (Eigen::Index i = 0; i < q.rows(); ++i) {
        EXPECT_EQ(out[g][i], knn_oracle(q.row(i).transpose(), protos, side, spec, grid[g]))
            << spec.describe() << " k " << grid[g];
      }
    }
  }
}

TEST(Knn, RbfOrderingEqualsEuclideanOrdering) {
  Rng rng(6);
  const Eigen::MatrixXd protos = gaussian_cloud(rng, 90, Eigen::Vector3d(0.5, 0.5, 0.5), 0.2 * Eigen::Matrix3d::Identity());
  std::vector<int> side(90);
  for (int i = 0; i < 90; ++i) side[i] = protos(i, 0) + 0.1 * rng.normal() > 0.5 ? 1 : -1;
  const Eigen::MatrixXd q = gaussian_cloud(rng, 100, Eigen::Vector3d(0.5, 0.5, 0.5), 0.2 * Eigen::Matrix3d::Identity());
  const std::vector<int> grid{1, 3, 5, 7, 9, 11};
  // The linear kernel's feature distance is the Euclidean one.
  EXPECT_EQ(classify_overlap_knn(q, protos, side, KernelSpec::rbf(0.5), grid),
            classify_overlap_knn(q, protos, side, KernelSpec::linear(), grid));
}

TEST(Knn, RejectsBadInput) {
  Eigen::MatrixXd protos(2, 1), q(1, 1);
  protos << 0, 1;
  q << 0.2;
  const std::vector<int> side{-1, 1};
  const std::vector<int> zero{0};
  EXPECT_THROW(classify_overlap_knn(q, protos, side, KernelSpec::rbf(1), zero), ValidationError);
  const std::vector<int> short_side{1};
  const std::vector<int> one{1};
  EXPECT_THROW(classify_overlap_knn(q, protos, short_side, KernelSpec::rbf(1), one), ValidationError);
}

TEST(Subsample, DeterministicSortedAndCapped) {
  std::vector<int> pool(1000);
  std::iota(pool.begin(), pool.end(), 0);
  const auto a = subsample(pool, 100, 9), b = subsample(pool, 100, 9), c = subsample(pool, 100, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  EXPECT_EQ(subsample(std::vector<int>{4, 2}, 5, 1), (std::vector<int>{4, 2}));
}

TEST(Decision, NothingToRefineKeepsInitialLabels) {
  Rng rng(7);
  Eigen::MatrixXd x(50, 3);
  std::vector<int> init(50);
  for (int i = 0; i < 50; ++i) {
    init[i] = i % 2 ? 1 : -1;
    for (int c = 0; c < 3; ++c) x(i, c) = rng.uniform();
  }
  VoxelCategories cat;
  for (int i = 0; i < 50; ++i) (init[i] < 0 ? cat.prototypes_minus : cat.prototypes_plus).push_back(i);
  int calls = 0;
  DecisionInput in;
  in.features = &x;
  in.init_side = init;
  in.categories = &cat;
  in.kernel = KernelSpec::rbf(0.5);
  const std::vector<int> grid{1, 3};
  in.k_grid = grid;
  in.score = [&](std::span<const int>) {
    ++calls;
    return 0.5;
  };
  const DecisionResult r = ssim_guided_decision(in);
  EXPECT_EQ(r.labels, init);
  EXPECT_FALSE(r.used_knn);
  EXPECT_TRUE(r.mssim_knn.empty());
  EXPECT_EQ(calls, 1);
}

TEST(Decision, KnnKeptOnlyWhenStrictlyBetter) {
  Rng rng(8);
  Eigen::MatrixXd x(40, 1);
  std::vector<int> init(40);
  VoxelCategories cat;
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = i < 20 ? 0.1 + 0.01 * rng.uniform() : 0.9 + 0.01 * rng.uniform();
    init[i] = i < 20 ? -1 : 1;
  }
  // Voxel 5 sits with X- features but is labelled X+.
  init[5] = 1;
  for (int i = 0; i < 40; ++i) {
    if (i == 5) continue;
    (init[i] < 0 ? cat.prototypes_minus : cat.prototypes_plus).push_back(i);
  }
  cat.overlap_plus = {5};
  DecisionInput in;
  in.features = &x;
  in.init_side = init;
  in.categories = &cat;
  in.kernel = KernelSpec::rbf(0.5);
  const std::vector<int> grid{1, 3, 5};
  in.k_grid = grid;
  // Rewards labelling voxel 5 as X-.
  in.score = [](std::span<const int> lab) { return lab[5] < 0 ? 0.9 : 0.8; };
  DecisionResult r = ssim_guided_decision(in);
  EXPECT_TRUE(r.used_knn);
  EXPECT_EQ(r.labels[5], -1);
  EXPECT_EQ(r.best_k, 1);
  EXPECT_EQ(r.mssim_knn.size(), 3u);

  in.score = [](std::span<const int>) { return 0.7; };
  r = ssim_guided_decision(in);
  EXPECT_FALSE(r.used_knn);
  EXPECT_EQ(r.labels, init);
}
