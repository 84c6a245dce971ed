#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "kfdaseg/error.h"
#include "kfdaseg/kfda.h"
#include "kfdaseg/random.h"
#include "test_support.h"

using namespace kfdaseg;
using kfdaseg::testing::random_volume;

namespace {

// Random training subset of a region, balanced in sign.
TrainingSet draw_training(const RegionSamples& r, int l, Rng& rng) {
  TrainingSet ts;
  std::vector<int> pick;
  for (int i = 0; i < static_cast<int>(r.size()); ++i) pick.push_back(i);
  for (int i = 0; i < l; ++i) std::swap(pick[i], pick[i + rng.below(pick.size() - i)]);
  ts.x.resize(l, r.features.cols());
  for (int i = 0; i < l; ++i) {
    ts.x.row(i) = r.features.row(pick[i]);
    ts.y.push_back(i % 2 == 0 ? -1 : 1);
    ts.region_index.push_back(pick[i]);
  }
  return ts;
}

// -sum of squared differences over pairs at Chebyshev distance 1.
double neighbour_sum_oracle(const std::vector<std::array<int, 3>>& c, const Eigen::VectorXd& v) {
  double s = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      int m = 0;
      for (int a = 0; a < 3; ++a) m = std::max(m, std::abs(c[i][a] - c[j][a]));
      if (m == 1) s += (v[i] - v[j]) * (v[i] - v[j]);
    }
  }
  return -s;
}

struct Problem {
  RegionSamples region;
  NeighborGraph graph;
  TrainingSet ts;
  Eigen::MatrixXd cross;
  KfdaMatrices mats;
};

Problem make_problem(std::uint64_t seed, Dims d, int l, const KernelSpec& spec) {
  Problem p;
  Rng rng(seed);
  const MultiChannelVolume vol = random_volume(d, 3, seed, 0.85);
  p.region = gather_region(vol, Box::whole(d));
  p.graph = build_neighbor_graph(p.region.coords);
  p.ts = draw_training(p.region, std::min<int>(l, static_cast<int>(p.region.size())), rng);
  p.cross = kernel_matrix(spec, p.ts.x, p.region.features);
  p.mats = build_matrices(p.ts, spec, &p.cross, &p.graph);
  return p;
}

}  // namespace

TEST(NeighborGraph, SingleEdgeLaplacian) {
  const NeighborGraph g = build_neighbor_graph({{0, 0, 0}, {0, 0, 1}});
  const Eigen::MatrixXd h(g.h);
  Eigen::MatrixXd expect(2, 2);
  expect << -1, 1, 1, -1;
  EXPECT_EQ(h, expect);
  ASSERT_EQ(g.edges.size(), 1u);
}

TEST(NeighborGraph, FullCubeDegreesAndEdgeCount) {
  std::vector<std::array<int, 3>> c;
  for (int k = 0; k < 3; ++k) {
    for (int j = 0; j < 3; ++j) {
      for (int i = 0; i < 3; ++i) c.push_back({i, j, k});
    }
  }
  const NeighborGraph g = build_neighbor_graph(c);
  // 3 face directions * 18 + 6 edge directions * 12 + 4 corner directions * 8.
  EXPECT_EQ(g.edges.size(), 158u);
  const Eigen::MatrixXd h(g.h);
  EXPECT_EQ(h(13, 13), -26.0);
  EXPECT_EQ(h(0, 0), -7.0);
  EXPECT_NEAR(h.rowwise().sum().cwiseAbs().maxCoeff(), 0.0, 0.0);
  EXPECT_EQ(h, h.transpose());
}

TEST(NeighborGraph, DuplicateCoordinateThrows) {
  EXPECT_THROW(build_neighbor_graph({{1, 1, 1}, {1, 1, 1}}), ValidationError);
}

TEST(NeighborGraph, QuadraticFormMatchesPairOracle) {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const Dims d{2 + static_cast<int>(rng.below(7)), 2 + static_cast<int>(rng.below(7)),
                 2 + static_cast<int>(rng.below(7))};
    const RegionSamples r = gather_region(random_volume(d, 1, 40 + t, 0.7), Box::whole(d));
    const NeighborGraph g = build_neighbor_graph(r.coords);
    Eigen::VectorXd v(r.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    const double oracle = neighbour_sum_oracle(r.coords, v);
    EXPECT_NEAR(edge_quadratic(g, v), oracle, 1e-10);
    EXPECT_NEAR(v.dot(g.h * v), oracle, 1e-10);
  }
}

TEST(KfdaMatrices, TwoSamplesLinearKernelHaveZeroScatter) {
  TrainingSet ts;
  ts.x.resize(2, 2);
  ts.x << 0.2, 0.4, 0.9, 0.1;
  ts.y = {-1, 1};
  const KfdaMatrices m = build_matrices(ts, KernelSpec::linear());
  EXPECT_EQ(m.n.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(m.beta, 1e-6 * (0.2 * 0.2 + 0.4 * 0.4 + 0.9 * 0.9 + 0.1 * 0.1) / 2, 1e-18);
  EXPECT_EQ(m.penalty.cwiseAbs().maxCoeff(), 0.0);
  // m- and m+ are the kernel columns of the single samples.
  EXPECT_NEAR(m.m_minus[1], 0.2 * 0.9 + 0.4 * 0.1, 1e-15);
  EXPECT_NEAR(m.m_plus[0], 0.2 * 0.9 + 0.4 * 0.1, 1e-15);
}

TEST(KfdaMatrices, ScatterMatchesDefinition) {
  Problem p = make_problem(5, Dims{5, 4, 3}, 12, KernelSpec::rbf(0.5));
  const Eigen::Index l = static_cast<Eigen::Index>(p.ts.size());
  Eigen::MatrixXd n = Eigen::MatrixXd::Zero(l, l);
  Eigen::VectorXd mm = Eigen::VectorXd::Zero(l), mp = Eigen::VectorXd::Zero(l);
  for (Eigen::Index j = 0; j < l; ++j) {
    (p.ts.y[j] < 0 ? mm : mp) += p.mats.k.col(j);
  }
  mm /= static_cast<double>(p.ts.count(-1));
  mp /= static_cast<double>(p.ts.count(1));
  for (int label : {-1, 1}) {
    Eigen::MatrixXd kc(l, 0);
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < l; ++j) {
      if (p.ts.y[j] == label) cols.push_back(j);
    }
    const double lc = static_cast<double>(cols.size());
    Eigen::MatrixXd k(l, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) k.col(c) = p.mats.k.col(cols[c]);
    const Eigen::MatrixXd centering = Eigen::MatrixXd::Identity(cols.size(), cols.size()) -
                                      Eigen::MatrixXd::Constant(cols.size(), cols.size(), 1.0 / lc);
    n += k * centering * k.transpose();
  }
  EXPECT_LT((p.mats.n - n).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::MatrixXd m = (mm - mp) * (mm - mp).transpose();
  EXPECT_LT((p.mats.m - m).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(KfdaMatrices, PenaltyEqualsNegativeSquaredProjectionDifferences) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const Dims d{2 + static_cast<int>(rng.below(7)), 2 + static_cast<int>(rng.below(7)),
                 2 + static_cast<int>(rng.below(7))};
    Problem p = make_problem(100 + t, d, 16, t % 2 ? KernelSpec::rbf(0.5) : KernelSpec::sigmoid(8.0, -0.0005));
    for (int s = 0; s < 5; ++s) {
      Eigen::VectorXd alpha(p.ts.size());
      for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha[i] = rng.normal();
      alpha /= alpha.norm();
      const Eigen::VectorXd v = p.cross.transpose() * alpha;
      EXPECT_NEAR(alpha.dot(p.mats.penalty * alpha), neighbour_sum_oracle(p.region.coords, v), 1e-8);
    }
  }
}

TEST(SolveAlpha, MatchesDenseGeneralizedEigensolver) {
  Rng rng(7);
  for (int t = 0; t < 30; ++t) {
    const int l = 2 + static_cast<int>(rng.below(7));
    Problem p = make_problem(200 + t, Dims{4, 4, 3}, l, KernelSpec::rbf(0.5));
    const double pscale = p.mats.m.norm() / std::max(p.mats.penalty.norm(), 1e-300);
    for (double lam : {0.0, 0.01 * pscale, 0.1 * pscale}) {
      const KfdaModel model = solve_alpha(p.mats, p.ts, KernelSpec::rbf(0.5), lam);
      const Eigen::MatrixXd b = p.mats.n + p.mats.beta * Eigen::MatrixXd::Identity(l, l);
      const Eigen::MatrixXd s = p.mats.m + lam * p.mats.penalty;
      Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(s, b);
      const double top = ges.eigenvalues()[l - 1];
      EXPECT_NEAR(model.gamma, top, 1e-8 * std::max(1.0, std::abs(top)));
      EXPECT_NEAR(model.alpha.dot(b * model.alpha), 1.0, 1e-8);
      EXPECT_LE(model.residual, 1e-8);
      const double gap = top - ges.eigenvalues()[l - 2];
      if (gap > 1e-6 * std::max(1.0, std::abs(top))) {
        const Eigen::VectorXd v = ges.eigenvectors().col(l - 1);
        const double err = std::min((model.alpha - v).norm(), (model.alpha + v).norm());
        EXPECT_LT(err, 1e-6 * std::max(1.0, v.norm())) << "l " << l << " lambda " << lam;
      }
    }
  }
}

TEST(SolveAlpha, LinearKernelRecoversFisherDirection) {
  Rng rng(8);
  const int per = 120;
  TrainingSet ts;
  ts.x.resize(2 * per, 2);
  for (int i = 0; i < 2 * per; ++i) {
    const double z1 = rng.normal(), z2 = rng.normal();
    const bool plus = i >= per;
    ts.x(i, 0) = (plus ? 2.0 : 0.0) + z1;
    ts.x(i, 1) = (plus ? 1.0 : 0.0) + 0.6 * z1 + 0.5 * z2;
    ts.y.push_back(plus ? 1 : -1);
  }
  const KfdaMatrices m = build_matrices(ts, KernelSpec::linear());
  const KfdaModel model = solve_alpha(m, ts, KernelSpec::linear(), 0.0);
  const Eigen::Vector2d w = ts.x.transpose() * model.alpha;

  Eigen::Vector2d mu[2] = {Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
  for (int i = 0; i < 2 * per; ++i) mu[i >= per] += ts.x.row(i).transpose() / per;
  Eigen::Matrix2d sw = Eigen::Matrix2d::Zero();
  for (int i = 0; i < 2 * per; ++i) {
    const Eigen::Vector2d d = ts.x.row(i).transpose() - mu[i >= per];
    sw += d * d.transpose();
  }
  const Eigen::Vector2d fisher = sw.inverse() * (mu[1] - mu[0]);
  const double cosang = w.dot(fisher) / (w.norm() * fisher.norm());
  EXPECT_LT(std::acos(std::min(1.0, cosang)) * 180.0 / std::numbers::pi, 1.0);
}

TEST(SolveAlpha, RejectsNegativeLambda) {
  Problem p = make_problem(9, Dims{3, 3, 3}, 6, KernelSpec::rbf(0.5));
  EXPECT_THROW(solve_alpha(p.mats, p.ts, KernelSpec::rbf(0.5), -1.0), ValidationError);
}

TEST(Project, MidpointBiasAndDirectSum) {
  Problem p = make_problem(10, Dims{6, 5, 4}, 24, KernelSpec::rbf(0.5));
  const KfdaModel model = solve_alpha(p.mats, p.ts, KernelSpec::rbf(0.5), 0.0);
  const Eigen::VectorXd tp = project(model, p.ts, p.ts.x);
  double sm = 0, sp = 0;
  for (std::size_t i = 0; i < p.ts.size(); ++i) (p.ts.y[i] < 0 ? sm : sp) += tp[i];
  const double mean_minus = sm / p.ts.count(-1), mean_plus = sp / p.ts.count(1);
  EXPECT_NEAR(mean_minus + mean_plus, 0.0, 1e-10);
  EXPECT_GT(mean_plus, mean_minus);

  const Eigen::VectorXd all = project(model, p.ts, p.region.features);
  for (Eigen::Index q = 0; q < p.region.features.rows(); ++q) {
    double s = model.b;
    for (std::size_t m = 0; m < p.ts.size(); ++m) {
      const std::vector<double> xm(p.ts.x.row(m).begin(), p.ts.x.row(m).end());
      const std::vector<double> xq(p.region.features.row(q).begin(), p.region.features.row(q).end());
      s += model.alpha[m] * kernel_eval(model.kernel, xm, xq);
    }
    EXPECT_NEAR(all[q], s, 1e-12);
  }
  EXPECT_NEAR(project(model, p.ts, Eigen::VectorXd(p.region.features.row(3).transpose())), all[3], 1e-15);
}

TEST(SolveAlpha, RoughnessIsNonIncreasingInLambda) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Problem p = make_problem(seed, Dims{6, 6, 5}, 30, KernelSpec::rbf(0.5));
    const double pscale = p.mats.m.norm() / p.mats.penalty.norm();
    double prev = std::numeric_limits<double>::infinity();
    for (double f : {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
      const KfdaModel model = solve_alpha(p.mats, p.ts, KernelSpec::rbf(0.5), f * pscale);
      const double rough = -model.alpha.dot(p.mats.penalty * model.alpha);
      EXPECT_GE(rough, 0.0);
      EXPECT_LE(rough, prev * (1.0 + 1e-9)) << "seed " << seed << " factor " << f;
      prev = rough;
    }
  }
}

TEST(TrainingSet, ValidationCatchesBadLabels) {
  TrainingSet ts;
  ts.x = Eigen::MatrixXd::Zero(3, 2);
  ts.y = {-1, -1, -1};
  EXPECT_THROW(ts.validate(), ValidationError);
  ts.y = {-1, 2, 1};
  EXPECT_THROW(ts.validate(), ValidationError);
  ts.y = {-1, 1};
  EXPECT_THROW(ts.validate(), ValidationError);
}
