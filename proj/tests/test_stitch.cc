#include <cmath>

#include <gtest/gtest.h>

#include "kfdaseg/error.h"
#include "kfdaseg/random.h"
#include "kfdaseg/stitch.h"

using namespace kfdaseg;

namespace {

// Smooth-ish random observation pair: a few label runs, then flips in b.
StitchProblem random_problem(Rng& rng, int rows, int cols, double flip) {
  StitchProblem p;
  p.orientation = rng.uniform() < 0.5 ? Orientation::kHorizontal : Orientation::kVertical;
  p.rows = rows;
  p.cols = cols;
  const int n = rows * cols;
  p.obs_a.resize(n);
  std::uint8_t cur = static_cast<std::uint8_t>(1 + rng.below(3));
  for (int i = 0; i < n; ++i) {
    if (rng.uniform() < 0.3) cur = static_cast<std::uint8_t>(1 + rng.below(4));
    p.obs_a[i] = cur;
  }
  p.obs_b = p.obs_a;
  for (int i = 0; i < n; ++i) {
    if (rng.uniform() < flip) p.obs_b[i] = static_cast<std::uint8_t>(1 + rng.below(4));
  }
  return p;
}

}  // namespace

TEST(Potentials, NodeTablesFollowAgreement) {
  StitchProblem p;
  p.rows = 1;
  p.cols = 3;
  p.obs_a = {kGm, kGm, kWm};
  p.obs_b = {kCsf, kGm, kWm};
  const PotentialTables pt = build_potentials(p);
  // Node 0 is on the boundary and disagrees (GM vs CSF).
  EXPECT_DOUBLE_EQ(pt.phi[0][0], 0.75 * 0.5);
  EXPECT_DOUBLE_EQ(pt.phi[0][1], 0.75 * 0.5);
  EXPECT_DOUBLE_EQ(pt.phi[0][2], 0.75 * 0.01);
  EXPECT_DOUBLE_EQ(pt.phi[0][3], 0.75 * 0.01);
  // Node 1 is interior and both say GM.
  EXPECT_DOUBLE_EQ(pt.phi[1][1], 0.25 * 1.0);
  EXPECT_DOUBLE_EQ(pt.phi[1][0], 0.25 * 0.01);
  // Node 2 is on the far boundary.
  EXPECT_DOUBLE_EQ(pt.phi[2][2], 0.75);
  ASSERT_EQ(pt.edges.size(), 2u);
}

TEST(Potentials, VerticalBoundaryIsTopAndBottomRows) {
  StitchProblem p;
  p.orientation = Orientation::kVertical;
  p.rows = 3;
  p.cols = 2;
  p.obs_a.assign(6, kWm);
  p.obs_b.assign(6, kWm);
  const PotentialTables pt = build_potentials(p);
  EXPECT_DOUBLE_EQ(pt.phi[0][2], 0.75);
  EXPECT_DOUBLE_EQ(pt.phi[2][2], 0.25);
  EXPECT_DOUBLE_EQ(pt.phi[5][2], 0.75);
  EXPECT_EQ(pt.edges.size(), 7u);
}

TEST(Potentials, UnobservedPairCostsLogHundred) {
  StitchProblem p;
  p.rows = 1;
  p.cols = 2;
  p.obs_a = {kCsf, kGm};
  p.obs_b = {kCsf, kGm};
  const PotentialTables pt = build_potentials(p);
  const auto& psi = pt.edges[0].psi;
  EXPECT_NEAR(std::log(psi[0][1]) - std::log(psi[2][3]), std::log(100.0), 1e-12);
  EXPECT_DOUBLE_EQ(psi[0][1], 1.0);
}

TEST(Potentials, InvalidProblemsThrow) {
  StitchProblem p;
  p.rows = 1;
  p.cols = 2;
  p.obs_a = {kCsf, 0};
  p.obs_b = {kCsf, kGm};
  EXPECT_THROW(build_potentials(p), ValidationError);
  p.obs_a = {kCsf};
  EXPECT_THROW(build_potentials(p), ValidationError);
  AnnealSchedule s;
  s.rho = 1.0;
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(LogPosterior, MatchesDirectSum) {
  Rng rng(1);
  const StitchProblem p = random_problem(rng, 3, 4, 0.3);
  const PotentialTables pt = build_potentials(p);
  std::vector<std::uint8_t> x(12);
  for (auto& v : x) v = static_cast<std::uint8_t>(1 + rng.below(4));
  // Node and edge terms straight from the observations.
  double s = 0;
  auto agree = [](bool a, bool b) { return a && b ? 1.0 : (a || b ? 0.5 : 0.01); };
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      const int n = r * 4 + c;
      const double w = p.is_boundary(r, c) ? 0.75 : 0.25;
      s += std::log(w * agree(p.obs_a[n] == x[n], p.obs_b[n] == x[n]));
      for (int m : {c + 1 < 4 ? n + 1 : -1, r + 1 < 3 ? n + 4 : -1}) {
        if (m < 0) continue;
        s += std::log(agree(p.obs_a[n] == x[n] && p.obs_a[m] == x[m], p.obs_b[n] == x[n] && p.obs_b[m] == x[m]));
      }
    }
  }
  EXPECT_NEAR(log_posterior(x, pt), s, 1e-12);
}

TEST(Composite, HalfFromEachObservation) {
  StitchProblem p;
  p.rows = 2;
  p.cols = 4;
  p.obs_a.assign(8, kCsf);
  p.obs_b.assign(8, kWm);
  EXPECT_EQ(composite_initialization(p), (std::vector<std::uint8_t>{1, 1, 3, 3, 1, 1, 3, 3}));
  p.orientation = Orientation::kVertical;
  EXPECT_EQ(composite_initialization(p), (std::vector<std::uint8_t>{1, 1, 1, 1, 3, 3, 3, 3}));
}

TEST(Anneal, AgreeingObservationsAreReturnedUnchanged) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    StitchProblem p = random_problem(rng, 3, 4, 0.0);
    AnnealSchedule s;
    s.seed = t;
    const AnnealResult r = simulated_anneal(p, s);
    EXPECT_EQ(r.labels, p.obs_a);
  }
}

TEST(Anneal, IncumbentNeverDecreasesAndReachesTheMap) {
  Rng rng(3);
  int hits = 0;
  const int trials = 60;
  for (int t = 0; t < trials; ++t) {
    const int rows = 2 + static_cast<int>(rng.below(2));
    const int cols = 2 + static_cast<int>(rng.below(3));
    const StitchProblem p = random_problem(rng, rows, cols, 0.4);
    const PotentialTables pt = build_potentials(p);
    AnnealSchedule s;
    s.seed = derive_seed(3, t);
    const AnnealResult r = simulated_anneal(p, pt, s);
    EXPECT_GE(r.log_posterior, r.initial_log_posterior);
    for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_GE(r.trace[i], r.trace[i - 1]);
    EXPECT_NEAR(log_posterior(r.labels, pt), r.log_posterior, 1e-9);
    const ExactMap best = brute_force_map(p, pt);
    EXPECT_LE(r.log_posterior, best.log_posterior + 1e-9);
    hits += r.log_posterior >= best.log_posterior - 1e-9;
  }
  EXPECT_GE(hits, static_cast<int>(0.95 * trials));
}

TEST(Anneal, SameSeedSameResult) {
  Rng rng(4);
  const StitchProblem p = random_problem(rng, 5, 9, 0.4);
  AnnealSchedule s;
  s.seed = 77;
  const AnnealResult a = simulated_anneal(p, s), b = simulated_anneal(p, s);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.trace, b.trace);
}

TEST(ExactMap, AgreesWithBruteForce) {
  Rng rng(5);
  for (int t = 0; t < 40; ++t) {
    const int rows = 1 + static_cast<int>(rng.below(3));
    const int cols = 1 + static_cast<int>(rng.below(12 / rows));
    const StitchProblem p = random_problem(rng, rows, cols, 0.5);
    const PotentialTables pt = build_potentials(p);
    const ExactMap dp = exact_map(p, pt), bf = brute_force_map(p, pt);
    EXPECT_NEAR(dp.log_posterior, bf.log_posterior, 1e-9);
    EXPECT_NEAR(log_posterior(dp.labels, pt), dp.log_posterior, 1e-9);
  }
  StitchProblem wide;
  wide.rows = 6;
  wide.cols = 6;
  wide.obs_a.assign(36, kGm);
  wide.obs_b.assign(36, kGm);
  EXPECT_THROW(exact_map(wide, build_potentials(wide)), ValidationError);
}

TEST(StitchVolume, AgreeingFragmentsReproduceTheLabels) {
  const Dims d{12, 5, 3};
  Rng rng(6);
  std::vector<std::uint8_t> truth(d.voxel_count()), mask(d.voxel_count(), 1);
  for (std::size_t v = 0; v < truth.size(); ++v) truth[v] = static_cast<std::uint8_t>(1 + rng.below(3));
  mask[d.index(0, 0, 0)] = 0;
  truth[d.index(0, 0, 0)] = kBg;
  auto frag = [&](Box core, Box padded) {
    StitchFragment f;
    f.core = core;
    f.labels.box = padded;
    for (int k = padded.lo[2]; k <= padded.hi[2]; ++k) {
      for (int j = padded.lo[1]; j <= padded.hi[1]; ++j) {
        for (int i = padded.lo[0]; i <= padded.hi[0]; ++i) f.labels.labels.push_back(truth[d.index(i, j, k)]);
      }
    }
    return f;
  };
  const std::vector<StitchFragment> frags{frag(Box{{0, 0, 0}, {5, 4, 2}}, Box{{0, 0, 0}, {7, 4, 2}}),
                                          frag(Box{{6, 0, 0}, {11, 4, 2}}, Box{{4, 0, 0}, {11, 4, 2}})};
  StitchOptions opts;
  const StitchResult r = stitch_volume(frags, d, mask, opts);
  EXPECT_EQ(std::vector<std::uint8_t>(r.labels.labels().begin(), r.labels.labels().end()), truth);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].disagreements, 0u);
  EXPECT_EQ(r.pairs[0].changed, 0u);
}

TEST(StitchVolume, WorkerCountDoesNotChangeTheResult) {
  const Dims d{16, 16, 4};
  Rng rng(7);
  std::vector<std::uint8_t> mask(d.voxel_count(), 1);
  std::vector<StitchFragment> frags;
  for (int by = 0; by < 2; ++by) {
    for (int bx = 0; bx < 2; ++bx) {
      StitchFragment f;
      f.core = Box{{8 * bx, 8 * by, 0}, {8 * bx + 7, 8 * by + 7, 3}};
      f.labels.box = Box{{bx ? 6 : 0, by ? 6 : 0, 0}, {bx ? 15 : 9, by ? 15 : 9, 3}};
      const std::size_t n = f.labels.box.voxel_count();
      for (std::size_t i = 0; i < n; ++i) f.labels.labels.push_back(static_cast<std::uint8_t>(1 + rng.below(3)));
      frags.push_back(f);
    }
  }
  StitchOptions one, four;
  four.workers = 4;
  const StitchResult a = stitch_volume(frags, d, mask, one), b = stitch_volume(frags, d, mask, four);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.pairs.size(), 4u);
}

TEST(StitchSlice, TwoDimensionalForm) {
  StitchFragment left, right;
  left.core = Box{{0, 0, 0}, {3, 2, 0}};
  left.labels.box = Box{{0, 0, 0}, {5, 2, 0}};
  left.labels.labels.assign(18, kGm);
  right.core = Box{{4, 0, 0}, {7, 2, 0}};
  right.labels.box = Box{{2, 0, 0}, {7, 2, 0}};
  right.labels.labels.assign(18, kGm);
  const std::vector<std::uint8_t> mask(24, 1);
  const auto out = stitch_slice({left, right}, 8, 3, mask, StitchOptions{});
  EXPECT_EQ(out, std::vector<std::uint8_t>(24, kGm));
}
