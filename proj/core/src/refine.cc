#include "kfdaseg/refine.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kfdaseg/error.h"
#include "kfdaseg/random.h"

namespace kfdaseg {

std::vector<int> VoxelCategories::overlap() const {
  std::vector<int> out(overlap_minus);
  out.insert(out.end(), overlap_plus.begin(), overlap_plus.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> VoxelCategories::outliers() const {
  std::vector<int> out(outliers_minus);
  out.insert(out.end(), outliers_plus.begin(), outliers_plus.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t VoxelCategories::total() const {
  return prototypes_minus.size() + prototypes_plus.size() + overlap_minus.size() + overlap_plus.size() +
         outliers_minus.size() + outliers_plus.size();
}

VoxelCategories categorize(std::span<const double> projections, std::span<const int> init_side,
                           const CategorizeOptions& opts) {
  if (projections.size() != init_side.size()) {
    throw ValidationError("categorize: projections and labels differ in length");
  }
  // Projected mean and std of each initial class.
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  std::size_t cnt[2] = {0, 0};
  for (std::size_t i = 0; i < projections.size(); ++i) {
    if (init_side[i] != -1 && init_side[i] != 1) throw ValidationError("categorize: labels must be -1 or +1");
    const int c = init_side[i] > 0 ? 1 : 0;
    sum[c] += projections[i];
    ++cnt[c];
  }
  double mean[2], sd[2];
  for (int c = 0; c < 2; ++c) mean[c] = cnt[c] > 0 ? sum[c] / static_cast<double>(cnt[c]) : 0.0;
  for (std::size_t i = 0; i < projections.size(); ++i) {
    const int c = init_side[i] > 0 ? 1 : 0;
    sq[c] += (projections[i] - mean[c]) * (projections[i] - mean[c]);
  }
  for (int c = 0; c < 2; ++c) sd[c] = cnt[c] > 0 ? std::sqrt(sq[c] / static_cast<double>(cnt[c])) : 0.0;
  const std::size_t total = cnt[0] + cnt[1];
  const double pooled = total > 0 ? std::sqrt((sq[0] + sq[1]) / static_cast<double>(total)) : 0.0;
  const double band = opts.tau_band * pooled;

  VoxelCategories out;
  for (std::size_t i = 0; i < projections.size(); ++i) {
    const int idx = static_cast<int>(i);
    const double p = projections[i];
    const bool plus = init_side[i] > 0;
    const bool agrees = plus ? p >= 0.0 : p < 0.0;
    if (agrees) {
      (plus ? out.prototypes_plus : out.prototypes_minus).push_back(idx);
      continue;
    }
    const int c = plus ? 1 : 0;
    const bool outlier = std::abs(p) > band && std::abs(p - mean[c]) > opts.tau_outlier * sd[c];
    if (outlier) {
      (plus ? out.outliers_plus : out.outliers_minus).push_back(idx);
    } else {
      (plus ? out.overlap_plus : out.overlap_minus).push_back(idx);
    }
  }
  return out;
}

namespace {

void class_moments(const Eigen::MatrixXd& x, Eigen::VectorXd* mean, Eigen::MatrixXd* inv_cov) {
  if (x.rows() == 0) throw ValidationError("Mahalanobis: class has no prototypes");
  const Eigen::Index d = x.cols();
  *mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean->transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(x.rows());
  const double eps = 1e-6 * cov.trace() / static_cast<double>(d) + 1e-12;
  cov += eps * Eigen::MatrixXd::Identity(d, d);
  *inv_cov = cov.ldlt().solve(Eigen::MatrixXd::Identity(d, d));
}

}  // namespace

MahalanobisModel MahalanobisModel::fit(const Eigen::MatrixXd& minus, const Eigen::MatrixXd& plus) {
  MahalanobisModel m;
  class_moments(minus, &m.mean_minus, &m.inv_cov_minus);
  class_moments(plus, &m.mean_plus, &m.inv_cov_plus);
  return m;
}

double MahalanobisModel::distance2(int side, const Eigen::VectorXd& x) const {
  const Eigen::VectorXd d = x - (side < 0 ? mean_minus : mean_plus);
  return d.dot((side < 0 ? inv_cov_minus : inv_cov_plus) * d);
}

int MahalanobisModel::classify(const Eigen::VectorXd& x, int fallback) const {
  const double dm = distance2(-1, x), dp = distance2(1, x);
  if (dm < dp) return -1;
  if (dp < dm) return 1;
  return fallback;
}

std::vector<int> classify_outliers_mahalanobis(const Eigen::MatrixXd& outliers, std::span<const int> fallback,
                                               const Eigen::MatrixXd& prototypes_minus,
                                               const Eigen::MatrixXd& prototypes_plus) {
  if (static_cast<std::size_t>(outliers.rows()) != fallback.size()) {
    throw ValidationError("classify_outliers_mahalanobis: fallback labels do not match outliers");
  }
  std::vector<int> out(fallback.size());
  if (out.empty()) return out;
  const MahalanobisModel m = MahalanobisModel::fit(prototypes_minus, prototypes_plus);
  for (Eigen::Index i = 0; i < outliers.rows(); ++i) {
    out[i] = m.classify(outliers.row(i).transpose(), fallback[i]);
  }
  return out;
}

std::vector<std::vector<int>> classify_overlap_knn(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& prototypes,
                                                   std::span<const int> prototype_side, const KernelSpec& spec,
                                                   std::span<const int> k_grid) {
  const Eigen::Index np = prototypes.rows();
  if (static_cast<std::size_t>(np) != prototype_side.size()) {
    throw ValidationError("classify_overlap_knn: prototype labels do not match prototypes");
  }
  if (np == 0 && queries.rows() > 0) throw ValidationError("classify_overlap_knn: no prototypes");
  int kmax = 0;
  for (int k : k_grid) {
    if (k < 1) throw ValidationError("classify_overlap_knn: k must be >= 1");
    kmax = std::max(kmax, k);
  }
  kmax = static_cast<int>(std::min<Eigen::Index>(kmax, np));

  std::vector<std::vector<int>> out(k_grid.size(), std::vector<int>(queries.rows(), 0));
  if (queries.rows() == 0) return out;
  const Eigen::VectorXd kpp = kernel_diagonal(spec, prototypes);
  const Eigen::VectorXd kqq = kernel_diagonal(spec, queries);

  constexpr Eigen::Index kChunk = 512;
  std::vector<int> order(np);
  std::vector<double> dist(np);
  for (Eigen::Index start = 0; start < queries.rows(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, queries.rows() - start);
    const Eigen::MatrixXd kqp = kernel_matrix(spec, queries.middleRows(start, len), prototypes);
    for (Eigen::Index q = 0; q < len; ++q) {
      for (Eigen::Index p = 0; p < np; ++p) dist[p] = kqq[start + q] - 2.0 * kqp(q, p) + kpp[p];
      std::iota(order.begin(), order.end(), 0);
      auto closer = [&](int a, int b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
      std::partial_sort(order.begin(), order.begin() + kmax, order.end(), closer);
      for (std::size_t g = 0; g < k_grid.size(); ++g) {
        int k = std::min(k_grid[g], kmax);
        if (k % 2 == 0 && k > 1) --k;  // odd vote count
        int vote = 0;
        for (int n = 0; n < k; ++n) vote += prototype_side[order[n]];
        out[g][start + q] = vote > 0 ? 1 : (vote < 0 ? -1 : prototype_side[order[0]]);
      }
    }
  }
  return out;
}

std::vector<int> subsample(std::span<const int> pool, std::size_t cap, std::uint64_t seed) {
  std::vector<int> v(pool.begin(), pool.end());
  if (v.size() <= cap) return v;
  Rng rng(seed);
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(v.size() - i));
    std::swap(v[i], v[j]);
  }
  v.resize(cap);
  std::sort(v.begin(), v.end());
  return v;
}

namespace {

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, std::span<const int> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

}  // namespace

DecisionResult ssim_guided_decision(const DecisionInput& in) {
  if (in.features == nullptr || in.categories == nullptr || !in.score) {
    throw ValidationError("ssim_guided_decision: incomplete input");
  }
  const Eigen::MatrixXd& x = *in.features;
  const VoxelCategories& cat = *in.categories;
  if (static_cast<std::size_t>(x.rows()) != in.init_side.size()) {
    throw ValidationError("ssim_guided_decision: features and labels differ in length");
  }
  DecisionResult r;
  std::vector<int> mahal(in.init_side.begin(), in.init_side.end());

  const std::vector<int> outliers = cat.outliers();
  if (!outliers.empty()) {
    std::vector<int> fallback(outliers.size());
    for (std::size_t i = 0; i < outliers.size(); ++i) fallback[i] = in.init_side[outliers[i]];
    const std::vector<int> lab = classify_outliers_mahalanobis(
        rows_of(x, outliers), fallback, rows_of(x, cat.prototypes_minus), rows_of(x, cat.prototypes_plus));
    for (std::size_t i = 0; i < outliers.size(); ++i) mahal[outliers[i]] = lab[i];
  }
  r.mssim_mahalanobis = in.score(mahal);
  r.labels = mahal;
  r.mssim = r.mssim_mahalanobis;

  const std::vector<int> overlap = cat.overlap();
  if (overlap.empty() || in.k_grid.empty()) return r;

  const std::vector<int> pm = subsample(cat.prototypes_minus, in.max_prototypes, derive_seed(in.seed, 1));
  const std::vector<int> pp = subsample(cat.prototypes_plus, in.max_prototypes, derive_seed(in.seed, 2));
  std::vector<int> protos(pm);
  protos.insert(protos.end(), pp.begin(), pp.end());
  std::vector<int> side(pm.size(), -1);
  side.insert(side.end(), pp.size(), 1);
  const auto votes = classify_overlap_knn(rows_of(x, overlap), rows_of(x, protos), side, in.kernel, in.k_grid);

  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> best_labels;
  for (std::size_t g = 0; g < in.k_grid.size(); ++g) {
    std::vector<int> lab = mahal;
    for (std::size_t i = 0; i < overlap.size(); ++i) lab[overlap[i]] = votes[g][i];
    const double s = in.score(lab);
    r.mssim_knn.push_back(s);
    if (s > best) {
      best = s;
      r.best_k = in.k_grid[g];
      best_labels = std::move(lab);
    }
  }
  if (best > r.mssim_mahalanobis) {
    r.labels = std::move(best_labels);
    r.mssim = best;
    r.used_knn = true;
  }
  return r;
}

}  // namespace kfdaseg
