#include "kfdaseg/kmeans.h"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "kfdaseg/error.h"
#include "kfdaseg/random.h"

namespace kfdaseg {
namespace {

double dist2(const float* a, const std::vector<double>& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += (a[i] - c[i]) * (a[i] - c[i]);
  return s;
}

struct Clustering {
  std::vector<std::vector<double>> centroids;
  std::vector<int> assign;
  bool ok = false;
};

Clustering run_once(const std::vector<const float*>& pts, int nc, int k, int max_iter, std::uint64_t seed) {
  Clustering cl;
  Rng rng(seed);
  const std::size_t n = pts.size();
  // k-means++ seeding.
  {
    const float* p = pts[rng.below(n)];
    cl.centroids.emplace_back(p, p + nc);
  }
  std::vector<double> d2(n);
  for (int m = 1; m < k; ++m) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : cl.centroids) best = std::min(best, dist2(pts[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        u -= d2[pick];
        if (u < 0.0) break;
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    std::vector<double> c(nc);
    for (int ch = 0; ch < nc; ++ch) c[ch] = pts[pick][ch];
    cl.centroids.push_back(std::move(c));
  }

  cl.assign.assign(n, -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int m = 0; m < k; ++m) {
        const double v = dist2(pts[i], cl.centroids[m]);
        if (v < bd) {
          bd = v;
          best = m;
        }
      }
      if (cl.assign[i] != best) {
        cl.assign[i] = best;
        changed = true;
      }
    }
    std::vector<std::vector<double>> sum(k, std::vector<double>(nc, 0.0));
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++cnt[cl.assign[i]];
      for (int ch = 0; ch < nc; ++ch) sum[cl.assign[i]][ch] += pts[i][ch];
    }
    for (int m = 0; m < k; ++m) {
      if (cnt[m] == 0) return cl;  // empty cluster
      for (int ch = 0; ch < nc; ++ch) cl.centroids[m][ch] = sum[m][ch] / static_cast<double>(cnt[m]);
    }
    if (!changed) break;
  }
  cl.ok = true;
  return cl;
}

}  // namespace

LabelVolume kmeans_init(const MultiChannelVolume& vol, const KmeansOptions& opts) {
  if (opts.n_classes < 1 || opts.n_classes > 3) throw ValidationError("kmeans_init: n_classes must be 1..3");
  const int nc = vol.channels();
  std::vector<const float*> pts;
  std::set<std::vector<float>> distinct;
  for (std::size_t v = 0; v < vol.voxel_count(); ++v) {
    if (!vol.masked(v)) continue;
    pts.push_back(vol.voxel(v).data());
    if (distinct.size() < static_cast<std::size_t>(opts.n_classes)) {
      distinct.insert(std::vector<float>(vol.voxel(v).begin(), vol.voxel(v).end()));
    }
  }
  if (distinct.size() < static_cast<std::size_t>(opts.n_classes)) {
    throw ValidationError("kmeans_init: fewer distinct intensity vectors than classes");
  }
  Clustering cl;
  for (int attempt = 0; attempt <= opts.max_reseeds; ++attempt) {
    cl = run_once(pts, nc, opts.n_classes, opts.max_iterations, splitmix64(opts.seed + attempt));
    if (cl.ok) break;
  }
  if (!cl.ok) throw ValidationError("kmeans_init: empty cluster after reseeding");

  std::vector<int> order(opts.n_classes);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return cl.centroids[a][0] < cl.centroids[b][0]; });
  std::vector<std::uint8_t> rank(opts.n_classes);
  for (int r = 0; r < opts.n_classes; ++r) rank[order[r]] = static_cast<std::uint8_t>(kCsf + r);

  LabelVolume out(vol.dims());
  std::size_t n = 0;
  for (std::size_t v = 0; v < vol.voxel_count(); ++v) {
    if (vol.masked(v)) out.set(v, rank[cl.assign[n++]]);
  }
  return out;
}

}  // namespace kfdaseg
