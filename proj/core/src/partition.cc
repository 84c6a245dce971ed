#include "kfdaseg/partition.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include <json.hpp>

#include "kfdaseg/error.h"

namespace kfdaseg {
namespace {

constexpr int kOtsuBins = 256;
constexpr double kInf = std::numeric_limits<double>::infinity();

double xlogx_ratio(std::size_t num, std::size_t den) {
  if (num == 0) return 0.0;
  const double p = static_cast<double>(num) / static_cast<double>(den);
  return p * std::log(p);
}

template <typename F>
void for_each_masked(const MultiChannelVolume& vol, const Box& box, F&& f) {
  const Dims& d = vol.dims();
  for (int k = box.lo[2]; k <= box.hi[2]; ++k) {
    for (int j = box.lo[1]; j <= box.hi[1]; ++j) {
      std::size_t v = d.index(box.lo[0], j, k);
      for (int i = box.lo[0]; i <= box.hi[0]; ++i, ++v) {
        if (vol.masked(v)) f(i, j, k, v);
      }
    }
  }
}

std::vector<double> masked_values(const MultiChannelVolume& vol, const Box& box, int channel) {
  std::vector<double> values;
  for_each_masked(vol, box, [&](int, int, int, std::size_t v) {
    values.push_back(vol.value(v, channel));
  });
  return values;
}

double median_inplace(std::vector<double>& x) {
  const std::size_t mid = x.size() / 2;
  std::nth_element(x.begin(), x.begin() + mid, x.end());
  double m = x[mid];
  if (x.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(x.begin(), x.begin() + mid));
  }
  return m;
}

Box mask_bounding_box(const MultiChannelVolume& vol) {
  Box b{{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(),
         std::numeric_limits<int>::max()},
        {-1, -1, -1}};
  for_each_masked(vol, Box::whole(vol.dims()), [&](int i, int j, int k, std::size_t) {
    b.lo = {std::min(b.lo[0], i), std::min(b.lo[1], j), std::min(b.lo[2], k)};
    b.hi = {std::max(b.hi[0], i), std::max(b.hi[1], j), std::max(b.hi[2], k)};
  });
  return b;
}

}  // namespace

double Histogram2::entropy() const {
  if (total == 0) return 0.0;
  return -(xlogx_ratio(n1, total) + xlogx_ratio(n2, total));
}

std::optional<double> otsu_threshold(std::span<const double> values) {
  if (values.size() < 2) return std::nullopt;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn;
  const double range = *mx - lo;
  if (!(range > 0.0)) return std::nullopt;

  std::array<double, kOtsuBins> count{};
  std::array<double, kOtsuBins> sum{};
  for (double x : values) {
    const int b = std::min(kOtsuBins - 1, static_cast<int>((x - lo) / range * kOtsuBins));
    count[b] += 1.0;
    sum[b] += x;
  }
  const double n = static_cast<double>(values.size());
  const double total_sum = std::accumulate(sum.begin(), sum.end(), 0.0);

  double w0 = 0.0, s0 = 0.0;
  double best = -1.0;
  int best_cut = 1;
  for (int c = 1; c < kOtsuBins; ++c) {
    w0 += count[c - 1];
    s0 += sum[c - 1];
    const double w1 = n - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    const double mu0 = s0 / w0;
    const double mu1 = (total_sum - s0) / w1;
    const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {
      best = between;
      best_cut = c;
    }
  }
  // Cut points c and c + 1 give the same split iff bin c is empty.
  int gap_end = best_cut;
  while (gap_end + 1 < kOtsuBins && count[gap_end] == 0.0) ++gap_end;
  const double mid = 0.5 * (best_cut + gap_end);
  return lo + mid * range / kOtsuBins;
}

Histogram2 histogram_2bin(const MultiChannelVolume& vol, const Box& box, int channel) {
  const std::vector<double> values = masked_values(vol, box, channel);
  Histogram2 h;
  h.total = values.size();
  const std::optional<double> t = otsu_threshold(values);
  if (!t) {
    h.degenerate = true;
    h.threshold = values.empty() ? 0.0 : values.front();
    h.n1 = 0;
    h.n2 = h.total;
    return h;
  }
  h.degenerate = false;
  h.threshold = *t;
  h.n1 = static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [&](double x) { return x < *t; }));
  h.n2 = h.total - h.n1;
  return h;
}

double mutual_information(const Histogram2& h, const SlabClustering& c) {
  const std::size_t n = c.cluster_sizes[0] + c.cluster_sizes[1];
  if (h.total != n || h.n1 + h.n2 != h.total) {
    throw ValidationError("mutual_information: histogram total does not match cluster sizes");
  }
  for (int j = 0; j < 2; ++j) {
    if (c.joint[0][j] + c.joint[1][j] != c.cluster_sizes[j]) {
      throw ValidationError("mutual_information: joint counts do not sum to cluster size");
    }
  }
  if (c.joint[0][0] + c.joint[0][1] != h.n1 || c.joint[1][0] + c.joint[1][1] != h.n2) {
    throw ValidationError("mutual_information: joint counts do not sum to bin counts");
  }
  if (h.degenerate || n == 0) return 0.0;

  const double total = static_cast<double>(n);
  double mi = h.entropy();
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 2; ++i) {
      const std::size_t nij = c.joint[i][j];
      if (nij == 0) continue;
      mi += static_cast<double>(nij) / total *
            std::log(static_cast<double>(nij) / static_cast<double>(c.cluster_sizes[j]));
    }
  }
  // Clamp rounding noise; the exact value lies in [0, H(X)].
  return std::clamp(mi, 0.0, h.entropy());
}

std::optional<CutResult> best_cut(const MultiChannelVolume& vol, const Box& box,
                                  const PartitionConfig& config) {
  const Histogram2 h = histogram_2bin(vol, box, config.reference_channel);

  // Per-slice bin counts along each axis.
  std::array<std::vector<std::array<std::size_t, 2>>, 3> slices;
  for (int a = 0; a < 3; ++a) slices[a].assign(std::max(0, box.extent(a)), {0, 0});
  for_each_masked(vol, box, [&](int i, int j, int k, std::size_t v) {
    const int b = h.degenerate ? 1 : h.bin_of(vol.value(v, config.reference_channel));
    slices[0][i - box.lo[0]][b]++;
    slices[1][j - box.lo[1]][b]++;
    slices[2][k - box.lo[2]][b]++;
  });

  std::optional<CutResult> best;
  for (int a = 0; a < 3; ++a) {
    const int len = box.extent(a);
    if (len < 2 * config.min_slab) continue;
    std::array<std::size_t, 2> left{0, 0};
    for (int s = 0; s < len - config.min_slab; ++s) {
      left[0] += slices[a][s][0];
      left[1] += slices[a][s][1];
      if (s + 1 < config.min_slab) continue;
      SlabClustering c;
      c.axis = static_cast<Axis>(a);
      c.cut_index = box.lo[a] + s;
      c.joint[0][0] = left[0];
      c.joint[1][0] = left[1];
      c.joint[0][1] = h.n1 - left[0];
      c.joint[1][1] = h.n2 - left[1];
      if (h.degenerate) {
        // Everything sits in bin 1; keep the marginals consistent.
        c.joint[0][0] = c.joint[0][1] = 0;
      }
      c.cluster_sizes = {c.joint[0][0] + c.joint[1][0], c.joint[0][1] + c.joint[1][1]};
      const double mi = mutual_information(h, c);
      if (!best || mi > best->mi) best = CutResult{c, h, mi};
    }
  }
  return best;
}

double mutual_information_ratio(std::span<const InfoTerm> terms) {
  double n = 0.0;
  for (const InfoTerm& t : terms) n += static_cast<double>(t.voxels);
  if (n <= 0.0) return 0.0;
  double mi = 0.0, h = 0.0;
  for (const InfoTerm& t : terms) {
    const double w = static_cast<double>(t.voxels) / n;
    mi += w * t.mi;
    h += w * t.entropy;
  }
  return h > 0.0 ? mi / h : 0.0;
}

double total_mir(const PartitionTree& tree, int level) {
  if (tree.nodes.empty()) throw ValidationError("total_mir: empty tree");
  const double n = static_cast<double>(tree.total_voxels);
  if (n <= 0.0) return 0.0;
  double mi = 0.0, h = 0.0;
  for (const PartitionNode& node : tree.nodes) {
    if (!node.is_split()) continue;
    const double w = static_cast<double>(node.voxel_count) / n;
    h += w * node.histogram.entropy();
    if (node.level < level) mi += w * node.mi;
  }
  return h > 0.0 ? std::min(1.0, mi / h) : 0.0;
}

double estimate_noise_sigma(const MultiChannelVolume& vol, const Box& box, int channel) {
  const Dims& d = vol.dims();
  std::vector<double> lap;
  for_each_masked(vol, box, [&](int i, int j, int k, std::size_t v) {
    if (i == box.lo[0] || i == box.hi[0] || j == box.lo[1] || j == box.hi[1] ||
        k == box.lo[2] || k == box.hi[2]) {
      return;
    }
    const std::size_t sx = 1, sy = static_cast<std::size_t>(d.nx),
                      sz = static_cast<std::size_t>(d.nx) * d.ny;
    const std::size_t nb[6] = {v - sx, v + sx, v - sy, v + sy, v - sz, v + sz};
    double s = -6.0 * vol.value(v, channel);
    for (std::size_t u : nb) {
      if (!vol.masked(u)) return;
      s += vol.value(u, channel);
    }
    lap.push_back(s);
  });
  if (lap.empty()) return 0.0;
  const double med = median_inplace(lap);
  for (double& x : lap) x = std::abs(x - med);
  const double mad = median_inplace(lap);
  // Var(Laplacian) = (6 + 36) sigma^2 for i.i.d. noise.
  return 1.482602218505602 * mad / std::sqrt(42.0);
}

double snr(const MultiChannelVolume& vol, const Box& box, int channel) {
  double sum = 0.0;
  std::size_t n = 0;
  for_each_masked(vol, box, [&](int, int, int, std::size_t v) {
    sum += vol.value(v, channel);
    ++n;
  });
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  const double sigma = estimate_noise_sigma(vol, box, channel);
  if (!(sigma > 0.0)) return kInf;
  return (sum / static_cast<double>(n)) / sigma;
}

std::vector<double> normalize_snr_curve(std::span<const double> snr_values,
                                        std::span<const double> mir) {
  std::vector<double> out(snr_values.begin(), snr_values.end());
  if (mir.empty()) return out;
  const auto [mir_lo, mir_hi] = std::minmax_element(mir.begin(), mir.end());
  double lo = kInf, hi = -kInf;
  for (double s : snr_values) {
    if (!std::isfinite(s)) continue;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  for (double& s : out) {
    if (!std::isfinite(s)) continue;
    const double t = hi > lo ? (s - lo) / (hi - lo) : 1.0;
    s = *mir_lo + t * (*mir_hi - *mir_lo);
  }
  return out;
}

std::optional<double> curve_intercept(std::span<const double> counts, std::span<const double> mir,
                                      std::span<const double> snr_normalized) {
  std::optional<double> prev_x, prev_d;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (!std::isfinite(snr_normalized[k])) continue;
    const double d = mir[k] - snr_normalized[k];
    if (d >= 0.0) {
      if (!prev_x) return counts[k];
      return *prev_x + (counts[k] - *prev_x) * (-*prev_d) / (d - *prev_d);
    }
    prev_x = counts[k];
    prev_d = d;
  }
  return std::nullopt;
}

PartitionTree partition(const MultiChannelVolume& vol, const PartitionConfig& config) {
  if (vol.masked_count() == 0) throw ValidationError("partition: empty mask");
  if (config.min_slab < 1 || config.overlap < 0 || config.overlap % 2 != 0) {
    throw ValidationError("partition: min_slab must be >= 1 and overlap even");
  }
  const int ch = config.reference_channel;
  PartitionTree tree;
  tree.dims = vol.dims();
  tree.root = mask_bounding_box(vol);
  tree.total_voxels = vol.masked_count();

  auto add_node = [&](const Box& b, int level, int parent) {
    PartitionNode node;
    node.bounds = b;
    node.level = level;
    node.parent = parent;
    node.histogram = histogram_2bin(vol, b, ch);
    node.voxel_count = node.histogram.total;
    node.snr = snr(vol, b, ch);
    tree.nodes.push_back(node);
    return static_cast<int>(tree.nodes.size()) - 1;
  };

  std::vector<std::vector<int>> frontier;
  frontier.push_back({add_node(tree.root, 0, -1)});

  for (int level = 1; level <= config.max_depth; ++level) {
    std::vector<int> next;
    bool any_split = false;
    for (int id : frontier.back()) {
      std::optional<CutResult> cut;
      if (tree.nodes[id].voxel_count > 0) cut = best_cut(vol, tree.nodes[id].bounds, config);
      if (!cut) {
        next.push_back(id);
        continue;
      }
      any_split = true;
      const Box parent = tree.nodes[id].bounds;
      const int a = static_cast<int>(cut->clustering.axis);
      Box first = parent, second = parent;
      first.hi[a] = cut->clustering.cut_index;
      second.lo[a] = cut->clustering.cut_index + 1;
      const int c0 = add_node(first, level, id);
      const int c1 = add_node(second, level, id);
      PartitionNode& node = tree.nodes[id];
      node.cut = cut->clustering;
      node.mi = cut->mi;
      node.children = {c0, c1};
      next.push_back(c0);
      next.push_back(c1);
    }
    if (!any_split) break;
    frontier.push_back(std::move(next));

    LevelStats stats;
    stats.level = level;
    stats.count = frontier.back().size();
    double sum = 0.0;
    int n = 0;
    for (int id : frontier.back()) {
      if (std::isfinite(tree.nodes[id].snr)) {
        sum += tree.nodes[id].snr;
        ++n;
      }
    }
    stats.snr = n > 0 ? sum / n : kInf;
    tree.levels.push_back(stats);
  }

  for (LevelStats& s : tree.levels) s.mir = total_mir(tree, s.level);

  std::vector<double> counts, mir, snr_values;
  for (const LevelStats& s : tree.levels) {
    counts.push_back(static_cast<double>(s.count));
    mir.push_back(s.mir);
    snr_values.push_back(s.snr);
  }
  const std::vector<double> snr_norm = normalize_snr_curve(snr_values, mir);
  for (std::size_t k = 0; k < tree.levels.size(); ++k) tree.levels[k].snr_normalized = snr_norm[k];

  // Choose the leaf set.
  std::vector<int> chosen;
  if (tree.levels.empty()) {
    tree.intercept = 1.0;
    chosen = frontier.front();
  } else {
    bool all_infinite = std::none_of(snr_norm.begin(), snr_norm.end(),
                                     [](double s) { return std::isfinite(s); });
    std::optional<double> x;
    if (all_infinite) {
      x = counts.front();
    } else {
      x = curve_intercept(counts, mir, snr_norm);
    }
    if (!x) {
      tree.warnings.push_back("MIR and SNR curves do not intersect within " +
                              std::to_string(tree.levels.size()) +
                              " levels; using the deepest level");
      x = counts.back();
    }
    tree.intercept = *x;
    const auto target = static_cast<std::size_t>(
        std::clamp(std::llround(*x), static_cast<long long>(counts.front()),
                   static_cast<long long>(counts.back())));

    // frontier[k] holds the nodes of level k; counts[k - 1] == frontier[k].size().
    std::size_t k = 1;
    while (k < frontier.size() && frontier[k].size() < target) ++k;
    if (frontier[k].size() == target) {
      chosen = frontier[k];
    } else {
      // Split only the level k-1 parents whose children rank highest by size.
      const std::vector<int>& parents = frontier[k - 1];
      const std::size_t extra = target - parents.size();
      std::vector<int> children;
      for (int p : parents) {
        if (tree.nodes[p].is_split() && tree.nodes[p].level == static_cast<int>(k) - 1) {
          children.push_back(tree.nodes[p].children[0]);
          children.push_back(tree.nodes[p].children[1]);
        }
      }
      std::stable_sort(children.begin(), children.end(), [&](int a, int b) {
        return tree.nodes[a].voxel_count > tree.nodes[b].voxel_count;
      });
      std::vector<int> split_parents;
      for (int c : children) {
        if (split_parents.size() == extra) break;
        const int p = tree.nodes[c].parent;
        if (std::find(split_parents.begin(), split_parents.end(), p) == split_parents.end()) {
          split_parents.push_back(p);
        }
      }
      for (int p : parents) {
        if (std::find(split_parents.begin(), split_parents.end(), p) != split_parents.end()) {
          chosen.push_back(tree.nodes[p].children[0]);
          chosen.push_back(tree.nodes[p].children[1]);
        } else {
          chosen.push_back(p);
        }
      }
    }
  }
  tree.selected_count = chosen.size();

  const int half = config.overlap / 2;
  for (int id : chosen) {
    const PartitionNode& node = tree.nodes[id];
    Subdomain s;
    s.node = id;
    s.level = node.level;
    s.core = node.bounds;
    s.padded = node.bounds;
    for (int a = 0; a < 3; ++a) {
      if (s.core.lo[a] > tree.root.lo[a]) s.padded.lo[a] = std::max(tree.root.lo[a], s.core.lo[a] - half);
      if (s.core.hi[a] < tree.root.hi[a]) s.padded.hi[a] = std::min(tree.root.hi[a], s.core.hi[a] + half);
    }
    s.voxel_count = node.voxel_count;
    s.mi = node.mi;
    s.snr = node.snr;
    tree.leaves.push_back(s);
  }
  std::sort(tree.leaves.begin(), tree.leaves.end(), [](const Subdomain& a, const Subdomain& b) {
    return std::tie(a.core.lo[2], a.core.lo[1], a.core.lo[0]) <
           std::tie(b.core.lo[2], b.core.lo[1], b.core.lo[0]);
  });
  for (std::size_t i = 0; i < tree.leaves.size(); ++i) tree.leaves[i].id = static_cast<int>(i);
  return tree;
}

double cnr(const MultiChannelVolume& vol, const Box& box, const LabelVolume& labels,
           ClassPair pair, int channel) {
  double sa = 0.0, sb = 0.0;
  std::size_t na = 0, nb = 0;
  for_each_masked(vol, box, [&](int, int, int, std::size_t v) {
    const std::uint8_t l = labels.at(v);
    bool in_a = false, in_b = false;
    if (pair == ClassPair::kCsfVsTissue) {
      in_a = l == kCsf;
      in_b = l == kGm || l == kWm;
    } else {
      in_a = l == kGm;
      in_b = l == kWm;
    }
    if (in_a) {
      sa += vol.value(v, channel);
      ++na;
    } else if (in_b) {
      sb += vol.value(v, channel);
      ++nb;
    }
  });
  if (na == 0 || nb == 0) return std::numeric_limits<double>::quiet_NaN();
  const double sigma = estimate_noise_sigma(vol, box, channel);
  const double diff = std::abs(sa / na - sb / nb);
  if (!(sigma > 0.0)) return diff > 0.0 ? kInf : 0.0;
  return diff / sigma;
}

namespace {

nlohmann::json box_json(const Box& b) {
  return {{"lo", {b.lo[0], b.lo[1], b.lo[2]}}, {"hi", {b.hi[0], b.hi[1], b.hi[2]}}};
}

Box box_from(const nlohmann::json& j) {
  Box b;
  for (int a = 0; a < 3; ++a) {
    b.lo[a] = j.at("lo").at(a).get<int>();
    b.hi[a] = j.at("hi").at(a).get<int>();
  }
  return b;
}

nlohmann::json finite_or_null(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

double number_or_inf(const nlohmann::json& j) { return j.is_null() ? kInf : j.get<double>(); }

}  // namespace

std::string partition_to_json(const PartitionTree& tree) {
  nlohmann::json j;
  j["dims"] = {tree.dims.nx, tree.dims.ny, tree.dims.nz};
  j["root"] = box_json(tree.root);
  j["total_voxels"] = tree.total_voxels;
  j["intercept"] = tree.intercept;
  j["selected_count"] = tree.selected_count;
  j["levels"] = nlohmann::json::array();
  for (const LevelStats& s : tree.levels) {
    j["levels"].push_back({{"level", s.level},
                           {"count", s.count},
                           {"mir", s.mir},
                           {"snr", finite_or_null(s.snr)},
                           {"snr_normalized", finite_or_null(s.snr_normalized)}});
  }
  j["leaves"] = nlohmann::json::array();
  for (const Subdomain& s : tree.leaves) {
    j["leaves"].push_back({{"id", s.id},
                           {"level", s.level},
                           {"core", box_json(s.core)},
                           {"padded", box_json(s.padded)},
                           {"voxels", s.voxel_count},
                           {"mi", s.mi},
                           {"snr", finite_or_null(s.snr)}});
  }
  j["warnings"] = tree.warnings;
  return j.dump(2);
}

PartitionTree partition_from_json(const std::string& text) {
  PartitionTree tree;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    tree.dims = Dims{j.at("dims").at(0).get<int>(), j.at("dims").at(1).get<int>(),
                     j.at("dims").at(2).get<int>()};
    tree.root = box_from(j.at("root"));
    tree.total_voxels = j.at("total_voxels").get<std::size_t>();
    tree.intercept = j.at("intercept").get<double>();
    tree.selected_count = j.at("selected_count").get<std::size_t>();
    for (const auto& l : j.at("levels")) {
      LevelStats s;
      s.level = l.at("level").get<int>();
      s.count = l.at("count").get<std::size_t>();
      s.mir = l.at("mir").get<double>();
      s.snr = number_or_inf(l.at("snr"));
      s.snr_normalized = number_or_inf(l.at("snr_normalized"));
      tree.levels.push_back(s);
    }
    for (const auto& l : j.at("leaves")) {
      Subdomain s;
      s.id = l.at("id").get<int>();
      s.level = l.at("level").get<int>();
      s.core = box_from(l.at("core"));
      s.padded = box_from(l.at("padded"));
      s.voxel_count = l.at("voxels").get<std::size_t>();
      s.mi = l.at("mi").get<double>();
      s.snr = number_or_inf(l.at("snr"));
      tree.leaves.push_back(s);
    }
    tree.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed partition JSON: ") + e.what());
  }
  return tree;
}

}  // namespace kfdaseg
