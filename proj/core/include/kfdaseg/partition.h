#ifndef KFDASEG_PARTITION_H_
#define KFDASEG_PARTITION_H_

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kfdaseg/volume.h"

namespace kfdaseg {

// Axes are numbered x = sagittal (0), y = coronal (1), z = axial (2).
enum class Axis : int { kSagittal = 0, kCoronal = 1, kAxial = 2 };

// Two-bin intensity histogram of the masked voxels of a box. Bin 0 holds
// values strictly below the threshold.
struct Histogram2 {
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  std::size_t total = 0;
  double threshold = 0.0;
  // Fewer than two distinct intensities: only one bin is populated.
  bool degenerate = true;

  int bin_of(double value) const { return value < threshold ? 0 : 1; }
  // Shannon entropy in nats.
  double entropy() const;
};

// Split of a box into two slabs along `axis`: slices [lo, cut_index] form
// cluster 0 and (cut_index, hi] form cluster 1.
struct SlabClustering {
  Axis axis = Axis::kSagittal;
  int cut_index = 0;
  std::array<std::size_t, 2> cluster_sizes{0, 0};
  // joint[i][j] = masked voxels of histogram bin i inside cluster j.
  std::array<std::array<std::size_t, 2>, 2> joint{};
};

struct CutResult {
  SlabClustering clustering;
  Histogram2 histogram;
  double mi = 0.0;
};

struct PartitionConfig {
  int max_depth = 7;
  int min_slab = 3;
  int overlap = 4;
  int reference_channel = 0;
};

struct PartitionNode {
  Box bounds;
  int level = 0;
  int parent = -1;
  std::array<int, 2> children{-1, -1};
  std::size_t voxel_count = 0;
  Histogram2 histogram;
  std::optional<SlabClustering> cut;
  double mi = 0.0;
  double snr = 0.0;

  bool is_split() const { return children[0] >= 0; }
};

struct LevelStats {
  int level = 0;
  std::size_t count = 0;
  double mir = 0.0;
  double snr = 0.0;             // mean subdomain SNR; +inf when no finite value exists
  double snr_normalized = 0.0;  // rescaled onto the MIR range
};

// A final subdomain. `core` boxes tile the root box; `padded` extends every
// internal face by overlap / 2 slices.
struct Subdomain {
  int id = 0;
  int node = -1;
  int level = 0;
  Box core;
  Box padded;
  std::size_t voxel_count = 0;
  double mi = 0.0;
  double snr = 0.0;
};

struct PartitionTree {
  Dims dims;
  Box root;
  std::size_t total_voxels = 0;
  std::vector<PartitionNode> nodes;
  std::vector<LevelStats> levels;  // levels[0] is level 1
  double intercept = 0.0;          // subdomain count where MIR meets normalized SNR
  std::size_t selected_count = 0;
  std::vector<Subdomain> leaves;
  std::vector<std::string> warnings;
};

// Otsu threshold on a 256-bin histogram spanning [min, max] of `values`. When
// several consecutive cut points give the same split, the threshold is placed
// in the middle of the empty gap. Returns nullopt for fewer than 2 distinct values.
std::optional<double> otsu_threshold(std::span<const double> values);

Histogram2 histogram_2bin(const MultiChannelVolume& vol, const Box& box, int channel);

// Mutual information (nats) between the histogram bins and a two-slab
// clustering. Throws ValidationError when the marginals are inconsistent.
double mutual_information(const Histogram2& h, const SlabClustering& c);

// Highest-MI planar cut of `box`; nullopt when no axis admits two slabs of
// at least config.min_slab slices. Ties go to the lower axis, then the lower cut.
std::optional<CutResult> best_cut(const MultiChannelVolume& vol, const Box& box,
                                  const PartitionConfig& config = {});

struct InfoTerm {
  std::size_t voxels = 0;
  double mi = 0.0;
  double entropy = 0.0;
};

// Sum_i (N_i/N) MI_i divided by Sum_i (N_i/N) H_i; 0 when the entropy sum is 0.
double mutual_information_ratio(std::span<const InfoTerm> terms);

// Weighted MI of every node split above `level` (>= 1), divided by the
// weighted entropy of every split node in the tree. The denominator is the
// same for all levels, so the curve is non-decreasing; at the deepest level
// it equals mutual_information_ratio over all splits.
double total_mir(const PartitionTree& tree, int level);

// Robust noise standard deviation: MAD of the 6-neighbour Laplacian over masked
// voxels whose neighbours are all masked and inside the box, scaled to a Gaussian sigma.
double estimate_noise_sigma(const MultiChannelVolume& vol, const Box& box, int channel);

// Mean masked intensity over the noise sigma; +inf when the sigma is 0.
double snr(const MultiChannelVolume& vol, const Box& box, int channel);

// Min-max rescales the finite entries of `snr` onto [min(mir), max(mir)].
// Non-finite entries are left as they are.
std::vector<double> normalize_snr_curve(std::span<const double> snr, std::span<const double> mir);

// Abscissa where the increasing MIR curve first reaches the normalized SNR
// curve, by linear interpolation between bracketing points. Points whose SNR
// is not finite are ignored. nullopt when the curves never meet.
std::optional<double> curve_intercept(std::span<const double> counts, std::span<const double> mir,
                                      std::span<const double> snr_normalized);

PartitionTree partition(const MultiChannelVolume& vol, const PartitionConfig& config = {});

enum class ClassPair { kCsfVsTissue, kGmVsWm };

// |mean_A - mean_B| / sigma_noise on `channel` over the masked voxels of `box`.
// NaN when a class is absent; +inf when the noise estimate is 0.
double cnr(const MultiChannelVolume& vol, const Box& box, const LabelVolume& labels,
           ClassPair pair, int channel = 0);

std::string partition_to_json(const PartitionTree& tree);
PartitionTree partition_from_json(const std::string& text);

}  // namespace kfdaseg

#endif  // KFDASEG_PARTITION_H_
