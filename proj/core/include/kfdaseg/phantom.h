#ifndef KFDASEG_PHANTOM_H_
#define KFDASEG_PHANTOM_H_

#include <array>
#include <cstdint>
#include <string>

#include "kfdaseg/volume.h"

namespace kfdaseg {

enum class PhantomGeometry {
  kShells,  // nested ellipsoids: CSF rim, folded GM shell, WM core, two ventricles
  kBlocks,  // 2x2x2 blocks, neighbouring blocks carry different classes; no background
};

struct PhantomSpec {
  Dims dims{64, 64, 64};
  // Per-class (CSF, GM, WM) mean intensity for the t1w, t2w and pdw channels.
  std::array<std::array<double, 3>, 3> class_means{{{0.15, 0.90, 0.75},
                                                    {0.50, 0.60, 0.65},
                                                    {0.80, 0.35, 0.50}}};
  double bias_amplitude = 0.10;  // multiplicative field 1 + A * smooth(x)
  double noise_sigma = 0.05;
  double pv_width = 1.0;         // boundary blur width in voxels; Gaussian sigma is half of it
  double fold_amplitude = 0.08;  // GM/WM interface folding, relative radius
  PhantomGeometry geometry = PhantomGeometry::kShells;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Phantom {
  MultiChannelVolume volume;
  LabelVolume truth;
};

Phantom generate_phantom(const PhantomSpec& spec);

// Ground-truth labels only (no intensities).
LabelVolume phantom_labels(const PhantomSpec& spec);

// Masked voxels with a 6-neighbour of another tissue class.
std::vector<std::size_t> boundary_voxels(const LabelVolume& labels);

// Relabels `fraction` of the boundary voxels to the class of a differing
// neighbour. Returns the number of voxels changed.
std::size_t corrupt_boundary(LabelVolume* labels, double fraction, std::uint64_t seed);

// Peels the `label` class from its interface with other tissue, handing each
// peeled voxel to a neighbouring tissue class, until the class has shrunk by
// at least `fraction`. Returns the final count of `label`.
std::size_t erode_class(LabelVolume* labels, std::uint8_t label, double fraction, std::uint64_t seed);

}  // namespace kfdaseg

#endif  // KFDASEG_PHANTOM_H_
