#ifndef KFDASEG_KMEANS_H_
#define KFDASEG_KMEANS_H_

#include <cstdint>

#include "kfdaseg/volume.h"

namespace kfdaseg {

struct KmeansOptions {
  int n_classes = 3;
  int max_iterations = 100;
  int max_reseeds = 5;
  std::uint64_t seed = 7;
};

// k-means++ seeded Lloyd clustering of the masked intensity vectors. Clusters
// are ordered by ascending t1w (channel 0) centroid, so with three classes
// they map to CSF, GM and WM. Throws ValidationError when a cluster stays
// empty after every reseed or fewer distinct vectors than classes exist.
LabelVolume kmeans_init(const MultiChannelVolume& vol, const KmeansOptions& opts = {});

}  // namespace kfdaseg

#endif  // KFDASEG_KMEANS_H_
