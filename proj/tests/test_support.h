#ifndef KFDASEG_TESTS_TEST_SUPPORT_H_
#define KFDASEG_TESTS_TEST_SUPPORT_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kfdaseg/random.h"
#include "kfdaseg/volume.h"

namespace kfdaseg::testing {

// Random multi-channel volume; every voxel masked unless `mask_fraction` < 1.
inline MultiChannelVolume random_volume(Dims d, int channels, std::uint64_t seed, double mask_fraction = 1.0) {
  Rng rng(seed);
  std::vector<float> data(d.voxel_count() * channels);
  for (float& v : data) v = static_cast<float>(rng.uniform());
  std::vector<std::uint8_t> mask(d.voxel_count(), 1);
  if (mask_fraction < 1.0) {
    for (auto& m : mask) m = rng.uniform() < mask_fraction;
  }
  return MultiChannelVolume(d, channels, std::move(data), std::move(mask));
}

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::temp_directory_path() / ("kfdaseg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace kfdaseg::testing

#endif  // KFDASEG_TESTS_TEST_SUPPORT_H_
