#ifndef KFDASEG_VOLUME_IO_H_
#define KFDASEG_VOLUME_IO_H_

#include <filesystem>

#include "kfdaseg/volume.h"

namespace kfdaseg {

// On-disk layout
//   volume: <name>.json sidecar {"kind":"volume","dims":[nx,ny,nz],"channels":c,
//           "mask_file":"<name>.mask.u8raw","byte_order":"little"} plus
//           <name>.f32raw holding nx*ny*nz*c little-endian float32 values,
//           x-fastest, channels interleaved per voxel.
//   labels: <name>.json sidecar {"kind":"labels","dims":[...]} plus
//           <name>.u8raw holding one byte per voxel.
// Any of "<name>", "<name>.json", "<name>.f32raw" or "<name>.u8raw" may be
// passed as the path.

MultiChannelVolume load_volume(const std::filesystem::path& path);
void save_volume(const MultiChannelVolume& vol, const std::filesystem::path& path);

LabelVolume load_labels(const std::filesystem::path& path);
void save_labels(const LabelVolume& labels, const std::filesystem::path& path);

// Per channel, maps masked intensities affinely onto [0, 1]. Unmasked voxels
// become 0 and a channel that is constant over the mask becomes 0 everywhere.
MultiChannelVolume normalize_intensities(const MultiChannelVolume& vol);

// Strips a known extension so "<dir>/t1.json" and "<dir>/t1" name the same stem.
std::filesystem::path volume_stem(const std::filesystem::path& path);

}  // namespace kfdaseg

#endif  // KFDASEG_VOLUME_IO_H_
