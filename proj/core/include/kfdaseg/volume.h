#ifndef KFDASEG_VOLUME_H_
#define KFDASEG_VOLUME_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace kfdaseg {

// Grid extent (M1, M2, M3). Voxels are stored x-fastest: i + nx * (j + ny * k).
struct Dims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(nx) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(ny) * k);
  }
  int extent(int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
  bool valid() const { return nx > 0 && ny > 0 && nz > 0; }
  bool operator==(const Dims&) const = default;
};

// Axis-aligned box of voxels with inclusive bounds on each axis.
struct Box {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{-1, -1, -1};

  static Box whole(const Dims& d) { return Box{{0, 0, 0}, {d.nx - 1, d.ny - 1, d.nz - 1}}; }

  int extent(int axis) const { return hi[axis] - lo[axis] + 1; }
  bool empty() const { return extent(0) <= 0 || extent(1) <= 0 || extent(2) <= 0; }
  std::size_t voxel_count() const {
    if (empty()) return 0;
    return static_cast<std::size_t>(extent(0)) * extent(1) * extent(2);
  }
  Dims dims() const { return Dims{extent(0), extent(1), extent(2)}; }
  bool contains(int i, int j, int k) const {
    return i >= lo[0] && i <= hi[0] && j >= lo[1] && j <= hi[1] && k >= lo[2] && k <= hi[2];
  }
  bool inside(const Dims& d) const {
    return !empty() && lo[0] >= 0 && lo[1] >= 0 && lo[2] >= 0 && hi[0] < d.nx &&
           hi[1] < d.ny && hi[2] < d.nz;
  }
  Box intersect(const Box& o) const;
  bool operator==(const Box&) const = default;
};

std::string to_string(const Box& b);

// Tissue labels; the numeric values are the on-disk encoding.
enum class Tissue : std::uint8_t { kCsf = 1, kGm = 2, kWm = 3, kBg = 4 };

inline constexpr std::uint8_t kCsf = 1;
inline constexpr std::uint8_t kGm = 2;
inline constexpr std::uint8_t kWm = 3;
inline constexpr std::uint8_t kBg = 4;

inline bool is_valid_label(std::uint8_t v) { return v >= kCsf && v <= kBg; }
const char* tissue_name(std::uint8_t label);

// Multi-channel intensity volume with an explicit brain mask. Intensities
// are interleaved per voxel: value(v, c) = data[v * channels + c].
class MultiChannelVolume {
 public:
  MultiChannelVolume() = default;
  MultiChannelVolume(Dims dims, int channels, std::vector<float> data,
                     std::vector<std::uint8_t> mask);

  const Dims& dims() const { return dims_; }
  int channels() const { return channels_; }
  std::size_t voxel_count() const { return dims_.voxel_count(); }

  float value(std::size_t voxel, int channel) const {
    return data_[voxel * channels_ + channel];
  }
  std::span<const float> voxel(std::size_t v) const {
    return {data_.data() + v * channels_, static_cast<std::size_t>(channels_)};
  }
  bool masked(std::size_t v) const { return mask_[v] != 0; }
  std::size_t masked_count() const;

  std::span<const float> data() const { return data_; }
  std::span<const std::uint8_t> mask() const { return mask_; }

  // Single channel as doubles (unmasked voxels keep their stored value).
  std::vector<double> channel(int c) const;

 private:
  Dims dims_;
  int channels_ = 0;
  std::vector<float> data_;
  std::vector<std::uint8_t> mask_;
};

class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Dims dims, std::vector<std::uint8_t> labels);
  // All-background volume.
  explicit LabelVolume(Dims dims);

  const Dims& dims() const { return dims_; }
  std::uint8_t at(std::size_t v) const { return labels_[v]; }
  std::uint8_t at(int i, int j, int k) const { return labels_[dims_.index(i, j, k)]; }
  void set(std::size_t v, std::uint8_t label) { labels_[v] = label; }
  std::span<const std::uint8_t> labels() const { return labels_; }
  std::span<std::uint8_t> mutable_labels() { return labels_; }

  std::size_t count(std::uint8_t label) const;

  // Throws ValidationError unless every voxel off the mask is BG and every
  // masked voxel carries CSF, GM or WM.
  void check_mask_consistent(std::span<const std::uint8_t> mask) const;

  bool operator==(const LabelVolume&) const = default;

 private:
  Dims dims_;
  std::vector<std::uint8_t> labels_;
};

// Dice overlap of one label between two label volumes of equal dims.
double dice(const LabelVolume& a, const LabelVolume& b, std::uint8_t label);

}  // namespace kfdaseg

#endif  // KFDASEG_VOLUME_H_
