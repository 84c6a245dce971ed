#include "kfdaseg/volume.h"

#include <algorithm>
#include <sstream>

#include "kfdaseg/error.h"

namespace kfdaseg {

Box Box::intersect(const Box& o) const {
  Box r;
  for (int a = 0; a < 3; ++a) {
    r.lo[a] = std::max(lo[a], o.lo[a]);
    r.hi[a] = std::min(hi[a], o.hi[a]);
  }
  return r;
}

std::string to_string(const Box& b) {
  std::ostringstream os;
  os << "[" << b.lo[0] << ".." << b.hi[0] << ", " << b.lo[1] << ".." << b.hi[1] << ", "
     << b.lo[2] << ".." << b.hi[2] << "]";
  return os.str();
}

const char* tissue_name(std::uint8_t label) {
  switch (label) {
    case kCsf: return "CSF";
    case kGm: return "GM";
    case kWm: return "WM";
    case kBg: return "BG";
    default: return "?";
  }
}

MultiChannelVolume::MultiChannelVolume(Dims dims, int channels, std::vector<float> data,
                                       std::vector<std::uint8_t> mask)
    : dims_(dims), channels_(channels), data_(std::move(data)), mask_(std::move(mask)) {
  if (!dims_.valid()) throw ValidationError("volume dims must be positive");
  if (channels_ < 1) throw ValidationError("volume needs at least one channel");
  if (data_.size() != dims_.voxel_count() * channels_) {
    std::ostringstream os;
    os << "volume payload has " << data_.size() << " values, expected "
       << dims_.voxel_count() * channels_;
    throw ValidationError(os.str());
  }
  if (mask_.size() != dims_.voxel_count()) {
    std::ostringstream os;
    os << "mask has " << mask_.size() << " voxels, expected " << dims_.voxel_count();
    throw ValidationError(os.str());
  }
}

std::size_t MultiChannelVolume::masked_count() const {
  return static_cast<std::size_t>(std::count_if(mask_.begin(), mask_.end(),
                                                [](std::uint8_t m) { return m != 0; }));
}

std::vector<double> MultiChannelVolume::channel(int c) const {
  std::vector<double> out(voxel_count());
  for (std::size_t v = 0; v < out.size(); ++v) out[v] = value(v, c);
  return out;
}

LabelVolume::LabelVolume(Dims dims, std::vector<std::uint8_t> labels)
    : dims_(dims), labels_(std::move(labels)) {
  if (!dims_.valid()) throw ValidationError("label volume dims must be positive");
  if (labels_.size() != dims_.voxel_count()) {
    std::ostringstream os;
    os << "label payload has " << labels_.size() << " voxels, expected "
       << dims_.voxel_count();
    throw ValidationError(os.str());
  }
  for (std::size_t v = 0; v < labels_.size(); ++v) {
    if (!is_valid_label(labels_[v])) {
      std::ostringstream os;
      os << "label " << int(labels_[v]) << " at voxel " << v << " is outside {1,2,3,4}";
      throw ValidationError(os.str());
    }
  }
}

LabelVolume::LabelVolume(Dims dims) : dims_(dims), labels_(dims.voxel_count(), kBg) {}

std::size_t LabelVolume::count(std::uint8_t label) const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
}

void LabelVolume::check_mask_consistent(std::span<const std::uint8_t> mask) const {
  if (mask.size() != labels_.size()) throw ValidationError("mask and labels differ in size");
  for (std::size_t v = 0; v < labels_.size(); ++v) {
    const bool in = mask[v] != 0;
    if (in && labels_[v] == kBg) {
      throw ValidationError("masked voxel " + std::to_string(v) + " is labelled BG");
    }
    if (!in && labels_[v] != kBg) {
      throw ValidationError("voxel " + std::to_string(v) + " is off the mask but not BG");
    }
  }
}

double dice(const LabelVolume& a, const LabelVolume& b, std::uint8_t label) {
  if (!(a.dims() == b.dims())) throw ValidationError("dice: dims differ");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t v = 0; v < a.labels().size(); ++v) {
    const bool ia = a.at(v) == label;
    const bool ib = b.at(v) == label;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

}  // namespace kfdaseg
