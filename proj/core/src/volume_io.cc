#include "kfdaseg/volume_io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "kfdaseg/error.h"

namespace kfdaseg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path with_suffix(const fs::path& stem, const char* suffix) {
  return fs::path(stem.string() + suffix);
}

std::vector<char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<char> buf(size);
  if (size > 0 && !in.read(buf.data(), static_cast<std::streamsize>(size))) {
    throw ValidationError("short read on " + p.string());
  }
  return buf;
}

void write_all(const fs::path& p, const void* data, std::size_t size) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + p.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw ValidationError("write failed on " + p.string());
}

json read_sidecar(const fs::path& stem, const char* kind) {
  const fs::path p = with_suffix(stem, ".json");
  std::ifstream in(p);
  if (!in) throw ValidationError("missing sidecar " + p.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("malformed sidecar " + p.string() + ": " + e.what());
  }
  if (j.contains("kind") && j["kind"] != kind) {
    throw ValidationError(p.string() + " describes a " + j["kind"].get<std::string>() +
                          ", expected " + kind);
  }
  if (j.contains("byte_order") && j["byte_order"] != "little") {
    throw ValidationError(p.string() + ": only little-endian payloads are supported");
  }
  return j;
}

Dims read_dims(const json& j, const fs::path& stem) {
  if (!j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != 3) {
    throw ValidationError(stem.string() + ".json: dims must be a 3-element array");
  }
  Dims d{j["dims"][0].get<int>(), j["dims"][1].get<int>(), j["dims"][2].get<int>()};
  if (!d.valid()) throw ValidationError(stem.string() + ".json: dims must be positive");
  return d;
}

void write_sidecar(const fs::path& stem, const json& j) {
  const fs::path p = with_suffix(stem, ".json");
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

std::vector<float> decode_f32le(const std::vector<char>& raw) {
  std::vector<float> out(raw.size() / 4);
  std::memcpy(out.data(), raw.data(), out.size() * 4);
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : out) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
  return out;
}

std::vector<char> encode_f32le(std::span<const float> values) {
  std::vector<char> out(values.size() * 4);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::uint32_t w = byteswap32(std::bit_cast<std::uint32_t>(values[i]));
      std::memcpy(out.data() + 4 * i, &w, 4);
    }
  } else {
    std::memcpy(out.data(), values.data(), out.size());
  }
  return out;
}

std::string mask_name(const fs::path& stem) { return stem.filename().string() + ".mask.u8raw"; }

}  // namespace

fs::path volume_stem(const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".json" || ext == ".f32raw" || ext == ".u8raw") {
    fs::path stem = path;
    stem.replace_extension();
    return stem;
  }
  return path;
}

MultiChannelVolume load_volume(const fs::path& path) {
  const fs::path stem = volume_stem(path);
  const json j = read_sidecar(stem, "volume");
  const Dims dims = read_dims(j, stem);
  const int channels = j.value("channels", 1);
  if (channels < 1) throw ValidationError(stem.string() + ".json: channels must be >= 1");

  const fs::path data_path = with_suffix(stem, ".f32raw");
  const std::vector<char> raw = read_all(data_path);
  const std::size_t expected = dims.voxel_count() * static_cast<std::size_t>(channels);
  if (raw.size() != expected * 4) {
    std::ostringstream os;
    os << data_path.string() << ": payload is " << raw.size() << " bytes ("
       << raw.size() / 4 << " floats), header requires " << expected << " floats";
    throw ValidationError(os.str());
  }
  std::vector<float> data = decode_f32le(raw);
  for (std::size_t n = 0; n < data.size(); ++n) {
    if (!std::isfinite(data[n])) {
      const std::size_t v = n / channels;
      const int i = static_cast<int>(v % dims.nx);
      const int jj = static_cast<int>((v / dims.nx) % dims.ny);
      const int k = static_cast<int>(v / (static_cast<std::size_t>(dims.nx) * dims.ny));
      std::ostringstream os;
      os << data_path.string() << ": non-finite value at voxel " << v << " (i=" << i
         << ", j=" << jj << ", k=" << k << "), channel " << n % channels;
      throw ValidationError(os.str());
    }
  }

  std::vector<std::uint8_t> mask(dims.voxel_count(), 1);
  if (j.contains("mask_file") && !j["mask_file"].is_null()) {
    const fs::path mask_path = stem.parent_path() / j["mask_file"].get<std::string>();
    const std::vector<char> mraw = read_all(mask_path);
    if (mraw.size() != dims.voxel_count()) {
      std::ostringstream os;
      os << mask_path.string() << ": mask has " << mraw.size() << " bytes, expected "
         << dims.voxel_count();
      throw ValidationError(os.str());
    }
    for (std::size_t v = 0; v < mask.size(); ++v) mask[v] = mraw[v] != 0 ? 1 : 0;
  }
  return MultiChannelVolume(dims, channels, std::move(data), std::move(mask));
}

void save_volume(const MultiChannelVolume& vol, const fs::path& path) {
  const fs::path stem = volume_stem(path);
  const std::vector<char> raw = encode_f32le(vol.data());
  write_all(with_suffix(stem, ".f32raw"), raw.data(), raw.size());
  const auto mask = vol.mask();
  write_all(stem.parent_path() / mask_name(stem), mask.data(), mask.size());
  json j;
  j["kind"] = "volume";
  j["dims"] = {vol.dims().nx, vol.dims().ny, vol.dims().nz};
  j["channels"] = vol.channels();
  j["mask_file"] = mask_name(stem);
  j["byte_order"] = "little";
  write_sidecar(stem, j);
}

LabelVolume load_labels(const fs::path& path) {
  const fs::path stem = volume_stem(path);
  const json j = read_sidecar(stem, "labels");
  const Dims dims = read_dims(j, stem);
  const fs::path data_path = with_suffix(stem, ".u8raw");
  const std::vector<char> raw = read_all(data_path);
  if (raw.size() != dims.voxel_count()) {
    std::ostringstream os;
    os << data_path.string() << ": " << raw.size() << " label bytes, header requires "
       << dims.voxel_count();
    throw ValidationError(os.str());
  }
  std::vector<std::uint8_t> labels(raw.begin(), raw.end());
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (!is_valid_label(labels[v])) {
      std::ostringstream os;
      os << data_path.string() << ": label byte " << int(labels[v]) << " at voxel " << v
         << " is not one of 1 (CSF), 2 (GM), 3 (WM), 4 (BG)";
      throw ValidationError(os.str());
    }
  }
  return LabelVolume(dims, std::move(labels));
}

void save_labels(const LabelVolume& labels, const fs::path& path) {
  const fs::path stem = volume_stem(path);
  const auto bytes = labels.labels();
  write_all(with_suffix(stem, ".u8raw"), bytes.data(), bytes.size());
  json j;
  j["kind"] = "labels";
  j["dims"] = {labels.dims().nx, labels.dims().ny, labels.dims().nz};
  write_sidecar(stem, j);
}

MultiChannelVolume normalize_intensities(const MultiChannelVolume& vol) {
  if (vol.masked_count() == 0) throw ValidationError("normalize_intensities: empty mask");
  const int nc = vol.channels();
  const std::size_t nv = vol.voxel_count();
  std::vector<float> out(nv * nc, 0.0f);
  for (int c = 0; c < nc; ++c) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -lo;
    for (std::size_t v = 0; v < nv; ++v) {
      if (!vol.masked(v)) continue;
      lo = std::min(lo, vol.value(v, c));
      hi = std::max(hi, vol.value(v, c));
    }
    const double range = static_cast<double>(hi) - static_cast<double>(lo);
    if (!(range > 0.0)) continue;
    for (std::size_t v = 0; v < nv; ++v) {
      if (!vol.masked(v)) continue;
      const double x = (static_cast<double>(vol.value(v, c)) - lo) / range;
      out[v * nc + c] = static_cast<float>(std::clamp(x, 0.0, 1.0));
    }
  }
  std::vector<std::uint8_t> mask(vol.mask().begin(), vol.mask().end());
  return MultiChannelVolume(vol.dims(), nc, std::move(out), std::move(mask));
}

}  // namespace kfdaseg
