#include "kfdaseg/ssim.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "kfdaseg/error.h"

namespace kfdaseg {

SsimConstants SsimConstants::for_range(double dynamic_range) {
  SsimConstants c;
  c.dynamic_range = dynamic_range;
  c.c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  c.c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  c.c3 = c.c2 / 2.0;
  return c;
}

void SsimConstants::validate() const {
  if (!(c1 > 0.0 && c2 > 0.0 && c3 > 0.0)) throw ValidationError("SSIM constants must be positive");
  if (window < 1 || window % 2 == 0) throw ValidationError("SSIM window size must be odd and >= 1");
  if (!(window_sigma > 0.0)) throw ValidationError("SSIM window sigma must be positive");
}

PatchStats patch_stats(std::span<const double> x, std::span<const double> y,
                       std::span<const double> weights) {
  if (x.size() != y.size() || x.size() != weights.size() || x.empty()) {
    throw ValidationError("patch_stats: patches and weights must have the same non-zero size");
  }
  double wsum = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    wsum += weights[i];
    sx += weights[i] * x[i];
    sy += weights[i] * y[i];
  }
  if (!(wsum > 0.0)) throw ValidationError("patch_stats: weights must have a positive sum");
  PatchStats s;
  s.mean_x = sx / wsum;
  s.mean_y = sy / wsum;
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - s.mean_x;
    const double dy = y[i] - s.mean_y;
    vx += weights[i] * (dx * dx);
    vy += weights[i] * (dy * dy);
    cxy += weights[i] * (dx * dy);
  }
  s.var_x = vx / wsum;
  s.var_y = vy / wsum;
  s.cov_xy = cxy / wsum;
  return s;
}

double ssim_from_stats(const PatchStats& s, const SsimConstants& c) {
  const double vx = std::max(s.var_x, 0.0);
  const double vy = std::max(s.var_y, 0.0);
  const double sxy = std::sqrt(vx * vy);
  const double lum = (2.0 * (s.mean_x * s.mean_y) + c.c1) /
                     (s.mean_x * s.mean_x + s.mean_y * s.mean_y + c.c1);
  const double con = (2.0 * sxy + c.c2) / (vx + vy + c.c2);
  const double str = std::clamp((s.cov_xy + c.c3) / (sxy + c.c3), -1.0, 1.0);
  return lum * con * str;
}

double ssim_patch(std::span<const double> x, std::span<const double> y, const SsimConstants& c) {
  const std::vector<double> w(x.size(), 1.0);
  return ssim_patch(x, y, w, c);
}

double ssim_patch(std::span<const double> x, std::span<const double> y,
                  std::span<const double> weights, const SsimConstants& c) {
  return ssim_from_stats(patch_stats(x, y, weights), c);
}

std::vector<double> gaussian_window(const SsimConstants& c) {
  c.validate();
  const int r = c.window / 2;
  std::vector<double> taps(c.window);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    taps[i + r] = std::exp(-(i * i) / (2.0 * c.window_sigma * c.window_sigma));
    sum += taps[i + r];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

MssimEvaluator::MssimEvaluator(ScalarField reference, std::vector<std::uint8_t> mask,
                               SsimConstants constants, MssimPooling pooling)
    : reference_(std::move(reference)),
      mask_(std::move(mask)),
      constants_(constants),
      pooling_(pooling),
      taps_(gaussian_window(constants)) {
  const Dims& d = reference_.dims;
  if (!d.valid() || reference_.values.size() != d.voxel_count() || mask_.size() != d.voxel_count()) {
    throw ValidationError("MssimEvaluator: reference, mask and dims disagree in size");
  }
  const int nx = d.nx, ny = d.ny;
  const int r = constants_.window / 2;
  // Weight mass of the truncated window along each axis.
  auto axis_norm = [&](int n) {
    std::vector<double> out(n, 0.0);
    for (int p = 0; p < n; ++p) {
      for (int t = -r; t <= r; ++t) {
        if (p + t >= 0 && p + t < n) out[p] += taps_[t + r];
      }
    }
    return out;
  };
  const std::vector<double> normx = axis_norm(nx), normy = axis_norm(ny);
  norm_.resize(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) norm_[j * nx + i] = normx[i] * normy[j];
  }

  const std::size_t plane = static_cast<std::size_t>(nx) * ny;
  slices_.resize(d.nz);
  std::vector<double> sq(plane);
  std::vector<int> rowcount(plane);
  for (int z = 0; z < d.nz; ++z) {
    SliceCache& sc = slices_[z];
    const double* ref = reference_.values.data() + z * plane;
    const std::uint8_t* m = mask_.data() + z * plane;
    sc.mu.resize(plane);
    sc.sq.resize(plane);
    filter_slice(ref, sc.mu.data());
    for (std::size_t p = 0; p < plane; ++p) sq[p] = ref[p] * ref[p];
    filter_slice(sq.data(), sc.sq.data());

    // A window is active when any masked pixel falls inside it.
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        int cnt = 0;
        for (int t = std::max(0, i - r); t <= std::min(nx - 1, i + r); ++t) cnt += m[j * nx + t] != 0;
        rowcount[j * nx + i] = cnt;
      }
    }
    sc.active.assign(plane, 0);
    sc.active_count = 0;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        int cnt = 0;
        for (int t = std::max(0, j - r); t <= std::min(ny - 1, j + r); ++t) cnt += rowcount[t * nx + i];
        if (cnt > 0) {
          sc.active[j * nx + i] = 1;
          ++sc.active_count;
        }
      }
    }
  }
}

void MssimEvaluator::filter_slice(const double* src, double* dst) const {
  const int nx = reference_.dims.nx, ny = reference_.dims.ny;
  const int r = constants_.window / 2;
  std::vector<double> tmp(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    const double* row = src + j * nx;
    for (int i = 0; i < nx; ++i) {
      double acc = 0.0;
      const int lo = std::max(0, i - r), hi = std::min(nx - 1, i + r);
      for (int t = lo; t <= hi; ++t) acc += taps_[t - i + r] * row[t];
      tmp[j * nx + i] = acc;
    }
  }
  for (int j = 0; j < ny; ++j) {
    const int lo = std::max(0, j - r), hi = std::min(ny - 1, j + r);
    for (int i = 0; i < nx; ++i) {
      double acc = 0.0;
      for (int t = lo; t <= hi; ++t) acc += taps_[t - j + r] * tmp[t * nx + i];
      dst[j * nx + i] = acc / norm_[j * nx + i];
    }
  }
}

double MssimEvaluator::accumulate_slice(const ScalarField& image, int z, std::size_t* windows) const {
  const SliceCache& sc = slices_[z];
  *windows = sc.active_count;
  if (sc.active_count == 0) return 0.0;
  const std::size_t plane = static_cast<std::size_t>(reference_.dims.nx) * reference_.dims.ny;
  const double* x = image.values.data() + z * plane;
  const double* y = reference_.values.data() + z * plane;
  std::vector<double> mu(plane), sq(plane), xy(plane), buf(plane);
  filter_slice(x, mu.data());
  for (std::size_t p = 0; p < plane; ++p) buf[p] = x[p] * x[p];
  filter_slice(buf.data(), sq.data());
  for (std::size_t p = 0; p < plane; ++p) buf[p] = x[p] * y[p];
  filter_slice(buf.data(), xy.data());

  double sum = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    if (!sc.active[p]) continue;
    PatchStats s;
    s.mean_x = mu[p];
    s.mean_y = sc.mu[p];
    s.var_x = sq[p] - mu[p] * mu[p];
    s.var_y = sc.sq[p] - sc.mu[p] * sc.mu[p];
    s.cov_xy = xy[p] - mu[p] * sc.mu[p];
    sum += ssim_from_stats(s, constants_);
  }
  return sum;
}

std::optional<double> MssimEvaluator::slice_mssim(const ScalarField& image, int z) const {
  if (image.dims != reference_.dims || image.values.size() != reference_.values.size()) {
    throw ValidationError("mssim: image and reference shapes differ");
  }
  if (z < 0 || z >= reference_.dims.nz) throw ValidationError("mssim: slice index out of range");
  std::size_t n = 0;
  const double sum = accumulate_slice(image, z, &n);
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

double MssimEvaluator::operator()(const ScalarField& image) const {
  if (image.dims != reference_.dims || image.values.size() != reference_.values.size()) {
    throw ValidationError("mssim: image and reference shapes differ");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (int z = 0; z < reference_.dims.nz; ++z) {
    std::size_t n = 0;
    const double sum = accumulate_slice(image, z, &n);
    if (n == 0) continue;
    if (pooling_ == MssimPooling::kPerSlice) {
      total += sum / static_cast<double>(n);
      ++count;
    } else {
      total += sum;
      count += n;
    }
  }
  if (count == 0) throw ValidationError("mssim: no window covers a masked voxel");
  return total / static_cast<double>(count);
}

double mssim(const ScalarField& classified, const ScalarField& reference,
             std::span<const std::uint8_t> mask, const SsimConstants& c, MssimPooling pooling) {
  MssimEvaluator eval(reference, std::vector<std::uint8_t>(mask.begin(), mask.end()), c, pooling);
  return eval(classified);
}

ScalarField classified_mean_image(std::span<const std::uint8_t> labels, const ScalarField& reference,
                                  std::span<const std::uint8_t> mask) {
  const std::size_t n = reference.values.size();
  if (labels.size() != n || mask.size() != n) {
    throw ValidationError("classified_mean_image: labels, mask and reference differ in size");
  }
  std::array<double, 256> sum{};
  std::array<std::size_t, 256> cnt{};
  for (std::size_t v = 0; v < n; ++v) {
    if (!mask[v] || labels[v] == kBg) continue;
    sum[labels[v]] += reference.values[v];
    ++cnt[labels[v]];
  }
  ScalarField out{reference.dims, std::vector<double>(n, 0.0)};
  for (std::size_t v = 0; v < n; ++v) {
    if (!mask[v] || labels[v] == kBg) continue;
    out.values[v] = sum[labels[v]] / static_cast<double>(cnt[labels[v]]);
  }
  return out;
}

}  // namespace kfdaseg
