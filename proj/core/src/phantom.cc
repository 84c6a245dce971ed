#include "kfdaseg/phantom.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "kfdaseg/error.h"
#include "kfdaseg/random.h"

namespace kfdaseg {

void PhantomSpec::validate() const {
  if (!dims.valid()) throw ValidationError("phantom: dims must be positive");
  if (noise_sigma < 0.0 || bias_amplitude < 0.0 || pv_width < 0.0) {
    throw ValidationError("phantom: noise, bias and blur must be >= 0");
  }
  if (bias_amplitude >= 1.0) throw ValidationError("phantom: bias amplitude must be < 1");
  for (int ch = 0; ch < 3; ++ch) {
    for (int a = 0; a < 3; ++a) {
      for (int b = a + 1; b < 3; ++b) {
        if (class_means[a][ch] == class_means[b][ch]) {
          throw ValidationError("phantom: class means must differ pairwise in every channel");
        }
      }
    }
  }
}

LabelVolume phantom_labels(const PhantomSpec& spec) {
  spec.validate();
  const Dims& d = spec.dims;
  std::vector<std::uint8_t> lab(d.voxel_count(), kBg);
  const double cx = (d.nx - 1) / 2.0, cy = (d.ny - 1) / 2.0, cz = (d.nz - 1) / 2.0;
  if (spec.geometry == PhantomGeometry::kBlocks) {
    for (int k = 0; k < d.nz; ++k) {
      for (int j = 0; j < d.ny; ++j) {
        for (int i = 0; i < d.nx; ++i) {
          const int b = (i >= d.nx / 2) + (j >= d.ny / 2) + (k >= d.nz / 2);
          lab[d.index(i, j, k)] = static_cast<std::uint8_t>(kCsf + b % 3);
        }
      }
    }
    return LabelVolume(d, std::move(lab));
  }
  const double ax = 0.44 * d.nx, ay = 0.40 * d.ny, az = 0.36 * d.nz;
  for (int k = 0; k < d.nz; ++k) {
    for (int j = 0; j < d.ny; ++j) {
      for (int i = 0; i < d.nx; ++i) {
        const double x = (i - cx) / ax, y = (j - cy) / ay, z = (k - cz) / az;
        const double r = std::sqrt(x * x + y * y + z * z);
        if (r > 1.0) continue;
        const double theta = std::atan2(y, x);
        const double phi = r > 0.0 ? std::asin(std::clamp(z / r, -1.0, 1.0)) : 0.0;
        const double fold = spec.fold_amplitude * std::sin(5.0 * theta) * std::cos(3.0 * phi);
        std::uint8_t c = kCsf;
        if (r <= 0.786 * (1.0 + fold)) c = kGm;
        if (r <= 0.5 * (1.0 + 0.5 * fold)) c = kWm;
        // Lateral ventricles.
        for (double side : {-1.0, 1.0}) {
          const double vx = (x - side * 0.16) / 0.08, vy = y / 0.22, vz = z / 0.12;
          if (vx * vx + vy * vy + vz * vz <= 1.0) c = kCsf;
        }
        lab[d.index(i, j, k)] = c;
      }
    }
  }
  return LabelVolume(d, std::move(lab));
}

namespace {

// Separable Gaussian smoothing restricted to the mask (normalized convolution).
void masked_blur(std::vector<double>* img, const std::vector<std::uint8_t>& mask, const Dims& d, double sigma) {
  if (!(sigma > 0.0)) return;
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * r + 1);
  for (int t = -r; t <= r; ++t) taps[t + r] = std::exp(-(t * t) / (2.0 * sigma * sigma));
  std::vector<double> val(img->size()), wt(img->size());
  for (std::size_t v = 0; v < img->size(); ++v) {
    wt[v] = mask[v] ? 1.0 : 0.0;
    val[v] = mask[v] ? (*img)[v] : 0.0;
  }
  const std::size_t stride[3] = {1, static_cast<std::size_t>(d.nx), static_cast<std::size_t>(d.nx) * d.ny};
  std::vector<double> nv(val.size()), nw(val.size());
  for (int axis = 0; axis < 3; ++axis) {
    const int n = d.extent(axis);
    for (int k = 0; k < d.nz; ++k) {
      for (int j = 0; j < d.ny; ++j) {
        for (int i = 0; i < d.nx; ++i) {
          const std::size_t v = d.index(i, j, k);
          const int pos = axis == 0 ? i : (axis == 1 ? j : k);
          double sv = 0.0, sw = 0.0;
          for (int t = std::max(-r, -pos); t <= std::min(r, n - 1 - pos); ++t) {
            const std::size_t u = v + static_cast<std::ptrdiff_t>(t) * static_cast<std::ptrdiff_t>(stride[axis]);
            sv += taps[t + r] * val[u];
            sw += taps[t + r] * wt[u];
          }
          nv[v] = sv;
          nw[v] = sw;
        }
      }
    }
    val.swap(nv);
    wt.swap(nw);
  }
  for (std::size_t v = 0; v < img->size(); ++v) {
    if (mask[v] && wt[v] > 0.0) (*img)[v] = val[v] / wt[v];
  }
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec) {
  LabelVolume truth = phantom_labels(spec);
  const Dims& d = spec.dims;
  const std::size_t nv = d.voxel_count();
  std::vector<std::uint8_t> mask(nv);
  for (std::size_t v = 0; v < nv; ++v) mask[v] = truth.at(v) != kBg;

  Rng rng(spec.seed);
  const double phase = 2.0 * std::numbers::pi * rng.uniform();
  std::vector<float> data(nv * 3, 0.0f);
  std::vector<double> chan(nv);
  std::vector<double> bias(nv, 1.0);
  for (int k = 0; k < d.nz; ++k) {
    for (int j = 0; j < d.ny; ++j) {
      for (int i = 0; i < d.nx; ++i) {
        const double u = static_cast<double>(i) / d.nx, w = static_cast<double>(j) / d.ny,
                     s = static_cast<double>(k) / d.nz;
        bias[d.index(i, j, k)] =
            1.0 + spec.bias_amplitude * std::sin(2.0 * std::numbers::pi * (0.5 * u + 0.3 * w + 0.2 * s) + phase);
      }
    }
  }
  for (int c = 0; c < 3; ++c) {
    for (std::size_t v = 0; v < nv; ++v) {
      chan[v] = mask[v] ? spec.class_means[truth.at(v) - 1][c] : 0.0;
    }
    masked_blur(&chan, mask, d, spec.pv_width / 2.0);
    for (std::size_t v = 0; v < nv; ++v) {
      if (!mask[v]) continue;
      const double x = chan[v] * bias[v];
      data[v * 3 + c] = static_cast<float>(x);
    }
  }
  // Noise drawn in voxel order, channel-interleaved, for reproducibility.
  for (std::size_t v = 0; v < nv; ++v) {
    if (!mask[v]) continue;
    for (int c = 0; c < 3; ++c) {
      const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0;
      data[v * 3 + c] = static_cast<float>(std::clamp(static_cast<double>(data[v * 3 + c]) + noise, 0.0, 1.0));
    }
  }
  return Phantom{MultiChannelVolume(d, 3, std::move(data), std::move(mask)), std::move(truth)};
}

std::vector<std::size_t> boundary_voxels(const LabelVolume& labels) {
  const Dims& d = labels.dims();
  std::vector<std::size_t> out;
  for (int k = 0; k < d.nz; ++k) {
    for (int j = 0; j < d.ny; ++j) {
      for (int i = 0; i < d.nx; ++i) {
        const std::uint8_t l = labels.at(i, j, k);
        if (l == kBg) continue;
        const int nb[6][3] = {{i - 1, j, k}, {i + 1, j, k}, {i, j - 1, k}, {i, j + 1, k}, {i, j, k - 1}, {i, j, k + 1}};
        for (const auto& q : nb) {
          if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= d.nx || q[1] >= d.ny || q[2] >= d.nz) continue;
          const std::uint8_t m = labels.at(q[0], q[1], q[2]);
          if (m != kBg && m != l) {
            out.push_back(d.index(i, j, k));
            break;
          }
        }
      }
    }
  }
  return out;
}

namespace {

// Tissue labels of the 6-neighbours of v that differ from `self`.
std::vector<std::uint8_t> differing_neighbours(const LabelVolume& labels, std::size_t v, std::uint8_t self) {
  const Dims& d = labels.dims();
  const int i = static_cast<int>(v % d.nx);
  const int j = static_cast<int>((v / d.nx) % d.ny);
  const int k = static_cast<int>(v / (static_cast<std::size_t>(d.nx) * d.ny));
  const int nb[6][3] = {{i - 1, j, k}, {i + 1, j, k}, {i, j - 1, k}, {i, j + 1, k}, {i, j, k - 1}, {i, j, k + 1}};
  std::vector<std::uint8_t> out;
  for (const auto& q : nb) {
    if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= d.nx || q[1] >= d.ny || q[2] >= d.nz) continue;
    const std::uint8_t m = labels.at(q[0], q[1], q[2]);
    if (m != kBg && m != self) out.push_back(m);
  }
  return out;
}

}  // namespace

std::size_t corrupt_boundary(LabelVolume* labels, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("corrupt_boundary: fraction must be in [0,1]");
  const std::vector<std::size_t> boundary = boundary_voxels(*labels);
  const std::size_t target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(boundary.size())));
  Rng rng(seed);
  std::vector<std::size_t> pick(boundary);
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pick.size() - i));
    std::swap(pick[i], pick[j]);
  }
  pick.resize(target);
  // Decide every new label against the uncorrupted volume.
  const LabelVolume original = *labels;
  std::size_t changed = 0;
  for (std::size_t v : pick) {
    const std::vector<std::uint8_t> nb = differing_neighbours(original, v, original.at(v));
    if (nb.empty()) continue;
    labels->set(v, nb[rng.below(nb.size())]);
    ++changed;
  }
  return changed;
}

std::size_t erode_class(LabelVolume* labels, std::uint8_t label, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("erode_class: fraction must be in [0,1)");
  const std::size_t start = labels->count(label);
  const auto limit = static_cast<std::size_t>(std::floor((1.0 - fraction) * static_cast<double>(start)));
  std::size_t count = start;
  Rng rng(seed);
  while (count > limit) {
    // One peeling layer: voxels of `label` touching another tissue class.
    std::vector<std::pair<std::size_t, std::uint8_t>> layer;
    const auto lab = labels->labels();
    for (std::size_t v = 0; v < lab.size(); ++v) {
      if (lab[v] != label) continue;
      const std::vector<std::uint8_t> nb = differing_neighbours(*labels, v, label);
      if (!nb.empty()) layer.emplace_back(v, nb[rng.below(nb.size())]);
    }
    if (layer.empty()) break;
    for (std::size_t i = 0; i < layer.size(); ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(layer.size() - i));
      std::swap(layer[i], layer[j]);
    }
    for (const auto& [v, to] : layer) {
      if (count <= limit) break;
      labels->set(v, to);
      --count;
    }
  }
  return count;
}

}  // namespace kfdaseg
