#ifndef KFDASEG_SSIM_H_
#define KFDASEG_SSIM_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kfdaseg/volume.h"

namespace kfdaseg {

struct SsimConstants {
  double c1 = 1e-4;  // (0.01 L)^2
  double c2 = 9e-4;  // (0.03 L)^2
  double c3 = 4.5e-4;
  int window = 11;
  double window_sigma = 1.5;
  double dynamic_range = 1.0;

  static SsimConstants for_range(double dynamic_range);
  void validate() const;
};

// Local statistics of a pair of patches. Variances and the covariance are
// weighted population moments.
struct PatchStats {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double var_x = 0.0;
  double var_y = 0.0;
  double cov_xy = 0.0;
};

PatchStats patch_stats(std::span<const double> x, std::span<const double> y,
                       std::span<const double> weights);

// Luminance * contrast * structure. sigma_x * sigma_y is evaluated as
// sqrt(var_x * var_y), so identical inputs give exactly 1.
double ssim_from_stats(const PatchStats& s, const SsimConstants& c);

// SSIM of two equally shaped patches with uniform weights.
double ssim_patch(std::span<const double> x, std::span<const double> y,
                  const SsimConstants& c = {});
// Same with explicit (not necessarily normalized) weights.
double ssim_patch(std::span<const double> x, std::span<const double> y,
                  std::span<const double> weights, const SsimConstants& c = {});

// Normalized 1-D Gaussian taps of length c.window.
std::vector<double> gaussian_window(const SsimConstants& c);

// A scalar image on a box grid, x-fastest. Used for both the reference and
// the classified-mean images.
struct ScalarField {
  Dims dims;
  std::vector<double> values;
};

enum class MssimPooling {
  kPerSlice,  // mean over axial slices of each slice's window mean
  kPooled,    // mean over every window of the volume
};

// Mean SSIM over axial slices. A window is centred on every pixel; near the
// slice border it is truncated and its weights renormalized. Windows that
// contain no masked voxel are skipped. Reference statistics are cached so
// repeated evaluation against many candidate images is cheap.
class MssimEvaluator {
 public:
  MssimEvaluator(ScalarField reference, std::vector<std::uint8_t> mask,
                 SsimConstants constants = {}, MssimPooling pooling = MssimPooling::kPerSlice);

  // Throws ValidationError when the image shape differs or no window is masked.
  double operator()(const ScalarField& image) const;

  // Mean SSIM of a single axial slice; nullopt if the slice has no masked window.
  std::optional<double> slice_mssim(const ScalarField& image, int z) const;

  const ScalarField& reference() const { return reference_; }
  std::span<const std::uint8_t> mask() const { return mask_; }

 private:
  struct SliceCache {
    std::vector<double> mu;      // filtered reference
    std::vector<double> sq;      // filtered reference^2
    std::vector<std::uint8_t> active;
    std::size_t active_count = 0;
  };

  void filter_slice(const double* src, double* dst) const;
  double accumulate_slice(const ScalarField& image, int z, std::size_t* windows) const;

  ScalarField reference_;
  std::vector<std::uint8_t> mask_;
  SsimConstants constants_;
  MssimPooling pooling_;
  std::vector<double> taps_;
  std::vector<double> norm_;  // per-pixel weight sums of the truncated window
  std::vector<SliceCache> slices_;
};

double mssim(const ScalarField& classified, const ScalarField& reference,
             std::span<const std::uint8_t> mask, const SsimConstants& c = {},
             MssimPooling pooling = MssimPooling::kPerSlice);

// Replaces each masked voxel by the mean reference intensity of its class
// (over the masked voxels of the field); unmasked voxels and BG become 0.
// Labels are any small integer codes; codes absent from the mask are skipped.
ScalarField classified_mean_image(std::span<const std::uint8_t> labels,
                                  const ScalarField& reference,
                                  std::span<const std::uint8_t> mask);

}  // namespace kfdaseg

#endif  // KFDASEG_SSIM_H_
