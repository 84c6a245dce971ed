#ifndef KFDASEG_CLASSIFY_H_
#define KFDASEG_CLASSIFY_H_

#include <cstdint>
#include <string>
#include <vector>

#include "kfdaseg/kernel.h"
#include "kfdaseg/kfda.h"
#include "kfdaseg/refine.h"
#include "kfdaseg/ssim.h"
#include "kfdaseg/volume.h"

namespace kfdaseg {

struct ClassifyConfig {
  KernelSpec csf_kernel = KernelSpec::sigmoid(8.0, -0.0005);
  KernelSpec tissue_kernel = KernelSpec::rbf(0.5);
  std::vector<double> lambdas{0.0, 0.000025, 0.00005, 0.000075, 0.0001};
  std::vector<int> k_grid{1, 3, 5, 7, 9, 11};
  CategorizeOptions categorize;
  std::size_t max_training = 600;     // Gram matrix size cap (samples per step)
  std::size_t max_prototypes = 1500;  // per class, for KNN
  SsimConstants ssim;
  MssimPooling pooling = MssimPooling::kPerSlice;
  SolveOptions solve;
  int reference_channel = 0;
  // Subtract the mean intensity vector of the step's voxels before any kernel
  // evaluation.
  bool center_features = true;

  void validate() const;
};

struct LambdaTrial {
  double lambda = 0.0;
  bool solved = false;
  double mssim = 0.0;
  double gamma = 0.0;
  int iterations = 0;
  bool dense_solve = false;
  double roughness = 0.0;  // sum over edges of squared projection differences
  std::size_t overlap = 0;
  std::size_t outliers = 0;
  int best_k = 0;
  bool used_knn = false;
  std::string error;
};

struct StepReport {
  std::string name;
  bool skipped = false;
  std::string reason;
  std::size_t voxels = 0;
  std::size_t training = 0;
  std::size_t initial_minus = 0;
  std::size_t initial_plus = 0;
  std::size_t final_minus = 0;
  std::size_t final_plus = 0;
  double mssim_initial = 0.0;
  std::vector<LambdaTrial> trials;
  int chosen = -1;  // index into trials
};

// Labels of a box; voxels outside the mask are BG.
struct Fragment {
  Box box;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(int i, int j, int k) const {
    return labels[static_cast<std::size_t>(i - box.lo[0]) +
                  static_cast<std::size_t>(box.extent(0)) *
                      (static_cast<std::size_t>(j - box.lo[1]) +
                       static_cast<std::size_t>(box.extent(1)) * (k - box.lo[2]))];
  }
};

struct SubdomainResult {
  Fragment fragment;
  StepReport csf_step;
  StepReport tissue_step;
  std::vector<std::string> warnings;
};

// Reference channel of `box` as a scalar field plus the box mask.
ScalarField extract_field(const MultiChannelVolume& vol, const Box& box, int channel,
                          std::vector<std::uint8_t>* mask);

// Restriction of a label volume to a box.
Fragment extract_fragment(const LabelVolume& labels, const Box& box);

// Two-step classification of one box: CSF against GM+WM with the sigmoid
// kernel, then GM against WM with the RBF kernel, each with an SSIM-guided
// lambda sweep.
SubdomainResult classify_subdomain(const MultiChannelVolume& vol, const Box& box, const LabelVolume& init,
                                   const ClassifyConfig& config, std::uint64_t seed);

std::string subdomain_diagnostics_json(const SubdomainResult& r, int id);

}  // namespace kfdaseg

#endif  // KFDASEG_CLASSIFY_H_
