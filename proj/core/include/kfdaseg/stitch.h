#ifndef KFDASEG_STITCH_H_
#define KFDASEG_STITCH_H_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kfdaseg/classify.h"
#include "kfdaseg/volume.h"

namespace kfdaseg {

// Horizontal: left/right observations, the overlap runs across columns and
// the boundary nodes are the leftmost and rightmost columns. Vertical:
// upper/lower observations, boundary nodes are the top and bottom rows.
enum class Orientation { kHorizontal, kVertical };

// Joint region of two overlapping label patches, nodes in row-major order.
struct StitchProblem {
  Orientation orientation = Orientation::kHorizontal;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> obs_a;  // left or upper observation
  std::vector<std::uint8_t> obs_b;  // right or lower observation

  int nodes() const { return rows * cols; }
  bool is_boundary(int r, int c) const;
  void validate() const;
};

inline constexpr double kPsiBoth = 1.0;
inline constexpr double kPsiOne = 0.5;
inline constexpr double kPsiNone = 0.01;
inline constexpr double kBoundaryWeight = 0.75;
inline constexpr double kInteriorWeight = 0.25;

// Labels are indexed 0..3 for CSF, GM, WM, BG.
struct EdgePotential {
  int a = 0;  // node index; the pair is read as (label at a, label at b)
  int b = 0;
  std::array<std::array<double, 4>, 4> psi{};
};

struct PotentialTables {
  std::vector<EdgePotential> edges;           // 4-connected lattice
  std::vector<std::array<double, 4>> phi;     // per node
};

PotentialTables build_potentials(const StitchProblem& p);

// Sum of log edge potentials plus sum of log node potentials; the
// normalizing constant is omitted.
double log_posterior(std::span<const std::uint8_t> config, const PotentialTables& pt);

struct AnnealSchedule {
  double t0 = 1.0;
  double rho = 0.95;
  int sweeps_per_temperature = 20;
  double t_min = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AnnealResult {
  std::vector<std::uint8_t> labels;  // best configuration seen
  double log_posterior = 0.0;
  double initial_log_posterior = 0.0;
  std::vector<double> trace;  // incumbent log-posterior after each temperature
  std::size_t accepted = 0;
  std::size_t proposals = 0;
};

// First half of the columns (rows when vertical) from obs_a, the rest from obs_b.
std::vector<std::uint8_t> composite_initialization(const StitchProblem& p);

AnnealResult simulated_anneal(const StitchProblem& p, const AnnealSchedule& sched);
AnnealResult simulated_anneal(const StitchProblem& p, const PotentialTables& pt, const AnnealSchedule& sched);

// Exact MAP by dynamic programming over lines of the grid; the shorter side
// may have at most 5 nodes. Ties resolve to the lexicographically smallest
// state sequence.
struct ExactMap {
  std::vector<std::uint8_t> labels;
  double log_posterior = 0.0;
};
ExactMap exact_map(const StitchProblem& p, const PotentialTables& pt);
// Enumerates all 4^n configurations; n <= 12.
ExactMap brute_force_map(const StitchProblem& p, const PotentialTables& pt);

// A classified subdomain: `core` boxes tile the domain, `labels` cover the
// padded box.
struct StitchFragment {
  Box core;
  Fragment labels;  // labels.box is the padded box
};

struct PairReport {
  int a = 0;
  int b = 0;
  int axis = 0;
  Box region;
  std::size_t problems = 0;       // 2-D problems solved by annealing
  std::size_t disagreements = 0;  // voxels where the observations differ
  std::size_t changed = 0;        // voxels whose label differs from the core-owner assembly
  double log_posterior_gain = 0.0;
};

struct StitchResult {
  LabelVolume labels;
  std::vector<PairReport> pairs;
};

struct StitchOptions {
  AnnealSchedule schedule;
  int overlap = 4;
  int workers = 1;
};

// Starts from the core-owner assembly and replaces every joint region of
// face-adjacent fragments by its MAP labelling. Pairs across x and y are
// solved per axial slice, pairs across z per coronal slice. Fragments are
// visited in raster order of their core origin; each one is joined to its
// +x neighbours, then +y, then +z. Off-mask voxels end as BG.
StitchResult stitch_volume(const std::vector<StitchFragment>& fragments, const Dims& dims,
                           std::span<const std::uint8_t> mask, const StitchOptions& opts);

// 2-D form: every fragment must span one axial slice.
std::vector<std::uint8_t> stitch_slice(const std::vector<StitchFragment>& fragments, int nx, int ny,
                                       std::span<const std::uint8_t> mask, const StitchOptions& opts);

}  // namespace kfdaseg

#endif  // KFDASEG_STITCH_H_
