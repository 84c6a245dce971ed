#ifndef KFDASEG_PIPELINE_H_
#define KFDASEG_PIPELINE_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kfdaseg/classify.h"
#include "kfdaseg/kmeans.h"
#include "kfdaseg/partition.h"
#include "kfdaseg/phantom.h"
#include "kfdaseg/stitch.h"
#include "kfdaseg/volume.h"

namespace kfdaseg {

struct InitConfig {
  std::string source = "kmeans";  // "kmeans" or a label file path
  double corrupt_boundary = 0.0;  // fraction of boundary voxels relabelled after initialization
  double erode_csf = 0.0;         // fraction of CSF removed after initialization
  KmeansOptions kmeans;
};

struct PipelineConfig {
  std::filesystem::path volume;  // input volume; empty when a phantom is generated
  std::filesystem::path truth;   // optional ground truth labels
  std::filesystem::path output = "out";
  InitConfig init;
  PhantomSpec phantom;
  PartitionConfig partition;
  ClassifyConfig classify;
  AnnealSchedule anneal;
  std::uint64_t seed = 1;
  int workers = 1;

  void validate() const;
};

// Reads a JSON configuration; relative paths are resolved against the
// directory of the file. Missing fields keep their defaults.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
std::string config_to_json(const PipelineConfig& cfg);

struct DomainRow {
  int domain = 0;
  Box core;
  Box padded;
  std::size_t voxels = 0;
  double mssim_initial = 0.0;
  double mssim_kfda = 0.0;
  std::optional<double> csf_lambda;
  std::optional<double> tissue_lambda;
};

struct RunReport {
  std::vector<DomainRow> domains;
  std::vector<LevelStats> curves;
  double intercept = 0.0;
  std::size_t selected_count = 0;
  std::array<std::size_t, 3> counts_initial{};  // CSF, GM, WM
  std::array<std::size_t, 3> counts_final{};
  std::optional<std::array<double, 3>> dice_initial;
  std::optional<std::array<double, 3>> dice_final;
  std::size_t domains_improved = 0;  // kfda MSSIM >= initial MSSIM
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;
};

struct RunTiming {
  double partition_s = 0.0;
  double classify_s = 0.0;
  double stitch_s = 0.0;
  double report_s = 0.0;
};

struct RunResult {
  MultiChannelVolume volume;  // normalized input
  LabelVolume init;
  LabelVolume labels;
  PartitionTree tree;
  std::vector<SubdomainResult> subdomains;
  StitchResult stitch;
  RunReport report;
  RunTiming timing;
};

// Error raised inside a pipeline stage; the message is prefixed with the stage name.
std::string stage_message(const std::string& stage, const std::string& what);

// Partition, per-subdomain classification and stitching of an in-memory
// volume. The volume is normalized first.
RunResult run_pipeline(const MultiChannelVolume& volume, const LabelVolume& init, const PipelineConfig& cfg,
                       const LabelVolume* truth = nullptr);

// Per-domain MSSIM of `labels` against the reference channel over each leaf's padded box.
double domain_mssim(const MultiChannelVolume& normalized, const LabelVolume& labels, const Box& box,
                    const ClassifyConfig& cfg);

RunReport build_report(const MultiChannelVolume& normalized, const LabelVolume& init, const LabelVolume& labels,
                       const PartitionTree& tree, const std::vector<SubdomainResult>* subdomains,
                       const PipelineConfig& cfg, const LabelVolume* truth);

// Initial labels per the init config: k-means or a file, then the optional
// boundary corruption and CSF erosion.
LabelVolume make_initial_labels(const MultiChannelVolume& volume, const PipelineConfig& cfg);

// Input volume (normalized) and optional truth: loaded from cfg.volume, or a
// generated phantom when cfg.volume is empty.
struct LoadedInput {
  MultiChannelVolume volume;
  std::optional<LabelVolume> truth;
};
LoadedInput load_input(const PipelineConfig& cfg);

// Classification of every leaf of `tree`, fanned out over cfg.workers.
// Per-leaf random streams depend only on cfg.seed and the leaf id.
std::vector<SubdomainResult> classify_leaves(const MultiChannelVolume& normalized, const LabelVolume& init,
                                             const PartitionTree& tree, const PipelineConfig& cfg);

// Stitch options for cfg: its anneal schedule, overlap and workers, with the
// annealing seed derived from cfg.seed.
StitchOptions stitch_options(const PipelineConfig& cfg);

LabelVolume stitch_leaves(const MultiChannelVolume& normalized, const PartitionTree& tree,
                          const std::vector<SubdomainResult>& subdomains, const PipelineConfig& cfg,
                          StitchResult* detail = nullptr);

// fragments/index.json plus one label file per leaf over its padded box.
void save_fragments(const std::filesystem::path& dir, const PartitionTree& tree,
                    const std::vector<SubdomainResult>& subdomains);
std::vector<StitchFragment> load_fragments(const std::filesystem::path& dir);

// File-based end-to-end run; writes everything under cfg.output: labels,
// init labels, partition.json, diagnostics/, fragments/, report files and
// timing.json. Diagnostics of the subdomains that finished are kept when a
// later stage fails.
RunResult run_pipeline(const PipelineConfig& cfg);

}  // namespace kfdaseg

#endif  // KFDASEG_PIPELINE_H_
