// kfdaseg command line: each pipeline stage as a verb, `run` chains them.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kfdaseg/error.h"
#include "kfdaseg/pipeline.h"
#include "kfdaseg/report.h"
#include "kfdaseg/volume_io.h"

namespace fs = std::filesystem;
using namespace kfdaseg;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

LabelVolume init_labels(const PipelineConfig& cfg, const MultiChannelVolume& vol) {
  const fs::path saved = cfg.output / "init.json";
  if (fs::exists(saved)) return load_labels(saved);
  return make_initial_labels(vol, cfg);
}

PartitionTree load_partition(const PipelineConfig& cfg) {
  return partition_from_json(read_text(cfg.output / "partition.json"));
}

void stage_phantom(const PipelineConfig& cfg) {
  Phantom ph = generate_phantom(cfg.phantom);
  save_volume(ph.volume, cfg.output / "phantom");
  save_labels(ph.truth, cfg.output / "truth");
  std::cout << "phantom " << cfg.phantom.dims.nx << "x" << cfg.phantom.dims.ny << "x" << cfg.phantom.dims.nz
            << " -> " << (cfg.output / "phantom.json").string() << "\n";
}

void stage_init(const PipelineConfig& cfg) {
  const LoadedInput in = load_input(cfg);
  const LabelVolume init = make_initial_labels(in.volume, cfg);
  save_labels(init, cfg.output / "init");
  std::cout << "init CSF " << init.count(kCsf) << " GM " << init.count(kGm) << " WM " << init.count(kWm) << "\n";
}

void stage_partition(const PipelineConfig& cfg) {
  const LoadedInput in = load_input(cfg);
  const PartitionTree tree = partition(in.volume, cfg.partition);
  write_text(cfg.output / "partition.json", partition_to_json(tree));
  write_text(cfg.output / "curves.csv", curves_csv(tree.levels));
  std::cout << "partition: " << tree.leaves.size() << " subdomains (intercept " << tree.intercept << ")\n";
}

void stage_classify(const PipelineConfig& cfg) {
  const LoadedInput in = load_input(cfg);
  const LabelVolume init = init_labels(cfg, in.volume);
  const PartitionTree tree = load_partition(cfg);
  const std::vector<SubdomainResult> results = classify_leaves(in.volume, init, tree, cfg);
  fs::create_directories(cfg.output / "diagnostics");
  for (std::size_t i = 0; i < results.size(); ++i) {
    const int id = tree.leaves[i].id;
    char name[32];
    std::snprintf(name, sizeof name, "domain_%03d.json", id);
    write_text(cfg.output / "diagnostics" / name, subdomain_diagnostics_json(results[i], id));
  }
  save_fragments(cfg.output / "fragments", tree, results);
  std::cout << "classify: " << results.size() << " fragments\n";
}

void stage_stitch(const PipelineConfig& cfg) {
  const LoadedInput in = load_input(cfg);
  const std::vector<StitchFragment> frags = load_fragments(cfg.output / "fragments");
  const StitchResult r = stitch_volume(frags, in.volume.dims(), in.volume.mask(), stitch_options(cfg));
  save_labels(r.labels, cfg.output / "labels");
  std::cout << "stitch: " << r.pairs.size() << " joints\n";
}

void print_summary(const RunReport& rep) {
  std::cout << "subdomains " << rep.domains.size() << ", kfda MSSIM >= initial in " << rep.domains_improved << "\n";
  std::cout << "counts CSF/GM/WM initial " << rep.counts_initial[0] << "/" << rep.counts_initial[1] << "/"
            << rep.counts_initial[2] << " final " << rep.counts_final[0] << "/" << rep.counts_final[1] << "/"
            << rep.counts_final[2] << "\n";
  if (rep.dice_final) {
    std::cout << "dice CSF/GM/WM " << (*rep.dice_final)[0] << " " << (*rep.dice_final)[1] << " "
              << (*rep.dice_final)[2] << "\n";
  }
}

void stage_report(const PipelineConfig& cfg) {
  const LoadedInput in = load_input(cfg);
  const LabelVolume init = init_labels(cfg, in.volume);
  const LabelVolume labels = load_labels(cfg.output / "labels");
  const PartitionTree tree = load_partition(cfg);
  const RunReport rep = build_report(in.volume, init, labels, tree, nullptr, cfg, in.truth ? &*in.truth : nullptr);
  emit_report(rep, cfg.output);
  print_summary(rep);
}

void stage_run(const PipelineConfig& cfg) {
  const RunResult r = run_pipeline(cfg);
  print_summary(r.report);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tissue classification of multi-channel brain volumes by regularized kernel Fisher analysis"};
  app.require_subcommand(0, 1);
  std::string config_path, out_dir, stage;
  int workers = 0;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--out", out_dir, "output directory (overrides the config)");
  app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "master random seed");
  app.add_option("--stage", stage, "stage to run when no verb is given")
      ->check(CLI::IsMember({"phantom", "init", "partition", "classify", "stitch", "run", "report"}));
  app.fallthrough();
  for (const char* verb : {"phantom", "init", "partition", "classify", "stitch", "run", "report"}) {
    app.add_subcommand(verb, std::string("run the ") + verb + " stage");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }
  for (const CLI::App* sub : app.get_subcommands()) stage = sub->get_name();
  if (stage.empty()) {
    std::cerr << "kfdaseg: give a verb or --stage\n" << app.help();
    return kExitValidation;
  }

  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (!out_dir.empty()) cfg.output = out_dir;
    if (workers > 0) cfg.workers = workers;
    if (*seed_opt) cfg.seed = seed;
    cfg.validate();
    fs::create_directories(cfg.output);
    if (stage == "phantom") stage_phantom(cfg);
    else if (stage == "init") stage_init(cfg);
    else if (stage == "partition") stage_partition(cfg);
    else if (stage == "classify") stage_classify(cfg);
    else if (stage == "stitch") stage_stitch(cfg);
    else if (stage == "report") stage_report(cfg);
    else stage_run(cfg);
  } catch (const NumericalError& e) {
    std::cerr << "kfdaseg: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ValidationError& e) {
    std::cerr << "kfdaseg: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "kfdaseg: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
