#include "kfdaseg/pipeline.h"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>

#include <json.hpp>

#include "kfdaseg/error.h"
#include "kfdaseg/parallel.h"
#include "kfdaseg/random.h"
#include "kfdaseg/report.h"
#include "kfdaseg/volume_io.h"

namespace kfdaseg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed streams: (seed, stream, index, 0).
constexpr std::uint64_t kStreamClassify = 1;
constexpr std::uint64_t kStreamStitch = 2;
constexpr std::uint64_t kStreamCorrupt = 3;
constexpr std::uint64_t kStreamErode = 4;

json kernel_json(const KernelSpec& k) {
  switch (k.kind) {
    case KernelKind::kSigmoid:
      return {{"type", "sigmoid"}, {"a", k.a}, {"b", k.b}};
    case KernelKind::kRbf:
      return {{"type", "rbf"}, {"sigma", k.sigma}};
    case KernelKind::kPolynomial:
      return {{"type", "polynomial"}, {"degree", k.degree}};
  }
  return {};
}

KernelSpec kernel_from(const json& j, KernelSpec dflt) {
  const std::string type = j.value("type", std::string());
  if (type == "sigmoid") return KernelSpec::sigmoid(j.value("a", dflt.a), j.value("b", dflt.b));
  if (type == "rbf") return KernelSpec::rbf(j.value("sigma", dflt.sigma));
  if (type == "polynomial" || type == "linear") return KernelSpec::polynomial(j.value("degree", 1));
  throw ValidationError("unknown kernel type '" + type + "'");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path q(p);
  return q.is_relative() && !base.empty() ? base / q : q;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs `fn`, re-raising library errors with the stage name in front.
template <typename Fn>
auto in_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError(stage_message(stage, e.what()), e.residual());
  } catch (const ValidationError& e) {
    throw ValidationError(stage_message(stage, e.what()));
  }
}

std::string domain_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "domain_%03d", id);
  return buf;
}

SubdomainResult classify_leaf(const MultiChannelVolume& normalized, const LabelVolume& init, const Subdomain& leaf,
                              const PipelineConfig& cfg) {
  try {
    return classify_subdomain(normalized, leaf.padded, init, cfg.classify,
                              derive_seed(cfg.seed, kStreamClassify, static_cast<std::uint64_t>(leaf.id), 0));
  } catch (const NumericalError& e) {
    throw NumericalError(domain_name(leaf.id) + ": " + e.what(), e.residual());
  } catch (const ValidationError& e) {
    throw ValidationError(domain_name(leaf.id) + ": " + e.what());
  }
}

std::optional<double> chosen_lambda(const StepReport& s) {
  if (s.skipped || s.chosen < 0) return std::nullopt;
  return s.trials[static_cast<std::size_t>(s.chosen)].lambda;
}

}  // namespace

std::string stage_message(const std::string& stage, const std::string& what) {
  return "[" + stage + "] " + what;
}

void PipelineConfig::validate() const {
  if (!volume.empty()) {
    const fs::path stem = volume_stem(volume);
    if (!fs::exists(stem.string() + ".json")) throw ValidationError("volume file not found: " + volume.string());
  } else {
    phantom.validate();
  }
  if (!truth.empty() && !fs::exists(volume_stem(truth).string() + ".json")) {
    throw ValidationError("truth file not found: " + truth.string());
  }
  if (init.source != "kmeans" && !fs::exists(volume_stem(init.source).string() + ".json")) {
    throw ValidationError("initial label file not found: " + init.source);
  }
  if (!(init.corrupt_boundary >= 0.0 && init.corrupt_boundary <= 1.0)) {
    throw ValidationError("init.corrupt_boundary must be in [0,1]");
  }
  if (!(init.erode_csf >= 0.0 && init.erode_csf < 1.0)) throw ValidationError("init.erode_csf must be in [0,1)");
  if (partition.max_depth < 1) throw ValidationError("partition.max_depth must be >= 1");
  if (partition.min_slab < 1) throw ValidationError("partition.min_slab must be >= 1");
  if (partition.overlap < 0 || partition.overlap % 2 != 0) throw ValidationError("overlap must be even and >= 0");
  classify.validate();
  anneal.validate();
  if (workers < 1) throw ValidationError("workers must be >= 1");
}

PipelineConfig config_from_json(const std::string& text, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    const json j = json::parse(text);
    if (j.contains("input")) {
      const json& in = j["input"];
      c.volume = resolve(base_dir, in.value("volume", std::string()));
      c.truth = resolve(base_dir, in.value("truth", std::string()));
      const std::string init = in.value("init", std::string("kmeans"));
      c.init.source = init == "kmeans" ? init : resolve(base_dir, init).string();
    }
    if (j.contains("output")) c.output = resolve(base_dir, j["output"].get<std::string>());
    if (j.contains("init")) {
      const json& in = j["init"];
      c.init.corrupt_boundary = in.value("corrupt_boundary", c.init.corrupt_boundary);
      c.init.erode_csf = in.value("erode_csf", c.init.erode_csf);
      c.init.kmeans.seed = in.value("kmeans_seed", c.init.kmeans.seed);
      c.init.kmeans.max_iterations = in.value("kmeans_iterations", c.init.kmeans.max_iterations);
    }
    if (j.contains("phantom")) {
      const json& p = j["phantom"];
      if (p.contains("dims")) c.phantom.dims = Dims{p["dims"].at(0), p["dims"].at(1), p["dims"].at(2)};
      if (p.contains("class_means")) {
        c.phantom.class_means = p["class_means"].get<std::array<std::array<double, 3>, 3>>();
      }
      c.phantom.bias_amplitude = p.value("bias", c.phantom.bias_amplitude);
      c.phantom.noise_sigma = p.value("noise_sigma", c.phantom.noise_sigma);
      c.phantom.pv_width = p.value("pv_width", c.phantom.pv_width);
      c.phantom.fold_amplitude = p.value("fold", c.phantom.fold_amplitude);
      const std::string geo = p.value("geometry", std::string("shells"));
      if (geo == "shells") {
        c.phantom.geometry = PhantomGeometry::kShells;
      } else if (geo == "blocks") {
        c.phantom.geometry = PhantomGeometry::kBlocks;
      } else {
        throw ValidationError("unknown phantom geometry '" + geo + "'");
      }
      c.phantom.seed = p.value("seed", c.phantom.seed);
    }
    if (j.contains("partition")) {
      const json& p = j["partition"];
      c.partition.max_depth = p.value("max_depth", c.partition.max_depth);
      c.partition.min_slab = p.value("min_slab", c.partition.min_slab);
      c.partition.overlap = p.value("overlap", c.partition.overlap);
      c.partition.reference_channel = p.value("reference_channel", c.partition.reference_channel);
    }
    if (j.contains("classify")) {
      const json& p = j["classify"];
      if (p.contains("csf_kernel")) c.classify.csf_kernel = kernel_from(p["csf_kernel"], c.classify.csf_kernel);
      if (p.contains("tissue_kernel")) {
        c.classify.tissue_kernel = kernel_from(p["tissue_kernel"], c.classify.tissue_kernel);
      }
      c.classify.lambdas = p.value("lambdas", c.classify.lambdas);
      c.classify.k_grid = p.value("k_grid", c.classify.k_grid);
      c.classify.categorize.tau_band = p.value("tau_band", c.classify.categorize.tau_band);
      c.classify.categorize.tau_outlier = p.value("tau_outlier", c.classify.categorize.tau_outlier);
      c.classify.max_training = p.value("max_training", c.classify.max_training);
      c.classify.max_prototypes = p.value("max_prototypes", c.classify.max_prototypes);
      c.classify.center_features = p.value("center_features", c.classify.center_features);
      const std::string pool = p.value("mssim_pooling", std::string("per_slice"));
      if (pool == "per_slice") {
        c.classify.pooling = MssimPooling::kPerSlice;
      } else if (pool == "pooled") {
        c.classify.pooling = MssimPooling::kPooled;
      } else {
        throw ValidationError("unknown mssim_pooling '" + pool + "'");
      }
    }
    c.classify.reference_channel = c.partition.reference_channel;
    if (j.contains("stitch")) {
      const json& p = j["stitch"];
      c.anneal.t0 = p.value("t0", c.anneal.t0);
      c.anneal.rho = p.value("rho", c.anneal.rho);
      c.anneal.sweeps_per_temperature = p.value("sweeps", c.anneal.sweeps_per_temperature);
      c.anneal.t_min = p.value("t_min", c.anneal.t_min);
    }
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  return config_from_json(read_text(path), path.parent_path());
}

std::string config_to_json(const PipelineConfig& c) {
  json j;
  j["input"] = {{"volume", c.volume.string()}, {"truth", c.truth.string()}, {"init", c.init.source}};
  j["output"] = c.output.string();
  j["init"] = {{"corrupt_boundary", c.init.corrupt_boundary},
               {"erode_csf", c.init.erode_csf},
               {"kmeans_seed", c.init.kmeans.seed},
               {"kmeans_iterations", c.init.kmeans.max_iterations}};
  j["phantom"] = {{"dims", {c.phantom.dims.nx, c.phantom.dims.ny, c.phantom.dims.nz}},
                  {"class_means", c.phantom.class_means},
                  {"bias", c.phantom.bias_amplitude},
                  {"noise_sigma", c.phantom.noise_sigma},
                  {"pv_width", c.phantom.pv_width},
                  {"fold", c.phantom.fold_amplitude},
                  {"geometry", c.phantom.geometry == PhantomGeometry::kShells ? "shells" : "blocks"},
                  {"seed", c.phantom.seed}};
  j["partition"] = {{"max_depth", c.partition.max_depth},
                    {"min_slab", c.partition.min_slab},
                    {"overlap", c.partition.overlap},
                    {"reference_channel", c.partition.reference_channel}};
  j["classify"] = {{"csf_kernel", kernel_json(c.classify.csf_kernel)},
                   {"tissue_kernel", kernel_json(c.classify.tissue_kernel)},
                   {"lambdas", c.classify.lambdas},
                   {"k_grid", c.classify.k_grid},
                   {"tau_band", c.classify.categorize.tau_band},
                   {"tau_outlier", c.classify.categorize.tau_outlier},
                   {"max_training", c.classify.max_training},
                   {"max_prototypes", c.classify.max_prototypes},
                   {"center_features", c.classify.center_features},
                   {"mssim_pooling", c.classify.pooling == MssimPooling::kPerSlice ? "per_slice" : "pooled"}};
  j["stitch"] = {{"t0", c.anneal.t0},
                 {"rho", c.anneal.rho},
                 {"sweeps", c.anneal.sweeps_per_temperature},
                 {"t_min", c.anneal.t_min}};
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  return j.dump(2);
}

double domain_mssim(const MultiChannelVolume& normalized, const LabelVolume& labels, const Box& box,
                    const ClassifyConfig& cfg) {
  std::vector<std::uint8_t> mask;
  ScalarField ref = extract_field(normalized, box, cfg.reference_channel, &mask);
  const Fragment frag = extract_fragment(labels, box);
  const ScalarField img = classified_mean_image(frag.labels, ref, mask);
  return mssim(img, ref, mask, cfg.ssim, cfg.pooling);
}

LabelVolume make_initial_labels(const MultiChannelVolume& volume, const PipelineConfig& cfg) {
  LabelVolume init = cfg.init.source == "kmeans" ? kmeans_init(volume, cfg.init.kmeans) : load_labels(cfg.init.source);
  if (!(init.dims() == volume.dims())) throw ValidationError("initial labels do not match the volume dims");
  init.check_mask_consistent(volume.mask());
  if (cfg.init.corrupt_boundary > 0.0) {
    corrupt_boundary(&init, cfg.init.corrupt_boundary, derive_seed(cfg.seed, kStreamCorrupt, 0, 0));
  }
  if (cfg.init.erode_csf > 0.0) erode_class(&init, kCsf, cfg.init.erode_csf, derive_seed(cfg.seed, kStreamErode, 0, 0));
  return init;
}

LoadedInput load_input(const PipelineConfig& cfg) {
  LoadedInput in;
  if (cfg.volume.empty()) {
    Phantom ph = generate_phantom(cfg.phantom);
    in.volume = normalize_intensities(ph.volume);
    in.truth = std::move(ph.truth);
  } else {
    in.volume = normalize_intensities(load_volume(cfg.volume));
  }
  if (!cfg.truth.empty()) in.truth = load_labels(cfg.truth);
  if (in.truth && !(in.truth->dims() == in.volume.dims())) throw ValidationError("truth labels do not match the volume");
  return in;
}

std::vector<SubdomainResult> classify_leaves(const MultiChannelVolume& normalized, const LabelVolume& init,
                                             const PartitionTree& tree, const PipelineConfig& cfg) {
  std::vector<SubdomainResult> out(tree.leaves.size());
  parallel_for(tree.leaves.size(), cfg.workers,
               [&](std::size_t i) { out[i] = classify_leaf(normalized, init, tree.leaves[i], cfg); });
  return out;
}

StitchOptions stitch_options(const PipelineConfig& cfg) {
  StitchOptions opts;
  opts.schedule = cfg.anneal;
  opts.schedule.seed = derive_seed(cfg.seed, kStreamStitch, 0, 0);
  opts.overlap = cfg.partition.overlap;
  opts.workers = cfg.workers;
  return opts;
}

LabelVolume stitch_leaves(const MultiChannelVolume& normalized, const PartitionTree& tree,
                          const std::vector<SubdomainResult>& subdomains, const PipelineConfig& cfg,
                          StitchResult* detail) {
  if (subdomains.size() != tree.leaves.size()) throw ValidationError("one classified fragment per leaf is required");
  std::vector<StitchFragment> frags;
  frags.reserve(subdomains.size());
  for (std::size_t i = 0; i < subdomains.size(); ++i) frags.push_back({tree.leaves[i].core, subdomains[i].fragment});
  StitchResult r = stitch_volume(frags, normalized.dims(), normalized.mask(), stitch_options(cfg));
  LabelVolume labels = r.labels;
  if (detail != nullptr) *detail = std::move(r);
  return labels;
}

RunReport build_report(const MultiChannelVolume& normalized, const LabelVolume& init, const LabelVolume& labels,
                       const PartitionTree& tree, const std::vector<SubdomainResult>* subdomains,
                       const PipelineConfig& cfg, const LabelVolume* truth) {
  RunReport rep;
  rep.seed = cfg.seed;
  rep.curves = tree.levels;
  rep.intercept = tree.intercept;
  rep.selected_count = tree.selected_count;
  rep.warnings = tree.warnings;
  for (int c = 0; c < 3; ++c) {
    const auto label = static_cast<std::uint8_t>(kCsf + c);
    rep.counts_initial[c] = init.count(label);
    rep.counts_final[c] = labels.count(label);
  }
  if (truth != nullptr) {
    std::array<double, 3> di{}, df{};
    for (int c = 0; c < 3; ++c) {
      const auto label = static_cast<std::uint8_t>(kCsf + c);
      di[c] = dice(init, *truth, label);
      df[c] = dice(labels, *truth, label);
    }
    rep.dice_initial = di;
    rep.dice_final = df;
  }
  for (const Subdomain& leaf : tree.leaves) {
    DomainRow row;
    row.domain = leaf.id;
    row.core = leaf.core;
    row.padded = leaf.padded;
    row.voxels = leaf.voxel_count;
    row.mssim_initial = domain_mssim(normalized, init, leaf.padded, cfg.classify);
    row.mssim_kfda = domain_mssim(normalized, labels, leaf.padded, cfg.classify);
    if (subdomains != nullptr && static_cast<std::size_t>(leaf.id) < subdomains->size()) {
      const SubdomainResult& r = (*subdomains)[static_cast<std::size_t>(leaf.id)];
      row.csf_lambda = chosen_lambda(r.csf_step);
      row.tissue_lambda = chosen_lambda(r.tissue_step);
      for (const std::string& w : r.warnings) rep.warnings.push_back(domain_name(leaf.id) + ": " + w);
    }
    if (row.mssim_kfda >= row.mssim_initial) ++rep.domains_improved;
    rep.domains.push_back(row);
  }
  return rep;
}

RunResult run_pipeline(const MultiChannelVolume& volume, const LabelVolume& init, const PipelineConfig& cfg,
                       const LabelVolume* truth) {
  in_stage("config", [&] { cfg.classify.validate(); cfg.anneal.validate(); });
  RunResult res;
  res.volume = normalize_intensities(volume);
  res.init = init;
  in_stage("init", [&] {
    if (!(init.dims() == volume.dims())) throw ValidationError("initial labels do not match the volume dims");
    init.check_mask_consistent(volume.mask());
  });

  auto t0 = std::chrono::steady_clock::now();
  res.tree = in_stage("partition", [&] { return partition(res.volume, cfg.partition); });
  res.timing.partition_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  res.subdomains = in_stage("classify", [&] { return classify_leaves(res.volume, init, res.tree, cfg); });
  res.timing.classify_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  res.labels = in_stage("stitch", [&] { return stitch_leaves(res.volume, res.tree, res.subdomains, cfg, &res.stitch); });
  res.timing.stitch_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  res.report = in_stage("report", [&] {
    return build_report(res.volume, init, res.labels, res.tree, &res.subdomains, cfg, truth);
  });
  res.timing.report_s = seconds_since(t0);
  return res;
}

void save_fragments(const fs::path& dir, const PartitionTree& tree, const std::vector<SubdomainResult>& subdomains) {
  if (subdomains.size() != tree.leaves.size()) throw ValidationError("one classified fragment per leaf is required");
  fs::create_directories(dir);
  json index = json::array();
  for (std::size_t i = 0; i < subdomains.size(); ++i) {
    const Subdomain& leaf = tree.leaves[i];
    const Fragment& f = subdomains[i].fragment;
    const std::string name = domain_name(leaf.id);
    save_labels(LabelVolume(f.box.dims(), f.labels), dir / name);
    index.push_back({{"id", leaf.id},
                     {"file", name},
                     {"core", {{"lo", leaf.core.lo}, {"hi", leaf.core.hi}}},
                     {"padded", {{"lo", f.box.lo}, {"hi", f.box.hi}}}});
  }
  write_text(dir / "index.json", index.dump(2));
}

std::vector<StitchFragment> load_fragments(const fs::path& dir) {
  std::vector<StitchFragment> out;
  try {
    const json index = json::parse(read_text(dir / "index.json"));
    for (const json& e : index) {
      StitchFragment f;
      f.core.lo = e.at("core").at("lo").get<std::array<int, 3>>();
      f.core.hi = e.at("core").at("hi").get<std::array<int, 3>>();
      f.labels.box.lo = e.at("padded").at("lo").get<std::array<int, 3>>();
      f.labels.box.hi = e.at("padded").at("hi").get<std::array<int, 3>>();
      LabelVolume l = load_labels(dir / e.at("file").get<std::string>());
      if (!(l.dims() == f.labels.box.dims())) throw ValidationError("fragment " + e.at("file").get<std::string>() +
                                                                    " does not match its box");
      f.labels.labels.assign(l.labels().begin(), l.labels().end());
      out.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed fragment index: ") + e.what());
  }
  return out;
}

RunResult run_pipeline(const PipelineConfig& cfg) {
  in_stage("config", [&] { cfg.validate(); });
  const fs::path out = cfg.output;
  in_stage("output", [&] {
    std::error_code ec;
    fs::create_directories(out / "diagnostics", ec);
    if (ec) throw ValidationError("cannot create output directory " + out.string() + ": " + ec.message());
  });
  LoadedInput input = in_stage("input", [&] { return load_input(cfg); });
  const LabelVolume init = in_stage("init", [&] { return make_initial_labels(input.volume, cfg); });
  save_labels(init, out / "init");

  RunResult res;
  res.volume = input.volume;
  res.init = init;
  auto t0 = std::chrono::steady_clock::now();
  res.tree = in_stage("partition", [&] { return partition(res.volume, cfg.partition); });
  res.timing.partition_s = seconds_since(t0);
  write_text(out / "partition.json", partition_to_json(res.tree));

  t0 = std::chrono::steady_clock::now();
  // Per-leaf so that finished diagnostics survive a failure in another leaf.
  std::vector<std::optional<SubdomainResult>> partial(res.tree.leaves.size());
  std::mutex io;
  in_stage("classify", [&] {
    parallel_for(res.tree.leaves.size(), cfg.workers, [&](std::size_t i) {
      const Subdomain& leaf = res.tree.leaves[i];
      SubdomainResult r = classify_leaf(res.volume, init, leaf, cfg);
      const std::string diag = subdomain_diagnostics_json(r, leaf.id);
      {
        std::lock_guard<std::mutex> lock(io);
        write_text(out / "diagnostics" / (domain_name(leaf.id) + ".json"), diag);
      }
      partial[i] = std::move(r);
    });
  });
  for (auto& p : partial) res.subdomains.push_back(std::move(*p));
  res.timing.classify_s = seconds_since(t0);
  save_fragments(out / "fragments", res.tree, res.subdomains);

  t0 = std::chrono::steady_clock::now();
  res.labels = in_stage("stitch", [&] { return stitch_leaves(res.volume, res.tree, res.subdomains, cfg, &res.stitch); });
  res.timing.stitch_s = seconds_since(t0);
  save_labels(res.labels, out / "labels");

  t0 = std::chrono::steady_clock::now();
  res.report = in_stage("report", [&] {
    return build_report(res.volume, init, res.labels, res.tree, &res.subdomains, cfg,
                        input.truth ? &*input.truth : nullptr);
  });
  in_stage("report", [&] { emit_report(res.report, out); });
  res.timing.report_s = seconds_since(t0);
  write_text(out / "timing.json", timing_to_json(res.timing));
  return res;
}

}  // namespace kfdaseg
