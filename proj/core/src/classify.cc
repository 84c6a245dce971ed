#include "kfdaseg/classify.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "kfdaseg/error.h"
#include "kfdaseg/random.h"

namespace kfdaseg {

void ClassifyConfig::validate() const {
  csf_kernel.validate();
  tissue_kernel.validate();
  if (lambdas.empty()) throw ValidationError("lambda grid must not be empty");
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ValidationError("lambda values must be >= 0");
  }
  if (k_grid.empty()) throw ValidationError("k grid must not be empty");
  for (int k : k_grid) {
    if (k < 1 || k % 2 == 0) throw ValidationError("k grid values must be odd and >= 1");
  }
  if (max_training < 4) throw ValidationError("max_training must be >= 4");
  if (max_prototypes < 1) throw ValidationError("max_prototypes must be >= 1");
  ssim.validate();
}

ScalarField extract_field(const MultiChannelVolume& vol, const Box& box, int channel,
                          std::vector<std::uint8_t>* mask) {
  if (!box.inside(vol.dims())) throw ValidationError("extract_field: box " + to_string(box) + " outside volume");
  ScalarField f{box.dims(), {}};
  f.values.reserve(box.voxel_count());
  if (mask != nullptr) {
    mask->clear();
    mask->reserve(box.voxel_count());
  }
  for (int k = box.lo[2]; k <= box.hi[2]; ++k) {
    for (int j = box.lo[1]; j <= box.hi[1]; ++j) {
      for (int i = box.lo[0]; i <= box.hi[0]; ++i) {
        const std::size_t v = vol.dims().index(i, j, k);
        f.values.push_back(vol.value(v, channel));
        if (mask != nullptr) mask->push_back(vol.masked(v) ? 1 : 0);
      }
    }
  }
  return f;
}

Fragment extract_fragment(const LabelVolume& labels, const Box& box) {
  if (!box.inside(labels.dims())) throw ValidationError("extract_fragment: box " + to_string(box) + " outside volume");
  Fragment f{box, {}};
  f.labels.reserve(box.voxel_count());
  for (int k = box.lo[2]; k <= box.hi[2]; ++k) {
    for (int j = box.lo[1]; j <= box.hi[1]; ++j) {
      for (int i = box.lo[0]; i <= box.hi[0]; ++i) f.labels.push_back(labels.at(i, j, k));
    }
  }
  return f;
}

namespace {

struct StepInput {
  const Eigen::MatrixXd* features;
  const std::vector<std::array<int, 3>>* coords;
  std::vector<int> side;
  KernelSpec kernel;
  std::function<double(std::span<const int>)> score;
};

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const int> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

// Training sample: at most half the budget per class, with any budget a
// small class leaves unused handed to the other.
TrainingSet draw_training(const Eigen::MatrixXd& features, std::span<const int> side, std::size_t cap,
                          std::uint64_t seed) {
  std::vector<int> minus, plus;
  for (std::size_t i = 0; i < side.size(); ++i) (side[i] < 0 ? minus : plus).push_back(static_cast<int>(i));
  std::size_t qm = std::min(minus.size(), cap / 2);
  std::size_t qp = std::min(plus.size(), cap - qm);
  qm = std::min(minus.size(), cap - qp);
  const std::vector<int> sm = subsample(minus, qm, derive_seed(seed, 11));
  const std::vector<int> sp = subsample(plus, qp, derive_seed(seed, 12));
  TrainingSet ts;
  ts.region_index = sm;
  ts.region_index.insert(ts.region_index.end(), sp.begin(), sp.end());
  std::sort(ts.region_index.begin(), ts.region_index.end());
  ts.x = take_rows(features, ts.region_index);
  ts.y.reserve(ts.region_index.size());
  for (int idx : ts.region_index) ts.y.push_back(side[idx]);
  return ts;
}

std::vector<int> run_step(const StepInput& in, const ClassifyConfig& cfg, std::uint64_t seed, StepReport* rep,
                          std::vector<std::string>* warnings) {
  const std::vector<int>& side = in.side;
  rep->voxels = side.size();
  rep->initial_minus = static_cast<std::size_t>(std::count(side.begin(), side.end(), -1));
  rep->initial_plus = side.size() - rep->initial_minus;
  rep->final_minus = rep->initial_minus;
  rep->final_plus = rep->initial_plus;
  if (rep->initial_minus < 2 || rep->initial_plus < 2) {
    rep->skipped = true;
    rep->reason = "a class has fewer than 2 initial voxels";
    return side;
  }
  rep->mssim_initial = in.score(side);

  // Centring leaves RBF distances and Mahalanobis decisions unchanged; it
  // keeps a sigmoid kernel out of saturation on [0,1] intensities.
  Eigen::MatrixXd x = *in.features;
  if (cfg.center_features) x.rowwise() -= x.colwise().mean();
  const TrainingSet ts = draw_training(x, side, cfg.max_training, seed);
  rep->training = ts.size();
  const Eigen::MatrixXd cross = kernel_matrix(in.kernel, ts.x, x);
  const NeighborGraph graph = build_neighbor_graph(*in.coords);
  const KfdaMatrices mats = build_matrices(ts, in.kernel, &cross, &graph);

  std::vector<int> best_labels;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < cfg.lambdas.size(); ++t) {
    LambdaTrial trial;
    trial.lambda = cfg.lambdas[t];
    try {
      const KfdaModel model = solve_alpha(mats, ts, in.kernel, trial.lambda, cfg.solve);
      trial.gamma = model.gamma;
      trial.iterations = model.iterations;
      trial.dense_solve = model.dense;
      const Eigen::VectorXd raw = cross.transpose() * model.alpha;
      trial.roughness = -edge_quadratic(graph, raw);
      const Eigen::VectorXd proj = raw.array() + model.b;
      const VoxelCategories cat = categorize(std::span<const double>(proj.data(), proj.size()), side, cfg.categorize);
      trial.overlap = cat.overlap_minus.size() + cat.overlap_plus.size();
      trial.outliers = cat.outliers_minus.size() + cat.outliers_plus.size();
      if (cat.prototypes_minus.size() < 2 || cat.prototypes_plus.size() < 2) {
        trial.error = "fewer than 2 prototypes in a class; initial labels kept";
        trial.solved = true;
        trial.mssim = rep->mssim_initial;
        if (trial.mssim > best) {
          best = trial.mssim;
          best_labels = side;
          rep->chosen = static_cast<int>(t);
        }
        rep->trials.push_back(trial);
        continue;
      }
      DecisionInput din;
      din.features = &x;
      din.init_side = side;
      din.categories = &cat;
      din.kernel = in.kernel;
      din.k_grid = cfg.k_grid;
      din.score = in.score;
      din.max_prototypes = cfg.max_prototypes;
      din.seed = derive_seed(seed, 21, t);
      DecisionResult dec = ssim_guided_decision(din);
      trial.solved = true;
      trial.mssim = dec.mssim;
      trial.best_k = dec.best_k;
      trial.used_knn = dec.used_knn;
      if (dec.mssim > best) {
        best = dec.mssim;
        best_labels = std::move(dec.labels);
        rep->chosen = static_cast<int>(t);
      }
    } catch (const NumericalError& e) {
      trial.error = e.what();
    }
    rep->trials.push_back(trial);
  }
  if (rep->chosen < 0) {
    warnings->push_back(rep->name + ": no lambda produced a solution; initial labels kept");
    return side;
  }
  rep->final_minus = static_cast<std::size_t>(std::count(best_labels.begin(), best_labels.end(), -1));
  rep->final_plus = best_labels.size() - rep->final_minus;
  return best_labels;
}

}  // namespace

SubdomainResult classify_subdomain(const MultiChannelVolume& vol, const Box& box, const LabelVolume& init,
                                   const ClassifyConfig& config, std::uint64_t seed) {
  config.validate();
  if (init.dims() != vol.dims()) throw ValidationError("classify_subdomain: label and volume dims differ");
  if (config.reference_channel < 0 || config.reference_channel >= vol.channels()) {
    throw ValidationError("classify_subdomain: reference channel out of range");
  }
  SubdomainResult res;
  res.csf_step.name = "csf";
  res.tissue_step.name = "gm_wm";

  const RegionSamples region = gather_region(vol, box);
  std::vector<std::uint8_t> box_mask;
  const ScalarField reference = extract_field(vol, box, config.reference_channel, &box_mask);
  const Dims bd = box.dims();
  auto box_index = [&](const std::array<int, 3>& c) {
    return bd.index(c[0] - box.lo[0], c[1] - box.lo[1], c[2] - box.lo[2]);
  };
  std::vector<std::size_t> slot(region.size());
  for (std::size_t n = 0; n < region.size(); ++n) slot[n] = box_index(region.coords[n]);

  std::vector<std::uint8_t> labels(region.size());
  for (std::size_t n = 0; n < region.size(); ++n) {
    const auto& c = region.coords[n];
    labels[n] = init.at(c[0], c[1], c[2]);
    if (labels[n] == kBg) throw ValidationError("classify_subdomain: masked voxel carries BG in the initial labels");
  }

  res.fragment.box = box;
  res.fragment.labels.assign(box.voxel_count(), kBg);
  if (region.size() == 0) {
    res.csf_step.skipped = res.tissue_step.skipped = true;
    res.csf_step.reason = res.tissue_step.reason = "no masked voxels";
    return res;
  }
  const MssimEvaluator eval(reference, box_mask, config.ssim, config.pooling);
  std::vector<std::uint8_t> image_codes(box.voxel_count(), kBg);

  // Step 1: CSF (-1) against GM+WM (+1).
  {
    StepInput in;
    in.features = &region.features;
    in.coords = &region.coords;
    in.kernel = config.csf_kernel;
    in.side.resize(region.size());
    for (std::size_t n = 0; n < region.size(); ++n) in.side[n] = labels[n] == kCsf ? -1 : 1;
    in.score = [&](std::span<const int> s) {
      for (std::size_t n = 0; n < s.size(); ++n) image_codes[slot[n]] = s[n] < 0 ? kCsf : kGm;
      return eval(classified_mean_image(image_codes, reference, box_mask));
    };
    const std::vector<int> out = run_step(in, config, derive_seed(seed, 1), &res.csf_step, &res.warnings);

    // Voxels leaving CSF take GM or WM by the nearer initial class mean.
    Eigen::VectorXd mean_gm = Eigen::VectorXd::Zero(region.features.cols());
    Eigen::VectorXd mean_wm = mean_gm;
    std::size_t n_gm = 0, n_wm = 0;
    for (std::size_t n = 0; n < region.size(); ++n) {
      if (labels[n] == kGm) {
        mean_gm += region.features.row(static_cast<Eigen::Index>(n)).transpose();
        ++n_gm;
      } else if (labels[n] == kWm) {
        mean_wm += region.features.row(static_cast<Eigen::Index>(n)).transpose();
        ++n_wm;
      }
    }
    if (n_gm > 0) mean_gm /= static_cast<double>(n_gm);
    if (n_wm > 0) mean_wm /= static_cast<double>(n_wm);
    for (std::size_t n = 0; n < region.size(); ++n) {
      if (out[n] < 0) {
        labels[n] = kCsf;
      } else if (labels[n] == kCsf) {
        if (n_gm == 0 || n_wm == 0) {
          labels[n] = n_wm == 0 ? kGm : kWm;
        } else {
          const Eigen::VectorXd x = region.features.row(static_cast<Eigen::Index>(n)).transpose();
          labels[n] = (x - mean_gm).squaredNorm() <= (x - mean_wm).squaredNorm() ? kGm : kWm;
        }
      }
    }
  }

  // Step 2: GM (-1) against WM (+1) within the GM+WM voxels.
  {
    std::vector<int> members;
    for (std::size_t n = 0; n < region.size(); ++n) {
      if (labels[n] != kCsf) members.push_back(static_cast<int>(n));
    }
    const Eigen::MatrixXd feats = take_rows(region.features, members);
    std::vector<std::array<int, 3>> coords;
    coords.reserve(members.size());
    for (int m : members) coords.push_back(region.coords[m]);
    StepInput in;
    in.features = &feats;
    in.coords = &coords;
    in.kernel = config.tissue_kernel;
    in.side.resize(members.size());
    for (std::size_t n = 0; n < members.size(); ++n) in.side[n] = labels[members[n]] == kGm ? -1 : 1;
    for (std::size_t n = 0; n < region.size(); ++n) image_codes[slot[n]] = labels[n];
    in.score = [&](std::span<const int> s) {
      for (std::size_t n = 0; n < s.size(); ++n) image_codes[slot[members[n]]] = s[n] < 0 ? kGm : kWm;
      return eval(classified_mean_image(image_codes, reference, box_mask));
    };
    if (members.empty()) {
      res.tissue_step.skipped = true;
      res.tissue_step.reason = "no GM or WM voxels";
    } else {
      const std::vector<int> out = run_step(in, config, derive_seed(seed, 2), &res.tissue_step, &res.warnings);
      for (std::size_t n = 0; n < members.size(); ++n) labels[members[n]] = out[n] < 0 ? kGm : kWm;
    }
  }

  for (std::size_t n = 0; n < region.size(); ++n) res.fragment.labels[slot[n]] = labels[n];
  return res;
}

namespace {

nlohmann::json step_json(const StepReport& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["skipped"] = s.skipped;
  if (s.skipped) j["reason"] = s.reason;
  j["voxels"] = s.voxels;
  j["training_samples"] = s.training;
  j["initial_counts"] = {s.initial_minus, s.initial_plus};
  j["final_counts"] = {s.final_minus, s.final_plus};
  j["mssim_initial"] = s.mssim_initial;
  j["chosen_lambda"] = s.chosen >= 0 ? nlohmann::json(s.trials[s.chosen].lambda) : nlohmann::json(nullptr);
  j["chosen_k"] = s.chosen >= 0 ? nlohmann::json(s.trials[s.chosen].best_k) : nlohmann::json(nullptr);
  nlohmann::json trials = nlohmann::json::array();
  for (const LambdaTrial& t : s.trials) {
    nlohmann::json tj;
    tj["lambda"] = t.lambda;
    tj["solved"] = t.solved;
    tj["mssim"] = t.mssim;
    tj["gamma"] = t.gamma;
    tj["dense_solve"] = t.dense_solve;
    tj["iterations"] = t.iterations;
    tj["roughness"] = t.roughness;
    tj["overlap"] = t.overlap;
    tj["outliers"] = t.outliers;
    tj["best_k"] = t.best_k;
    tj["used_knn"] = t.used_knn;
    if (!t.error.empty()) tj["error"] = t.error;
    trials.push_back(tj);
  }
  j["lambda_sweep"] = trials;
  return j;
}

}  // namespace

std::string subdomain_diagnostics_json(const SubdomainResult& r, int id) {
  nlohmann::json j;
  j["domain"] = id;
  j["box"] = {{"lo", r.fragment.box.lo}, {"hi", r.fragment.box.hi}};
  j["steps"] = {step_json(r.csf_step), step_json(r.tissue_step)};
  j["warnings"] = r.warnings;
  return j.dump(2);
}

}  // namespace kfdaseg
