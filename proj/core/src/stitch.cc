#include "kfdaseg/stitch.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <tuple>

#include "kfdaseg/error.h"
#include "kfdaseg/parallel.h"
#include "kfdaseg/random.h"

namespace kfdaseg {

bool StitchProblem::is_boundary(int r, int c) const {
  if (orientation == Orientation::kHorizontal) return c == 0 || c == cols - 1;
  return r == 0 || r == rows - 1;
}

void StitchProblem::validate() const {
  if (rows < 1 || cols < 1) throw ValidationError("stitch problem: empty grid");
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (obs_a.size() != n || obs_b.size() != n) throw ValidationError("stitch problem: observation sizes differ from grid");
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid_label(obs_a[i]) || !is_valid_label(obs_b[i])) {
      throw ValidationError("stitch problem: observation label outside {1,2,3,4}");
    }
  }
}

namespace {

double agreement_value(bool in_a, bool in_b) {
  if (in_a && in_b) return kPsiBoth;
  if (in_a || in_b) return kPsiOne;
  return kPsiNone;
}

}  // namespace

PotentialTables build_potentials(const StitchProblem& p) {
  p.validate();
  PotentialTables pt;
  pt.phi.resize(p.nodes());
  for (int r = 0; r < p.rows; ++r) {
    for (int c = 0; c < p.cols; ++c) {
      const int n = r * p.cols + c;
      const double w = p.is_boundary(r, c) ? kBoundaryWeight : kInteriorWeight;
      for (int s = 0; s < 4; ++s) {
        const std::uint8_t label = static_cast<std::uint8_t>(s + 1);
        pt.phi[n][s] = w * agreement_value(p.obs_a[n] == label, p.obs_b[n] == label);
      }
    }
  }
  auto add_edge = [&](int a, int b) {
    EdgePotential e;
    e.a = a;
    e.b = b;
    for (int s = 0; s < 4; ++s) {
      for (int t = 0; t < 4; ++t) {
        const bool in_a = p.obs_a[a] == s + 1 && p.obs_a[b] == t + 1;
        const bool in_b = p.obs_b[a] == s + 1 && p.obs_b[b] == t + 1;
        e.psi[s][t] = agreement_value(in_a, in_b);
      }
    }
    pt.edges.push_back(e);
  };
  for (int r = 0; r < p.rows; ++r) {
    for (int c = 0; c < p.cols; ++c) {
      const int n = r * p.cols + c;
      if (c + 1 < p.cols) add_edge(n, n + 1);
      if (r + 1 < p.rows) add_edge(n, n + p.cols);
    }
  }
  return pt;
}

double log_posterior(std::span<const std::uint8_t> config, const PotentialTables& pt) {
  if (config.size() != pt.phi.size()) throw ValidationError("log_posterior: configuration size differs from problem");
  double s = 0.0;
  for (const EdgePotential& e : pt.edges) s += std::log(e.psi[config[e.a] - 1][config[e.b] - 1]);
  for (std::size_t n = 0; n < config.size(); ++n) {
    if (!is_valid_label(config[n])) throw ValidationError("log_posterior: label outside {1,2,3,4}");
    s += std::log(pt.phi[n][config[n] - 1]);
  }
  return s;
}

void AnnealSchedule::validate() const {
  if (!(t0 > t_min && t_min > 0.0)) throw ValidationError("anneal schedule needs t0 > t_min > 0");
  if (!(rho > 0.0 && rho < 1.0)) throw ValidationError("anneal schedule needs 0 < rho < 1");
  if (sweeps_per_temperature < 1) throw ValidationError("anneal schedule needs at least one sweep per temperature");
}

std::vector<std::uint8_t> composite_initialization(const StitchProblem& p) {
  p.validate();
  std::vector<std::uint8_t> x(p.nodes());
  for (int r = 0; r < p.rows; ++r) {
    for (int c = 0; c < p.cols; ++c) {
      const int n = r * p.cols + c;
      const bool from_a = p.orientation == Orientation::kHorizontal ? c < (p.cols + 1) / 2 : r < (p.rows + 1) / 2;
      x[n] = from_a ? p.obs_a[n] : p.obs_b[n];
    }
  }
  return x;
}

AnnealResult simulated_anneal(const StitchProblem& p, const AnnealSchedule& sched) {
  return simulated_anneal(p, build_potentials(p), sched);
}

AnnealResult simulated_anneal(const StitchProblem& p, const PotentialTables& pt, const AnnealSchedule& sched) {
  sched.validate();
  const int n = p.nodes();
  if (static_cast<int>(pt.phi.size()) != n) throw ValidationError("simulated_anneal: potentials do not match problem");

  // Log tables and incidence lists.
  std::vector<std::array<double, 4>> lphi(n);
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < 4; ++s) lphi[i][s] = std::log(pt.phi[i][s]);
  }
  std::vector<std::array<std::array<double, 4>, 4>> lpsi(pt.edges.size());
  for (std::size_t e = 0; e < pt.edges.size(); ++e) {
    for (int s = 0; s < 4; ++s) {
      for (int t = 0; t < 4; ++t) lpsi[e][s][t] = std::log(pt.edges[e].psi[s][t]);
    }
  }
  std::vector<std::vector<int>> incident(n);
  for (std::size_t e = 0; e < pt.edges.size(); ++e) {
    incident[pt.edges[e].a].push_back(static_cast<int>(e));
    incident[pt.edges[e].b].push_back(static_cast<int>(e));
  }
  auto local = [&](const std::vector<std::uint8_t>& x, int i, int s) {
    double v = lphi[i][s];
    for (int e : incident[i]) {
      const EdgePotential& ed = pt.edges[e];
      v += ed.a == i ? lpsi[e][s][x[ed.b] - 1] : lpsi[e][x[ed.a] - 1][s];
    }
    return v;
  };

  AnnealResult res;
  std::vector<std::uint8_t> x = composite_initialization(p);
  double cur = log_posterior(x, pt);
  res.initial_log_posterior = cur;
  res.labels = x;
  res.log_posterior = cur;
  Rng rng(sched.seed);
  for (double t = sched.t0; t >= sched.t_min; t *= sched.rho) {
    for (int sweep = 0; sweep < sched.sweeps_per_temperature; ++sweep) {
      for (int i = 0; i < n; ++i) {
        const int old = x[i] - 1;
        const int prop = static_cast<int>(rng.below(4));
        ++res.proposals;
        if (prop == old) continue;
        const double delta = local(x, i, prop) - local(x, i, old);
        if (delta >= 0.0 || rng.uniform() < std::exp(delta / t)) {
          x[i] = static_cast<std::uint8_t>(prop + 1);
          cur += delta;
          ++res.accepted;
          if (cur > res.log_posterior + 1e-12) {
            // Re-evaluate to keep the incumbent free of accumulated drift.
            cur = log_posterior(x, pt);
            if (cur > res.log_posterior) {
              res.log_posterior = cur;
              res.labels = x;
            }
          }
        }
      }
    }
    res.trace.push_back(res.log_posterior);
  }
  return res;
}

ExactMap exact_map(const StitchProblem& p, const PotentialTables& pt) {
  p.validate();
  // Lines run along the shorter side; the DP walks along the longer one.
  const bool lines_are_columns = p.rows <= p.cols;
  const int len = lines_are_columns ? p.rows : p.cols;
  const int steps = lines_are_columns ? p.cols : p.rows;
  if (len > 5) throw ValidationError("exact_map: shorter grid side must be <= 5");
  auto node = [&](int pos, int step) { return lines_are_columns ? pos * p.cols + step : step * p.cols + pos; };
  const int states = 1 << (2 * len);
  auto label_of = [](int state, int pos) { return (state >> (2 * pos)) & 3; };

  // Edge lookup by node pair.
  std::vector<std::vector<std::pair<int, int>>> out_edges(p.nodes());
  for (std::size_t e = 0; e < pt.edges.size(); ++e) out_edges[pt.edges[e].a].push_back({pt.edges[e].b, static_cast<int>(e)});
  auto edge_log = [&](int a, int sa, int b, int sb) {
    for (const auto& [to, e] : out_edges[a]) {
      if (to == b) return std::log(pt.edges[e].psi[sa][sb]);
    }
    for (const auto& [to, e] : out_edges[b]) {
      if (to == a) return std::log(pt.edges[e].psi[sb][sa]);
    }
    return 0.0;
  };

  std::vector<double> unary(static_cast<std::size_t>(states) * steps);
  for (int s = 0; s < steps; ++s) {
    for (int st = 0; st < states; ++st) {
      double v = 0.0;
      for (int q = 0; q < len; ++q) v += std::log(pt.phi[node(q, s)][label_of(st, q)]);
      for (int q = 0; q + 1 < len; ++q) v += edge_log(node(q, s), label_of(st, q), node(q + 1, s), label_of(st, q + 1));
      unary[static_cast<std::size_t>(s) * states + st] = v;
    }
  }
  // Pairwise terms between consecutive lines factor per position.
  std::vector<double> score(unary.begin(), unary.begin() + states), next(states);
  std::vector<int> back(static_cast<std::size_t>(states) * steps, -1);
  for (int s = 1; s < steps; ++s) {
    std::vector<std::array<std::array<double, 4>, 4>> pair(len);
    for (int q = 0; q < len; ++q) {
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) pair[q][a][b] = edge_log(node(q, s - 1), a, node(q, s), b);
      }
    }
    for (int st = 0; st < states; ++st) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int prev = 0; prev < states; ++prev) {
        double v = score[prev];
        for (int q = 0; q < len; ++q) v += pair[q][label_of(prev, q)][label_of(st, q)];
        if (v > best) {
          best = v;
          arg = prev;
        }
      }
      next[st] = best + unary[static_cast<std::size_t>(s) * states + st];
      back[static_cast<std::size_t>(s) * states + st] = arg;
    }
    score.swap(next);
  }
  int st = static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
  ExactMap m;
  m.labels.assign(p.nodes(), 0);
  for (int s = steps - 1; s >= 0; --s) {
    for (int q = 0; q < len; ++q) m.labels[node(q, s)] = static_cast<std::uint8_t>(label_of(st, q) + 1);
    if (s > 0) st = back[static_cast<std::size_t>(s) * states + st];
  }
  m.log_posterior = log_posterior(m.labels, pt);
  return m;
}

ExactMap brute_force_map(const StitchProblem& p, const PotentialTables& pt) {
  p.validate();
  const int n = p.nodes();
  if (n > 12) throw ValidationError("brute_force_map: at most 12 nodes");
  std::vector<std::uint8_t> x(n, 1);
  ExactMap m;
  m.log_posterior = -std::numeric_limits<double>::infinity();
  const std::uint64_t total = 1ULL << (2 * n);
  for (std::uint64_t code = 0; code < total; ++code) {
    for (int i = 0; i < n; ++i) x[i] = static_cast<std::uint8_t>(((code >> (2 * i)) & 3) + 1);
    const double v = log_posterior(x, pt);
    if (v > m.log_posterior) {
      m.log_posterior = v;
      m.labels = x;
    }
  }
  return m;
}

namespace {

struct PairTask {
  int a = 0;
  int b = 0;
  int axis = 0;
  Box region;
};

// Solves one joint region slice by slice and writes the labels into `out`
// (indexed like region).
PairReport solve_pair(const PairTask& task, const StitchFragment& fa, const StitchFragment& fb,
                      const AnnealSchedule& base, std::uint64_t pair_seed, std::vector<std::uint8_t>* out) {
  PairReport rep;
  rep.a = task.a;
  rep.b = task.b;
  rep.axis = task.axis;
  rep.region = task.region;
  const Box& r = task.region;
  const Dims rd = r.dims();
  out->assign(r.voxel_count(), kBg);
  // Slices are taken across the in-plane axis of the pair: axial for x/y
  // pairs, coronal for z pairs.
  const int slice_axis = task.axis == 2 ? 1 : 2;
  const int row_axis = task.axis == 2 ? 2 : 1;
  const int col_axis = 0;
  const Orientation orient = task.axis == 0 ? Orientation::kHorizontal : Orientation::kVertical;

  for (int s = r.lo[slice_axis]; s <= r.hi[slice_axis]; ++s) {
    StitchProblem p;
    p.orientation = orient;
    p.rows = r.extent(row_axis);
    p.cols = r.extent(col_axis);
    p.obs_a.resize(p.nodes());
    p.obs_b.resize(p.nodes());
    std::vector<std::size_t> where(p.nodes());
    for (int row = 0; row < p.rows; ++row) {
      for (int col = 0; col < p.cols; ++col) {
        std::array<int, 3> c{};
        c[slice_axis] = s;
        c[row_axis] = r.lo[row_axis] + row;
        c[col_axis] = r.lo[col_axis] + col;
        const int n = row * p.cols + col;
        p.obs_a[n] = fa.labels.at(c[0], c[1], c[2]);
        p.obs_b[n] = fb.labels.at(c[0], c[1], c[2]);
        where[n] = rd.index(c[0] - r.lo[0], c[1] - r.lo[1], c[2] - r.lo[2]);
      }
    }
    std::size_t disagree = 0;
    for (int n = 0; n < p.nodes(); ++n) disagree += p.obs_a[n] != p.obs_b[n];
    rep.disagreements += disagree;
    if (disagree == 0) {
      // Agreement everywhere is the unique MAP.
      for (int n = 0; n < p.nodes(); ++n) (*out)[where[n]] = p.obs_a[n];
      continue;
    }
    AnnealSchedule sched = base;
    sched.seed = derive_seed(pair_seed, static_cast<std::uint64_t>(s));
    const AnnealResult ar = simulated_anneal(p, sched);
    ++rep.problems;
    rep.log_posterior_gain += ar.log_posterior - ar.initial_log_posterior;
    for (int n = 0; n < p.nodes(); ++n) (*out)[where[n]] = ar.labels[n];
  }
  return rep;
}

}  // namespace

StitchResult stitch_volume(const std::vector<StitchFragment>& fragments, const Dims& dims,
                           std::span<const std::uint8_t> mask, const StitchOptions& opts) {
  opts.schedule.validate();
  if (!dims.valid() || mask.size() != dims.voxel_count()) throw ValidationError("stitch_volume: mask does not match dims");
  if (opts.overlap < 0 || opts.overlap % 2 != 0) throw ValidationError("stitch_volume: overlap must be even and >= 0");
  for (std::size_t f = 0; f < fragments.size(); ++f) {
    const StitchFragment& fr = fragments[f];
    if (!fr.labels.box.inside(dims) || fr.labels.labels.size() != fr.labels.box.voxel_count() ||
        fr.core.intersect(fr.labels.box) != fr.core) {
      throw ValidationError("stitch_volume: fragment " + std::to_string(f) + " has inconsistent boxes");
    }
  }

  // Raster order of core origins (z, y, x).
  std::vector<int> order(fragments.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Box& x = fragments[a].core;
    const Box& y = fragments[b].core;
    return std::tie(x.lo[2], x.lo[1], x.lo[0]) < std::tie(y.lo[2], y.lo[1], y.lo[0]);
  });

  // Core-owner assembly.
  std::vector<int> owner(dims.voxel_count(), -1);
  for (int f : order) {
    const Box& c = fragments[f].core;
    for (int k = c.lo[2]; k <= c.hi[2]; ++k) {
      for (int j = c.lo[1]; j <= c.hi[1]; ++j) {
        for (int i = c.lo[0]; i <= c.hi[0]; ++i) {
          int& o = owner[dims.index(i, j, k)];
          if (o >= 0) {
            throw ValidationError("stitch_volume: cores of fragments " + std::to_string(o) + " and " +
                                  std::to_string(f) + " overlap at (" + std::to_string(i) + "," +
                                  std::to_string(j) + "," + std::to_string(k) + ")");
          }
          o = f;
        }
      }
    }
  }
  StitchResult res;
  res.labels = LabelVolume(dims);
  auto labels = res.labels.mutable_labels();
  for (int k = 0; k < dims.nz; ++k) {
    for (int j = 0; j < dims.ny; ++j) {
      for (int i = 0; i < dims.nx; ++i) {
        const std::size_t v = dims.index(i, j, k);
        if (owner[v] < 0) {
          if (mask[v]) {
            throw ValidationError("stitch_volume: masked voxel (" + std::to_string(i) + "," + std::to_string(j) +
                                  "," + std::to_string(k) + ") is not covered by any fragment core");
          }
          continue;
        }
        labels[v] = fragments[owner[v]].labels.at(i, j, k);
      }
    }
  }

  // Face-adjacent pairs in assembly order.
  std::vector<PairTask> tasks;
  for (int a : order) {
    for (int axis = 0; axis < 3; ++axis) {
      for (int b : order) {
        if (a == b) continue;
        const Box& ca = fragments[a].core;
        const Box& cb = fragments[b].core;
        if (ca.hi[axis] + 1 != cb.lo[axis]) continue;
        Box shared;
        bool touching = true;
        for (int t = 0; t < 3; ++t) {
          if (t == axis) continue;
          shared.lo[t] = std::max(ca.lo[t], cb.lo[t]);
          shared.hi[t] = std::min(ca.hi[t], cb.hi[t]);
          if (shared.lo[t] > shared.hi[t]) touching = false;
        }
        if (!touching) continue;
        const Box joint = fragments[a].labels.box.intersect(fragments[b].labels.box);
        shared.lo[axis] = joint.lo[axis];
        shared.hi[axis] = joint.hi[axis];
        if (opts.overlap == 0) continue;
        if (joint.empty() || joint.extent(axis) != opts.overlap || joint.intersect(shared) != shared) {
          std::ostringstream os;
          os << "stitch_volume: fragments " << a << " " << to_string(fragments[a].labels.box) << " and " << b << " "
             << to_string(fragments[b].labels.box) << " overlap by " << (joint.empty() ? 0 : joint.extent(axis))
             << " slices along axis " << axis << ", expected " << opts.overlap;
          throw ValidationError(os.str());
        }
        tasks.push_back({a, b, axis, shared});
      }
    }
  }

  std::vector<std::vector<std::uint8_t>> solved(tasks.size());
  std::vector<PairReport> reports(tasks.size());
  parallel_for(tasks.size(), opts.workers, [&](std::size_t t) {
    const PairTask& task = tasks[t];
    reports[t] = solve_pair(task, fragments[task.a], fragments[task.b], opts.schedule,
                            derive_seed(opts.schedule.seed, static_cast<std::uint64_t>(task.a),
                                        static_cast<std::uint64_t>(task.b)),
                            &solved[t]);
  });
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Box& r = tasks[t].region;
    const Dims rd = r.dims();
    for (int k = r.lo[2]; k <= r.hi[2]; ++k) {
      for (int j = r.lo[1]; j <= r.hi[1]; ++j) {
        for (int i = r.lo[0]; i <= r.hi[0]; ++i) {
          const std::size_t v = dims.index(i, j, k);
          const std::uint8_t lab = solved[t][rd.index(i - r.lo[0], j - r.lo[1], k - r.lo[2])];
          if (lab != labels[v]) ++reports[t].changed;
          labels[v] = lab;
        }
      }
    }
  }

  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (!mask[v]) {
      labels[v] = kBg;
    } else if (labels[v] == kBg) {
      const int k = static_cast<int>(v / (static_cast<std::size_t>(dims.nx) * dims.ny));
      const int j = static_cast<int>((v / dims.nx) % dims.ny);
      const int i = static_cast<int>(v % dims.nx);
      labels[v] = fragments[owner[v]].labels.at(i, j, k);
    }
  }
  res.pairs = std::move(reports);
  return res;
}

std::vector<std::uint8_t> stitch_slice(const std::vector<StitchFragment>& fragments, int nx, int ny,
                                       std::span<const std::uint8_t> mask, const StitchOptions& opts) {
  for (const StitchFragment& f : fragments) {
    if (f.core.lo[2] != 0 || f.core.hi[2] != 0 || f.labels.box.lo[2] != 0 || f.labels.box.hi[2] != 0) {
      throw ValidationError("stitch_slice: fragments must span exactly one axial slice");
    }
  }
  const StitchResult r = stitch_volume(fragments, Dims{nx, ny, 1}, mask, opts);
  return std::vector<std::uint8_t>(r.labels.labels().begin(), r.labels.labels().end());
}

}  // namespace kfdaseg
