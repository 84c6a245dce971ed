#include "kfdaseg/kfda.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "kfdaseg/error.h"

namespace kfdaseg {

RegionSamples gather_region(const MultiChannelVolume& vol, const Box& box) {
  if (!box.inside(vol.dims())) throw ValidationError("gather_region: box " + to_string(box) + " outside volume");
  RegionSamples r;
  const int nc = vol.channels();
  std::vector<std::size_t> voxels;
  for (int k = box.lo[2]; k <= box.hi[2]; ++k) {
    for (int j = box.lo[1]; j <= box.hi[1]; ++j) {
      for (int i = box.lo[0]; i <= box.hi[0]; ++i) {
        const std::size_t v = vol.dims().index(i, j, k);
        if (!vol.masked(v)) continue;
        r.coords.push_back({i, j, k});
        voxels.push_back(v);
      }
    }
  }
  r.features.resize(static_cast<Eigen::Index>(voxels.size()), nc);
  for (std::size_t n = 0; n < voxels.size(); ++n) {
    for (int c = 0; c < nc; ++c) r.features(static_cast<Eigen::Index>(n), c) = vol.value(voxels[n], c);
  }
  return r;
}

NeighborGraph build_neighbor_graph(const std::vector<std::array<int, 3>>& coords) {
  NeighborGraph g;
  const int n = static_cast<int>(coords.size());
  g.h.resize(n, n);
  if (n == 0) return g;
  std::array<int, 3> lo = coords[0], hi = coords[0];
  for (const auto& c : coords) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], c[a]);
      hi[a] = std::max(hi[a], c[a]);
    }
  }
  const Dims d{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
  std::vector<int> slot(d.voxel_count(), -1);
  for (int idx = 0; idx < n; ++idx) {
    const auto& c = coords[idx];
    int& s = slot[d.index(c[0] - lo[0], c[1] - lo[1], c[2] - lo[2])];
    if (s >= 0) throw ValidationError("build_neighbor_graph: duplicate voxel coordinate");
    s = idx;
  }
  std::vector<int> degree(n, 0);
  for (int idx = 0; idx < n; ++idx) {
    const int x = coords[idx][0] - lo[0], y = coords[idx][1] - lo[1], z = coords[idx][2] - lo[2];
    // Forward half of the 26-neighbourhood so every edge is visited once.
    for (int dz = 0; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dz == 0 && (dy < 0 || (dy == 0 && dx <= 0))) continue;
          const int xx = x + dx, yy = y + dy, zz = z + dz;
          if (xx < 0 || yy < 0 || zz < 0 || xx >= d.nx || yy >= d.ny || zz >= d.nz) continue;
          const int other = slot[d.index(xx, yy, zz)];
          if (other < 0) continue;
          g.edges.emplace_back(std::min(idx, other), std::max(idx, other));
          ++degree[idx];
          ++degree[other];
        }
      }
    }
  }
  std::sort(g.edges.begin(), g.edges.end());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(2 * g.edges.size() + n);
  for (const auto& [i, j] : g.edges) {
    trip.emplace_back(i, j, 1.0);
    trip.emplace_back(j, i, 1.0);
  }
  for (int i = 0; i < n; ++i) trip.emplace_back(i, i, -static_cast<double>(degree[i]));
  g.h.setFromTriplets(trip.begin(), trip.end());
  return g;
}

double edge_quadratic(const NeighborGraph& g, const Eigen::VectorXd& v) {
  double s = 0.0;
  for (const auto& [i, j] : g.edges) {
    const double d = v[i] - v[j];
    s += d * d;
  }
  return -s;
}

std::size_t TrainingSet::count(int label) const {
  return static_cast<std::size_t>(std::count(y.begin(), y.end(), label));
}

void TrainingSet::validate() const {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw ValidationError("training set: sample and label counts differ");
  }
  for (int v : y) {
    if (v != -1 && v != 1) throw ValidationError("training set: labels must be -1 or +1");
  }
  if (count(-1) == 0 || count(1) == 0) throw ValidationError("training set: both classes need samples");
  if (!region_index.empty() && region_index.size() != y.size()) {
    throw ValidationError("training set: region_index size differs from sample count");
  }
}

double default_beta(const Eigen::MatrixXd& n, double kernel_trace) {
  const double l = static_cast<double>(std::max<Eigen::Index>(n.rows(), 1));
  const double tr = n.trace();
  return std::max({1e-3 * tr / l, 1e-6 * std::abs(kernel_trace) / l, 1e-9});
}

KfdaMatrices build_matrices(const TrainingSet& ts, const KernelSpec& spec, const Eigen::MatrixXd* cross,
                            const NeighborGraph* graph) {
  ts.validate();
  spec.validate();
  KfdaMatrices m;
  const Eigen::Index l = static_cast<Eigen::Index>(ts.size());
  m.k = kernel_matrix(spec, ts.x, ts.x);
  m.k = 0.5 * (m.k + m.k.transpose());
  if (!m.k.allFinite()) throw NumericalError("kernel matrix has non-finite entries");

  m.m_minus = Eigen::VectorXd::Zero(l);
  m.m_plus = Eigen::VectorXd::Zero(l);
  const double l1 = static_cast<double>(ts.count(-1));
  const double l2 = static_cast<double>(ts.count(1));
  for (Eigen::Index c = 0; c < l; ++c) {
    if (ts.y[c] < 0) {
      m.m_minus += m.k.col(c);
    } else {
      m.m_plus += m.k.col(c);
    }
  }
  m.m_minus /= l1;
  m.m_plus /= l2;
  const Eigen::VectorXd diff = m.m_minus - m.m_plus;
  m.m = diff * diff.transpose();

  // k_c (I - 1_{l_c}) k_c^T per class.
  m.n = Eigen::MatrixXd::Zero(l, l);
  for (int label : {-1, 1}) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index c = 0; c < l; ++c) {
      if (ts.y[c] == label) cols.push_back(c);
    }
    // Centre the columns before the product; saturating kernels leave only
    // small variations on top of a large common value.
    const Eigen::VectorXd& mu = label < 0 ? m.m_minus : m.m_plus;
    Eigen::MatrixXd kc(l, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) kc.col(static_cast<Eigen::Index>(c)) = m.k.col(cols[c]) - mu;
    m.n.noalias() += kc * kc.transpose();
  }
  m.n = 0.5 * (m.n + m.n.transpose());
  m.beta = default_beta(m.n, m.k.trace());

  m.penalty = Eigen::MatrixXd::Zero(l, l);
  if (graph != nullptr && graph->h.rows() > 0) {
    const Eigen::MatrixXd& kc = cross != nullptr ? *cross : m.k;
    if (kc.rows() != l || kc.cols() != graph->h.rows()) {
      throw ValidationError("build_matrices: cross kernel does not match training set and region graph");
    }
    if (!kc.allFinite()) throw NumericalError("cross kernel has non-finite entries");
    const Eigen::MatrixXd kh = kc * graph->h;
    m.penalty.noalias() = kh * kc.transpose();
    m.penalty = 0.5 * (m.penalty + m.penalty.transpose());
  }
  return m;
}

Eigen::MatrixXd kfda_operator(const KfdaMatrices& mats, double lambda) {
  const Eigen::Index l = mats.n.rows();
  const Eigen::MatrixXd b = mats.n + mats.beta * Eigen::MatrixXd::Identity(l, l);
  Eigen::LLT<Eigen::MatrixXd> llt(b);
  if (llt.info() != Eigen::Success) throw NumericalError("N + beta I is not positive definite");
  return llt.solve(mats.m + lambda * mats.penalty);
}

double fisher_criterion(const KfdaMatrices& mats, const Eigen::VectorXd& alpha) {
  const double num = alpha.dot(mats.m * alpha);
  const double den = alpha.dot(mats.n * alpha) + mats.beta * alpha.squaredNorm();
  return num / den;
}

namespace {

struct PowerResult {
  Eigen::VectorXd v;
  double gamma = 0.0;
  double residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

// Power iteration on A + shift I. The eigenvalue estimate is the generalized
// Rayleigh quotient of the unshifted pencil, the residual is ||A v - gamma v|| / ||v||.
PowerResult power_iterate(const Eigen::MatrixXd& a, const Eigen::MatrixXd& s, const Eigen::MatrixXd& b,
                          Eigen::VectorXd v, double shift, int max_iter, double tol, double rtol) {
  PowerResult r;
  double prev = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd av(v.size());
  for (int it = 1; it <= max_iter; ++it) {
    v /= v.norm();
    av.noalias() = a * v;
    const double gamma = v.dot(s * v) / v.dot(b * v);
    const double res = (av - gamma * v).norm();
    r.iterations = it;
    r.gamma = gamma;
    r.residual = res;
    const double scale = std::max(std::abs(gamma), 1e-300);
    if (std::isfinite(prev) && std::abs(gamma - prev) <= tol * scale && res <= rtol) {
      r.converged = true;
      r.v = v;
      return r;
    }
    prev = gamma;
    Eigen::VectorXd next = av + shift * v;
    const double nn = next.norm();
    if (!(nn > 0.0) || !std::isfinite(nn)) break;
    v = next;
  }
  r.v = v / v.norm();
  return r;
}

}  // namespace

KfdaModel solve_alpha(const KfdaMatrices& mats, const TrainingSet& ts, const KernelSpec& spec, double lambda,
                      const SolveOptions& opts) {
  const Eigen::Index l = mats.n.rows();
  if (l == 0 || mats.m.rows() != l || mats.penalty.rows() != l) {
    throw ValidationError("solve_alpha: matrices are empty or inconsistent");
  }
  if (!(lambda >= 0.0)) throw ValidationError("solve_alpha: lambda must be >= 0");
  const Eigen::MatrixXd b = mats.n + mats.beta * Eigen::MatrixXd::Identity(l, l);
  Eigen::LLT<Eigen::MatrixXd> llt(b);
  if (llt.info() != Eigen::Success) throw NumericalError("N + beta I is not positive definite");
  const Eigen::MatrixXd s = mats.m + lambda * mats.penalty;
  const Eigen::MatrixXd a = llt.solve(s);

  // Start from the lambda = 0 solution direction.
  Eigen::VectorXd v0 = llt.solve(Eigen::VectorXd(mats.m_minus - mats.m_plus));
  if (!(v0.norm() > 0.0) || !v0.allFinite()) v0 = Eigen::VectorXd::Ones(l);

  // Round-off floor for the residual test.
  const double rtol = std::max(opts.residual_tolerance,
                               64.0 * std::numeric_limits<double>::epsilon() * a.cwiseAbs().rowwise().sum().maxCoeff());
  const int half = std::max(opts.max_iterations / 2, 1);
  PowerResult pr = power_iterate(a, s, b, v0, 0.0, half, opts.tolerance, rtol);
  int used = pr.iterations;
  if (!pr.converged || pr.gamma < 0.0) {
    // The dominant eigenvalue is negative or two eigenvalues of opposite sign
    // compete; shift the spectrum so the largest algebraic one dominates.
    double shift = pr.converged ? -pr.gamma : 1.1 * (a * pr.v).norm();
    if (!(shift > 0.0)) shift = 1.0;
    PowerResult p2 = power_iterate(a, s, b, v0, shift, opts.max_iterations - used, opts.tolerance, rtol);
    used += p2.iterations;
    pr = p2;
  }
  bool dense = false;
  if (!pr.converged && opts.dense_fallback) {
    // B = L L^T; C = L^-1 S L^-T shares its spectrum with B^-1 S.
    const Eigen::MatrixXd l_inv_s = llt.matrixL().solve(s);
    Eigen::MatrixXd c = llt.matrixL().solve(l_inv_s.transpose());
    c = 0.5 * (c + c.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver failed", pr.residual);
    const Eigen::VectorXd w = es.eigenvectors().col(l - 1);
    pr.v = llt.matrixU().solve(w);
    pr.gamma = es.eigenvalues()[l - 1];
    pr.converged = true;
    dense = true;
  }
  if (!pr.converged) {
    std::ostringstream os;
    os << "power iteration did not converge in " << used << " iterations (lambda=" << lambda
       << ", residual=" << pr.residual << ")";
    throw NumericalError(os.str(), pr.residual);
  }

  // Inverse iteration on the explicit operator, shifted by the current
  // eigenvalue estimate. When N + beta I is ill conditioned the power
  // iteration stalls at a residual far above what A itself resolves.
  {
    auto quotient = [&](const Eigen::VectorXd& v) { return v.dot(s * v) / v.dot(b * v); };
    Eigen::VectorXd v = pr.v / pr.v.norm();
    double g = quotient(v);
    double res = (a * v - g * v).norm();
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(l, l);
    for (int it = 0; it < 4 && res > 1e-14 * std::max(1.0, std::abs(g)); ++it) {
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(a - g * eye);
      Eigen::VectorXd y = lu.solve(v);
      const double yn = y.norm();
      if (!(yn > 0.0) || !std::isfinite(yn)) break;
      y /= yn;
      const double gy = quotient(y);
      const double ry = (a * y - gy * y).norm();
      if (!(ry < res)) break;
      v = y;
      g = gy;
      res = ry;
      ++used;
    }
    pr.v = v;
    pr.gamma = g;
    pr.residual = res;
  }

  KfdaModel model;
  model.kernel = spec;
  model.lambda = lambda;
  model.beta = mats.beta;
  model.gamma = pr.gamma;
  model.iterations = used;
  model.dense = dense;
  Eigen::VectorXd alpha = pr.v / std::sqrt(pr.v.dot(b * pr.v));

  const Eigen::VectorXd proj = mats.k * alpha;
  double sum_minus = 0.0, sum_plus = 0.0;
  for (Eigen::Index i = 0; i < l; ++i) (ts.y[i] < 0 ? sum_minus : sum_plus) += proj[i];
  double mean_minus = sum_minus / static_cast<double>(ts.count(-1));
  double mean_plus = sum_plus / static_cast<double>(ts.count(1));
  if (mean_plus < mean_minus) {
    alpha = -alpha;
    mean_minus = -mean_minus;
    mean_plus = -mean_plus;
  }
  model.alpha = alpha;
  model.b = -(mean_minus + mean_plus) / 2.0;
  model.residual = (a * alpha - model.gamma * alpha).norm() / alpha.norm();
  return model;
}

Eigen::VectorXd project(const KfdaModel& model, const TrainingSet& ts, const Eigen::MatrixXd& queries) {
  if (model.alpha.size() != static_cast<Eigen::Index>(ts.size())) {
    throw ValidationError("project: model and training set sizes differ");
  }
  Eigen::VectorXd out(queries.rows());
  constexpr Eigen::Index kChunk = 2048;
  for (Eigen::Index start = 0; start < queries.rows(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, queries.rows() - start);
    const Eigen::MatrixXd kq = kernel_matrix(model.kernel, queries.middleRows(start, len), ts.x);
    out.segment(start, len) = (kq * model.alpha).array() + model.b;
  }
  return out;
}

double project(const KfdaModel& model, const TrainingSet& ts, const Eigen::VectorXd& query) {
  const Eigen::MatrixXd q = query.transpose();
  return project(model, ts, q)[0];
}

}  // namespace kfdaseg
