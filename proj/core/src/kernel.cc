#include "kfdaseg/kernel.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kfdaseg/error.h"

namespace kfdaseg {

KernelSpec KernelSpec::sigmoid(double a, double b) {
  KernelSpec s;
  s.kind = KernelKind::kSigmoid;
  s.a = a;
  s.b = b;
  return s;
}

KernelSpec KernelSpec::rbf(double sigma) {
  KernelSpec s;
  s.kind = KernelKind::kRbf;
  s.sigma = sigma;
  return s;
}

KernelSpec KernelSpec::polynomial(int degree) {
  KernelSpec s;
  s.kind = KernelKind::kPolynomial;
  s.degree = degree;
  return s;
}

void KernelSpec::validate() const {
  if (kind == KernelKind::kRbf && !(sigma > 0.0)) throw ValidationError("RBF kernel needs sigma > 0");
  if (kind == KernelKind::kPolynomial && degree < 1) {
    throw ValidationError("polynomial kernel needs degree >= 1");
  }
  if (kind == KernelKind::kSigmoid && !(std::isfinite(a) && std::isfinite(b))) {
    throw ValidationError("sigmoid kernel parameters must be finite");
  }
}

std::string KernelSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case KernelKind::kSigmoid: os << "sigmoid(a=" << a << ", b=" << b << ")"; break;
    case KernelKind::kRbf: os << "rbf(sigma=" << sigma << ")"; break;
    case KernelKind::kPolynomial: os << "polynomial(d=" << degree << ")"; break;
  }
  return os.str();
}

double kernel_from_dot(const KernelSpec& spec, double dot, double xx, double zz) {
  switch (spec.kind) {
    case KernelKind::kSigmoid:
      return std::tanh(spec.a * dot + spec.b);
    case KernelKind::kRbf: {
      const double d2 = std::max(xx + zz - 2.0 * dot, 0.0);
      return std::exp(-d2 / (2.0 * spec.sigma * spec.sigma));
    }
    case KernelKind::kPolynomial:
      return spec.degree == 1 ? dot : std::pow(dot, spec.degree);
  }
  return 0.0;
}

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> z) {
  if (x.size() != z.size()) throw ValidationError("kernel_eval: vectors differ in length");
  if (spec.kind == KernelKind::kRbf) {
    // Direct difference so that x == z gives exactly 1.
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - z[i]) * (x[i] - z[i]);
    return std::exp(-d2 / (2.0 * spec.sigma * spec.sigma));
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * z[i];
  return kernel_from_dot(spec, dot, 0.0, 0.0);
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& a,
                              const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw ValidationError("kernel_matrix: sample dimensions differ");
  if (spec.kind == KernelKind::kRbf) {
    // Pairwise differences keep the diagonal of a Gram matrix exactly 1 and
    // avoid cancellation for nearby samples; feature dimension is small.
    Eigen::MatrixXd k(a.rows(), b.rows());
    const double inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        k(i, j) = std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv);
      }
    }
    return k;
  }
  Eigen::MatrixXd k = a * b.transpose();
  if (spec.kind == KernelKind::kSigmoid) {
    k = (spec.a * k.array() + spec.b).tanh().matrix();
  } else if (spec.degree != 1) {
    k = k.array().pow(spec.degree).matrix();
  }
  return k;
}

Eigen::VectorXd kernel_diagonal(const KernelSpec& spec, const Eigen::MatrixXd& x) {
  Eigen::VectorXd d(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double xx = x.row(i).squaredNorm();
    d[i] = spec.kind == KernelKind::kRbf ? 1.0 : kernel_from_dot(spec, xx, xx, xx);
  }
  return d;
}

}  // namespace kfdaseg
