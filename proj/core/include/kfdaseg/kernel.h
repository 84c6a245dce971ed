#ifndef KFDASEG_KERNEL_H_
#define KFDASEG_KERNEL_H_

#include <span>
#include <string>

#include <Eigen/Dense>

namespace kfdaseg {

enum class KernelKind { kSigmoid, kRbf, kPolynomial };

struct KernelSpec {
  KernelKind kind = KernelKind::kRbf;
  double a = 8.0;        // sigmoid slope
  double b = -0.0005;    // sigmoid offset
  double sigma = 0.5;    // RBF width
  int degree = 1;        // polynomial degree; 1 is the linear kernel

  static KernelSpec sigmoid(double a, double b);
  static KernelSpec rbf(double sigma);
  static KernelSpec polynomial(int degree);
  static KernelSpec linear() { return polynomial(1); }

  // Throws ValidationError for sigma <= 0 or degree < 1.
  void validate() const;
  std::string describe() const;
};

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> z);

// Rows of `a` and `b` are samples. Returns K(a_i, b_j).
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& a,
                              const Eigen::MatrixXd& b);
// K(x_i, x_i) for every row.
Eigen::VectorXd kernel_diagonal(const KernelSpec& spec, const Eigen::MatrixXd& x);

// Maps x^T z (plus the squared norms for the RBF) to the kernel value.
double kernel_from_dot(const KernelSpec& spec, double dot, double xx, double zz);

}  // namespace kfdaseg

#endif  // KFDASEG_KERNEL_H_
