#ifndef KFDASEG_ERROR_H_
#define KFDASEG_ERROR_H_

#include <stdexcept>
#include <string>

namespace kfdaseg {

// Bad input: malformed files, inconsistent shapes, violated preconditions.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// A numerical routine failed to produce a usable answer.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, double residual = 0.0)
      : std::runtime_error(what), residual_(residual) {}

  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace kfdaseg

#endif  // KFDASEG_ERROR_H_
