#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace udufact {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Caller passed inconsistent shapes or out-of-range values.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A solver produced non-finite values. Carries the iteration when known.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, std::optional<std::size_t> iteration = {})
      : std::runtime_error(iteration ? what + " at iteration " + std::to_string(*iteration) : what),
        iteration_(iteration) {}

  std::optional<std::size_t> iteration() const { return iteration_; }

 private:
  std::optional<std::size_t> iteration_;
};

inline void require(bool cond, const std::string& message) {
  if (!cond) throw ArgumentError(message);
}

/// Frobenius inner product <A, B>.
inline double frob_inner(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b).sum(); }

}  // namespace udufact
