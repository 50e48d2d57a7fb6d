#pragma once

// Linear measurement operators on symmetric d x d matrices and the
// least-squares objective f(X) = 1/2 ||A(X) - b||^2 built on them.

#include <cstdint>
#include <utility>
#include <vector>

#include "json.hpp"
#include "udufact/types.hpp"

namespace udufact {

using MeasurementVec = Vector;

struct EntryIndex {
  Index row = 0;
  Index col = 0;
  friend bool operator==(const EntryIndex&, const EntryIndex&) = default;
  friend auto operator<=>(const EntryIndex&, const EntryIndex&) = default;
};

/// Immutable measurement map A. Either samples entries X[i,j] (EntryMask) or
/// takes quadratic forms a_i^T X a_i (RankOneSensing).
class MeasurementOp {
 public:
  enum class Kind { EntryMask, RankOneSensing };

  /// Throws ArgumentError on an empty list, out-of-range or duplicate indices.
  static MeasurementOp entry_mask(Index dim, std::vector<EntryIndex> indices);

  /// `vectors` is d x n; column i holds a_i.
  static MeasurementOp rank_one(Matrix vectors);

  Kind kind() const { return kind_; }
  Index dim() const { return dim_; }
  /// Number of measurements n.
  Index size() const;

  const std::vector<EntryIndex>& indices() const { return indices_; }
  const Matrix& vectors() const { return vectors_; }

  nlohmann::json to_json() const;
  static MeasurementOp from_json(const nlohmann::json& j);

 private:
  MeasurementOp() = default;

  Kind kind_ = Kind::EntryMask;
  Index dim_ = 0;
  std::vector<EntryIndex> indices_;
  Matrix vectors_;
};

/// A(X). X must be dim x dim; symmetry is the caller's responsibility.
MeasurementVec apply_op(const MeasurementOp& op, const Matrix& x);

/// A*(r), always returned exactly symmetric.
Matrix adjoint_op(const MeasurementOp& op, const MeasurementVec& r);

/// 1/2 ||A(X) - b||^2
double objective(const MeasurementOp& op, const Matrix& x, const MeasurementVec& b);

/// Gradient of the objective in X: A*(A(X) - b).
Matrix grad_X(const MeasurementOp& op, const Matrix& x, const MeasurementVec& b);

// Factored evaluation. The solvers never form X = U diag(lambda) U^T or the
// gradient G = grad_X(X) explicitly; they only need A(X) and the product G U.

/// A(U diag(lambda) U^T) without forming the d x d product.
MeasurementVec apply_factored(const MeasurementOp& op, const Matrix& u, const Vector& lambda);

/// A*(r) * U without forming A*(r).
Matrix adjoint_times(const MeasurementOp& op, const MeasurementVec& r, const Matrix& u);

struct FactoredEval {
  MeasurementVec residual;  ///< A(X) - b
  double objective = 0.0;
  Matrix grad_u;            ///< grad_X(X) * U, d x r
};

FactoredEval eval_factored(const MeasurementOp& op, const Matrix& u, const Vector& lambda,
                           const MeasurementVec& b);

/// Largest eigenvalue of A*A on symmetric matrices (the smoothness constant of
/// the objective in X), by power iteration from a seeded random start.
double estimate_lipschitz(const MeasurementOp& op, int max_iters = 200, double rel_tol = 1e-10,
                          std::uint64_t seed = 0x5eed);

}  // namespace udufact
