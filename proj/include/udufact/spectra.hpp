#pragma once

// Spectral and stationarity diagnostics for factor iterates.

#include "json.hpp"
#include "udufact/factor_solvers.hpp"
#include "udufact/types.hpp"

namespace udufact {

/// Full singular spectrum, descending, length min(rows, cols).
/// Throws ArgumentError on non-finite input.
Vector singular_values(const Matrix& m);

/// Number of singular values strictly above rel_tol * svals[0]; 0 when
/// svals[0] == 0. Throws ArgumentError if svals is not sorted descending.
Index numerical_rank(const Vector& svals, double rel_tol);

/// Euclidean norm of each column.
Vector column_norms(const Matrix& u);

/// Residuals of the fixed-point conditions of the projected UDU step.
///
/// With G = grad_X(X), the pre-projection update is
///   Ubar = U - 2 eta G U diag(lambda),  lambdabar_j = lambda_j - eta u_j^T G u_j.
/// At a fixed point with ||Ubar||_F <= alpha every G u_j lambda_j vanishes,
/// u_j^T G u_j >= 0 where lambda_j = 0 and u_j^T G u_j = 0 where lambda_j > 0.
/// When ||Ubar||_F > alpha the only way to be fixed is G U D = -beta U with
/// beta = (||Ubar||_F - alpha) / (2 alpha eta), which cannot hold for U != 0.
struct FixedPointReport {
  double cond_a_resid = 0.0;  ///< max_j ||G u_j lambda_j||
  double cond_c_viol = 0.0;   ///< max over zero lambda_j of max(0, -u_j^T G u_j)
  double cond_d_resid = 0.0;  ///< max over positive lambda_j of |u_j^T G u_j|
  double ubar_norm = 0.0;
  double alpha = 0.0;
  double beta = 0.0;

  nlohmann::json to_json() const;
};

/// lambda_j counts as zero when lambda_j <= 1e-12 * max(lambda).
FixedPointReport fixed_point_report(const FactorState& state, const Matrix& g, double eta);

/// Same report from the product G U only.
FixedPointReport fixed_point_report_from_product(const FactorState& state, const Matrix& gu,
                                                 double eta);

/// Pairwise orthogonality of the selected columns: the largest
/// |u_i^T u_j| / (||u_i|| ||u_j||) over pairs i < j. Zero for fewer than two.
double max_pairwise_coherence(const Matrix& u, const std::vector<Index>& columns);

}  // namespace udufact
