#include "udufact/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "udufact/kernels.hpp"

namespace udufact {
namespace {

std::span<const double> col_span(const Matrix& m, Index j) {
  return {m.data() + j * m.rows(), static_cast<std::size_t>(m.rows())};
}

}  // namespace

Vector singular_values(const Matrix& m) {
  require(m.allFinite(), "singular_values: matrix has non-finite entries");
  if (m.size() == 0) return Vector();
  // One-sided Jacobi is slower but keeps small singular values accurate;
  // divide-and-conquer only for large layers.
  if (std::min(m.rows(), m.cols()) <= 256) {
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues();
  }
  Eigen::BDCSVD<Matrix> svd(m);
  return svd.singularValues();
}

Index numerical_rank(const Vector& svals, double rel_tol) {
  for (Index i = 1; i < svals.size(); ++i) {
    require(svals[i] <= svals[i - 1], "numerical_rank: singular values must be sorted descending");
  }
  if (svals.size() == 0 || svals[0] == 0.0) return 0;
  const double cut = rel_tol * svals[0];
  Index count = 0;
  for (Index i = 0; i < svals.size(); ++i) count += svals[i] > cut ? 1 : 0;
  return count;
}

Vector column_norms(const Matrix& u) {
  Vector out(u.cols());
  for (Index j = 0; j < u.cols(); ++j) out[j] = std::sqrt(kernels::sum_squares(col_span(u, j)));
  return out;
}

nlohmann::json FixedPointReport::to_json() const {
  return {{"cond_a_resid", cond_a_resid}, {"cond_c_viol", cond_c_viol},
          {"cond_d_resid", cond_d_resid}, {"ubar_norm", ubar_norm},
          {"alpha", alpha},               {"beta", beta}};
}

FixedPointReport fixed_point_report_from_product(const FactorState& state, const Matrix& gu,
                                                 double eta) {
  require(eta > 0.0, "fixed_point_report: eta must be > 0");
  require(gu.rows() == state.U.rows() && gu.cols() == state.U.cols(),
          "fixed_point_report: G U has the wrong shape");
  require(state.lambda.size() == state.U.cols(), "fixed_point_report: lambda length mismatch");

  FixedPointReport rep;
  rep.alpha = state.alpha;
  const double lambda_max = state.lambda.size() ? state.lambda.maxCoeff() : 0.0;
  const double zero_cut = 1e-12 * std::max(lambda_max, 0.0);

  const Matrix ubar = state.U - 2.0 * eta * gu * state.lambda.asDiagonal();
  rep.ubar_norm = ubar.norm();
  rep.beta = rep.ubar_norm > state.alpha ? (rep.ubar_norm - state.alpha) / (2.0 * state.alpha * eta)
                                         : 0.0;

  for (Index j = 0; j < state.U.cols(); ++j) {
    const double lam = state.lambda[j];
    const double quad = kernels::dot(col_span(state.U, j), col_span(gu, j));
    rep.cond_a_resid = std::max(rep.cond_a_resid, gu.col(j).norm() * std::abs(lam));
    if (lam <= zero_cut) {
      rep.cond_c_viol = std::max(rep.cond_c_viol, std::max(0.0, -quad));
    } else {
      rep.cond_d_resid = std::max(rep.cond_d_resid, std::abs(quad));
    }
  }
  return rep;
}

FixedPointReport fixed_point_report(const FactorState& state, const Matrix& g, double eta) {
  require(g.rows() == state.U.rows() && g.cols() == state.U.rows(),
          "fixed_point_report: gradient must be d x d");
  return fixed_point_report_from_product(state, g * state.U, eta);
}

double max_pairwise_coherence(const Matrix& u, const std::vector<Index>& columns) {
  double worst = 0.0;
  for (std::size_t a = 0; a < columns.size(); ++a) {
    for (std::size_t b = a + 1; b < columns.size(); ++b) {
      const auto ca = col_span(u, columns[a]);
      const auto cb = col_span(u, columns[b]);
      const double denom = std::sqrt(kernels::sum_squares(ca) * kernels::sum_squares(cb));
      if (denom == 0.0) continue;
      worst = std::max(worst, std::abs(kernels::dot(ca, cb)) / denom);
    }
  }
  return worst;
}

}  // namespace udufact
