#pragma once

// Gradient solvers for X = U U^T (Burer-Monteiro) and for the constrained
// X = U diag(lambda) U^T model with ||U||_F <= alpha and lambda >= 0.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "udufact/linops.hpp"
#include "udufact/types.hpp"

namespace udufact {

enum class SolverKind { BM, UDU };

std::string to_string(SolverKind kind);
SolverKind solver_kind_from_string(const std::string& name);

/// Iterate of either solver. For BM, `lambda` is all ones and alpha is +inf.
struct FactorState {
  Matrix U;
  Vector lambda;
  double alpha = 1.0;

  Index dim() const { return U.rows(); }
  Index rank() const { return U.cols(); }
};

struct SolverConfig {
  SolverKind solver = SolverKind::UDU;
  double eta = 1e-2;
  std::size_t iters = 1000;
  double init_scale = 1e-2;  ///< ||U_0||_F
  std::uint64_t seed = 0;
  std::size_t log_every = 1000;
  Index rank = 0;            ///< 0 means r = d
  double alpha = 1.0;
  double d0 = 1.0;           ///< initial diagonal D_0 = d0 * I
  Index num_sv = 10;         ///< singular values recorded per trace row

  /// Throws ArgumentError naming the first violated bound.
  void validate(Index dim) const;
};

struct TraceRecord {
  std::size_t iter = 0;
  double objective = 0.0;
  std::vector<double> svals;    ///< top singular values of the reconstruction
  std::vector<double> u_svals;  ///< top singular values of U
  double colnorm_max = 0.0;
  double colnorm_min = 0.0;
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double beta = 0.0;            ///< fixed-point multiplier (UDU only)
  bool divergence_warning = false;
};

struct SolverResult {
  SolverKind kind = SolverKind::UDU;
  FactorState state;
  std::vector<TraceRecord> trace;
  std::vector<std::string> warnings;
  double final_objective = 0.0;
  /// ||state_k - state_{k-1}||_F (U and lambda stacked) of the last step.
  double last_displacement = std::numeric_limits<double>::infinity();
  /// Steps taken; below config.iters when the run was stopped on blow-up.
  std::size_t iterations_run = 0;
  /// Set by the growth warning or by a blow-up stop. On a stop, `state` is
  /// the last iterate and `final_objective` its (huge) objective.
  bool diverged = false;
};

/// Euclidean projection onto {M : ||M||_F <= alpha}.
Matrix project_fro_ball(const Matrix& m, double alpha);
/// Elementwise positive part.
Vector project_diag_nonneg(const Vector& v);

/// U - 2 eta G U.
Matrix bm_step(const Matrix& u, const Matrix& g, double eta);

/// One simultaneous projected-gradient step of the UDU model with a dense
/// symmetric gradient G = grad_X(U diag(lambda) U^T).
FactorState udu_step(const FactorState& state, const Matrix& g, double eta,
                     std::size_t iteration = 0);

/// Same step given only the product G U (what the solvers compute).
FactorState udu_step_from_product(const FactorState& state, const Matrix& gu, double eta,
                                  std::size_t iteration = 0);

/// U diag(lambda) U^T, symmetrized.
Matrix reconstruct(const FactorState& state);

/// U_0 with i.i.d. N(0,1) entries rescaled to Frobenius norm `scale`.
Matrix init_factor(Index dim, Index rank, double scale, std::uint64_t seed);

/// Runs the configured solver for config.iters steps. Stops early with
/// diverged = true once the objective exceeds 1e100 max(1, ||b||^2 / 2).
/// Throws NumericError on NaN.
SolverResult run_solver(const MeasurementOp& op, const MeasurementVec& b,
                        const SolverConfig& config);

// Serialization.

/// Header: iter,objective,sv_1..sv_k,colnorm_max,colnorm_min,lambda_max,lambda_min,beta,usv_1..usv_k
void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace, Index num_sv,
                     SolverKind kind);

/// Row-major JSON dump with header fields d, r, alpha.
nlohmann::json state_to_json(const FactorState& state, SolverKind kind);
FactorState state_from_json(const nlohmann::json& j, SolverKind* kind = nullptr);

}  // namespace udufact
