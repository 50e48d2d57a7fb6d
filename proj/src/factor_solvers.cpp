#include "udufact/factor_solvers.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>

#include "udufact/csv.hpp"
#include "udufact/kernels.hpp"
#include "udufact/random.hpp"
#include "udufact/spectra.hpp"

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace udufact {
namespace {

// Columns that the projection keeps shrinking decay into subnormal range,
// where x86 arithmetic is orders of magnitude slower. Flush them to zero for
// the duration of a solver run.
class FlushDenormals {
 public:
  FlushDenormals() {
#if defined(__SSE2__)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040u);  // FTZ | DAZ
#endif
  }
  ~FlushDenormals() {
#if defined(__SSE2__)
    _mm_setcsr(saved_);
#endif
  }
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
  unsigned saved_ = 0;
};

std::span<const double> col_span(const Matrix& m, Index j) {
  return {m.data() + j * m.rows(), static_cast<std::size_t>(m.rows())};
}

std::vector<double> head(const Vector& v, Index k) {
  const Index n = std::min(k, v.size());
  return std::vector<double>(v.data(), v.data() + n);
}

TraceRecord make_record(std::size_t iter, const FactorState& state, const FactoredEval& ev,
                        const SolverConfig& config) {
  TraceRecord rec;
  rec.iter = iter;
  rec.objective = ev.objective;
  rec.svals = head(singular_values(reconstruct(state)), config.num_sv);
  rec.u_svals = head(singular_values(state.U), config.num_sv);
  const Vector norms = column_norms(state.U);
  rec.colnorm_max = norms.maxCoeff();
  rec.colnorm_min = norms.minCoeff();
  rec.lambda_max = state.lambda.maxCoeff();
  rec.lambda_min = state.lambda.minCoeff();
  if (config.solver == SolverKind::UDU) {
    rec.beta = fixed_point_report_from_product(state, ev.grad_u, config.eta).beta;
  }
  return rec;
}

}  // namespace

std::string to_string(SolverKind kind) { return kind == SolverKind::BM ? "bm" : "udu"; }

SolverKind solver_kind_from_string(const std::string& name) {
  if (name == "bm") return SolverKind::BM;
  if (name == "udu") return SolverKind::UDU;
  throw ArgumentError("unknown solver \"" + name + "\" (expected \"bm\" or \"udu\")");
}

void SolverConfig::validate(Index dim) const {
  require(eta > 0.0 && std::isfinite(eta), "eta must be > 0");
  require(init_scale > 0.0 && std::isfinite(init_scale), "init_scale must be > 0");
  require(log_every >= 1, "log_every must be >= 1");
  require(rank >= 0 && rank <= dim, "rank must be in [1, d]");
  require(alpha > 0.0, "alpha must be > 0");
  require(d0 >= 0.0, "d0 must be >= 0");
  require(num_sv >= 1, "num_sv must be >= 1");
}

Matrix project_fro_ball(const Matrix& m, double alpha) {
  require(alpha > 0.0, "project_fro_ball: alpha must be > 0");
  const double norm = m.norm();
  if (norm <= alpha) return m;
  Matrix out = m;
  std::span<double> data{out.data(), static_cast<std::size_t>(out.size())};
  double factor = alpha / norm;
  kernels::scale(factor, data);
  // Rounding can leave the computed norm an ulp above alpha; shrink until it
  // is not, so that projecting again is an exact no-op.
  while (out.norm() > alpha) {
    factor = std::nextafter(factor, 0.0);
    out = m;
    kernels::scale(factor, data);
  }
  return out;
}

Vector project_diag_nonneg(const Vector& v) { return v.cwiseMax(0.0); }

Matrix bm_step(const Matrix& u, const Matrix& g, double eta) {
  require(g.rows() == u.rows() && g.cols() == u.rows(), "bm_step: G must be d x d with d = rows(U)");
  return u - 2.0 * eta * (g * u);
}

FactorState udu_step_from_product(const FactorState& state, const Matrix& gu, double eta,
                                  std::size_t iteration) {
  require(gu.rows() == state.U.rows() && gu.cols() == state.U.cols(),
          "udu_step: G U must match the shape of U");
  require(state.lambda.size() == state.U.cols(), "udu_step: lambda length must equal rank");
  if (!gu.allFinite()) throw NumericError("non-finite gradient", iteration);

  // Both updates read the pre-step (U, lambda).
  const Matrix ubar = state.U - (2.0 * eta) * (gu * state.lambda.asDiagonal());
  Vector lbar(state.lambda.size());
  for (Index j = 0; j < lbar.size(); ++j) {
    lbar[j] = state.lambda[j] - eta * kernels::dot(col_span(state.U, j), col_span(gu, j));
  }
  return FactorState{project_fro_ball(ubar, state.alpha), project_diag_nonneg(lbar), state.alpha};
}

FactorState udu_step(const FactorState& state, const Matrix& g, double eta, std::size_t iteration) {
  require(g.rows() == state.U.rows() && g.cols() == state.U.rows(),
          "udu_step: G must be d x d with d = rows(U)");
  if (!g.allFinite()) throw NumericError("non-finite gradient", iteration);
  return udu_step_from_product(state, g * state.U, eta, iteration);
}

Matrix reconstruct(const FactorState& state) {
  const Matrix x = state.U * state.lambda.asDiagonal() * state.U.transpose();
  Matrix sym = 0.5 * (x + x.transpose());
  return sym;
}

Matrix init_factor(Index dim, Index rank, double scale, std::uint64_t seed) {
  require(scale > 0.0, "init_factor: scale must be > 0");
  Rng rng(seed);
  Matrix u(dim, rank);
  for (Index i = 0; i < dim; ++i)
    for (Index j = 0; j < rank; ++j) u(i, j) = rng.normal();
  u *= scale / u.norm();
  return u;
}

SolverResult run_solver(const MeasurementOp& op, const MeasurementVec& b,
                        const SolverConfig& config) {
  const Index d = op.dim();
  config.validate(d);
  require(b.size() == op.size(), "run_solver: b length does not match operator");
  const Index r = config.rank == 0 ? d : config.rank;

  const FlushDenormals ftz;
  SolverResult result;
  result.kind = config.solver;
  FactorState& state = result.state;
  state.U = init_factor(d, r, config.init_scale, config.seed);
  if (config.solver == SolverKind::UDU) {
    state.lambda = Vector::Constant(r, config.d0);
    state.alpha = config.alpha;
  } else {
    state.lambda = Vector::Ones(r);
    state.alpha = std::numeric_limits<double>::infinity();
  }

  const double blowup_floor = 1e-20 * 0.5 * b.squaredNorm();
  double last_logged = -1.0;
  auto log = [&](std::size_t iter, const FactoredEval& ev) {
    TraceRecord rec = make_record(iter, state, ev, config);
    if (last_logged >= 0.0 && rec.objective > 10.0 * last_logged && rec.objective > blowup_floor) {
      rec.divergence_warning = true;
      result.diverged = true;
      result.warnings.push_back("objective grew from " + csv::format_double(last_logged) + " to " +
                                csv::format_double(rec.objective) + " by iteration " +
                                std::to_string(iter));
    }
    last_logged = rec.objective;
    result.trace.push_back(std::move(rec));
  };

  const double blowup_cap = 1e100 * std::max(1.0, 0.5 * b.squaredNorm());
  for (std::size_t k = 0; k < config.iters; ++k) {
    FactoredEval ev = eval_factored(op, state.U, state.lambda, b);
    if (std::isnan(ev.objective)) throw NumericError("non-finite objective", k);
    if (ev.objective > blowup_cap) {
      result.diverged = true;
      result.warnings.push_back("objective exceeded " + csv::format_double(blowup_cap) +
                                " at iteration " + std::to_string(k) + "; run stopped");
      result.iterations_run = k;
      result.final_objective = ev.objective;
      return result;
    }
    if (k % config.log_every == 0) log(k, ev);

    const bool last = k + 1 == config.iters;
    if (config.solver == SolverKind::UDU) {
      FactorState next = udu_step_from_product(state, ev.grad_u, config.eta, k);
      if (last) {
        result.last_displacement = std::sqrt((next.U - state.U).squaredNorm() +
                                             (next.lambda - state.lambda).squaredNorm());
      }
      state = std::move(next);
    } else {
      if (!ev.grad_u.allFinite()) throw NumericError("non-finite gradient", k);
      Matrix next = state.U - (2.0 * config.eta) * ev.grad_u;
      if (last) result.last_displacement = (next - state.U).norm();
      state.U = std::move(next);
    }
  }

  FactoredEval final_eval = eval_factored(op, state.U, state.lambda, b);
  if (!std::isfinite(final_eval.objective)) throw NumericError("non-finite objective", config.iters);
  result.final_objective = final_eval.objective;
  result.iterations_run = config.iters;
  if (result.trace.empty() || result.trace.back().iter != config.iters) log(config.iters, final_eval);
  return result;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace, Index num_sv,
                     SolverKind kind) {
  os << "iter,objective";
  for (Index i = 1; i <= num_sv; ++i) os << ",sv_" << i;
  os << ",colnorm_max,colnorm_min,lambda_max,lambda_min,beta";
  for (Index i = 1; i <= num_sv; ++i) os << ",usv_" << i;
  os << '\n';
  const bool udu = kind == SolverKind::UDU;
  auto cells = [&](const std::vector<double>& v) {
    for (Index i = 0; i < num_sv; ++i) {
      os << ',';
      if (static_cast<std::size_t>(i) < v.size()) os << csv::format_double(v[static_cast<std::size_t>(i)]);
    }
  };
  for (const auto& rec : trace) {
    os << rec.iter << ',' << csv::format_double(rec.objective);
    cells(rec.svals);
    os << ',' << csv::format_double(rec.colnorm_max) << ',' << csv::format_double(rec.colnorm_min);
    if (udu) {
      os << ',' << csv::format_double(rec.lambda_max) << ',' << csv::format_double(rec.lambda_min)
         << ',' << csv::format_double(rec.beta);
    } else {
      os << ",,,";
    }
    cells(rec.u_svals);
    os << '\n';
  }
}

nlohmann::json state_to_json(const FactorState& state, SolverKind kind) {
  nlohmann::json j;
  j["format"] = "udufact-state";
  j["solver"] = to_string(kind);
  j["d"] = state.dim();
  j["r"] = state.rank();
  j["alpha"] = std::isfinite(state.alpha) ? nlohmann::json(state.alpha) : nlohmann::json(nullptr);
  std::vector<double> u;
  u.reserve(static_cast<std::size_t>(state.U.size()));
  for (Index i = 0; i < state.U.rows(); ++i)
    for (Index k = 0; k < state.U.cols(); ++k) u.push_back(state.U(i, k));
  j["U"] = std::move(u);
  j["lambda"] = std::vector<double>(state.lambda.data(), state.lambda.data() + state.lambda.size());
  return j;
}

FactorState state_from_json(const nlohmann::json& j, SolverKind* kind) {
  require(j.is_object() && j.value("format", "") == "udufact-state",
          "not a udufact-state document");
  const Index d = j.at("d").get<Index>();
  const Index r = j.at("r").get<Index>();
  const auto u = j.at("U").get<std::vector<double>>();
  const auto lambda = j.at("lambda").get<std::vector<double>>();
  require(d >= 1 && r >= 1, "state dimensions must be positive");
  require(u.size() == static_cast<std::size_t>(d * r), "U has " + std::to_string(u.size()) +
                                                           " entries, expected d*r");
  require(lambda.size() == static_cast<std::size_t>(r), "lambda must have r entries");
  FactorState state;
  state.U.resize(d, r);
  for (Index i = 0; i < d; ++i)
    for (Index k = 0; k < r; ++k) state.U(i, k) = u[static_cast<std::size_t>(i * r + k)];
  state.lambda = Eigen::Map<const Vector>(lambda.data(), r);
  state.alpha = j.at("alpha").is_null() ? std::numeric_limits<double>::infinity()
                                        : j.at("alpha").get<double>();
  const SolverKind parsed = solver_kind_from_string(j.at("solver").get<std::string>());
  if (kind) *kind = parsed;
  return state;
}

}  // namespace udufact
