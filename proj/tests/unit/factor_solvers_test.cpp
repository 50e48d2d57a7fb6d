#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "test_support.hpp"
#include "udufact/factor_solvers.hpp"
#include "udufact/problem_gen.hpp"
#include "udufact/spectra.hpp"

using namespace udufact;
using test::random_matrix;
using test::random_symmetric;
using test::random_vector;

namespace {

Matrix scalar_matrix(double x) { return Matrix::Constant(1, 1, x); }
Vector scalar_vector(double x) { return Vector::Constant(1, x); }

FactorState state_of(Matrix u, Vector lam, double alpha = 1.0) {
  FactorState s;
  s.U = std::move(u);
  s.lambda = std::move(lam);
  s.alpha = alpha;
  return s;
}

}  // namespace

TEST(ProjectFroBall, Examples) {
  const Matrix id = Matrix::Identity(2, 2);
  EXPECT_LE((project_fro_ball(id, 1.0) - id / std::sqrt(2.0)).norm(), 1e-15);
  const Matrix m = Matrix::Constant(2, 2, 0.25);  // norm 0.5
  EXPECT_EQ(project_fro_ball(m, 1.0), m);
  EXPECT_EQ(project_fro_ball(Matrix::Zero(3, 2), 0.1), Matrix::Zero(3, 2));
  EXPECT_THROW(project_fro_ball(m, 0.0), ArgumentError);
  EXPECT_THROW(project_fro_ball(m, -1.0), ArgumentError);
}

TEST(ProjectFroBall, BoundaryIsInterior) {
  Matrix m(1, 2);
  m << 0.6, 0.8;
  EXPECT_EQ(project_fro_ball(m, 1.0), m);
}

TEST(ProjectFroBall, ResultNeverExceedsRadius) {
  Rng rng(21);
  for (int t = 0; t < 1000; ++t) {
    const double alpha = std::exp(rng.normal());
    const Matrix m = std::exp(2 * rng.normal()) * random_matrix(4, 3, rng);
    EXPECT_LE(project_fro_ball(m, alpha).norm(), alpha);
  }
}

TEST(ProjectDiagNonneg, Examples) {
  Vector v(3);
  v << 1, -2, 0;
  Vector e(3);
  e << 1, 0, 0;
  EXPECT_EQ(project_diag_nonneg(v), e);
  EXPECT_EQ(project_diag_nonneg(e), e);
  const Vector tiny = scalar_vector(-1e-300);
  EXPECT_EQ(project_diag_nonneg(tiny)(0), 0.0);
}

TEST(BmStep, Examples) {
  Rng rng(22);
  const Matrix u = random_matrix(4, 2, rng);
  EXPECT_EQ(bm_step(u, Matrix::Zero(4, 4), 0.3), u);
  EXPECT_NEAR(bm_step(scalar_matrix(0.5), scalar_matrix(1.0), 0.1)(0, 0), 0.4, 1e-15);
  EXPECT_THROW(bm_step(u, Matrix::Zero(3, 3), 0.1), ArgumentError);
}

TEST(BmStep, SmallStepDescends) {
  Rng rng(23);
  const auto inst = gen_completion(8, 2, 30, 5);
  for (int t = 0; t < 10; ++t) {
    const Matrix u = random_matrix(8, 8, rng);
    const Matrix x = u * u.transpose();
    const Matrix g = grad_X(inst.op, x, inst.b);
    const Matrix un = bm_step(u, g, 1e-6);
    EXPECT_LT(objective(inst.op, un * un.transpose(), inst.b), objective(inst.op, x, inst.b));
  }
}

TEST(UduStep, ZeroGradientInsideBallIsFixed) {
  Rng rng(24);
  const FactorState s = state_of(0.1 * random_matrix(5, 3, rng), random_vector(3, rng).cwiseAbs());
  const FactorState n = udu_step(s, Matrix::Zero(5, 5), 0.5);
  EXPECT_EQ(n.U, s.U);
  EXPECT_EQ(n.lambda, s.lambda);
}

TEST(UduStep, HandEvaluatedScalarCase) {
  const FactorState n = udu_step(state_of(scalar_matrix(0.5), scalar_vector(1.0)), scalar_matrix(1.0), 0.1);
  EXPECT_NEAR(n.U(0, 0), 0.4, 1e-15);
  EXPECT_NEAR(n.lambda(0), 0.975, 1e-15);
}

TEST(UduStep, NegativeDiagonalIsClamped) {
  // lambdabar = 0.01 - 0.1 * 0.25 < 0
  const FactorState n = udu_step(state_of(scalar_matrix(0.5), scalar_vector(0.01)), scalar_matrix(1.0), 0.1);
  EXPECT_EQ(n.lambda(0), 0.0);
}

TEST(UduStep, NonFiniteGradientNamesIteration) {
  Matrix g = Matrix::Zero(2, 2);
  g(0, 1) = g(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    udu_step(state_of(Matrix::Identity(2, 2) * 0.1, Vector::Ones(2)), g, 0.1, 17);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.iteration(), 17u);
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
}

TEST(UduStep, MatchesExplicitFormula) {
  Rng rng(25);
  for (int t = 0; t < 20; ++t) {
    const FactorState s = state_of(random_matrix(6, 4, rng), random_vector(4, rng).cwiseAbs(), 2.0);
    const Matrix g = random_symmetric(6, rng);
    const double eta = 0.01;
    const Matrix ubar = s.U - 2 * eta * g * s.U * s.lambda.asDiagonal();
    const Matrix utg = s.U.transpose() * g * s.U;
    const Vector dbar = s.lambda - eta * utg.diagonal();
    const Matrix uexp = ubar.norm() > s.alpha ? Matrix(ubar * (s.alpha / ubar.norm())) : ubar;
    const FactorState n = udu_step(s, g, eta);
    EXPECT_LE((n.U - uexp).norm(), 1e-12);
    EXPECT_LE((n.lambda - dbar.cwiseMax(0.0)).norm(), 1e-12);
    const FactorState n2 = udu_step_from_product(s, g * s.U, eta);
    EXPECT_LE((n2.U - n.U).norm(), 1e-13);
    EXPECT_LE((n2.lambda - n.lambda).norm(), 1e-13);
  }
}

TEST(UduStep, UpdatesAreSimultaneous) {
  // An alternating scheme would recompute G at the new U before updating
  // lambda; the results must differ from the simultaneous step.
  const auto inst = gen_completion(6, 2, 20, 3);
  Rng rng(26);
  FactorState s = state_of(project_fro_ball(random_matrix(6, 6, rng), 1.0), Vector::Ones(6));
  const double eta = 0.05;
  const Matrix g = grad_X(inst.op, reconstruct(s), inst.b);
  const FactorState sim = udu_step(s, g, eta);

  FactorState alt = s;
  alt.U = project_fro_ball(s.U - 2 * eta * g * s.U * s.lambda.asDiagonal(), s.alpha);
  const Matrix g2 = grad_X(inst.op, alt.U * s.lambda.asDiagonal() * alt.U.transpose(), inst.b);
  alt.lambda = project_diag_nonneg(s.lambda - eta * (alt.U.transpose() * g2 * alt.U).diagonal());

  EXPECT_EQ(sim.U, alt.U);
  EXPECT_GT((sim.lambda - alt.lambda).norm(), 1e-8);
}

TEST(Reconstruct, Examples) {
  Matrix e1 = Matrix::Zero(3, 1);
  e1(0, 0) = 1;
  const Matrix x = reconstruct(state_of(e1, scalar_vector(2.0)));
  EXPECT_EQ(x, 2 * e1 * e1.transpose());
  Rng rng(27);
  EXPECT_EQ(reconstruct(state_of(random_matrix(4, 3, rng), Vector::Zero(3))), Matrix::Zero(4, 4));
}

TEST(Reconstruct, MatchesTripleLoopAndIsSymmetric) {
  Rng rng(28);
  const FactorState s = state_of(random_matrix(5, 3, rng), random_vector(3, rng).cwiseAbs());
  const Matrix x = reconstruct(s);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) {
      double v = 0;
      for (Index k = 0; k < 3; ++k) v += s.U(i, k) * s.lambda(k) * s.U(j, k);
      EXPECT_NEAR(x(i, j), v, 1e-12);
    }
  EXPECT_TRUE(x == x.transpose());
}

TEST(InitFactor, ScaleAndDeterminism) {
  const Matrix a = init_factor(10, 4, 0.3, 99);
  EXPECT_NEAR(a.norm(), 0.3, 1e-15);
  EXPECT_EQ(a, init_factor(10, 4, 0.3, 99));
  EXPECT_NE(a, init_factor(10, 4, 0.3, 100));
}

TEST(SolverConfig, Validation) {
  SolverConfig c;
  EXPECT_NO_THROW(c.validate(5));
  c.eta = -1;
  EXPECT_THROW(c.validate(5), ArgumentError);
  c = SolverConfig{};
  c.init_scale = 0;
  EXPECT_THROW(c.validate(5), ArgumentError);
  c = SolverConfig{};
  c.rank = 6;
  EXPECT_THROW(c.validate(5), ArgumentError);
  c = SolverConfig{};
  c.log_every = 0;
  EXPECT_THROW(c.validate(5), ArgumentError);
}

TEST(RunSolver, ZeroItersReturnsInitialState) {
  const auto inst = gen_completion(6, 2, 20, 1);
  SolverConfig c;
  c.iters = 0;
  c.init_scale = 0.25;
  const SolverResult r = run_solver(inst.op, inst.b, c);
  EXPECT_NEAR(r.state.U.norm(), 0.25, 1e-15);
  EXPECT_EQ(r.state.lambda, Vector::Ones(6));
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].iter, 0u);
  EXPECT_DOUBLE_EQ(r.final_objective, objective(inst.op, reconstruct(r.state), inst.b));
}

TEST(RunSolver, InvariantsHoldAndTraceIsLogged) {
  const auto inst = gen_completion(10, 2, 60, 2);
  SolverConfig c;
  c.iters = 500;
  c.log_every = 100;
  c.eta = 0.05;
  const SolverResult r = run_solver(inst.op, inst.b, c);
  EXPECT_LE(r.state.U.norm(), c.alpha + 1e-12);
  EXPECT_GE(r.state.lambda.minCoeff(), 0.0);
  ASSERT_EQ(r.trace.size(), 6u);
  EXPECT_EQ(r.trace.back().iter, 500u);
  for (const auto& rec : r.trace) {
    EXPECT_LE(rec.svals.size(), 10u);
    EXPECT_GE(rec.lambda_min, 0.0);
  }
  EXPECT_EQ(r.iterations_run, 500u);
}

TEST(RunSolver, BmKeepsUnitDiagonal) {
  const auto inst = gen_completion(6, 2, 20, 1);
  SolverConfig c;
  c.solver = SolverKind::BM;
  c.iters = 50;
  const SolverResult r = run_solver(inst.op, inst.b, c);
  EXPECT_EQ(r.state.lambda, Vector::Ones(6));
  EXPECT_TRUE(std::isinf(r.state.alpha));
}

TEST(RunSolver, Deterministic) {
  const auto inst = gen_completion(8, 2, 30, 4);
  SolverConfig c;
  c.iters = 300;
  c.seed = 5;
  const SolverResult a = run_solver(inst.op, inst.b, c);
  const SolverResult b = run_solver(inst.op, inst.b, c);
  EXPECT_EQ(a.state.U, b.state.U);
  EXPECT_EQ(a.state.lambda, b.state.lambda);
}

TEST(RunSolver, BlowUpIsReportedAsDivergence) {
  const auto inst = gen_completion(10, 2, 60, 2);
  SolverConfig c;
  c.solver = SolverKind::BM;
  c.eta = 50.0;
  c.init_scale = 10.0;
  c.iters = 10000;
  c.log_every = 1;
  const SolverResult r = run_solver(inst.op, inst.b, c);
  EXPECT_TRUE(r.diverged);
  EXPECT_LT(r.iterations_run, c.iters);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(RunSolver, FullyObservedTinyInstanceIsRecovered) {
  const auto inst = gen_completion(2, 2, 4, 8);
  const double s = 1.0 / inst.b.norm();
  SolverConfig c;
  c.iters = 20000;
  c.eta = 0.1;
  c.init_scale = 0.5;
  const SolverResult r = run_solver(inst.op, inst.b * s, c);
  EXPECT_LE((reconstruct(r.state) - inst.x_true * s).norm(), 1e-8);
}

TEST(RunSolver, ConvergedStateIsNotSpurious) {
  const auto inst = gen_completion(12, 2, 130, 6);
  const double s = 1.0 / inst.b.norm();
  SolverConfig c;
  c.iters = 40000;
  c.eta = 0.05;
  const SolverResult r = run_solver(inst.op, inst.b * s, c);
  ASSERT_LT(r.last_displacement, 1e-10);
  const FactoredEval ev = eval_factored(inst.op, r.state.U, r.state.lambda, inst.b * s);
  EXPECT_LE(fixed_point_report_from_product(r.state, ev.grad_u, c.eta).ubar_norm, c.alpha + 1e-9);
}

TEST(TraceCsv, HeaderAndEmptyCellsForBm) {
  TraceRecord rec;
  rec.iter = 3;
  rec.objective = 0.5;
  rec.svals = {2.0, 1.0};
  rec.u_svals = {1.0};
  std::ostringstream os;
  write_trace_csv(os, {rec}, 2, SolverKind::BM);
  EXPECT_EQ(os.str(),
            "iter,objective,sv_1,sv_2,colnorm_max,colnorm_min,lambda_max,lambda_min,beta,usv_1,usv_2\n"
            "3,0.5,2,1,0,0,,,,1,\n");
}

TEST(StateJson, RoundTrip) {
  Rng rng(29);
  const FactorState s = state_of(random_matrix(4, 3, rng), random_vector(3, rng).cwiseAbs(), 0.7);
  SolverKind kind = SolverKind::BM;
  const FactorState back = state_from_json(nlohmann::json::parse(state_to_json(s, SolverKind::UDU).dump()), &kind);
  EXPECT_EQ(kind, SolverKind::UDU);
  EXPECT_EQ(back.U, s.U);
  EXPECT_EQ(back.lambda, s.lambda);
  EXPECT_EQ(back.alpha, 0.7);

  FactorState bm = s;
  bm.alpha = std::numeric_limits<double>::infinity();
  const auto j = state_to_json(bm, SolverKind::BM);
  EXPECT_TRUE(j["alpha"].is_null());
  EXPECT_TRUE(std::isinf(state_from_json(j).alpha));
}
