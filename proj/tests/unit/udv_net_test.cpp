#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "udufact/spectra.hpp"
#include "udufact/udv_net.hpp"

using namespace udufact;
using test::random_matrix;
using test::random_vector;

namespace {

UdvParams random_params(Index d, Index m, Index c, UdvVariant v, Rng& rng) {
  UdvParams p;
  p.U = random_matrix(d, m, rng);
  p.w = random_vector(m, rng);
  p.V = random_matrix(c, m, rng);
  p.variant = v;
  if (v == UdvVariant::UV) p.w.setOnes();
  return p;
}

Matrix dense_map(const UdvParams& p) { return p.V * p.w.asDiagonal() * p.U.transpose(); }

}  // namespace

TEST(Forward, Examples) {
  Rng rng(51);
  UdvParams p = random_params(4, 3, 2, UdvVariant::UDV, rng);
  p.w.setZero();
  EXPECT_EQ(forward(p, random_vector(4, rng)), Vector::Zero(2));

  UdvParams q;
  q.U = Matrix::Zero(2, 1);
  q.U(0, 0) = 1;
  q.V = Matrix::Zero(2, 1);
  q.V(0, 0) = 1;
  q.w = Vector::Constant(1, 2.0);
  Vector x = Vector::Zero(2);
  x(0) = 1;
  Vector expect = Vector::Zero(2);
  expect(0) = 2;
  EXPECT_EQ(forward(q, x), expect);
}

TEST(Forward, MatchesDenseProduct) {
  Rng rng(52);
  for (UdvVariant v : kAllVariants) {
    const UdvParams p = random_params(6, 4, 3, v, rng);
    const Vector x = random_vector(6, rng);
    EXPECT_LE((forward(p, x) - dense_map(p) * x).norm(), 1e-12);
    const Matrix xb = random_matrix(5, 6, rng);
    EXPECT_LE((forward_batch(p, xb) - xb * dense_map(p).transpose()).norm(), 1e-12);
  }
  UdvParams p = random_params(6, 4, 3, UdvVariant::UV, rng);
  p.w = Vector::Constant(4, 5.0);  // ignored for UV
  const Vector x = random_vector(6, rng);
  EXPECT_LE((forward(p, x) - p.V * p.U.transpose() * x).norm(), 1e-12);
  EXPECT_THROW(forward(p, random_vector(5, rng)), ArgumentError);
}

TEST(BatchLoss, Examples) {
  Rng rng(53);
  const UdvParams p = random_params(3, 2, 2, UdvVariant::UDV, rng);
  const Matrix xb = random_matrix(4, 3, rng);
  EXPECT_EQ(batch_loss(p, xb, forward_batch(p, xb)), 0.0);

  const Matrix x1 = random_matrix(1, 3, rng);
  Matrix y1 = forward_batch(p, x1);
  y1(0, 0) += 2.0;
  EXPECT_NEAR(batch_loss(p, x1, y1), 2.0, 1e-12);

  const Matrix yb = random_matrix(4, 2, rng);
  double sum = 0;
  for (Index i = 0; i < 4; ++i) sum += 0.5 * (forward(p, xb.row(i).transpose()) - yb.row(i).transpose()).squaredNorm();
  EXPECT_NEAR(batch_loss(p, xb, yb), sum / 4, 1e-12);
  EXPECT_THROW(batch_loss(p, Matrix(0, 3), Matrix(0, 2)), ArgumentError);
}

TEST(ParamGrads, ZeroResidual) {
  Rng rng(54);
  const UdvParams p = random_params(4, 3, 2, UdvVariant::UDV, rng);
  const Matrix xb = random_matrix(6, 4, rng);
  const ParamGrads g = param_grads(p, xb, forward_batch(p, xb));
  EXPECT_LE(g.dU.norm() + g.dw.norm() + g.dV.norm(), 1e-12);
}

TEST(ParamGrads, ScalarChainRule) {
  // phi = v w u x, loss = (phi - y)^2 / 2
  UdvParams p;
  p.U = Matrix::Constant(1, 1, 0.7);
  p.w = Vector::Constant(1, 1.3);
  p.V = Matrix::Constant(1, 1, -0.4);
  const double x = 2.0, y = 0.5;
  const double r = -0.4 * 1.3 * 0.7 * x - y;
  const ParamGrads g = param_grads(p, Matrix::Constant(1, 1, x), Matrix::Constant(1, 1, y));
  EXPECT_NEAR(g.dU(0, 0), r * -0.4 * 1.3 * x, 1e-15);
  EXPECT_NEAR(g.dw(0), r * -0.4 * 0.7 * x, 1e-15);
  EXPECT_NEAR(g.dV(0, 0), r * 1.3 * 0.7 * x, 1e-15);
}

TEST(ParamGrads, CentralDifferencesAllVariants) {
  Rng rng(55);
  for (UdvVariant v : kAllVariants) {
    for (int trial = 0; trial < 20; ++trial) {
      const UdvParams p = random_params(5, 4, 3, v, rng);
      const Matrix xb = random_matrix(7, 5, rng);
      const Matrix yb = random_matrix(7, 3, rng);
      const ParamGrads g = param_grads(p, xb, yb);
      const double h = 1e-5;
      auto check = [&](auto perturb, double analytic) {
        UdvParams a = p, b = p;
        perturb(a, h);
        perturb(b, -h);
        const double fd = (batch_loss(a, xb, yb) - batch_loss(b, xb, yb)) / (2 * h);
        EXPECT_LE(std::abs(fd - analytic), 1e-6 * std::max(1.0, std::abs(analytic)))
            << to_string(v) << " trial " << trial;
      };
      for (Index i = 0; i < 5; ++i)
        for (Index j = 0; j < 4; ++j) check([&](UdvParams& q, double s) { q.U(i, j) += s; }, g.dU(i, j));
      for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 4; ++j) check([&](UdvParams& q, double s) { q.V(i, j) += s; }, g.dV(i, j));
      if (v != UdvVariant::UV) {
        for (Index j = 0; j < 4; ++j) check([&](UdvParams& q, double s) { q.w(j) += s; }, g.dw(j));
      } else {
        EXPECT_EQ(g.dw, Vector::Zero(4));
      }
    }
  }
}

TEST(ApplyConstraints, Examples) {
  Rng rng(56);
  UdvParams p = random_params(3, 2, 2, UdvVariant::UDV, rng);
  p.U *= 2.0 / p.U.norm();
  p.V *= 0.5 / p.V.norm();
  const UdvParams q = apply_constraints(p, UdvVariant::UDV);
  EXPECT_LE((q.U - p.U / 2).norm(), 1e-15);
  EXPECT_EQ(q.V, p.V);

  UdvParams s = random_params(3, 2, 2, UdvVariant::UDV_V2, rng);
  s.U.setZero();
  s.V.setZero();
  s.w << -1, 3;
  EXPECT_EQ(apply_constraints(s, UdvVariant::UDV_V2).w, s.w);
  EXPECT_EQ(apply_constraints(s, UdvVariant::UDV_V1).w, Vector::Map(std::vector<double>{0, 3}.data(), 2));
  EXPECT_EQ(apply_constraints(s, UdvVariant::UDV_S).w, s.w);
  EXPECT_EQ(apply_constraints(s, UdvVariant::UDV).w, Vector::Map(std::vector<double>{0, 3}.data(), 2));
}

TEST(ApplyConstraints, IdempotentAndFeasible) {
  Rng rng(57);
  for (UdvVariant v : kAllVariants) {
    for (int t = 0; t < 50; ++t) {
      UdvParams p = random_params(6, 5, 3, v, rng);
      p.U *= std::exp(rng.normal());
      const UdvParams once = apply_constraints(p, v);
      const UdvParams twice = apply_constraints(once, v);
      EXPECT_EQ(once.U, twice.U);
      EXPECT_EQ(once.w, twice.w);
      EXPECT_EQ(once.V, twice.V);
      EXPECT_EQ(constraint_violation(once), 0.0) << to_string(v);
    }
  }
  const UdvParams p = random_params(6, 5, 3, UdvVariant::UV, rng);
  const UdvParams q = apply_constraints(p, UdvVariant::UV);
  EXPECT_EQ(q.U, p.U);
  EXPECT_EQ(q.V, p.V);
}

TEST(ApplyConstraints, PerColumnBalls) {
  Rng rng(58);
  const UdvParams p = apply_constraints(random_params(6, 5, 3, UdvVariant::UDV_V1, rng), UdvVariant::UDV_V1);
  EXPECT_LE(column_norms(p.U).maxCoeff(), 1.0);
  EXPECT_LE(column_norms(p.V).maxCoeff(), 1.0);
}

TEST(Variant, Names) {
  for (UdvVariant v : kAllVariants) EXPECT_EQ(udv_variant_from_string(to_string(v)), v);
  EXPECT_THROW(udv_variant_from_string("udv_x"), ArgumentError);
}

TEST(HiddenWidth, Heuristic) {
  // sqrt(7 * 40) + 2 sqrt(40 / 7) = 16.73 + 4.78
  EXPECT_EQ(hidden_width_heuristic(40, 5), 22);
}

TEST(GenRegression, SplitAndShapes) {
  const RegressionDataset ds = gen_regression(100, 6, 3, 2, 0.1, 1);
  EXPECT_EQ(ds.X.rows(), 100);
  EXPECT_EQ(ds.Y.cols(), 3);
  EXPECT_EQ(ds.train.size(), 80u);
  EXPECT_EQ(ds.test.size(), 20u);
  std::vector<Index> all = ds.train;
  all.insert(all.end(), ds.test.begin(), ds.test.end());
  std::sort(all.begin(), all.end());
  for (Index i = 0; i < 100; ++i) EXPECT_EQ(all[static_cast<std::size_t>(i)], i);
  EXPECT_EQ(gen_regression(100, 6, 3, 2, 0.1, 1).Y, ds.Y);
}

TEST(GenRegression, NoiselessTargetsHaveGeneratorRank) {
  const RegressionDataset ds = gen_regression(200, 8, 5, 2, 0.0, 3);
  const Vector s = singular_values(ds.Y);
  EXPECT_EQ(numerical_rank(s, 1e-10), 2);
}

TEST(Dataset, CsvRoundTrip) {
  const RegressionDataset ds = gen_regression(30, 4, 2, 1, 0.1, 2);
  const std::string path = ::testing::TempDir() + "ds.csv";
  {
    std::ofstream out(path);
    write_dataset_csv(out, ds);
  }
  const RegressionDataset back = load_dataset_csv(path, 2);
  EXPECT_EQ(back.X, ds.X);
  EXPECT_EQ(back.Y, ds.Y);
  EXPECT_EQ(back.train.size(), 24u);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = TrainConfig{};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ArgumentError);
}

TEST(InitParams, TruncatedNormalAndIdentityDiagonal) {
  const UdvParams p = init_params(40, 20, 5, UdvVariant::UV, 0.02, 7);
  EXPECT_EQ(p.w, Vector::Ones(20));
  EXPECT_LE(p.U.cwiseAbs().maxCoeff(), 0.04);
  EXPECT_LE(p.V.cwiseAbs().maxCoeff(), 0.04);
  const double sd = std::sqrt(p.U.squaredNorm() / 800.0);
  EXPECT_NEAR(sd, 0.02 * 0.88, 0.002);  // std of N(0,1) truncated at 2 is 0.88
}

TEST(Train, TinyLearningRateLeavesParamsUnchanged) {
  const RegressionDataset ds = gen_regression(100, 6, 3, 2, 0.1, 4);
  TrainConfig c;
  c.lr = 1e-300;
  c.epochs = 3;
  c.hidden = 4;
  c.seed = 8;
  for (UdvVariant v : kAllVariants) {
    c.variant = v;
    const TrainResult r = train(ds, c);
    const UdvParams init = init_params(6, 4, 3, v, c.init_std, c.seed);
    EXPECT_EQ(r.params.U, init.U);
    EXPECT_EQ(r.params.w, init.w);
    EXPECT_EQ(r.params.V, init.V);
  }
}

TEST(Train, LossDecreasesAndConstraintsHold) {
  const RegressionDataset ds = gen_regression(400, 8, 3, 2, 0.1, 5);
  TrainConfig c;
  c.lr = 0.05;
  c.epochs = 30;
  c.hidden = 6;
  c.seed = 2;
  for (UdvVariant v : kAllVariants) {
    c.variant = v;
    const TrainResult r = train(ds, c);
    ASSERT_FALSE(r.diverged);
    ASSERT_EQ(r.trace.size(), 30u);
    EXPECT_LT(r.trace.back().train_loss, r.trace.front().train_loss) << to_string(v);
    EXPECT_EQ(constraint_violation(r.params), 0.0);
    EXPECT_EQ(r.trace.back().svals.size(), 6u);
  }
}

TEST(Train, DivergenceIsReported) {
  const RegressionDataset ds = gen_regression(200, 8, 3, 2, 0.1, 5);
  TrainConfig c;
  c.lr = 50.0;
  c.epochs = 50;
  c.hidden = 6;
  c.variant = UdvVariant::UV;
  const TrainResult r = train(ds, c);
  EXPECT_TRUE(r.diverged);
}

TEST(Train, EpochTraceCsv) {
  EpochRecord rec;
  rec.epoch = 1;
  rec.train_loss = 0.5;
  rec.test_loss = 0.25;
  rec.svals = {3.0};
  std::ostringstream os;
  write_epoch_trace_csv(os, {rec}, 2);
  EXPECT_EQ(os.str(), "epoch,train_loss,test_loss,sv_1,sv_2\n1,0.5,0.25,3,\n");
}

TEST(EnergyRank, Examples) {
  Vector s(3);
  s << 3, 1, 0;
  EXPECT_EQ(energy_rank(s, 0.9), 1);
  EXPECT_EQ(energy_rank(s, 0.95), 2);
  EXPECT_EQ(energy_rank(s, 1.0), 2);
  EXPECT_EQ(energy_rank(Vector::Zero(3), 0.5), 1);
}

TEST(SvdPrune, ExactRankIsLossless) {
  Rng rng(59);
  for (UdvVariant v : kAllVariants) {
    UdvParams p = random_params(8, 6, 4, v, rng);
    p.U = random_matrix(8, 2, rng) * random_matrix(2, 6, rng);  // rank 2 hidden product
    const UdvParams q = svd_prune(p, PruneKeep{2, std::nullopt});
    EXPECT_EQ(q.hidden(), 2);
    const Matrix xb = random_matrix(10, 8, rng);
    EXPECT_LE((forward_batch(q, xb) - forward_batch(p, xb)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(SvdPrune, KeepAllIsLossless) {
  Rng rng(60);
  const UdvParams p = random_params(8, 6, 4, UdvVariant::UDV, rng);
  const UdvParams q = svd_prune(p, PruneKeep{6, std::nullopt});
  const Matrix xb = random_matrix(10, 8, rng);
  EXPECT_LE((forward_batch(q, xb) - forward_batch(p, xb)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(svd_prune(p, PruneKeep{7, std::nullopt}), ArgumentError);
  EXPECT_THROW(svd_prune(p, PruneKeep{0, std::nullopt}), ArgumentError);
  EXPECT_THROW(svd_prune(p, PruneKeep{std::nullopt, 1.5}), ArgumentError);
}

TEST(SvdPrune, EnergyModeAndDeviationBound) {
  Rng rng(61);
  for (int t = 0; t < 20; ++t) {
    const UdvParams p = random_params(8, 6, 4, UdvVariant::UDV, rng);
    const Vector s = singular_values(layer_product(p));
    const Index r = energy_rank(s, 0.9);
    const UdvParams q = svd_prune(p, PruneKeep{std::nullopt, 0.9});
    EXPECT_EQ(q.hidden(), r);
    const Matrix xb = random_matrix(20, 8, rng);
    const double tail = s.tail(s.size() - r).norm();
    const double vnorm = singular_values(p.V)(0);
    const double xmax = xb.rowwise().norm().maxCoeff();
    const Matrix dev = forward_batch(q, xb) - forward_batch(p, xb);
    EXPECT_LE(dev.rowwise().norm().maxCoeff(), vnorm * tail * xmax * (1 + 1e-12));
  }
}

TEST(Params, JsonRoundTrip) {
  Rng rng(62);
  const UdvParams p = random_params(3, 2, 2, UdvVariant::UDV_V1, rng);
  const UdvParams q = UdvParams::from_json(nlohmann::json::parse(p.to_json().dump()));
  EXPECT_EQ(q.U, p.U);
  EXPECT_EQ(q.w, p.w);
  EXPECT_EQ(q.V, p.V);
  EXPECT_EQ(q.variant, p.variant);
}
