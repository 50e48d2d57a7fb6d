#include "udufact/udv_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "udufact/csv.hpp"
#include "udufact/factor_solvers.hpp"
#include "udufact/random.hpp"
#include "udufact/spectra.hpp"

namespace udufact {
namespace {

bool has_diagonal(UdvVariant v) { return v != UdvVariant::UV; }

bool frobenius_balls(UdvVariant v) { return v == UdvVariant::UDV || v == UdvVariant::UDV_S; }

bool column_balls(UdvVariant v) { return v == UdvVariant::UDV_V1 || v == UdvVariant::UDV_V2; }

bool nonneg_diagonal(UdvVariant v) { return v == UdvVariant::UDV || v == UdvVariant::UDV_V1; }

Vector effective_w(const UdvParams& p) {
  return has_diagonal(p.variant) ? p.w : Vector::Ones(p.hidden());
}

void check_params(const UdvParams& p) {
  require(p.V.cols() == p.U.cols(), "U and V must have the same number of hidden units");
  require(p.w.size() == p.U.cols(), "w must have one entry per hidden unit");
}

void check_batch(const UdvParams& p, const Matrix& xb, const Matrix& yb) {
  check_params(p);
  require(xb.rows() >= 1, "empty batch");
  require(xb.cols() == p.input_dim(), "inputs have " + std::to_string(xb.cols()) +
                                          " features, network expects " +
                                          std::to_string(p.input_dim()));
  require(yb.rows() == xb.rows() && yb.cols() == p.output_dim(), "targets have the wrong shape");
}

Matrix project_columns(const Matrix& m) {
  Matrix out = m;
  for (Index j = 0; j < out.cols(); ++j) {
    const double n = out.col(j).norm();
    if (n <= 1.0) continue;
    double factor = 1.0 / n;
    out.col(j) = m.col(j) * factor;
    while (out.col(j).norm() > 1.0) {
      factor = std::nextafter(factor, 0.0);
      out.col(j) = m.col(j) * factor;
    }
  }
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

nlohmann::json row_major(const Matrix& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

Matrix from_row_major(const nlohmann::json& j, Index rows, Index cols, const char* name) {
  const auto v = j.get<std::vector<double>>();
  require(v.size() == static_cast<std::size_t>(rows * cols),
          std::string(name) + " has the wrong number of entries");
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < cols; ++k) m(i, k) = v[static_cast<std::size_t>(i * cols + k)];
  return m;
}

}  // namespace

std::string to_string(UdvVariant v) {
  switch (v) {
    case UdvVariant::UDV:
      return "udv";
    case UdvVariant::UDV_S:
      return "udv_s";
    case UdvVariant::UDV_V1:
      return "udv_v1";
    case UdvVariant::UDV_V2:
      return "udv_v2";
    case UdvVariant::UV:
      return "uv";
  }
  return "udv";
}

UdvVariant udv_variant_from_string(const std::string& name) {
  for (const auto v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ArgumentError("unknown network variant \"" + name +
                      "\" (expected udv, udv_s, udv_v1, udv_v2 or uv)");
}

nlohmann::json UdvParams::to_json() const {
  return {{"format", "udufact-udv"}, {"variant", to_string(variant)}, {"d", input_dim()},
          {"m", hidden()},           {"c", output_dim()},             {"U", row_major(U)},
          {"w", std::vector<double>(w.data(), w.data() + w.size())},  {"V", row_major(V)}};
}

UdvParams UdvParams::from_json(const nlohmann::json& j) {
  require(j.is_object() && j.value("format", "") == "udufact-udv", "not a udufact-udv document");
  const Index d = j.at("d").get<Index>();
  const Index m = j.at("m").get<Index>();
  const Index c = j.at("c").get<Index>();
  UdvParams p;
  p.variant = udv_variant_from_string(j.at("variant").get<std::string>());
  p.U = from_row_major(j.at("U"), d, m, "U");
  p.V = from_row_major(j.at("V"), c, m, "V");
  const auto w = j.at("w").get<std::vector<double>>();
  require(w.size() == static_cast<std::size_t>(m), "w has the wrong number of entries");
  p.w = Eigen::Map<const Vector>(w.data(), m);
  return p;
}

Index hidden_width_heuristic(Index d, Index c) {
  const double dd = static_cast<double>(d);
  const double cc = static_cast<double>(c);
  return static_cast<Index>(std::llround(std::sqrt((cc + 2.0) * dd) + 2.0 * std::sqrt(dd / (cc + 2.0))));
}

Vector forward(const UdvParams& p, const Vector& x) {
  check_params(p);
  require(x.size() == p.input_dim(), "input has the wrong length");
  return p.V * (effective_w(p).asDiagonal() * (p.U.transpose() * x));
}

Matrix forward_batch(const UdvParams& p, const Matrix& xb) {
  check_params(p);
  require(xb.cols() == p.input_dim(), "inputs have the wrong number of features");
  return ((xb * p.U) * effective_w(p).asDiagonal()) * p.V.transpose();
}

double batch_loss(const UdvParams& p, const Matrix& xb, const Matrix& yb) {
  check_batch(p, xb, yb);
  return 0.5 * (forward_batch(p, xb) - yb).squaredNorm() / static_cast<double>(xb.rows());
}

ParamGrads param_grads(const UdvParams& p, const Matrix& xb, const Matrix& yb) {
  check_batch(p, xb, yb);
  const double inv_b = 1.0 / static_cast<double>(xb.rows());
  const Vector w = effective_w(p);
  const Matrix h = xb * p.U;                // batch x m
  const Matrix z = h * w.asDiagonal();      // batch x m
  const Matrix r = z * p.V.transpose() - yb;  // batch x c
  const Matrix dz = inv_b * (r * p.V);      // batch x m
  ParamGrads g;
  g.dV = inv_b * (r.transpose() * z);
  g.dU = xb.transpose() * (dz * w.asDiagonal());
  g.dw = has_diagonal(p.variant) ? Vector(dz.cwiseProduct(h).colwise().sum().transpose())
                                 : Vector(Vector::Zero(p.hidden()));
  return g;
}

UdvParams apply_constraints(const UdvParams& p, UdvVariant variant) {
  UdvParams out = p;
  out.variant = variant;
  if (frobenius_balls(variant)) {
    out.U = project_fro_ball(p.U, 1.0);
    out.V = project_fro_ball(p.V, 1.0);
  } else if (column_balls(variant)) {
    out.U = project_columns(p.U);
    out.V = project_columns(p.V);
  }
  if (nonneg_diagonal(variant)) out.w = project_diag_nonneg(p.w);
  return out;
}

double constraint_violation(const UdvParams& p) {
  double worst = 0.0;
  if (frobenius_balls(p.variant)) {
    worst = std::max({worst, p.U.norm() - 1.0, p.V.norm() - 1.0});
  } else if (column_balls(p.variant)) {
    for (Index j = 0; j < p.hidden(); ++j)
      worst = std::max({worst, p.U.col(j).norm() - 1.0, p.V.col(j).norm() - 1.0});
  }
  if (nonneg_diagonal(p.variant) && p.w.size() > 0) worst = std::max(worst, -p.w.minCoeff());
  return worst;
}

Matrix layer_product(const UdvParams& p) {
  return has_diagonal(p.variant) ? Matrix(p.U * p.w.asDiagonal()) : p.U;
}

Matrix RegressionDataset::x_train() const { return gather_rows(X, train); }
Matrix RegressionDataset::y_train() const { return gather_rows(Y, train); }
Matrix RegressionDataset::x_test() const { return gather_rows(X, test); }
Matrix RegressionDataset::y_test() const { return gather_rows(Y, test); }

RegressionDataset split_dataset(Matrix x, Matrix y, std::uint64_t seed, double train_fraction) {
  require(x.rows() == y.rows(), "features and targets have different row counts");
  require(x.rows() >= 2, "dataset needs at least two rows");
  require(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must be in (0, 1)");
  const Index n = x.rows();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_below(i + 1)]);
  const auto n_train = std::clamp<Index>(
      static_cast<Index>(std::llround(train_fraction * static_cast<double>(n))), 1, n - 1);
  RegressionDataset data;
  data.X = std::move(x);
  data.Y = std::move(y);
  data.train.assign(perm.begin(), perm.begin() + n_train);
  data.test.assign(perm.begin() + n_train, perm.end());
  return data;
}

RegressionDataset gen_regression(Index n, Index d, Index c, Index r_gen, double noise,
                                 std::uint64_t seed, double train_fraction) {
  require(n >= 2 && d >= 1 && c >= 1, "gen_regression: invalid dimensions");
  require(r_gen >= 1 && r_gen <= std::min(d, c), "gen_regression: r_gen must be in [1, min(d, c)]");
  require(noise >= 0.0, "gen_regression: noise must be >= 0");
  Rng rng(seed);
  Matrix a(d, r_gen), b(c, r_gen), x(n, d);
  for (Index i = 0; i < d; ++i)
    for (Index k = 0; k < r_gen; ++k) a(i, k) = rng.normal();
  for (Index i = 0; i < c; ++i)
    for (Index k = 0; k < r_gen; ++k) b(i, k) = rng.normal();
  const Matrix w = a * b.transpose() / std::sqrt(static_cast<double>(d * r_gen));
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) x(i, k) = rng.normal();
  Matrix y = x * w;
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < c; ++k) y(i, k) += noise * rng.normal();
  RegressionDataset data = split_dataset(std::move(x), std::move(y), derive_seed(seed, 1), train_fraction);
  data.r_gen = r_gen;
  data.noise = noise;
  return data;
}

void write_dataset_csv(std::ostream& os, const RegressionDataset& data) {
  std::vector<std::string> header;
  for (Index j = 0; j < data.X.cols(); ++j) header.push_back("x" + std::to_string(j));
  for (Index j = 0; j < data.Y.cols(); ++j) header.push_back("y" + std::to_string(j));
  Matrix all(data.X.rows(), data.X.cols() + data.Y.cols());
  all << data.X, data.Y;
  csv::write(os, all, header);
}

RegressionDataset load_dataset_csv(const std::string& path, std::uint64_t seed,
                                   double train_fraction) {
  const auto table = csv::read_file(path, true);
  std::vector<Index> xs, ys;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    const auto& name = table.header[j];
    (!name.empty() && (name[0] == 'y' || name[0] == 'Y') ? ys : xs).push_back(static_cast<Index>(j));
  }
  require(!xs.empty() && !ys.empty(), path + ": need feature and target (y*) columns");
  Matrix x(table.values.rows(), static_cast<Index>(xs.size()));
  Matrix y(table.values.rows(), static_cast<Index>(ys.size()));
  for (std::size_t j = 0; j < xs.size(); ++j) x.col(static_cast<Index>(j)) = table.values.col(xs[j]);
  for (std::size_t j = 0; j < ys.size(); ++j) y.col(static_cast<Index>(j)) = table.values.col(ys[j]);
  return split_dataset(std::move(x), std::move(y), seed, train_fraction);
}

void TrainConfig::validate() const {
  require(lr > 0.0 && std::isfinite(lr), "lr must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 0, "epochs must be >= 0");
  require(hidden >= 1, "hidden must be >= 1");
  require(init_std > 0.0, "init_std must be > 0");
  require(num_sv >= 1, "num_sv must be >= 1");
}

UdvParams init_params(Index d, Index m, Index c, UdvVariant variant, double init_std,
                      std::uint64_t seed) {
  Rng rng(seed);
  UdvParams p;
  p.variant = variant;
  p.U.resize(d, m);
  p.V.resize(c, m);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < m; ++j) p.U(i, j) = init_std * rng.truncated_normal(2.0);
  for (Index i = 0; i < c; ++i)
    for (Index j = 0; j < m; ++j) p.V(i, j) = init_std * rng.truncated_normal(2.0);
  p.w = Vector::Ones(m);
  return apply_constraints(p, variant);
}

TrainResult train(const RegressionDataset& data, const TrainConfig& config) {
  config.validate();
  require(!data.train.empty() && !data.test.empty(), "dataset needs train and test rows");
  const Matrix xtr = data.x_train(), ytr = data.y_train();
  const Matrix xte = data.x_test(), yte = data.y_test();

  TrainResult result;
  UdvParams& p = result.params;
  p = init_params(data.X.cols(), config.hidden, data.Y.cols(), config.variant, config.init_std,
                  config.seed);
  Matrix mom_u = Matrix::Zero(p.U.rows(), p.U.cols());
  Matrix mom_v = Matrix::Zero(p.V.rows(), p.V.cols());
  Vector mom_w = Vector::Zero(p.hidden());
  const bool update_w = has_diagonal(p.variant);

  Rng shuffle(derive_seed(config.seed, 1));
  std::vector<Index> order(data.train.size());
  std::iota(order.begin(), order.end(), Index{0});
  const auto n_train = static_cast<Index>(order.size());

  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle.uniform_below(i + 1)]);
    for (Index start = 0; start < n_train; start += config.batch_size) {
      const Index len = std::min(config.batch_size, n_train - start);
      Matrix xb(len, xtr.cols()), yb(len, ytr.cols());
      for (Index i = 0; i < len; ++i) {
        xb.row(i) = xtr.row(order[static_cast<std::size_t>(start + i)]);
        yb.row(i) = ytr.row(order[static_cast<std::size_t>(start + i)]);
      }
      const ParamGrads g = param_grads(p, xb, yb);
      mom_u = config.momentum * mom_u + g.dU;
      mom_v = config.momentum * mom_v + g.dV;
      p.U -= config.lr * mom_u;
      p.V -= config.lr * mom_v;
      if (update_w) {
        mom_w = config.momentum * mom_w + g.dw;
        p.w -= config.lr * mom_w;
      }
      p = apply_constraints(p, p.variant);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = batch_loss(p, xtr, ytr);
    rec.test_loss = batch_loss(p, xte, yte);
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.test_loss) || !p.U.allFinite() ||
        !p.V.allFinite() || !p.w.allFinite()) {
      result.diverged = true;
      result.trace.push_back(std::move(rec));
      return result;
    }
    if (const double viol = constraint_violation(p); viol > 1e-12) {
      throw std::logic_error(to_string(p.variant) + " constraint violated by " +
                             csv::format_double(viol) + " after epoch " + std::to_string(epoch));
    }
    const Vector sv = singular_values(layer_product(p));
    rec.svals.assign(sv.data(), sv.data() + std::min(config.num_sv, sv.size()));
    result.trace.push_back(std::move(rec));
  }
  return result;
}

void write_epoch_trace_csv(std::ostream& os, const std::vector<EpochRecord>& trace, Index num_sv) {
  os << "epoch,train_loss,test_loss";
  for (Index i = 1; i <= num_sv; ++i) os << ",sv_" << i;
  os << '\n';
  for (const auto& rec : trace) {
    os << rec.epoch << ',' << csv::format_double(rec.train_loss) << ','
       << csv::format_double(rec.test_loss);
    for (Index i = 0; i < num_sv; ++i) {
      os << ',';
      if (static_cast<std::size_t>(i) < rec.svals.size())
        os << csv::format_double(rec.svals[static_cast<std::size_t>(i)]);
    }
    os << '\n';
  }
}

Index energy_rank(const Vector& svals, double fraction) {
  require(fraction > 0.0 && fraction <= 1.0, "energy fraction must be in (0, 1]");
  const double total = svals.squaredNorm();
  if (total == 0.0) return 1;
  double acc = 0.0;
  for (Index i = 0; i < svals.size(); ++i) {
    acc += svals[i] * svals[i];
    if (acc >= fraction * total) return i + 1;
  }
  return svals.size();
}

UdvParams svd_prune(const UdvParams& p, const PruneKeep& keep) {
  check_params(p);
  require(keep.rank.has_value() != keep.energy.has_value(),
          "svd_prune: give exactly one of rank or energy");
  const Matrix prod = layer_product(p);
  Eigen::JacobiSVD<Matrix> svd(prod, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  Index r = 0;
  if (keep.rank) {
    r = *keep.rank;
    require(r >= 1 && r <= p.hidden(), "svd_prune: rank must be in [1, m]");
  } else {
    r = energy_rank(s, *keep.energy);
  }
  // Beyond min(d, m) the hidden product has no further singular directions.
  r = std::min(r, s.size());

  UdvParams out;
  out.variant = p.variant;
  const Matrix us = svd.matrixU().leftCols(r);
  const Matrix vs = svd.matrixV().leftCols(r);
  out.V = p.V * vs;
  if (has_diagonal(p.variant)) {
    out.U = us;
    out.w = s.head(r);
  } else {
    out.U = us * s.head(r).asDiagonal();
    out.w = Vector::Ones(r);
  }
  return out;
}

}  // namespace udufact
