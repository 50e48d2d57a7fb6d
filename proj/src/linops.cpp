#include "udufact/linops.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "udufact/kernels.hpp"
#include "udufact/random.hpp"

namespace udufact {
namespace {

std::span<const double> col_span(const Matrix& m, Index j) {
  return {m.data() + j * m.rows(), static_cast<std::size_t>(m.rows())};
}

std::span<double> col_span(Matrix& m, Index j) {
  return {m.data() + j * m.rows(), static_cast<std::size_t>(m.rows())};
}

std::span<const double> vec_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

void check_square(const MeasurementOp& op, const Matrix& x) {
  require(x.rows() == op.dim() && x.cols() == op.dim(),
          "matrix is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
              ", operator expects " + std::to_string(op.dim()) + "x" + std::to_string(op.dim()));
}

void check_measurements(const MeasurementOp& op, const MeasurementVec& r) {
  require(r.size() == op.size(), "measurement vector has length " + std::to_string(r.size()) +
                                     ", operator has " + std::to_string(op.size()));
}

void check_factor(const MeasurementOp& op, const Matrix& u, const Vector& lambda) {
  require(u.rows() == op.dim(), "factor has " + std::to_string(u.rows()) + " rows, operator dim is " +
                                    std::to_string(op.dim()));
  require(lambda.size() == u.cols(), "diagonal length does not match factor rank");
}

}  // namespace

MeasurementOp MeasurementOp::entry_mask(Index dim, std::vector<EntryIndex> indices) {
  require(dim >= 1, "operator dimension must be >= 1");
  require(!indices.empty(), "entry mask needs at least one index");
  for (const auto& [i, j] : indices) {
    require(i >= 0 && i < dim && j >= 0 && j < dim,
            "index (" + std::to_string(i) + "," + std::to_string(j) + ") outside [0," +
                std::to_string(dim) + ")");
  }
  std::vector<EntryIndex> sorted = indices;
  std::sort(sorted.begin(), sorted.end());
  const auto dup = std::adjacent_find(sorted.begin(), sorted.end());
  require(dup == sorted.end(), "duplicate index (" + (dup == sorted.end() ? std::string() :
                                   std::to_string(dup->row) + "," + std::to_string(dup->col)) +
                                   ")");
  MeasurementOp op;
  op.kind_ = Kind::EntryMask;
  op.dim_ = dim;
  op.indices_ = std::move(indices);
  return op;
}

MeasurementOp MeasurementOp::rank_one(Matrix vectors) {
  require(vectors.rows() >= 1, "sensing vectors must have length >= 1");
  require(vectors.cols() >= 1, "rank-one operator needs at least one sensing vector");
  require(vectors.allFinite(), "sensing vectors must be finite");
  MeasurementOp op;
  op.kind_ = Kind::RankOneSensing;
  op.dim_ = vectors.rows();
  op.vectors_ = std::move(vectors);
  return op;
}

Index MeasurementOp::size() const {
  return kind_ == Kind::EntryMask ? static_cast<Index>(indices_.size()) : vectors_.cols();
}

nlohmann::json MeasurementOp::to_json() const {
  nlohmann::json j;
  if (kind_ == Kind::EntryMask) {
    j["kind"] = "entry_mask";
    j["dim"] = dim_;
    auto& idx = j["indices"] = nlohmann::json::array();
    for (const auto& e : indices_) idx.push_back({e.row, e.col});
  } else {
    j["kind"] = "rank_one";
    j["dim"] = dim_;
    auto& vecs = j["vectors"] = nlohmann::json::array();
    for (Index i = 0; i < vectors_.cols(); ++i) {
      const auto col = col_span(vectors_, i);
      vecs.push_back(std::vector<double>(col.begin(), col.end()));
    }
  }
  return j;
}

MeasurementOp MeasurementOp::from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("kind") && j.contains("dim"),
          "operator description needs \"kind\" and \"dim\"");
  const std::string kind = j.at("kind").get<std::string>();
  const Index dim = j.at("dim").get<Index>();
  if (kind == "entry_mask") {
    std::vector<EntryIndex> indices;
    for (const auto& pair : j.at("indices")) {
      require(pair.is_array() && pair.size() == 2, "entry_mask indices must be [row, col] pairs");
      indices.push_back({pair[0].get<Index>(), pair[1].get<Index>()});
    }
    return entry_mask(dim, std::move(indices));
  }
  if (kind == "rank_one") {
    const auto& vecs = j.at("vectors");
    require(vecs.is_array() && !vecs.empty(), "rank_one operator needs a non-empty \"vectors\" list");
    Matrix a(dim, static_cast<Index>(vecs.size()));
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      require(vecs[i].size() == static_cast<std::size_t>(dim),
              "sensing vector " + std::to_string(i) + " does not have length dim");
      for (Index k = 0; k < dim; ++k) a(k, static_cast<Index>(i)) = vecs[i][k].get<double>();
    }
    return rank_one(std::move(a));
  }
  throw ArgumentError("unknown operator kind \"" + kind + "\"");
}

MeasurementVec apply_op(const MeasurementOp& op, const Matrix& x) {
  check_square(op, x);
  if (op.kind() == MeasurementOp::Kind::EntryMask) {
    MeasurementVec out(op.size());
    const auto& idx = op.indices();
    for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Index>(k)] = x(idx[k].row, idx[k].col);
    return out;
  }
  const Matrix& a = op.vectors();
  const Matrix xa = x * a;
  MeasurementVec out(op.size());
  for (Index i = 0; i < a.cols(); ++i) out[i] = kernels::dot(col_span(a, i), col_span(xa, i));
  return out;
}

Matrix adjoint_op(const MeasurementOp& op, const MeasurementVec& r) {
  check_measurements(op, r);
  const Index d = op.dim();
  if (op.kind() == MeasurementOp::Kind::EntryMask) {
    Matrix g = Matrix::Zero(d, d);
    const auto& idx = op.indices();
    for (std::size_t k = 0; k < idx.size(); ++k) g(idx[k].row, idx[k].col) += r[static_cast<Index>(k)];
    Matrix sym = 0.5 * (g + g.transpose());
    return sym;
  }
  const Matrix& a = op.vectors();
  Matrix g = a * r.asDiagonal() * a.transpose();
  // The product is symmetric in exact arithmetic; make it bitwise so.
  Matrix sym = 0.5 * (g + g.transpose());
  return sym;
}

double objective(const MeasurementOp& op, const Matrix& x, const MeasurementVec& b) {
  check_measurements(op, b);
  const MeasurementVec res = apply_op(op, x) - b;
  return 0.5 * res.squaredNorm();
}

Matrix grad_X(const MeasurementOp& op, const Matrix& x, const MeasurementVec& b) {
  check_measurements(op, b);
  return adjoint_op(op, apply_op(op, x) - b);
}

MeasurementVec apply_factored(const MeasurementOp& op, const Matrix& u, const Vector& lambda) {
  check_factor(op, u, lambda);
  MeasurementVec out(op.size());
  const auto w = vec_span(lambda);
  if (op.kind() == MeasurementOp::Kind::EntryMask) {
    // X[i,j] = sum_k U[i,k] lambda_k U[j,k]; rows of U are columns of U^T.
    const Matrix ut = u.transpose();
    const auto& idx = op.indices();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out[static_cast<Index>(k)] =
          kernels::weighted_dot(col_span(ut, idx[k].row), col_span(ut, idx[k].col), w);
    }
    return out;
  }
  // a_i^T U diag(lambda) U^T a_i = sum_k lambda_k (u_k^T a_i)^2
  const Matrix proj = u.transpose() * op.vectors();
  for (Index i = 0; i < proj.cols(); ++i) {
    const auto p = col_span(proj, i);
    out[i] = kernels::weighted_dot(p, p, w);
  }
  return out;
}

Matrix adjoint_times(const MeasurementOp& op, const MeasurementVec& r, const Matrix& u) {
  check_measurements(op, r);
  require(u.rows() == op.dim(), "factor row count does not match operator dim");
  if (op.kind() == MeasurementOp::Kind::EntryMask) {
    // G = 1/2 sum_k r_k (e_i e_j^T + e_j e_i^T); accumulate rows of G U.
    const Matrix ut = u.transpose();
    Matrix gut = Matrix::Zero(u.cols(), u.rows());
    const auto& idx = op.indices();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double half = 0.5 * r[static_cast<Index>(k)];
      kernels::axpy(half, col_span(ut, idx[k].col), col_span(gut, idx[k].row));
      kernels::axpy(half, col_span(ut, idx[k].row), col_span(gut, idx[k].col));
    }
    return gut.transpose();
  }
  const Matrix& a = op.vectors();
  const Matrix proj = a.transpose() * u;  // n x r, row i = a_i^T U
  return a * (r.asDiagonal() * proj);
}

FactoredEval eval_factored(const MeasurementOp& op, const Matrix& u, const Vector& lambda,
                           const MeasurementVec& b) {
  check_factor(op, u, lambda);
  check_measurements(op, b);
  FactoredEval ev;
  ev.residual = apply_factored(op, u, lambda) - b;
  ev.objective = 0.5 * ev.residual.squaredNorm();
  ev.grad_u = adjoint_times(op, ev.residual, u);
  return ev;
}

double estimate_lipschitz(const MeasurementOp& op, int max_iters, double rel_tol,
                          std::uint64_t seed) {
  const Index d = op.dim();
  Rng rng(seed);
  Matrix x(d, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i) x(i, j) = rng.normal();
  x = 0.5 * (x + x.transpose());
  x /= x.norm();
  double estimate = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Matrix y = adjoint_op(op, apply_op(op, x));
    const double next = frob_inner(x, y);  // Rayleigh quotient, ||x|| = 1
    const double norm = y.norm();
    if (norm == 0.0) return 0.0;
    x = y / norm;
    if (it > 0 && std::abs(next - estimate) <= rel_tol * std::abs(next)) return next;
    estimate = next;
  }
  return estimate;
}

}  // namespace udufact
