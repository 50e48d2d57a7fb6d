#include "udufact/problem_gen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "udufact/csv.hpp"
#include "udufact/random.hpp"

namespace udufact {
namespace {

nlohmann::json rows_json(const Matrix& m) {
  auto out = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    out.push_back(std::move(row));
  }
  return out;
}

Matrix rows_from_json(const nlohmann::json& j) {
  require(j.is_array() && !j.empty(), "expected a non-empty array of rows");
  const auto cols = j.front().size();
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].size() == cols, "ragged matrix rows");
    for (std::size_t k = 0; k < cols; ++k)
      m(static_cast<Index>(i), static_cast<Index>(k)) = j[i][k].get<double>();
  }
  return m;
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

nlohmann::json CompletionInstance::to_json() const {
  return {{"kind", "completion"}, {"seed", seed},   {"op", op.to_json()},
          {"b", to_std(b)},       {"u_true", rows_json(u_true)}};
}

CompletionInstance CompletionInstance::from_json(const nlohmann::json& j) {
  require(j.value("kind", "") == "completion", "not a completion instance");
  CompletionInstance inst{MeasurementOp::from_json(j.at("op")), vector_from_json(j.at("b")),
                          rows_from_json(j.at("u_true")), Matrix(), j.at("seed").get<std::uint64_t>()};
  require(inst.b.size() == inst.op.size(), "b length does not match operator");
  require(inst.u_true.rows() == inst.op.dim(), "u_true rows do not match operator dim");
  inst.x_true = inst.u_true * inst.u_true.transpose();
  return inst;
}

nlohmann::json PhaseInstance::to_json() const {
  return {{"kind", "phase"}, {"seed", seed}, {"op", op.to_json()}, {"b", to_std(b)},
          {"x_signal", to_std(x_signal)}};
}

PhaseInstance PhaseInstance::from_json(const nlohmann::json& j) {
  require(j.value("kind", "") == "phase", "not a phase-retrieval instance");
  PhaseInstance inst{MeasurementOp::from_json(j.at("op")), vector_from_json(j.at("b")),
                     vector_from_json(j.at("x_signal")), j.at("seed").get<std::uint64_t>()};
  require(inst.b.size() == inst.op.size(), "b length does not match operator");
  require(inst.x_signal.size() == inst.op.dim(), "signal length does not match operator dim");
  return inst;
}

CompletionInstance gen_completion(Index d, Index r_true, Index n, std::uint64_t seed) {
  require(d >= 1, "gen_completion: d must be >= 1");
  require(r_true >= 1 && r_true <= d, "gen_completion: r_true must be in [1, d]");
  require(n >= 1 && n <= d * d, "gen_completion: n must be in [1, d^2]");
  Rng rng(seed);
  Matrix u(d, r_true);
  for (Index i = 0; i < d; ++i)
    for (Index k = 0; k < r_true; ++k) u(i, k) = rng.normal();

  // Partial Fisher-Yates over the row-major linear positions.
  std::vector<std::uint64_t> cells(static_cast<std::size_t>(d * d));
  std::iota(cells.begin(), cells.end(), std::uint64_t{0});
  for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
    const std::size_t pick = k + rng.uniform_below(cells.size() - k);
    std::swap(cells[k], cells[pick]);
  }
  cells.resize(static_cast<std::size_t>(n));
  std::sort(cells.begin(), cells.end());
  std::vector<EntryIndex> indices;
  indices.reserve(cells.size());
  for (const auto c : cells) {
    indices.push_back({static_cast<Index>(c / static_cast<std::uint64_t>(d)),
                       static_cast<Index>(c % static_cast<std::uint64_t>(d))});
  }

  CompletionInstance inst{MeasurementOp::entry_mask(d, std::move(indices)), MeasurementVec(), u,
                          u * u.transpose(), seed};
  inst.b = apply_op(inst.op, inst.x_true);
  return inst;
}

MeasurementVec perturb_noise(const MeasurementVec& b, double sigma_rel, std::uint64_t seed) {
  require(sigma_rel >= 0.0, "perturb_noise: sigma_rel must be >= 0");
  if (sigma_rel == 0.0) return b;
  const double sigma = sigma_rel * b.norm();
  Rng rng(seed);
  MeasurementVec out = b;
  for (Index i = 0; i < out.size(); ++i) out[i] += sigma * rng.normal();
  return out;
}

PhaseInstance gen_phase_retrieval(Index d, double oversample, std::uint64_t seed,
                                  const std::optional<Vector>& signal) {
  require(d >= 1, "gen_phase_retrieval: d must be >= 1");
  require(oversample > 0.0, "gen_phase_retrieval: oversample must be > 0");
  const Index n = std::max<Index>(1, static_cast<Index>(std::llround(oversample * static_cast<double>(d))));
  Rng rng(seed);
  Vector x;
  if (signal) {
    require(signal->size() == d, "gen_phase_retrieval: signal length must equal d");
    x = *signal;
  } else {
    x.resize(d);
    for (Index i = 0; i < d; ++i) x[i] = rng.normal();
    x /= x.norm();
  }
  Matrix a(d, n);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) a(k, i) = rng.normal();
  MeasurementVec b(n);
  for (Index i = 0; i < n; ++i) {
    const double proj = a.col(i).dot(x);
    b[i] = proj * proj;
  }
  return PhaseInstance{MeasurementOp::rank_one(std::move(a)), std::move(b), std::move(x), seed};
}

Vector extract_signal(const Matrix& x) {
  require(x.rows() == x.cols(), "extract_signal: matrix must be square");
  require(x.allFinite(), "extract_signal: matrix has non-finite entries");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(x);
  const Index top = x.rows() - 1;  // eigenvalues ascend
  const double lam = eig.eigenvalues()[top];
  if (lam < -1e-10 * x.norm()) {
    throw ArgumentError("extract_signal: matrix is not positive semidefinite (top eigenvalue " +
                        std::to_string(lam) + ")");
  }
  Vector v = eig.eigenvectors().col(top);
  Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v[arg] < 0.0) v = -v;
  return std::sqrt(std::max(lam, 0.0)) * v;
}

double abs_correlation(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "abs_correlation: length mismatch");
  const double denom = a.norm() * b.norm();
  return denom == 0.0 ? 0.0 : std::abs(a.dot(b)) / denom;
}

Vector load_signal_csv(const std::string& path) {
  const auto table = csv::read_file(path, false);
  require(table.values.size() > 0, "signal file " + path + " is empty");
  Vector x(table.values.size());
  Index k = 0;
  for (Index i = 0; i < table.values.rows(); ++i)
    for (Index j = 0; j < table.values.cols(); ++j) x[k++] = table.values(i, j);
  const double norm = x.norm();
  require(norm > 0.0, "signal file " + path + " is all zeros");
  return x / norm;
}

}  // namespace udufact
