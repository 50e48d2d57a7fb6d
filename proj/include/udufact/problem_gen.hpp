#pragma once

// Seeded synthetic instances: PSD matrix completion and lifted (real) phase
// retrieval, plus signal extraction from a lifted solution.

#include <cstdint>
#include <optional>

#include "json.hpp"
#include "udufact/linops.hpp"
#include "udufact/types.hpp"

namespace udufact {

struct CompletionInstance {
  MeasurementOp op;
  MeasurementVec b;
  Matrix u_true;  ///< d x r_true
  Matrix x_true;  ///< u_true u_true^T
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static CompletionInstance from_json(const nlohmann::json& j);
};

struct PhaseInstance {
  MeasurementOp op;
  MeasurementVec b;
  Vector x_signal;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static PhaseInstance from_json(const nlohmann::json& j);
};

/// U_true has i.i.d. N(0,1) entries (drawn row by row); n distinct positions
/// of the d x d matrix are sampled uniformly without replacement and stored
/// in row-major order.
CompletionInstance gen_completion(Index d, Index r_true, Index n, std::uint64_t seed);

/// b + omega with omega_i ~ N(0, (sigma_rel ||b||)^2) i.i.d.
MeasurementVec perturb_noise(const MeasurementVec& b, double sigma_rel, std::uint64_t seed);

/// round(oversample * d) standard-normal sensing vectors. Without a signal,
/// a standard-normal unit-norm signal is drawn first from the same stream.
PhaseInstance gen_phase_retrieval(Index d, double oversample, std::uint64_t seed,
                                  const std::optional<Vector>& signal = std::nullopt);

/// sqrt(lambda_max) v_max of a symmetric PSD matrix, with the sign chosen so
/// that the largest-magnitude entry is nonnegative.
Vector extract_signal(const Matrix& x);

/// |<a, b>| / (||a|| ||b||); 0 when either vector is zero.
double abs_correlation(const Vector& a, const Vector& b);

/// Loads a grayscale image stored as a numeric CSV matrix (no header) and
/// flattens it row by row into a unit-norm signal.
Vector load_signal_csv(const std::string& path);

}  // namespace udufact
