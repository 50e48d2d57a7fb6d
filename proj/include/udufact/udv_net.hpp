#pragma once

// Three-layer linear network phi(x) = V diag(w) U^T x with norm-ball
// constraints on the outer layers and a nonnegative diagonal middle layer,
// its constraint variants, the unconstrained two-layer UV baseline, projected
// mini-batch training with momentum, and SVD-based pruning of the hidden layer.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "udufact/types.hpp"

namespace udufact {

/// Constraint sets (per hidden unit j):
///   UDV    ||U||_F <= 1, ||V||_F <= 1, w_j >= 0
///   UDV_S  ||U||_F <= 1, ||V||_F <= 1
///   UDV_V1 ||u_j|| <= 1, ||v_j|| <= 1, w_j >= 0
///   UDV_V2 ||u_j|| <= 1, ||v_j|| <= 1
///   UV     unconstrained, no diagonal layer
enum class UdvVariant { UDV, UDV_S, UDV_V1, UDV_V2, UV };

std::string to_string(UdvVariant v);
UdvVariant udv_variant_from_string(const std::string& name);
inline constexpr UdvVariant kAllVariants[] = {UdvVariant::UDV, UdvVariant::UDV_S,
                                             UdvVariant::UDV_V1, UdvVariant::UDV_V2,
                                             UdvVariant::UV};

struct UdvParams {
  Matrix U;  ///< d x m
  Vector w;  ///< m; all ones and never updated for UV
  Matrix V;  ///< c x m
  UdvVariant variant = UdvVariant::UDV;

  Index input_dim() const { return U.rows(); }
  Index hidden() const { return U.cols(); }
  Index output_dim() const { return V.rows(); }

  nlohmann::json to_json() const;
  static UdvParams from_json(const nlohmann::json& j);
};

/// Hidden width round(sqrt((c+2)d) + 2 sqrt(d/(c+2))) used for small
/// regression heads.
Index hidden_width_heuristic(Index d, Index c);

Vector forward(const UdvParams& p, const Vector& x);
/// Row i of the result is phi(row i of xb).
Matrix forward_batch(const UdvParams& p, const Matrix& xb);

/// Mean over rows of 1/2 ||phi(x_i) - y_i||^2. Throws on an empty batch.
double batch_loss(const UdvParams& p, const Matrix& xb, const Matrix& yb);

struct ParamGrads {
  Matrix dU;
  Vector dw;  ///< zero for UV
  Matrix dV;
};

ParamGrads param_grads(const UdvParams& p, const Matrix& xb, const Matrix& yb);

/// Projects onto the constraint set of `variant`.
UdvParams apply_constraints(const UdvParams& p, UdvVariant variant);

/// Largest violation of p.variant's constraints (0 when feasible).
double constraint_violation(const UdvParams& p);

/// U diag(w), or U for the UV baseline.
Matrix layer_product(const UdvParams& p);

struct RegressionDataset {
  Matrix X;  ///< n x d
  Matrix Y;  ///< n x c
  std::vector<Index> train;
  std::vector<Index> test;
  Index r_gen = 0;
  double noise = 0.0;

  Matrix x_train() const;
  Matrix y_train() const;
  Matrix x_test() const;
  Matrix y_test() const;
};

/// Y = X W + noise * N(0,1) with X ~ N(0,1) and W = A B^T / sqrt(d r_gen) of
/// rank r_gen; rows are split train/test by a seeded permutation.
RegressionDataset gen_regression(Index n, Index d, Index c, Index r_gen, double noise,
                                 std::uint64_t seed, double train_fraction = 0.8);

/// Splits given data by a seeded permutation; the first round(f n) go to train.
RegressionDataset split_dataset(Matrix x, Matrix y, std::uint64_t seed,
                                double train_fraction = 0.8);

/// CSV with header x0..x{d-1},y0..y{c-1}.
void write_dataset_csv(std::ostream& os, const RegressionDataset& data);
/// Columns whose header starts with 'y' are targets, the rest features.
RegressionDataset load_dataset_csv(const std::string& path, std::uint64_t seed,
                                   double train_fraction = 0.8);

struct TrainConfig {
  double lr = 1e-2;
  double momentum = 0.9;  ///< 0 gives plain mini-batch gradient descent
  Index batch_size = 32;
  Index epochs = 100;
  Index hidden = 20;
  std::uint64_t seed = 0;
  UdvVariant variant = UdvVariant::UDV;
  double init_std = 0.02;
  Index num_sv = 10;

  void validate() const;
};

struct EpochRecord {
  Index epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  std::vector<double> svals;  ///< of layer_product
};

struct TrainResult {
  UdvParams params;
  std::vector<EpochRecord> trace;
  bool diverged = false;
};

/// Truncated-normal (+-2 std) U and V, w = 1, projected onto the variant's set.
UdvParams init_params(Index d, Index m, Index c, UdvVariant variant, double init_std,
                      std::uint64_t seed);

/// Shuffled mini-batch steps v <- mu v + g, p <- p - lr v, each followed by
/// apply_constraints. Throws std::logic_error if a constraint is violated at
/// an epoch boundary; returns with diverged = true on a non-finite loss.
TrainResult train(const RegressionDataset& data, const TrainConfig& config);

/// Header: epoch,train_loss,test_loss,sv_1..sv_k
void write_epoch_trace_csv(std::ostream& os, const std::vector<EpochRecord>& trace, Index num_sv);

struct PruneKeep {
  std::optional<Index> rank;       ///< keep this many hidden units
  std::optional<double> energy;    ///< or the smallest rank reaching this energy fraction
};

/// Smallest r with sum_{i<=r} s_i^2 >= fraction * sum_i s_i^2 (at least 1).
Index energy_rank(const Vector& svals, double fraction);

/// Truncated SVD of layer_product(p) = Us S Vs^T; returns U' = Us_r,
/// w' = diag(S_r), V' = V Vs_r (UV: U' = Us_r S_r, w' = 1) so that the new
/// map equals V times the rank-r truncation of the old hidden product.
/// The result is an inference network and need not satisfy training constraints.
UdvParams svd_prune(const UdvParams& p, const PruneKeep& keep);

}  // namespace udufact
