#pragma once

// File-backed experiments: a JSON spec selects a problem, solvers or network
// variants, and the outputs (CSV traces, spectra, states, summary.json) land
// in output_dir. Runs are deterministic given the spec.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "udufact/factor_solvers.hpp"
#include "udufact/types.hpp"
#include "udufact/udv_net.hpp"

namespace udufact {

enum class ExperimentKind { Completion, CompletionNoisy, Phase, UdvTrain, UdvPrune, Sweep };

std::string to_string(ExperimentKind kind);

// Seeds left unset are derived from ExperimentSpec::seed:
// instance/dataset stream 0, noise stream 1, solver/training stream 2.

struct ProblemBlock {
  Index d = 40;              ///< 64 for phase
  Index r_true = 2;
  Index n = 320;
  double sigma_rel = 0.0;    ///< completion-noisy only (default 1e-2)
  bool normalize = true;     ///< scale b and X_true by 1/||b|| (phase default false)
  double oversample = 2.0;   ///< phase: m = round(oversample d)
  std::optional<std::string> signal_csv;  ///< phase: image instead of a random signal
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> noise_seed;
};

struct SolverBlock {
  std::vector<SolverKind> solvers{SolverKind::UDU, SolverKind::BM};
  double eta = 1e-2;
  bool eta_inverse_lipschitz = false;  ///< "eta": "inverse_lipschitz" (phase default)
  std::size_t iters = 1000;
  double init_scale = 1e-2;
  double alpha = 1.0;
  double d0 = 1.0;
  Index rank = 0;
  std::size_t log_every = 1000;
  Index num_sv = 10;
  double rank_tol = 1e-6;    ///< 1e-4 for phase
  std::optional<std::uint64_t> seed;
};

struct DatasetBlock {
  Index n = 2000;
  Index d = 40;
  Index c = 5;
  Index r_gen = 2;
  double noise = 0.5;
  double train_fraction = 0.8;
  std::optional<std::string> csv;  ///< load instead of generating
  std::optional<std::uint64_t> seed;
};

struct TrainBlock {
  std::vector<UdvVariant> variants{UdvVariant::UDV, UdvVariant::UV};
  double lr = 0.07;
  double momentum = 0.9;
  Index batch_size = 32;
  Index epochs = 300;
  Index hidden = 20;
  double init_std = 0.02;
  Index num_sv = 10;
  Index average_last = 1;  ///< test loss reported as the mean of the last k epochs
  Index ratio_index = 5;   ///< summary reports sv_k / sv_1 for this k
  double rank_tol = 1e-3;
  std::optional<std::uint64_t> seed;
};

struct PruneBlock {
  std::optional<double> energy = 0.999;
  std::optional<Index> rank;
};

struct SweepBlock {
  ExperimentKind of = ExperimentKind::Completion;
  std::vector<double> eta;
  std::vector<double> init_scale;
  std::vector<double> lr;
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::Completion;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  ProblemBlock problem;
  SolverBlock solver;
  DatasetBlock dataset;
  TrainBlock train;
  PruneBlock prune;
  std::optional<SweepBlock> sweep;

  /// Kind of the individual runs (sweep.of for sweeps).
  ExperimentKind run_kind() const { return sweep ? sweep->of : kind; }

  /// Normalized form with every default filled in. Round-trips through
  /// validate_spec_json.
  nlohmann::json to_json() const;
  /// FNV-1a 64 of to_json() without output_dir, as 16 hex digits.
  std::string hash() const;
};

struct SpecValidation {
  std::optional<ExperimentSpec> spec;
  std::vector<std::string> errors;  ///< every violation found, in document order

  bool ok() const { return spec.has_value(); }
};

SpecValidation validate_spec(const std::string& text);
SpecValidation validate_spec_json(const nlohmann::json& j);

/// Reads and validates a spec file. A missing file is reported as an error.
SpecValidation validate_spec_file(const std::string& path);

/// One-off command line overrides.
struct SpecOverrides {
  std::optional<std::string> output_dir;
  /// Replaces the top-level seed and clears block-level seeds.
  std::optional<std::uint64_t> seed;
  /// Solver iterations for matrix problems, epochs for network runs.
  std::optional<std::size_t> iters;
};

void apply_overrides(ExperimentSpec& spec, const SpecOverrides& overrides);

/// 0 = ran (diverged runs included), 1 = spec or I/O error, 2 = numeric fatal.
enum ExitCode : int { kExitOk = 0, kExitSpecError = 1, kExitNumeric = 2 };

struct RunOutcome {
  int exit_code = kExitOk;
  nlohmann::json summary;  ///< also written to output_dir/summary.json
};

/// Runs the experiment and writes its files. Sweep points run on up to
/// UDUFACT_THREADS threads (default: hardware concurrency), each in its own
/// subdirectory; the merged summary lists points in axis order.
/// Throws ArgumentError when output_dir cannot be written.
RunOutcome run_experiment(const ExperimentSpec& spec);

/// Singular values of a saved solver state (of U diag(lambda) U^T) or of a
/// saved network's hidden product, as a two-column CSV "index,sv".
std::string spectrum_csv_from_file(const std::string& path);

}  // namespace udufact
