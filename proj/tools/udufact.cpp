// udufact: run, validate and inspect factorization experiments.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "udufact/experiment.hpp"

namespace {

int report_errors(const std::vector<std::string>& errors) {
  std::cerr << nlohmann::json{{"errors", errors}}.dump() << '\n';
  return udufact::kExitSpecError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained UDU / UDV factorization experiments"};
  app.require_subcommand(1);

  std::string spec_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iters;
  auto* run = app.add_subcommand("run", "Run an experiment spec");
  run->add_option("spec", spec_path, "Experiment spec (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  run->add_option("--seed", seed, "Top-level seed; clears block seeds");
  run->add_option("--iters", iters, "Solver iterations or training epochs");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a spec and print its normalized form");
  validate->add_option("spec", validate_path, "Experiment spec (JSON)")->required();

  std::string state_path;
  auto* spectrum = app.add_subcommand("spectrum", "Print the singular values of a saved state");
  spectrum->add_option("state", state_path, "state_*.json or params_*.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : udufact::kExitSpecError;
  }

  try {
    if (*run) {
      udufact::SpecValidation v = udufact::validate_spec_file(spec_path);
      if (!v.ok()) return report_errors(v.errors);
      udufact::apply_overrides(*v.spec, {out_dir, seed, iters});
      const udufact::RunOutcome outcome = udufact::run_experiment(*v.spec);
      std::cout << outcome.summary.dump(2) << '\n';
      return outcome.exit_code;
    }
    if (*validate) {
      udufact::SpecValidation v = udufact::validate_spec_file(validate_path);
      if (!v.ok()) return report_errors(v.errors);
      std::cout << v.spec->to_json().dump(2) << '\n';
      return udufact::kExitOk;
    }
    if (*spectrum) {
      std::cout << udufact::spectrum_csv_from_file(state_path);
      return udufact::kExitOk;
    }
  } catch (const udufact::ArgumentError& e) {
    return report_errors({e.what()});
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"fatal", e.what()}}.dump() << '\n';
    return udufact::kExitNumeric;
  }
  return udufact::kExitOk;
}
