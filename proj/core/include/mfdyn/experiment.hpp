#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfdyn/chaos.hpp"
#include "mfdyn/meanfield.hpp"
#include "mfdyn/particles.hpp"
#include "mfdyn/scenarios.hpp"

namespace mfdyn {

// Parametric problem family for configs that spell the coefficients out
// instead of naming a registered scenario:
//   driver     a0 + ay*y + az*z + au*u + am*mean(mu)
//   low core   b0 + by*tanh(y) + bm*tanh(mean(mu))
//   high core  c0 + cy*tanh(y) + cm*tanh(mean(mu))
//   constant floor/cap, terminal clamp(x0 + xb*b + xj*#jumps, xlo, xhi).
// The terminal clamp range must sit inside [floor, cap] so the horizon
// sandwich holds by construction.
struct InlineCoefficients {
  double a0 = 0.0, ay = 0.0, az = 0.0, au = 0.0, am = 0.0;
  double b0 = -1.0, by = 0.0, bm = 0.0;
  double c0 = 1.0, cy = 0.0, cm = 0.0;
  double floor_s = -1e9, cap_s = 1e9;
  double x0 = 0.0, xb = 0.0, xj = 0.0, xlo = -1e9, xhi = 1e9;
  double p = 2.0;

  CoefficientSet build() const;  // InvalidParam when the ranges are inconsistent
};

struct RunConfig {
  std::string scenario;  // registered name (ignored when inline_set)
  bool inline_set = false;
  InlineCoefficients inline_coeffs;

  // Lattice overrides on top of the scenario defaults.
  std::optional<double> horizon;
  std::optional<int> steps;
  std::optional<std::vector<double>> marks;
  std::optional<std::vector<double>> intensities;
  std::optional<std::string> backend;  // "tree" | "paths"
  std::optional<int> n_paths;
  std::optional<std::uint64_t> seed;

  SolverOptions solver;
  FixedPointOptions fixed_point;

  std::vector<std::string> experiments{"validate", "solve", "meanfield"};
  int validate_probes = 200;
  int particles_n = 8;
  int particles_paths = 128;
  double particles_tol = 1e-9;
  int particles_max_outer = 60;
  double particles_damping = 1.0;
  std::vector<int> chaos_n_grid{2, 8, 32, 128};
  std::vector<std::uint64_t> chaos_seeds{1, 2, 3, 4};
  int chaos_n_ref = 2048;
  int chaos_paths = 256;
  std::string out_dir = "out";
};

// Strict parse: unknown keys, wrong types, or malformed JSON raise
// ConfigError with a message naming the offender.
RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text);

// Deterministic normalized serialization (all defaults materialized, sorted
// keys); equal configurations share one canonical form, hence one hash.
std::string canonical_config_text(const RunConfig& cfg);
std::string config_hash8(const std::string& canonical);

// Registered scenario or the inline family, with lattice overrides applied.
// Unknown names and inconsistent overrides raise ConfigError.
Scenario resolve_scenario(const RunConfig& cfg);

struct ExperimentOutput {
  std::string experiment;
  std::string file;  // path relative to the output directory
};

struct RunSummary {
  int exit_code = 0;  // 0 ok, 2 config, 3 invariant failure, 4 no convergence
  std::string out_dir;
  std::string manifest_file;
  std::string config_hash;
  std::vector<ExperimentOutput> outputs;
  std::vector<std::pair<std::string, bool>> invariants;  // per executed experiment
  std::vector<std::string> messages;
};

// Executes the selected experiments in dependency order (validate, solve,
// meanfield, game, particles, chaos), persists per-experiment CSV/JSON files
// plus a manifest and the canonical config copy, and classifies the outcome.
// `only` restricts the run to a single experiment name.
RunSummary run_experiments(const RunConfig& cfg, const std::string& out_dir_override = "",
                           const std::string& only = "");

// Validation without file output: (exit code, printable report lines).
std::pair<int, std::vector<std::string>> validate_config(const RunConfig& cfg);

const char* tool_version();

}  // namespace mfdyn
