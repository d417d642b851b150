#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfdyn/coefficients.hpp"
#include "mfdyn/lattice.hpp"

namespace mfdyn {

// A named, ready-to-run problem instance: coefficients plus default
// discretization and noise settings. Experiments may override the defaults.
struct Scenario {
  std::string name;
  std::string description;
  CoefficientSet coefficients;
  TimeGrid grid;
  JumpSpec jumps;
  Backend backend = Backend::Tree;
  int n_paths = 512;
  std::uint64_t seed = 0x5eedULL;

  NoiseLattice make_lattice() const;
  // Same scenario with noise settings replaced.
  Scenario with_backend(Backend b, int n_paths, std::uint64_t seed) const;
};

const std::vector<Scenario>& builtin_scenarios();
const Scenario* find_scenario(const std::string& name);  // nullptr if unknown
std::vector<std::string> scenario_names();

}  // namespace mfdyn
