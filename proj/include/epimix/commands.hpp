#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "epimix/simulate.hpp"

namespace epimix {

// Exit codes shared by every subcommand; scriptable in pipelines.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIngest = 2;       // bad input files or options
inline constexpr int kExitSampler = 3;      // chain failed to run
inline constexpr int kExitConvergence = 4;  // finished, but some PSRF > 1.1

struct FitOptions {
  std::string counts, adjacency, covariate, out;
  std::string variant = "m4";
  std::string range = "unit";
  int chains = 2;
  int iterations = 20000;
  int burnin = 10000;
  int thin = 1;
  int adapt_window = 50;
  std::uint64_t seed = 1;
  bool holdout = false;  // reserve the final period for forecast scoring
  int threads = 0;
  bool trace = false;  // also write the full retained trace (large)
};

struct SimulateOptions {
  ScenarioConfig scenario;
  std::string out;
};

struct ForecastOptions {
  std::string run;  // fitted run directory
  std::string out;  // defaults to the run directory
  std::uint64_t seed = 1;
  std::string omega_mode = "carry";  // carry | draw
};

struct CompareOptions {
  std::vector<std::string> runs;
  std::string out;  // optional CSV destination
};

// Each command writes its artifacts, prints a short report to `out`, sends
// failures to `err`, and returns one of the exit codes above.
int cmd_simulate(const SimulateOptions& options, std::ostream& out, std::ostream& err);
int cmd_fit(const FitOptions& options, std::ostream& out, std::ostream& err);
int cmd_forecast(const ForecastOptions& options, std::ostream& out, std::ostream& err);
int cmd_score(const std::string& run, std::ostream& out, std::ostream& err);
int cmd_compare(const CompareOptions& options, std::ostream& out, std::ostream& err);
int cmd_diag(const std::string& run, std::ostream& out, std::ostream& err);

}  // namespace epimix
