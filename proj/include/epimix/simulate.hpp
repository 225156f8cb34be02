#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "epimix/model.hpp"
#include "epimix/rng.hpp"
#include "epimix/spatial_graph.hpp"

namespace epimix {

// Everything the generative process needs, fully materialized: the truth
// state is concrete (no deferred randomness), so panels are reproducible
// bit-exactly from a scenario alone.
struct Scenario {
  AdjacencyGraph graph;
  ModelVariant variant;
  LatentState truth;              // N x T; truth.omega holds the schedule
  Eigen::VectorXd covariate;      // mean-centered, size N
  Eigen::VectorXd y_init;         // counts at period 1
  Eigen::VectorXd delta_holdout;  // delta_{i,T+1}
  double omega_holdout = 0.05;    // omega_{T+1}
  std::uint64_t seed = 1;

  int n_areas() const { return graph.n_areas; }
  int n_periods() const { return static_cast<int>(truth.delta.cols()); }
  void validate() const;
};

// Knobs for build_scenario; defaults give the standard 20-area torus panel
// with an epidemic window over periods 20..26.
struct ScenarioConfig {
  int rows = 4;
  int cols = 5;
  int n_periods = 40;
  std::string variant = "m4";
  std::string range = "unit";
  double alpha1 = 0.30, alpha2 = -1.2;
  double kappa1 = -0.4, kappa2 = -1.4;
  double beta = 0.5;
  double psi = 10.0;
  double car_tau = 25.0;   // ICAR precision of every active truth field
  double delta_sd = 0.05;  // random-walk innovation sd; 0 freezes delta at 0
  double omega_base = 0.05, omega_peak = 0.95;
  int window_lo = 20, window_hi = 26;  // inclusive period labels; lo > hi disables
  double omega_holdout = -1.0;         // < 0: take the schedule value at T+1
  double y_init = 12.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SimulatedPanel {
  PanelData data;  // y covers periods 1..T; holdout carries the T+1 draws
  LatentState truth;
};

// rows x cols torus lattice, node id = r * cols + c; opposite-boundary
// duplicates collapse, so every area has degree 4 when rows, cols >= 3.
AdjacencyGraph torus_graph(int rows, int cols);

// Zero-mean draw with precision tau * (D - A), sampled in the Laplacian
// eigenbasis and re-centered per connected component.
Eigen::VectorXd icar_sample(const AdjacencyGraph& graph, double tau, Rng& rng);

// omega_t = peak for t in [lo, hi], base elsewhere; entry t-1 holds omega_t.
Eigen::VectorXd scripted_omega(int n_periods, double base, double peak, int lo, int hi);

// Materializes a scenario: torus graph, striped covariate (exactly centered),
// ICAR-drawn truth fields, random-walk delta path, scripted omega schedule.
Scenario build_scenario(const ScenarioConfig& config);

// Forward generation: for t = 2..T compute mu_it from the truth and draw
// y_it ~ NB(mu_it, psi); period T+1 becomes the holdout. Throws when a mean
// exceeds the overflow guard (scenario too explosive for T).
SimulatedPanel simulate_panel(const Scenario& scenario);

}  // namespace epimix
