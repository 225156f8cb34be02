#pragma once

#include <map>
#include <string>

#include "epimix/model.hpp"
#include "epimix/spatial_graph.hpp"

namespace epimix {

// Hyperparameters shared by all prior blocks.
struct PriorConfig {
  double gamma_shape = 1.0;        // Gamma shape for precisions, q's and psi
  double gamma_rate = 0.01;        // Gamma rate for the same
  double normal_var_fixed = 100.0; // N(0,100) on alpha's, kappa's, beta
  double delta_init_var = 1.0;     // N(0,1) on delta_i1

  void validate() const;
};

double normal_log_density(double x, double mean, double var);
double gamma_log_density(double x, double shape, double rate);

// Intrinsic CAR log density up to an additive constant:
//   (rank/2) log tau - (tau/2) sum_{edges} (f_i - f_j)^2
// with rank = n_areas - n_components. Each undirected edge counted once.
double icar_log_density(const Eigen::VectorXd& f, const AdjacencyGraph& graph, double tau);
double icar_log_density(const Eigen::VectorXd& f, const AdjacencyGraph& graph,
                        const std::vector<int>& component_labels, double tau);

// Pairwise quadratic form sum_{edges} (f_i - f_j)^2.
double icar_quadratic_form(const Eigen::VectorXd& f, const AdjacencyGraph& graph);

// First-order random walk over one area's delta row: N(0, init_var) at the
// first period, N(delta_{t-1}, sigma2) afterwards. Fully normalized.
double rw1_log_density(const Eigen::VectorXd& delta_row, double sigma2, double init_var = 1.0);

// Beta(q1, q2) log density at omega, including the normalizer. Throws on
// boundary omega rather than returning -inf silently.
double omega_log_density(double omega, double q1, double q2);

// Unnormalized log posterior split into its named blocks; any non-finite
// block throws with the block identified.
struct LogPosteriorBreakdown {
  double likelihood = 0.0;
  std::map<std::string, double> prior_blocks;
  double prior_total() const;
  double total() const { return likelihood + prior_total(); }
};

LogPosteriorBreakdown log_posterior_breakdown(const LatentState& state,
                                              const ModelVariant& variant,
                                              const SpatialWeights& weights,
                                              const PanelData& data, const PriorConfig& config);

double total_log_posterior(const LatentState& state, const ModelVariant& variant,
                           const SpatialWeights& weights, const PanelData& data,
                           const PriorConfig& config);

}  // namespace epimix
