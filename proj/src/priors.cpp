#include "epimix/priors.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace epimix {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void require_finite(const std::string& block, double value) {
  if (!std::isfinite(value)) {
    throw std::runtime_error("non-finite log-posterior contribution in block '" + block + "'");
  }
}

}  // namespace

void PriorConfig::validate() const {
  if (gamma_shape <= 0 || gamma_rate <= 0 || normal_var_fixed <= 0 || delta_init_var <= 0) {
    throw std::invalid_argument("PriorConfig: all hyperparameters must be positive");
  }
}

double normal_log_density(double x, double mean, double var) {
  if (!(var > 0.0)) throw std::domain_error("normal_log_density: var must be positive");
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * d * d / var;
}

double gamma_log_density(double x, double shape, double rate) {
  if (!(x > 0.0)) throw std::domain_error("gamma_log_density: x must be positive");
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw std::domain_error("gamma_log_density: shape and rate must be positive");
  }
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double icar_quadratic_form(const Eigen::VectorXd& f, const AdjacencyGraph& graph) {
  double q = 0.0;
  for (int i = 0; i < graph.n_areas; ++i) {
    for (int j : graph.neighbors[i]) {
      if (j > i) {
        const double d = f[i] - f[j];
        q += d * d;
      }
    }
  }
  return q;
}

double icar_log_density(const Eigen::VectorXd& f, const AdjacencyGraph& graph, double tau) {
  return icar_log_density(f, graph, connected_components(graph), tau);
}

double icar_log_density(const Eigen::VectorXd& f, const AdjacencyGraph& graph,
                        const std::vector<int>& component_labels, double tau) {
  if (!(tau > 0.0)) throw std::domain_error("icar_log_density: tau must be positive");
  if (f.size() != graph.n_areas) {
    throw std::invalid_argument("icar_log_density: field length != n_areas");
  }
  const int rank = graph.n_areas - count_components(component_labels);
  return 0.5 * rank * std::log(tau) - 0.5 * tau * icar_quadratic_form(f, graph);
}

double rw1_log_density(const Eigen::VectorXd& delta_row, double sigma2, double init_var) {
  if (!(sigma2 > 0.0)) throw std::domain_error("rw1_log_density: sigma2 must be positive");
  if (delta_row.size() < 1) throw std::invalid_argument("rw1_log_density: empty row");
  double ld = normal_log_density(delta_row[0], 0.0, init_var);
  for (int t = 1; t < delta_row.size(); ++t) {
    ld += normal_log_density(delta_row[t], delta_row[t - 1], sigma2);
  }
  return ld;
}

double omega_log_density(double omega, double q1, double q2) {
  if (!(omega > 0.0) || !(omega < 1.0)) {
    throw std::domain_error("omega_log_density: omega must lie strictly in (0,1)");
  }
  if (!(q1 > 0.0) || !(q2 > 0.0)) {
    throw std::domain_error("omega_log_density: q1 and q2 must be positive");
  }
  return std::lgamma(q1 + q2) - std::lgamma(q1) - std::lgamma(q2) +
         (q1 - 1.0) * std::log(omega) + (q2 - 1.0) * std::log1p(-omega);
}

double LogPosteriorBreakdown::prior_total() const {
  double s = 0.0;
  for (const auto& [name, v] : prior_blocks) s += v;
  return s;
}

LogPosteriorBreakdown log_posterior_breakdown(const LatentState& state,
                                              const ModelVariant& variant,
                                              const SpatialWeights& weights,
                                              const PanelData& data, const PriorConfig& config) {
  config.validate();
  LogPosteriorBreakdown out;

  out.likelihood = log_likelihood(state, variant, weights, data).total;
  require_finite("likelihood", out.likelihood);

  const AdjacencyGraph graph = adjacency_from_weights(weights);
  const std::vector<int> components = connected_components(graph);

  for (CarField f : active_car_fields(variant)) {
    const std::string name = car_field_name(f);
    const double tau = state.field_tau(f);
    double block = icar_log_density(state.field(f), graph, components, tau);
    block += gamma_log_density(tau, config.gamma_shape, config.gamma_rate);
    require_finite("icar:" + name, block);
    out.prior_blocks["icar:" + name] = block;
  }

  double rw1 = 0.0;
  for (int i = 0; i < data.n_areas(); ++i) {
    rw1 += rw1_log_density(state.delta.row(i).matrix().transpose(), state.sigma2_delta(),
                           config.delta_init_var);
  }
  rw1 += gamma_log_density(state.tau_delta, config.gamma_shape, config.gamma_rate);
  require_finite("rw1:delta", rw1);
  out.prior_blocks["rw1:delta"] = rw1;

  if (variant.is_mixture()) {
    double mix = 0.0;
    for (int t = 1; t < data.n_periods(); ++t) {  // periods 2..T
      mix += omega_log_density(state.omega[t], state.q1[t], state.q2[t]);
      mix += gamma_log_density(state.q1[t], config.gamma_shape, config.gamma_rate);
      mix += gamma_log_density(state.q2[t], config.gamma_shape, config.gamma_rate);
    }
    require_finite("omega", mix);
    out.prior_blocks["omega"] = mix;
  }

  double fixed = normal_log_density(state.beta, 0.0, config.normal_var_fixed);
  if (variant.has_log_part()) {
    fixed += normal_log_density(state.alpha1, 0.0, config.normal_var_fixed);
    fixed += normal_log_density(state.alpha2, 0.0, config.normal_var_fixed);
  }
  if (variant.has_logit_part()) {
    fixed += normal_log_density(state.kappa1, 0.0, config.normal_var_fixed);
    fixed += normal_log_density(state.kappa2, 0.0, config.normal_var_fixed);
  }
  require_finite("fixed_effects", fixed);
  out.prior_blocks["fixed_effects"] = fixed;

  double psi_block = gamma_log_density(state.psi, config.gamma_shape, config.gamma_rate);
  require_finite("psi", psi_block);
  out.prior_blocks["psi"] = psi_block;

  return out;
}

double total_log_posterior(const LatentState& state, const ModelVariant& variant,
                           const SpatialWeights& weights, const PanelData& data,
                           const PriorConfig& config) {
  return log_posterior_breakdown(state, variant, weights, data, config).total();
}

}  // namespace epimix
