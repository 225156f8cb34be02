#include "epimix/simulate.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace epimix {

namespace {

// Generation aborts once a mean passes this; beyond it the NB draw itself
// is meaningless at double precision.
constexpr double kMuOverflow = 1e12;

std::vector<std::string> padded_ids(int n) {
  const auto width = std::to_string(n - 1).size();
  std::vector<std::string> ids(n);
  for (int i = 0; i < n; ++i) {
    std::string s = std::to_string(i);
    ids[i] = "a" + std::string(width - s.size(), '0') + s;
  }
  return ids;
}

void check_unit_interval(double v, const char* what) {
  if (!(v > 0.0 && v < 1.0)) {
    throw std::invalid_argument(std::string(what) + " must lie in (0, 1)");
  }
}

}  // namespace

void Scenario::validate() const {
  if (graph.n_areas < 2) throw std::invalid_argument("scenario: need at least 2 areas");
  const int n = graph.n_areas;
  const int t = n_periods();
  if (t < 2) throw std::invalid_argument("scenario: need at least 2 periods");
  if (truth.delta.rows() != n) throw std::invalid_argument("scenario: delta row count mismatch");
  if (covariate.size() != n || y_init.size() != n || delta_holdout.size() != n) {
    throw std::invalid_argument("scenario: per-area vector size mismatch");
  }
  if (std::abs(covariate.mean()) > 1e-9) {
    throw std::invalid_argument("scenario: covariate must be mean-centered");
  }
  for (int i = 0; i < n; ++i) {
    if (!(y_init[i] >= 0.0) || y_init[i] != std::floor(y_init[i])) {
      throw std::invalid_argument("scenario: initial counts must be nonnegative integers");
    }
  }
  if (truth.omega.size() != t) throw std::invalid_argument("scenario: omega schedule size mismatch");
  for (int tc = 0; tc < t; ++tc) check_unit_interval(truth.omega[tc], "scenario: omega");
  check_unit_interval(omega_holdout, "scenario: holdout omega");
  if (!(truth.psi > 0.0)) throw std::invalid_argument("scenario: psi must be positive");
  if (!(truth.tau_delta > 0.0)) throw std::invalid_argument("scenario: tau_delta must be positive");
  for (CarField f : active_car_fields(variant)) {
    if (truth.field(f).size() != n) {
      throw std::invalid_argument("scenario: CAR field size mismatch");
    }
  }
}

void ScenarioConfig::validate() const {
  if (rows < 2 || cols < 2) throw std::invalid_argument("scenario config: torus needs rows, cols >= 2");
  if (n_periods < 2) throw std::invalid_argument("scenario config: need at least 2 periods");
  if (!(psi > 0.0)) throw std::invalid_argument("scenario config: psi must be positive");
  if (!(car_tau > 0.0)) throw std::invalid_argument("scenario config: car_tau must be positive");
  if (delta_sd < 0.0) throw std::invalid_argument("scenario config: delta_sd must be nonnegative");
  check_unit_interval(omega_base, "scenario config: omega_base");
  check_unit_interval(omega_peak, "scenario config: omega_peak");
  if (omega_holdout >= 0.0) check_unit_interval(omega_holdout, "scenario config: omega_holdout");
  if (!(y_init >= 0.0) || y_init != std::floor(y_init)) {
    throw std::invalid_argument("scenario config: y_init must be a nonnegative integer");
  }
  ModelVariant::parse(variant, range);  // throws on unknown names
}

AdjacencyGraph torus_graph(int rows, int cols) {
  if (rows < 2 || cols < 2) throw std::invalid_argument("torus_graph: rows and cols must be >= 2");
  std::vector<Edge> edges;
  auto id = [&](int r, int c) { return ((r + rows) % rows) * cols + (c + cols) % cols; };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      edges.push_back({id(r, c), id(r + 1, c), 1.0});
      edges.push_back({id(r, c), id(r, c + 1), 1.0});
    }
  }
  return build_graph(edges, rows * cols);
}

Eigen::VectorXd icar_sample(const AdjacencyGraph& graph, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("icar_sample: tau must be positive");
  const int n = graph.n_areas;
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    lap(i, i) = graph.degree(i);
    for (int j : graph.neighbors[i]) lap(i, j) = -1.0;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) throw std::runtime_error("icar_sample: eigensolver failed");
  const Eigen::VectorXd& values = solver.eigenvalues();
  const double tol = 1e-9 * std::max(1.0, values[n - 1]);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < n; ++k) {
    if (values[k] <= tol) continue;
    x += solver.eigenvectors().col(k) * (rng.normal() / std::sqrt(tau * values[k]));
  }
  const std::vector<int> comp = connected_components(graph);
  const int n_comp = count_components(comp);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n_comp);
  Eigen::VectorXd cnt = Eigen::VectorXd::Zero(n_comp);
  for (int i = 0; i < n; ++i) {
    sum[comp[i]] += x[i];
    cnt[comp[i]] += 1.0;
  }
  for (int i = 0; i < n; ++i) x[i] -= sum[comp[i]] / cnt[comp[i]];
  return x;
}

Eigen::VectorXd scripted_omega(int n_periods, double base, double peak, int lo, int hi) {
  check_unit_interval(base, "scripted_omega: base");
  check_unit_interval(peak, "scripted_omega: peak");
  Eigen::VectorXd omega(n_periods);
  for (int t = 1; t <= n_periods; ++t) {
    omega[t - 1] = (t >= lo && t <= hi) ? peak : base;
  }
  return omega;
}

Scenario build_scenario(const ScenarioConfig& config) {
  config.validate();
  Scenario sc;
  sc.variant = ModelVariant::parse(config.variant, config.range);
  sc.graph = torus_graph(config.rows, config.cols);
  const int n = sc.graph.n_areas;
  const int t = config.n_periods;
  sc.seed = config.seed;

  sc.truth = LatentState::zeros(sc.variant, n, t);
  sc.truth.alpha1 = config.alpha1;
  sc.truth.alpha2 = config.alpha2;
  sc.truth.kappa1 = config.kappa1;
  sc.truth.kappa2 = config.kappa2;
  sc.truth.beta = config.beta;
  sc.truth.psi = config.psi;

  Rng rng(mix_seed(config.seed, 1));
  for (CarField f : active_car_fields(sc.variant)) {
    sc.truth.field(f) = icar_sample(sc.graph, config.car_tau, rng);
    sc.truth.tau[static_cast<int>(f)] = config.car_tau;
  }

  sc.delta_holdout = Eigen::VectorXd::Zero(n);
  if (config.delta_sd > 0.0) {
    sc.truth.tau_delta = 1.0 / (config.delta_sd * config.delta_sd);
    for (int i = 0; i < n; ++i) {
      sc.truth.delta(i, 0) = rng.normal(0.0, config.delta_sd);
      for (int tc = 1; tc < t; ++tc) {
        sc.truth.delta(i, tc) = rng.normal(sc.truth.delta(i, tc - 1), config.delta_sd);
      }
      sc.delta_holdout[i] = rng.normal(sc.truth.delta(i, t - 1), config.delta_sd);
    }
  } else {
    sc.truth.tau_delta = 400.0;  // inert; generation never perturbs delta
  }

  sc.truth.omega =
      scripted_omega(t, config.omega_base, config.omega_peak, config.window_lo, config.window_hi);
  if (config.omega_holdout >= 0.0) {
    sc.omega_holdout = config.omega_holdout;
  } else {
    sc.omega_holdout = (t + 1 >= config.window_lo && t + 1 <= config.window_hi)
                           ? config.omega_peak
                           : config.omega_base;
  }

  sc.covariate.resize(n);
  for (int i = 0; i < n; ++i) {
    sc.covariate[i] = (static_cast<double>(i % config.cols) - (config.cols - 1) / 2.0) * 0.5;
  }
  sc.y_init = Eigen::VectorXd::Constant(n, config.y_init);
  return sc;
}

SimulatedPanel simulate_panel(const Scenario& scenario) {
  scenario.validate();
  const int n = scenario.n_areas();
  const int t = scenario.n_periods();
  const SpatialWeights weights = row_standardize(scenario.graph);

  SimulatedPanel out;
  out.truth = scenario.truth;
  out.data.y = Eigen::ArrayXXd::Zero(n, t);
  out.data.y.col(0) = scenario.y_init.array();
  out.data.x = scenario.covariate;
  out.data.area_ids = padded_ids(n);

  const LinkCoefficients coeffs = link_coefficients(scenario.variant, scenario.truth);
  Rng rng(mix_seed(scenario.seed, 2));
  for (int period = 2; period <= t; ++period) {
    for (int i = 0; i < n; ++i) {
      const double mu =
          mean_intensity(scenario.truth, coeffs, weights, out.data, i, period);
      if (mu > kMuOverflow) throw std::overflow_error("simulate_panel: mean overflow");
      if (!(mu > 0.0)) throw std::domain_error("simulate_panel: non-positive mean");
      out.data.y(i, period - 1) = static_cast<double>(rng.neg_binomial(mu, scenario.truth.psi));
    }
  }

  // Holdout period T+1: same recursion, with omega_holdout and delta_holdout.
  const LatentState& truth = scenario.truth;
  const bool mixture = scenario.variant.is_mixture();
  const bool m4 = scenario.variant.kind == Variant::M4;
  Eigen::VectorXd holdout(n);
  for (int i = 0; i < n; ++i) {
    double rho, lambda;
    if (mixture) {
      const double g_sta_r = m4 ? truth.field(CarField::G3)[i] : truth.field(CarField::G1)[i];
      const double g_sta_l = m4 ? truth.field(CarField::G4)[i] : truth.field(CarField::G2)[i];
      const double w = scenario.omega_holdout;
      rho = w * capped_exp(truth.alpha1 + truth.field(CarField::G1)[i]) +
            (1.0 - w) * stationary_part(truth.kappa1 + g_sta_r, scenario.variant.range);
      lambda = w * capped_exp(truth.alpha2 + truth.field(CarField::G2)[i]) +
               (1.0 - w) * stationary_part(truth.kappa2 + g_sta_l, scenario.variant.range);
    } else {
      rho = coeffs.rho(i, t - 1);
      lambda = coeffs.lambda(i, t - 1);
    }
    double lag = 0.0;
    for (const auto& [j, w] : weights.rows[i]) lag += w * out.data.y(j, t - 1);
    const double eta = out.data.x[i] * truth.beta + truth.field(CarField::U)[i];
    const double mu = rho * out.data.y(i, t - 1) + lambda * lag +
                      capped_exp(eta + scenario.delta_holdout[i]);
    if (mu > kMuOverflow) throw std::overflow_error("simulate_panel: mean overflow");
    if (!(mu > 0.0)) throw std::domain_error("simulate_panel: non-positive mean");
    holdout[i] = static_cast<double>(rng.neg_binomial(mu, truth.psi));
  }
  out.data.holdout = holdout;
  out.data.validate();
  return out;
}

}  // namespace epimix
