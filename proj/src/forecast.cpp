#include "epimix/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "epimix/rng.hpp"

namespace epimix {

namespace {

int require_col(const PosteriorSamples& samples, const std::string& name) {
  const auto it = std::find(samples.forecast_cols.begin(), samples.forecast_cols.end(), name);
  if (it == samples.forecast_cols.end()) {
    throw std::invalid_argument("one_step_ahead: missing forecast column " + name);
  }
  return static_cast<int>(it - samples.forecast_cols.begin());
}

}  // namespace

ForecastDraws one_step_ahead(const PosteriorSamples& samples, const PanelData& data,
                             const SpatialWeights& weights, std::uint64_t seed,
                             OmegaForecast omega_mode) {
  const int n = data.n_areas();
  const int t = data.n_periods();
  if (t < 2) throw std::invalid_argument("one_step_ahead: need at least 2 periods");
  long d_total = 0;
  for (const auto& f : samples.chain_forecast) d_total += f.rows();
  if (d_total == 0) throw std::invalid_argument("one_step_ahead: no retained draws");

  const bool mixture = samples.variant.is_mixture();
  const int c_psi = require_col(samples, "psi");
  const int c_tau_delta = require_col(samples, "tau_delta");
  const int c_eta = require_col(samples, "eta[0]");
  const int c_delta = require_col(samples, "delta_T[0]");
  const int c_rho = require_col(samples, "rho_T[0]");
  const int c_lambda = require_col(samples, "lambda_T[0]");
  int c_q1 = -1, c_q2 = -1, c_er = -1, c_sr = -1, c_el = -1, c_sl = -1;
  if (mixture) {
    c_q1 = require_col(samples, "q1_T");
    c_q2 = require_col(samples, "q2_T");
    c_er = require_col(samples, "exp_rho[0]");
    c_sr = require_col(samples, "sta_rho[0]");
    c_el = require_col(samples, "exp_lam[0]");
    c_sl = require_col(samples, "sta_lam[0]");
  }

  const Eigen::VectorXd y_last = data.y.col(t - 1).matrix();
  Eigen::VectorXd lag = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (const auto& [j, w] : weights.rows[i]) lag[i] += w * y_last[j];
  }

  ForecastDraws out;
  out.counts.resize(d_total, n);
  out.totals.resize(d_total);
  out.mu.resize(d_total, n);

  long d = 0;
  for (const auto& snap : samples.chain_forecast) {
    for (long r = 0; r < snap.rows(); ++r, ++d) {
      Rng sub(mix_seed(seed, static_cast<std::uint64_t>(d)));
      const auto row = snap.row(r);
      const double psi = row[c_psi];
      const double sigma = std::sqrt(1.0 / row[c_tau_delta]);
      double w_next = 0.0;
      if (mixture && omega_mode == OmegaForecast::Draw) {
        w_next = sub.beta(row[c_q1], row[c_q2]);
      }
      std::int64_t total = 0;
      for (int i = 0; i < n; ++i) {
        double rho, lambda;
        if (mixture && omega_mode == OmegaForecast::Draw) {
          rho = w_next * row[c_er + i] + (1.0 - w_next) * row[c_sr + i];
          lambda = w_next * row[c_el + i] + (1.0 - w_next) * row[c_sl + i];
        } else {
          rho = row[c_rho + i];
          lambda = row[c_lambda + i];
        }
        const double delta_next = sub.normal(row[c_delta + i], sigma);
        double mu = rho * y_last[i] + lambda * lag[i] + capped_exp(row[c_eta + i] + delta_next);
        if (!std::isfinite(mu)) throw std::runtime_error("one_step_ahead: non-finite mean");
        mu = std::max(mu, 1e-12);  // signed-range states can push mu below zero
        out.mu(d, i) = mu;
        const std::int64_t y = sub.neg_binomial(mu, psi);
        out.counts(d, i) = y;
        total += y;
      }
      out.totals[d] = total;
    }
  }

  out.area.resize(n);
  for (int i = 0; i < n; ++i) {
    out.area[i] = summarize(out.counts.col(i).cast<double>());
  }
  out.total = summarize(out.totals.cast<double>());
  return out;
}

Eigen::VectorXd growth_ratios(const PanelData& data) {
  const Eigen::VectorXd totals = data.totals();
  const int t = data.n_periods();
  Eigen::VectorXd ratios(t - 1);
  for (int s = 0; s < t - 1; ++s) {
    ratios[s] = totals[s] > 0.0 ? totals[s + 1] / totals[s]
                                : std::numeric_limits<double>::quiet_NaN();
  }
  return ratios;
}

}  // namespace epimix
