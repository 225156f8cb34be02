#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>

#include "epimix/model.hpp"
#include "epimix/sampler.hpp"

namespace epimix {

struct WaicResult {
  double waic = 0.0;
  double p_waic = 0.0;
  double lppd = 0.0;
};

// WAIC from a draws x observations matrix of pointwise log-likelihoods:
// lppd = sum_obs log mean_draws exp(ll) (via log-sum-exp), p_waic the sum of
// per-observation sample variances, waic = -2 (lppd - p_waic).
WaicResult waic(const Eigen::MatrixXd& pointwise_loglik);

// Ranked probability score of an empirical predictive sample against the
// observed count: sum over k = 0..max(draws, y) of (Fhat(k) - 1{y <= k})^2.
double rps(std::span<const std::uint32_t> draws, std::int64_t y);
double rps(std::span<const std::uint64_t> draws, std::int64_t y);

// Dawid-Sebastiani score (y - mean)^2 / var + log var.
double dss(double pred_mean, double pred_var, double y);

// 1 iff low <= actual <= high; throws on an inverted interval.
bool coverage(double cri_low, double cri_high, double actual);

// In-sample predictive metrics pooled over chains. Per-period vectors have
// T-1 entries; index s corresponds to period s+2. RPS and DSS are emitted
// both summed and averaged over cells, labeled, so either convention is
// directly comparable.
struct ScoreReport {
  double waic = 0.0, p_waic = 0.0, lppd = 0.0;
  double rps_total = 0.0, rps_mean = 0.0;
  double dss_total = 0.0, dss_mean = 0.0;
  double coverage_hits = 0.0;  // fraction of cells inside the central 95% band
  Eigen::VectorXd rps_by_period;
  Eigen::VectorXd dss_by_period;
  long n_obs = 0;
  std::optional<double> one_step_rps;       // filled when a holdout is scored
  std::optional<double> one_step_coverage;  // fraction of areas covered at T+1
};

ScoreReport in_sample_scores(const PosteriorSamples& samples, const PanelData& data);

}  // namespace epimix
