#include "epimix/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace epimix {

namespace {

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf (or a nan/inf column) propagates
  double s = 0.0;
  for (long i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

double sample_variance(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

double rps_sorted(const std::vector<std::uint64_t>& s, std::int64_t y) {
  if (s.empty()) throw std::invalid_argument("rps: empty predictive sample");
  if (y < 0) throw std::invalid_argument("rps: y must be nonnegative");
  const auto yu = static_cast<std::uint64_t>(y);
  const double n = static_cast<double>(s.size());
  const std::uint64_t top = std::max(s.back(), yu);
  double acc = 0.0;
  std::size_t i = 0;
  std::uint64_t k = 0;
  // F and the step indicator are piecewise constant; walk segment by segment.
  while (k <= top) {
    while (i < s.size() && s[i] <= k) ++i;
    const double f = static_cast<double>(i) / n;
    const double h = yu <= k ? 1.0 : 0.0;
    std::uint64_t nxt = top + 1;
    if (i < s.size()) nxt = std::min(nxt, s[i]);
    if (yu > k) nxt = std::min(nxt, yu);
    acc += (f - h) * (f - h) * static_cast<double>(nxt - k);
    k = nxt;
  }
  return acc;
}

double quantile_sorted(const std::vector<std::uint64_t>& s, double q) {
  const double h = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= s.size()) return static_cast<double>(s.back());
  const auto a = static_cast<double>(s[lo]);
  const auto b = static_cast<double>(s[lo + 1]);
  return a + (h - static_cast<double>(lo)) * (b - a);
}

}  // namespace

WaicResult waic(const Eigen::MatrixXd& pointwise_loglik) {
  const long n = pointwise_loglik.rows();
  if (n < 2) throw std::invalid_argument("waic: need at least 2 draws");
  WaicResult r;
  const double log_n = std::log(static_cast<double>(n));
  for (long j = 0; j < pointwise_loglik.cols(); ++j) {
    const Eigen::VectorXd col = pointwise_loglik.col(j);
    r.lppd += log_sum_exp(col) - log_n;
    r.p_waic += sample_variance(col);
  }
  r.waic = -2.0 * (r.lppd - r.p_waic);
  return r;
}

double rps(std::span<const std::uint32_t> draws, std::int64_t y) {
  std::vector<std::uint64_t> s(draws.begin(), draws.end());
  std::sort(s.begin(), s.end());
  return rps_sorted(s, y);
}

double rps(std::span<const std::uint64_t> draws, std::int64_t y) {
  std::vector<std::uint64_t> s(draws.begin(), draws.end());
  std::sort(s.begin(), s.end());
  return rps_sorted(s, y);
}

double dss(double pred_mean, double pred_var, double y) {
  if (!(pred_var > 0.0)) throw std::invalid_argument("dss: predictive variance must be positive");
  const double d = y - pred_mean;
  return d * d / pred_var + std::log(pred_var);
}

bool coverage(double cri_low, double cri_high, double actual) {
  if (cri_low > cri_high) throw std::invalid_argument("coverage: inverted interval");
  return cri_low <= actual && actual <= cri_high;
}

ScoreReport in_sample_scores(const PosteriorSamples& samples, const PanelData& data) {
  const int n = data.n_areas();
  const int t = data.n_periods();
  const int n_cells = n * (t - 1);
  const int m = static_cast<int>(samples.chain_pointwise.size());
  if (m == 0) throw std::invalid_argument("in_sample_scores: no chains");
  long total_draws = 0;
  for (const auto& pw : samples.chain_pointwise) {
    if (pw.cols() != n_cells) {
      throw std::invalid_argument("in_sample_scores: pointwise shape does not match the panel");
    }
    total_draws += pw.rows();
  }
  if (total_draws < 2) throw std::invalid_argument("in_sample_scores: need at least 2 draws");

  ScoreReport rep;
  rep.n_obs = n_cells;
  rep.rps_by_period = Eigen::VectorXd::Zero(t - 1);
  rep.dss_by_period = Eigen::VectorXd::Zero(t - 1);

  Eigen::VectorXd pooled_ll(total_draws);
  std::vector<std::uint64_t> cell_draws(total_draws);
  const double log_n = std::log(static_cast<double>(total_draws));
  long covered = 0;

  for (int cell = 0; cell < n_cells; ++cell) {
    const int i = cell % n;
    const int s = cell / n;  // 0-based; period s+2, data column s+1

    long off = 0;
    for (int c = 0; c < m; ++c) {
      const auto& pw = samples.chain_pointwise[c];
      pooled_ll.segment(off, pw.rows()) = pw.col(cell);
      const auto& yr = samples.chain_yrep[c];
      const auto rows = static_cast<std::size_t>(pw.rows());
      for (std::size_t r = 0; r < rows; ++r) {
        cell_draws[off + static_cast<long>(r)] = yr[r * n_cells + cell];
      }
      off += pw.rows();
    }

    rep.lppd += log_sum_exp(pooled_ll) - log_n;
    rep.p_waic += sample_variance(pooled_ll);

    std::sort(cell_draws.begin(), cell_draws.end());
    const auto y = static_cast<std::int64_t>(data.y(i, s + 1));
    const double cell_rps = rps_sorted(cell_draws, y);
    rep.rps_total += cell_rps;
    rep.rps_by_period[s] += cell_rps;

    double sum = 0.0;
    for (const auto v : cell_draws) sum += static_cast<double>(v);
    const double mean = sum / static_cast<double>(total_draws);
    double ssd = 0.0;
    for (const auto v : cell_draws) {
      const double d = static_cast<double>(v) - mean;
      ssd += d * d;
    }
    const double var = ssd / static_cast<double>(total_draws - 1);
    const double cell_dss = dss(mean, var, static_cast<double>(y));
    rep.dss_total += cell_dss;
    rep.dss_by_period[s] += cell_dss;

    const double lo = quantile_sorted(cell_draws, 0.025);
    const double hi = quantile_sorted(cell_draws, 0.975);
    if (coverage(lo, hi, static_cast<double>(y))) ++covered;
  }

  rep.waic = -2.0 * (rep.lppd - rep.p_waic);
  rep.rps_mean = rep.rps_total / static_cast<double>(n_cells);
  rep.dss_mean = rep.dss_total / static_cast<double>(n_cells);
  rep.coverage_hits = static_cast<double>(covered) / static_cast<double>(n_cells);
  return rep;
}

}  // namespace epimix
