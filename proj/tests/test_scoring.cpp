#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "epimix/model.hpp"
#include "epimix/rng.hpp"
#include "epimix/sampler.hpp"
#include "epimix/scoring.hpp"

using namespace epimix;

namespace {

// Brute-force RPS straight from the definition over the empirical CDF.
double rps_oracle(const std::vector<std::uint32_t>& draws, std::int64_t y) {
  std::int64_t k_max = y;
  for (const auto d : draws) k_max = std::max<std::int64_t>(k_max, d);
  const double n = static_cast<double>(draws.size());
  double total = 0.0;
  for (std::int64_t k = 0; k <= k_max; ++k) {
    double cdf = 0.0;
    for (const auto d : draws) cdf += d <= k ? 1.0 : 0.0;
    cdf /= n;
    const double step = y <= k ? 1.0 : 0.0;
    total += (cdf - step) * (cdf - step);
  }
  return total;
}

double poisson_cdf(int k, double lambda) {
  double term = std::exp(-lambda), cdf = term;
  for (int j = 1; j <= k; ++j) {
    term *= lambda / j;
    cdf += term;
  }
  return cdf;
}

}  // namespace

TEST_CASE("identical draws per observation zero the penalty") {
  Eigen::MatrixXd ll(3, 2);
  ll << -1.2, -0.7, -1.2, -0.7, -1.2, -0.7;
  const WaicResult r = waic(ll);
  CHECK(r.p_waic == doctest::Approx(0.0));
  CHECK(r.lppd == doctest::Approx(-1.9));
  CHECK(r.waic == doctest::Approx(2.0 * 1.9));
}

TEST_CASE("two-draw log-mean-exp evaluates to log 0.3") {
  Eigen::MatrixXd ll(2, 1);
  ll << std::log(0.2), std::log(0.4);
  CHECK(waic(ll).lppd == doctest::Approx(std::log(0.3)).epsilon(1e-12));
}

TEST_CASE("waic matches a direct computation on a random matrix") {
  Rng rng(3);
  Eigen::MatrixXd ll(40, 6);
  for (int r = 0; r < 40; ++r) {
    for (int c = 0; c < 6; ++c) ll(r, c) = -2.0 + rng.normal() * 0.4;
  }
  const WaicResult got = waic(ll);
  double lppd = 0.0, p = 0.0;
  for (int c = 0; c < 6; ++c) {
    double s = 0.0;
    for (int r = 0; r < 40; ++r) s += std::exp(ll(r, c));
    lppd += std::log(s / 40.0);
    const double mean = ll.col(c).mean();
    p += (ll.col(c).array() - mean).square().sum() / 39.0;
  }
  CHECK(got.lppd == doctest::Approx(lppd).epsilon(1e-10));
  CHECK(got.p_waic == doctest::Approx(p).epsilon(1e-10));
  CHECK(got.waic == doctest::Approx(-2.0 * (lppd - p)).epsilon(1e-10));
}

TEST_CASE("constant shifts move lppd and leave the penalty alone") {
  Rng rng(5);
  Eigen::MatrixXd ll(25, 4);
  for (int r = 0; r < 25; ++r) {
    for (int c = 0; c < 4; ++c) ll(r, c) = -1.5 + rng.normal() * 0.3;
  }
  const WaicResult base = waic(ll);
  const double shift = 0.8;
  const WaicResult moved = waic(ll.array() + shift);
  CHECK(moved.lppd == doctest::Approx(base.lppd + 4 * shift).epsilon(1e-10));
  CHECK(moved.p_waic == doctest::Approx(base.p_waic).epsilon(1e-10));
  // uniformly better fit lowers the criterion
  CHECK(moved.waic < base.waic);
}

TEST_CASE("waic needs at least two draws") {
  Eigen::MatrixXd one(1, 3);
  one.setConstant(-1.0);
  CHECK_THROWS(waic(one));
}

TEST_CASE("perfect point forecast has zero rps") {
  const std::vector<std::uint32_t> draws(50, 7);
  CHECK(rps(draws, 7) == doctest::Approx(0.0));
  CHECK(rps(draws, 9) > 0.0);
}

TEST_CASE("uniform three-point predictive at y=1 scores 2/9") {
  const std::vector<std::uint32_t> draws{0, 1, 2};
  CHECK(rps(draws, 1) == doctest::Approx(2.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("rps matches the brute-force definition on random samples") {
  Rng rng(7);
  for (int rep = 0; rep < 40; ++rep) {
    const int n = 1 + static_cast<int>(rng.uniform() * 60);
    std::vector<std::uint32_t> draws(n);
    for (int k = 0; k < n; ++k) draws[k] = static_cast<std::uint32_t>(rng.poisson(6.0));
    const auto y = static_cast<std::int64_t>(rng.poisson(6.0));
    CHECK(rps(draws, y) == doctest::Approx(rps_oracle(draws, y)).epsilon(1e-10));
  }
}

TEST_CASE("rps handles observations far outside the draw range") {
  const std::vector<std::uint32_t> draws{2, 2, 2};
  // F is 1 from k=2 onward; terms at k=2..9 each contribute 1
  CHECK(rps(draws, 10) == doctest::Approx(8.0).epsilon(1e-12));
  const std::vector<std::uint32_t> high{10, 10};
  CHECK(rps(high, 0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK_THROWS(rps(std::vector<std::uint32_t>{}, 3));
}

TEST_CASE("empirical rps converges to the analytic poisson value") {
  const double lambda = 3.0;
  const std::int64_t y = 2;
  double want = 0.0;
  for (int k = 0; k <= 80; ++k) {
    const double diff = poisson_cdf(k, lambda) - (y <= k ? 1.0 : 0.0);
    want += diff * diff;
  }
  Rng rng(11);
  const int n = 100000;
  std::vector<std::uint32_t> draws(n);
  for (int k = 0; k < n; ++k) draws[k] = static_cast<std::uint32_t>(rng.poisson(lambda));
  CHECK(rps(draws, y) == doctest::Approx(want).epsilon(0.01));
}

TEST_CASE("dss anchor cases") {
  CHECK(dss(4.0, 1.0, 4.0) == doctest::Approx(0.0));
  const double e = std::exp(1.0);
  CHECK(dss(4.0, e * e, 4.0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(dss(0.0, 2.0, 3.0) == doctest::Approx(9.0 / 2.0 + std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS(dss(1.0, 0.0, 1.0));
  CHECK_THROWS(dss(1.0, -2.0, 1.0));
}

TEST_CASE("dss is minimized in variance at the squared error") {
  const double y = 5.0, mu = 2.0;
  const double best_var = (y - mu) * (y - mu);
  const double at_best = dss(mu, best_var, y);
  for (double v : {0.5, 1.0, 4.0, 8.0, 9.5, 12.0, 30.0}) {
    if (std::abs(v - best_var) < 1e-9) continue;
    CHECK(dss(mu, v, y) > at_best);
  }
}

TEST_CASE("dss is invariant under a common shift of y and mean") {
  Rng rng(13);
  for (int rep = 0; rep < 10; ++rep) {
    const double mu = rng.uniform(0.0, 10.0), v = rng.uniform(0.5, 4.0);
    const double y = rng.uniform(0.0, 10.0), c = rng.uniform(-5.0, 5.0);
    CHECK(dss(mu, v, y) == doctest::Approx(dss(mu + c, v, y + c)).epsilon(1e-12));
  }
}

TEST_CASE("credible interval coverage anchors") {
  CHECK(coverage(154018.0, 175048.0, 155181.0));
  CHECK(coverage(194169.0, 214482.0, 210099.0));
  CHECK_FALSE(coverage(0.0, 1.0, 2.0));
  CHECK(coverage(0.0, 1.0, 1.0));  // closed interval
  CHECK(coverage(0.0, 1.0, 0.0));
  CHECK_THROWS(coverage(2.0, 1.0, 1.5));
}

TEST_CASE("in-sample report matches a direct reimplementation") {
  // fabricated two-chain samples on a 2-area, 3-period panel
  const int n = 2, t = 3, n_cells = n * (t - 1), reps = 30;
  PanelData d;
  d.y.resize(n, t);
  d.y << 4, 6, 2, 3, 1, 5;
  Eigen::VectorXd x(2);
  x << 0.5, -0.5;
  d.x = x;
  d.area_ids = {"a0", "a1"};

  Rng rng(17);
  PosteriorSamples s;
  s.n_retained_per_chain = reps;
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd pw(reps, n_cells);
    std::vector<std::uint32_t> yr(static_cast<std::size_t>(reps) * n_cells);
    for (int r = 0; r < reps; ++r) {
      for (int cell = 0; cell < n_cells; ++cell) {
        pw(r, cell) = -2.0 + 0.5 * rng.normal();
        yr[static_cast<std::size_t>(r) * n_cells + cell] =
            static_cast<std::uint32_t>(rng.poisson(4.0));
      }
    }
    s.chain_pointwise.push_back(pw);
    s.chain_yrep.push_back(yr);
  }

  const ScoreReport rep = in_sample_scores(s, d);

  // oracle: pool chains per cell and recompute every metric directly
  Eigen::MatrixXd stacked(2 * reps, n_cells);
  stacked << s.chain_pointwise[0], s.chain_pointwise[1];
  const WaicResult w = waic(stacked);
  CHECK(rep.lppd == doctest::Approx(w.lppd).epsilon(1e-10));
  CHECK(rep.p_waic == doctest::Approx(w.p_waic).epsilon(1e-10));
  CHECK(rep.waic == doctest::Approx(w.waic).epsilon(1e-10));

  double rps_total = 0.0, dss_total = 0.0;
  Eigen::VectorXd rps_period = Eigen::VectorXd::Zero(t - 1);
  long covered = 0;
  for (int cell = 0; cell < n_cells; ++cell) {
    const int i = cell % n, sidx = cell / n;
    std::vector<std::uint32_t> draws;
    Eigen::VectorXd dv(2 * reps);
    for (int c = 0; c < 2; ++c) {
      for (int r = 0; r < reps; ++r) {
        const auto v = s.chain_yrep[c][static_cast<std::size_t>(r) * n_cells + cell];
        draws.push_back(v);
        dv[c * reps + r] = static_cast<double>(v);
      }
    }
    const auto y = static_cast<std::int64_t>(d.y(i, sidx + 1));
    const double cell_rps = rps_oracle(draws, y);
    rps_total += cell_rps;
    rps_period[sidx] += cell_rps;
    const double mean = dv.mean();
    const double var = (dv.array() - mean).square().sum() / (dv.size() - 1.0);
    dss_total += dss(mean, var, static_cast<double>(y));
    if (coverage(quantile(dv, 0.025), quantile(dv, 0.975), static_cast<double>(y))) ++covered;
  }
  CHECK(rep.rps_total == doctest::Approx(rps_total).epsilon(1e-10));
  CHECK(rep.rps_mean == doctest::Approx(rps_total / n_cells).epsilon(1e-10));
  CHECK(rep.dss_total == doctest::Approx(dss_total).epsilon(1e-10));
  CHECK(rep.coverage_hits == doctest::Approx(covered / static_cast<double>(n_cells)));
  for (int sidx = 0; sidx < t - 1; ++sidx) {
    CHECK(rep.rps_by_period[sidx] == doctest::Approx(rps_period[sidx]).epsilon(1e-10));
  }
  CHECK(rep.rps_by_period.sum() == doctest::Approx(rep.rps_total).epsilon(1e-10));
  CHECK(rep.n_obs == n_cells);
}

TEST_CASE("in-sample scoring validates its inputs") {
  PanelData d;
  d.y.resize(2, 3);
  d.y.setConstant(1.0);
  d.x = Eigen::VectorXd::Zero(2);
  d.area_ids = {"a", "b"};
  PosteriorSamples s;
  CHECK_THROWS(in_sample_scores(s, d));
  s.chain_pointwise.push_back(Eigen::MatrixXd::Zero(5, 3));  // wrong cell count
  CHECK_THROWS(in_sample_scores(s, d));
}
