#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "epimix/model.hpp"
#include "epimix/sampler.hpp"
#include "epimix/spatial_graph.hpp"

namespace epimix {

// Mixture weight for the forecast period: carry omega_T forward, or draw
// omega_{T+1} from Beta(q1_T, q2_T). Ignored by the single-link variants.
enum class OmegaForecast { Carry, Draw };

// One-step-ahead posterior predictive. Row d of counts/mu is one retained
// draw; totals[d] is the exact row sum of counts.
struct ForecastDraws {
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;  // D x N
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1> totals;               // D
  Eigen::MatrixXd mu;                                                  // D x N predictive means
  std::vector<Summary> area;                                           // per-area summaries
  Summary total;
};

// For each retained draw: delta_{i,T+1} ~ N(delta_iT, sigma2_delta),
// mu_{i,T+1} = rho_iT y_iT + lambda_iT sum_j w_ij y_jT + exp(eta_i + delta_{i,T+1}),
// y ~ NB(mu, psi). Deterministic given (samples, seed): draw d uses the
// substream mix_seed(seed, d).
ForecastDraws one_step_ahead(const PosteriorSamples& samples, const PanelData& data,
                             const SpatialWeights& weights, std::uint64_t seed,
                             OmegaForecast omega_mode = OmegaForecast::Carry);

// Y_t / Y_{t-1} for t = 2..T; entry t-2 holds period t's ratio, NaN where
// the previous total is zero.
Eigen::VectorXd growth_ratios(const PanelData& data);

}  // namespace epimix
