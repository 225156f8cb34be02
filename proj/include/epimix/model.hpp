#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "epimix/spatial_graph.hpp"

namespace epimix {

// Model family. M1 is the pure log link, M2 the pure logit link, M3 mixes
// the two with weights omega_t sharing one spatial field per coefficient,
// and M4 gives the stationary component its own spatial fields.
enum class Variant { M1, M2, M3, M4 };

// Range of the stationary (logit-link) component: expit maps to (0,1),
// 2*expit-1 maps to (-1,1).
enum class StationaryRange { Unit, Signed };

struct ModelVariant {
  Variant kind = Variant::M3;
  StationaryRange range = StationaryRange::Unit;

  bool is_mixture() const { return kind == Variant::M3 || kind == Variant::M4; }
  bool has_log_part() const { return kind != Variant::M2; }
  bool has_logit_part() const { return kind != Variant::M1; }
  std::string name() const;

  static ModelVariant parse(const std::string& name, const std::string& range = "unit");
};

// Spatially structured effect fields. F1..F4 belong to the single-link
// models, G1..G4 to the mixtures, U to the endemic predictor eta_i.
enum class CarField : int { F1, F2, F3, F4, G1, G2, G3, G4, U };
inline constexpr int kNumCarFields = 9;

const char* car_field_name(CarField f);
std::vector<CarField> active_car_fields(const ModelVariant& variant);

// Observed area x period count panel with the centered area covariate.
// Periods are labelled t = 1..T to match the autoregressive convention:
// period 1 is conditioned on, the likelihood covers t = 2..T.
struct PanelData {
  Eigen::ArrayXXd y;                       // N x T, nonnegative integer counts
  Eigen::VectorXd x;                       // per-area covariate, mean-centered
  std::optional<Eigen::VectorXd> holdout;  // counts at period T+1, if reserved
  std::vector<std::string> area_ids;       // size N

  int n_areas() const { return static_cast<int>(y.rows()); }
  int n_periods() const { return static_cast<int>(y.cols()); }
  Eigen::VectorXd totals() const;  // Y_t, region-wide sums per period
  void validate() const;           // throws on any invariant violation
};

// One full parameter configuration. CAR vectors are empty unless the field
// is active for the variant; omega/q1/q2 are sized T with index 0 (period 1)
// inert, since mixture weights only act where the mean is modelled (t >= 2).
struct LatentState {
  double alpha1 = 0.0, alpha2 = 0.0;  // log-link intercepts
  double kappa1 = 0.0, kappa2 = 0.0;  // logit-link intercepts
  double beta = 0.0;                  // covariate coefficient

  std::array<Eigen::VectorXd, kNumCarFields> car{};
  std::array<double, kNumCarFields> tau{};  // ICAR precision per field

  Eigen::ArrayXXd delta;     // N x T area-time random walk effects
  double tau_delta = 1.0;    // precision of the RW1 innovations
  Eigen::VectorXd omega;     // T, mixture weights in (0,1)
  Eigen::VectorXd q1, q2;    // T, beta hyperparameters of omega_t
  double psi = 10.0;         // NB dispersion

  double sigma2_delta() const { return 1.0 / tau_delta; }
  Eigen::VectorXd& field(CarField f) { return car[static_cast<int>(f)]; }
  const Eigen::VectorXd& field(CarField f) const { return car[static_cast<int>(f)]; }
  double field_tau(CarField f) const { return tau[static_cast<int>(f)]; }

  // All-zero effects, omega = 0.5, unit precisions; active fields sized N.
  static LatentState zeros(const ModelVariant& variant, int n_areas, int n_periods);
};

// rho_it and lambda_it as N x T arrays. For M1/M2 the per-area values are
// replicated across all periods so downstream code is variant-agnostic.
struct LinkCoefficients {
  Eigen::ArrayXXd rho;
  Eigen::ArrayXXd lambda;
};

// Arguments of exp() in the link and the endemic term are capped here; the
// sampler rejects proposals beyond the cap outright.
inline constexpr double kMaxExpArg = 30.0;

// exp(h) with the argument clamped at kMaxExpArg.
inline double capped_exp(double h) { return std::exp(std::min(h, kMaxExpArg)); }

double expit(double h);         // 1/(1+e^-h), stable for large |h|
double signed_expit(double h);  // 2*expit(h)-1, onto (-1,1)

// The stationary coefficient component on the range selected by the variant.
double stationary_part(double h, StationaryRange range);

double rho_cell(const ModelVariant& variant, const LatentState& state, int i, int t_col);
double lambda_cell(const ModelVariant& variant, const LatentState& state, int i, int t_col);

LinkCoefficients link_coefficients(const ModelVariant& variant, const LatentState& state);

// mu_it = rho_it * y_{i,t-1} + lambda_it * sum_j w_ij y_{j,t-1}
//       + exp(eta_i + delta_it), with eta_i = x_i * beta + u_i.
// t is the 1-based period label and must be >= 2.
double mean_intensity(const LatentState& state, const LinkCoefficients& coeffs,
                      const SpatialWeights& weights, const PanelData& data, int i, int t);

// log p(y | mu, psi) for the NB parameterised by mean and dispersion.
double nb_log_pmf(std::int64_t y, double mu, double psi);

struct LogLikelihood {
  double total = 0.0;
  Eigen::ArrayXXd pointwise;  // N x (T-1); column s corresponds to period s+2
};

LogLikelihood log_likelihood(const LatentState& state, const ModelVariant& variant,
                             const SpatialWeights& weights, const PanelData& data);

// Indicators of locally explosive growth and their per-period totals.
struct ExceedanceStats {
  Eigen::ArrayXXd r;   // N x T, 1 iff rho_it > 1
  Eigen::ArrayXXd l;   // N x T, 1 iff lambda_it > 1
  Eigen::VectorXd R;   // T, row sums of r per period
  Eigen::VectorXd L;   // T
};

ExceedanceStats exceedance_stats(const LinkCoefficients& coeffs);

struct SummaryCoefficients {
  Eigen::VectorXd rho_bar;     // T, mean over areas per period
  Eigen::VectorXd lambda_bar;  // T
};

SummaryCoefficients summary_coefficients(const LinkCoefficients& coeffs);

}  // namespace epimix
