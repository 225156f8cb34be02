#include "epimix/model.hpp"

#include <cmath>
#include <stdexcept>

namespace epimix {

std::string ModelVariant::name() const {
  switch (kind) {
    case Variant::M1: return "m1";
    case Variant::M2: return "m2";
    case Variant::M3: return "m3";
    case Variant::M4: return "m4";
  }
  return "?";
}

ModelVariant ModelVariant::parse(const std::string& name, const std::string& range) {
  ModelVariant v;
  if (name == "m1" || name == "M1") v.kind = Variant::M1;
  else if (name == "m2" || name == "M2") v.kind = Variant::M2;
  else if (name == "m3" || name == "M3") v.kind = Variant::M3;
  else if (name == "m4" || name == "M4") v.kind = Variant::M4;
  else throw std::invalid_argument("unknown model variant '" + name + "' (expected m1..m4)");
  if (range == "unit") v.range = StationaryRange::Unit;
  else if (range == "signed") v.range = StationaryRange::Signed;
  else throw std::invalid_argument("unknown stationary range '" + range + "' (unit|signed)");
  if (v.range == StationaryRange::Signed && v.kind == Variant::M1) {
    throw std::invalid_argument("signed range is meaningless for m1: it has no stationary part");
  }
  return v;
}

const char* car_field_name(CarField f) {
  switch (f) {
    case CarField::F1: return "f1";
    case CarField::F2: return "f2";
    case CarField::F3: return "f3";
    case CarField::F4: return "f4";
    case CarField::G1: return "g1";
    case CarField::G2: return "g2";
    case CarField::G3: return "g3";
    case CarField::G4: return "g4";
    case CarField::U: return "u";
  }
  return "?";
}

std::vector<CarField> active_car_fields(const ModelVariant& variant) {
  switch (variant.kind) {
    case Variant::M1: return {CarField::F1, CarField::F2, CarField::U};
    case Variant::M2: return {CarField::F3, CarField::F4, CarField::U};
    case Variant::M3: return {CarField::G1, CarField::G2, CarField::U};
    case Variant::M4:
      return {CarField::G1, CarField::G2, CarField::G3, CarField::G4, CarField::U};
  }
  return {};
}

Eigen::VectorXd PanelData::totals() const {
  return y.colwise().sum().matrix().transpose();
}

void PanelData::validate() const {
  const int n = n_areas();
  const int t = n_periods();
  if (n < 2) throw std::invalid_argument("PanelData: need at least 2 areas");
  if (t < 2) throw std::invalid_argument("PanelData: need at least 2 periods");
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < t; ++s) {
      const double v = y(i, s);
      if (!(v >= 0.0) || v != std::floor(v)) {
        throw std::invalid_argument("PanelData: count at area " + std::to_string(i) +
                                    ", period " + std::to_string(s + 1) +
                                    " is not a nonnegative integer");
      }
    }
  }
  if (x.size() != n) throw std::invalid_argument("PanelData: covariate length != n_areas");
  if (std::abs(x.mean()) > 1e-9) {
    throw std::invalid_argument("PanelData: covariate is not mean-centered");
  }
  if (holdout && holdout->size() != n) {
    throw std::invalid_argument("PanelData: holdout length != n_areas");
  }
  if (!area_ids.empty() && static_cast<int>(area_ids.size()) != n) {
    throw std::invalid_argument("PanelData: area_ids length != n_areas");
  }
}

LatentState LatentState::zeros(const ModelVariant& variant, int n_areas, int n_periods) {
  LatentState s;
  s.tau.fill(1.0);
  for (CarField f : active_car_fields(variant)) {
    s.field(f) = Eigen::VectorXd::Zero(n_areas);
  }
  s.delta = Eigen::ArrayXXd::Zero(n_areas, n_periods);
  s.omega = Eigen::VectorXd::Constant(n_periods, 0.5);
  s.q1 = Eigen::VectorXd::Ones(n_periods);
  s.q2 = Eigen::VectorXd::Ones(n_periods);
  return s;
}

double expit(double h) {
  if (h >= 0.0) return 1.0 / (1.0 + std::exp(-h));
  const double e = std::exp(h);
  return e / (1.0 + e);
}

double signed_expit(double h) { return 2.0 * expit(h) - 1.0; }

double stationary_part(double h, StationaryRange range) {
  return range == StationaryRange::Signed ? signed_expit(h) : expit(h);
}

double rho_cell(const ModelVariant& variant, const LatentState& state, int i, int t_col) {
  switch (variant.kind) {
    case Variant::M1:
      return capped_exp(state.alpha1 + state.field(CarField::F1)[i]);
    case Variant::M2:
      return stationary_part(state.kappa1 + state.field(CarField::F3)[i], variant.range);
    case Variant::M3: {
      const double g = state.field(CarField::G1)[i];
      const double w = state.omega[t_col];
      return w * capped_exp(state.alpha1 + g) +
             (1.0 - w) * stationary_part(state.kappa1 + g, variant.range);
    }
    case Variant::M4: {
      const double w = state.omega[t_col];
      return w * capped_exp(state.alpha1 + state.field(CarField::G1)[i]) +
             (1.0 - w) *
                 stationary_part(state.kappa1 + state.field(CarField::G3)[i], variant.range);
    }
  }
  return 0.0;
}

double lambda_cell(const ModelVariant& variant, const LatentState& state, int i, int t_col) {
  switch (variant.kind) {
    case Variant::M1:
      return capped_exp(state.alpha2 + state.field(CarField::F2)[i]);
    case Variant::M2:
      return stationary_part(state.kappa2 + state.field(CarField::F4)[i], variant.range);
    case Variant::M3: {
      const double g = state.field(CarField::G2)[i];
      const double w = state.omega[t_col];
      return w * capped_exp(state.alpha2 + g) +
             (1.0 - w) * stationary_part(state.kappa2 + g, variant.range);
    }
    case Variant::M4: {
      const double w = state.omega[t_col];
      return w * capped_exp(state.alpha2 + state.field(CarField::G2)[i]) +
             (1.0 - w) *
                 stationary_part(state.kappa2 + state.field(CarField::G4)[i], variant.range);
    }
  }
  return 0.0;
}

LinkCoefficients link_coefficients(const ModelVariant& variant, const LatentState& state) {
  const int n = static_cast<int>(state.delta.rows());
  const int t = static_cast<int>(state.delta.cols());
  if (variant.is_mixture() && state.omega.size() != t) {
    throw std::invalid_argument("link_coefficients: omega is not sized per period for " +
                                variant.name());
  }
  for (CarField f : active_car_fields(variant)) {
    if (f != CarField::U && state.field(f).size() != n) {
      throw std::invalid_argument(std::string("link_coefficients: field ") + car_field_name(f) +
                                  " missing or mis-sized for " + variant.name());
    }
  }
  LinkCoefficients c;
  c.rho.resize(n, t);
  c.lambda.resize(n, t);
  if (!variant.is_mixture()) {
    // Time-constant coefficients, replicated across periods.
    for (int i = 0; i < n; ++i) {
      const double r = rho_cell(variant, state, i, 0);
      const double l = lambda_cell(variant, state, i, 0);
      c.rho.row(i).setConstant(r);
      c.lambda.row(i).setConstant(l);
    }
    return c;
  }
  for (int s = 0; s < t; ++s) {
    for (int i = 0; i < n; ++i) {
      c.rho(i, s) = rho_cell(variant, state, i, s);
      c.lambda(i, s) = lambda_cell(variant, state, i, s);
    }
  }
  return c;
}

double mean_intensity(const LatentState& state, const LinkCoefficients& coeffs,
                      const SpatialWeights& weights, const PanelData& data, int i, int t) {
  if (t < 2 || t > data.n_periods()) {
    throw std::invalid_argument("mean_intensity: period t=" + std::to_string(t) +
                                " out of the modelled range 2.." +
                                std::to_string(data.n_periods()));
  }
  const int tc = t - 1;  // 0-based column of period t
  double lag = 0.0;
  for (const auto& [j, w] : weights.rows[i]) lag += w * data.y(j, tc - 1);
  const double eta = data.x[i] * state.beta + state.field(CarField::U)[i];
  const double mu = coeffs.rho(i, tc) * data.y(i, tc - 1) + coeffs.lambda(i, tc) * lag +
                    capped_exp(eta + state.delta(i, tc));
  if (!std::isfinite(mu)) {
    throw std::runtime_error("mean_intensity: non-finite mu at area " + std::to_string(i) +
                             ", period " + std::to_string(t));
  }
  return mu;
}

double nb_log_pmf(std::int64_t y, double mu, double psi) {
  if (y < 0) throw std::domain_error("nb_log_pmf: y must be nonnegative");
  if (!(mu > 0.0) || !(psi > 0.0)) {
    throw std::domain_error("nb_log_pmf: mu and psi must be positive");
  }
  const auto yd = static_cast<double>(y);
  const double log_denom = std::log(mu + psi);
  return std::lgamma(yd + psi) - std::lgamma(psi) - std::lgamma(yd + 1.0) +
         yd * (std::log(mu) - log_denom) + psi * (std::log(psi) - log_denom);
}

LogLikelihood log_likelihood(const LatentState& state, const ModelVariant& variant,
                             const SpatialWeights& weights, const PanelData& data) {
  const int n = data.n_areas();
  const int t = data.n_periods();
  const LinkCoefficients coeffs = link_coefficients(variant, state);
  LogLikelihood out;
  out.pointwise.resize(n, t - 1);
  for (int period = 2; period <= t; ++period) {
    for (int i = 0; i < n; ++i) {
      const double mu = mean_intensity(state, coeffs, weights, data, i, period);
      const double ll =
          nb_log_pmf(static_cast<std::int64_t>(data.y(i, period - 1)), mu, state.psi);
      out.pointwise(i, period - 2) = ll;
      out.total += ll;
    }
  }
  return out;
}

ExceedanceStats exceedance_stats(const LinkCoefficients& coeffs) {
  ExceedanceStats s;
  s.r = (coeffs.rho > 1.0).cast<double>();
  s.l = (coeffs.lambda > 1.0).cast<double>();
  s.R = s.r.colwise().sum().matrix().transpose();
  s.L = s.l.colwise().sum().matrix().transpose();
  return s;
}

SummaryCoefficients summary_coefficients(const LinkCoefficients& coeffs) {
  SummaryCoefficients s;
  s.rho_bar = coeffs.rho.colwise().mean().matrix().transpose();
  s.lambda_bar = coeffs.lambda.colwise().mean().matrix().transpose();
  return s;
}

}  // namespace epimix
