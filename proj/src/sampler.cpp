#include "epimix/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <thread>
#include <utility>

namespace epimix {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace

void SamplerConfig::validate() const {
  if (n_chains < 1) throw std::invalid_argument("SamplerConfig: n_chains must be >= 1");
  if (n_iterations < 1) throw std::invalid_argument("SamplerConfig: n_iterations must be >= 1");
  if (n_burnin < 0 || n_burnin >= n_iterations) {
    throw std::invalid_argument("SamplerConfig: require 0 <= n_burnin < n_iterations");
  }
  if (thin < 1) throw std::invalid_argument("SamplerConfig: thin must be >= 1");
  if (adapt_window < 1) throw std::invalid_argument("SamplerConfig: adapt_window must be >= 1");
  if (!(target_accept_scalar > 0.0 && target_accept_scalar < 1.0) ||
      !(target_accept_block > 0.0 && target_accept_block < 1.0)) {
    throw std::invalid_argument("SamplerConfig: acceptance targets must lie in (0,1)");
  }
  if (!(init_jitter_sd >= 0.0)) {
    throw std::invalid_argument("SamplerConfig: init_jitter_sd must be >= 0");
  }
  if (max_init_retries < 1) {
    throw std::invalid_argument("SamplerConfig: max_init_retries must be >= 1");
  }
  if (n_threads < 0) throw std::invalid_argument("SamplerConfig: n_threads must be >= 0");
}

double adapt_scale(double scale, double accept_rate, double target, int window_index) {
  if (!(scale > 0.0)) throw std::invalid_argument("adapt_scale: scale must be positive");
  if (window_index < 1) throw std::invalid_argument("adapt_scale: window_index must be >= 1");
  const double gain = std::min(0.5, 1.0 / std::sqrt(static_cast<double>(window_index)));
  double ls = std::log(scale) + gain * (accept_rate - target);
  ls = std::clamp(ls, std::log(1e-6), std::log(50.0));
  return std::exp(ls);
}

namespace {

double psrf_core(double w, double var_means, long n, long m) {
  if (n < 2 || m < 2) throw std::invalid_argument("psrf: need >= 2 chains of length >= 2");
  if (!(w > 0.0)) return var_means > 0.0 ? kInf : 1.0;
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);
  // Brooks-Gelman corrected: Rhat^2 = [ (n-1)/n W + (m+1)/(mn) B ] / W, B = n Var(means).
  const double v_hat = (nd - 1.0) / nd * w + (md + 1.0) / md * var_means;
  return std::sqrt(v_hat / w);
}

}  // namespace

double psrf(const std::vector<Eigen::VectorXd>& chains) {
  const long m = static_cast<long>(chains.size());
  if (m < 2) throw std::invalid_argument("psrf: need at least 2 chains");
  const long n = chains[0].size();
  for (const auto& c : chains) {
    if (c.size() != n) throw std::invalid_argument("psrf: chains must have equal lengths");
  }
  if (n < 2) throw std::invalid_argument("psrf: chains must have length >= 2");
  double w = 0.0, grand = 0.0;
  std::vector<double> means(m);
  for (long c = 0; c < m; ++c) {
    const double mean = chains[c].mean();
    means[c] = mean;
    grand += mean;
    w += (chains[c].array() - mean).square().sum() / static_cast<double>(n - 1);
  }
  w /= static_cast<double>(m);
  grand /= static_cast<double>(m);
  double var_means = 0.0;
  for (long c = 0; c < m; ++c) var_means += (means[c] - grand) * (means[c] - grand);
  var_means /= static_cast<double>(m - 1);
  return psrf_core(w, var_means, n, m);
}

double psrf_from_moments(std::span<const double> means, std::span<const double> vars, long n) {
  const long m = static_cast<long>(means.size());
  if (m < 2 || vars.size() != means.size()) {
    throw std::invalid_argument("psrf_from_moments: need matching moments for >= 2 chains");
  }
  double w = 0.0, grand = 0.0;
  for (long c = 0; c < m; ++c) {
    w += vars[c];
    grand += means[c];
  }
  w /= static_cast<double>(m);
  grand /= static_cast<double>(m);
  double var_means = 0.0;
  for (long c = 0; c < m; ++c) var_means += (means[c] - grand) * (means[c] - grand);
  var_means /= static_cast<double>(m - 1);
  return psrf_core(w, var_means, n, m);
}

double quantile(const Eigen::VectorXd& draws, double q) {
  if (draws.size() < 1) throw std::invalid_argument("quantile: empty draws");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q outside [0,1]");
  std::vector<double> s(draws.data(), draws.data() + draws.size());
  std::sort(s.begin(), s.end());
  const double h = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= s.size()) return s.back();
  return s[lo] + (h - static_cast<double>(lo)) * (s[lo + 1] - s[lo]);
}

Summary summarize(const Eigen::VectorXd& draws) {
  const long n = draws.size();
  if (n < 1) throw std::invalid_argument("summarize: empty draws");
  Summary s;
  s.mean = draws.mean();
  s.sd = n > 1 ? std::sqrt((draws.array() - s.mean).square().sum() / static_cast<double>(n - 1))
               : 0.0;
  s.q025 = quantile(draws, 0.025);
  s.q50 = quantile(draws, 0.50);
  s.q975 = quantile(draws, 0.975);
  return s;
}

int PosteriorSamples::param_index(const std::string& name) const {
  for (int j = 0; j < static_cast<int>(names.size()); ++j) {
    if (names[j] == name) return j;
  }
  return -1;
}

Eigen::VectorXd PosteriorSamples::pooled(int param) const {
  if (param < 0 || param >= n_params()) throw std::invalid_argument("pooled: bad param index");
  long total = 0;
  for (const auto& d : chain_draws) total += d.rows();
  Eigen::VectorXd v(total);
  long off = 0;
  for (const auto& d : chain_draws) {
    v.segment(off, d.rows()) = d.col(param);
    off += d.rows();
  }
  return v;
}

Eigen::VectorXd PosteriorSamples::pooled(const std::string& name) const {
  const int j = param_index(name);
  if (j < 0) throw std::invalid_argument("pooled: unknown parameter '" + name + "'");
  return pooled(j);
}

// ---------------------------------------------------------------------------
// Block machinery
// ---------------------------------------------------------------------------

namespace {

enum class BKind {
  LinkScalar,  // alpha1/alpha2/kappa1/kappa2
  LinkJoint,   // all link intercepts at once, covariance learned in burn-in
  Beta,
  BetaURidge,  // shear move along the beta/u likelihood ridge
  LogPsi,
  CarSite,
  LogTauCar,
  DeltaRow,
  LogTauDelta,
  TauDeltaShear,  // joint move: log tau_delta step with increments rescaled
  Omega,
  OmegaPrior,  // independence draw from Beta(q1_t, q2_t); no scale
  LogQ,
};

struct Block {
  BKind kind = BKind::Beta;
  std::string name, family;
  CarField field = CarField::U;
  int i = -1;      // area (CarSite, DeltaRow)
  int t = -1;      // 0-based column (Omega, LogQ)
  int which = 0;   // LinkScalar: 0 a1, 1 a2, 2 k1, 3 k2; LogQ: 1 or 2
  bool enabled = true;
  bool is_block = false;  // multivariate proposal: adapts toward the block target
  double log_scale = std::log(0.1);
  long proposals = 0, accepts = 0;
  long win_prop = 0, win_acc = 0;
  int windows = 0;
};

}  // namespace

struct ChainRunner::Impl {
  const PanelData& data;
  const SpatialWeights& weights;
  ModelVariant variant;
  PriorConfig prior;
  SamplerConfig config;
  Rng rng;

  int N = 0, T = 0;
  AdjacencyGraph graph;
  std::vector<int> comp;
  int n_comp = 0;
  int icar_rank = 0;

  // Field roles: which CAR field feeds each coefficient part.
  CarField f_rho_log = CarField::F1, f_lam_log = CarField::F2;
  CarField f_rho_sta = CarField::F3, f_lam_sta = CarField::F4;
  bool has_log = false, has_logit = false, mixture = false;

  LatentState state;

  // Static caches.
  Eigen::ArrayXXd lag;    // N x T; col t holds sum_j w_ij y_{j,t-1}, col 0 zero
  Eigen::ArrayXXd lg_y1;  // lgamma(y+1)

  // State caches. Coefficient parts are per-area; endemic/mu/ll cover the
  // modelled columns 1..T-1 (column 0 stays zero).
  Eigen::VectorXd exp_r, sta_r, exp_l, sta_l, eta;
  Eigen::ArrayXXd rho, lam, endemic, mu, ll;
  Eigen::ArrayXXd lg_y_psi;
  double lg_psi = 0.0, log_psi_val = 0.0;

  std::vector<Block> blocks;
  std::map<std::string, int> block_index;
  long iter = 0;
  bool adapting = true;

  bool check = false;
  double lp_full = 0.0;  // maintained only in check mode

  // Scratch for whole-array candidates.
  Eigen::ArrayXXd rho_c, lam_c, mu_c, ll_c, endemic_c, lg_y_psi_c, delta_c;
  Eigen::VectorXd eta_c, part_c;
  Eigen::ArrayXd row_prop;

  // Joint intercept proposal: running moments of the active link intercepts,
  // accumulated during burn-in only, so the kernel is fixed afterwards.
  std::vector<int> joint_codes;  // LinkScalar codes, see up_link_scalar
  Eigen::VectorXd joint_mean, joint_v, joint_z;
  Eigen::MatrixXd joint_m2;
  long joint_obs = 0;
  Eigen::VectorXd jnt_er, jnt_sr, jnt_el, jnt_sl;

  Impl(const PanelData& d, const ModelVariant& v, const SpatialWeights& w,
       const PriorConfig& p, const SamplerConfig& c, std::uint64_t seed)
      : data(d), weights(w), variant(v), prior(p), config(c), rng(seed) {
    config.validate();
    prior.validate();
    data.validate();
    N = data.n_areas();
    T = data.n_periods();
    if (weights.n_areas() != N) {
      throw std::invalid_argument("ChainRunner: weights and data disagree on n_areas");
    }
    graph = adjacency_from_weights(weights);
    comp = connected_components(graph);
    n_comp = count_components(comp);
    icar_rank = N - n_comp;

    has_log = variant.has_log_part();
    has_logit = variant.has_logit_part();
    mixture = variant.is_mixture();
    switch (variant.kind) {
      case Variant::M1:
        f_rho_log = CarField::F1; f_lam_log = CarField::F2;
        break;
      case Variant::M2:
        f_rho_sta = CarField::F3; f_lam_sta = CarField::F4;
        break;
      case Variant::M3:
        f_rho_log = CarField::G1; f_lam_log = CarField::G2;
        f_rho_sta = CarField::G1; f_lam_sta = CarField::G2;
        break;
      case Variant::M4:
        f_rho_log = CarField::G1; f_lam_log = CarField::G2;
        f_rho_sta = CarField::G3; f_lam_sta = CarField::G4;
        break;
    }

    lag = Eigen::ArrayXXd::Zero(N, T);
    for (int tc = 1; tc < T; ++tc) {
      for (int i = 0; i < N; ++i) {
        double s = 0.0;
        for (const auto& [j, wij] : weights.rows[i]) s += wij * data.y(j, tc - 1);
        lag(i, tc) = s;
      }
    }
    lg_y1.resize(N, T);
    for (int tc = 0; tc < T; ++tc) {
      for (int i = 0; i < N; ++i) lg_y1(i, tc) = std::lgamma(data.y(i, tc) + 1.0);
    }

    exp_r = sta_r = exp_l = sta_l = Eigen::VectorXd::Zero(N);
    eta = Eigen::VectorXd::Zero(N);
    rho = lam = endemic = mu = ll = Eigen::ArrayXXd::Zero(N, T);
    lg_y_psi.resize(N, T);
    rho_c = lam_c = mu_c = ll_c = endemic_c = delta_c = Eigen::ArrayXXd::Zero(N, T);
    lg_y_psi_c.resize(N, T);
    eta_c.resize(N);
    part_c.resize(N);
    row_prop.resize(T);

    if (has_log) {
      joint_codes.push_back(0);
      joint_codes.push_back(1);
    }
    if (has_logit) {
      joint_codes.push_back(2);
      joint_codes.push_back(3);
    }
    const auto jd = static_cast<long>(joint_codes.size());
    joint_mean = joint_v = joint_z = Eigen::VectorXd::Zero(jd);
    joint_m2 = Eigen::MatrixXd::Zero(jd, jd);
    jnt_er = jnt_sr = jnt_el = jnt_sl = Eigen::VectorXd::Zero(N);

    build_blocks();
    check = config.exact_check;
    init_state();
    if (check) lp_full = full_lp();
  }

  // --- construction helpers ---

  void add_block(Block b) {
    if (config.only_blocks) {
      const auto& sel = *config.only_blocks;
      b.enabled = std::find(sel.begin(), sel.end(), b.name) != sel.end() ||
                  std::find(sel.begin(), sel.end(), b.family) != sel.end();
    }
    block_index.emplace(b.name, static_cast<int>(blocks.size()));
    blocks.push_back(std::move(b));
  }

  void build_blocks() {
    auto scalar = [&](BKind k, const std::string& name, int which = 0) {
      Block b;
      b.kind = k;
      b.name = name;
      b.family = name;
      b.which = which;
      add_block(std::move(b));
    };
    if (has_log) {
      scalar(BKind::LinkScalar, "alpha1", 0);
      scalar(BKind::LinkScalar, "alpha2", 1);
    }
    if (has_logit) {
      scalar(BKind::LinkScalar, "kappa1", 2);
      scalar(BKind::LinkScalar, "kappa2", 3);
    }
    scalar(BKind::LinkJoint, "links_joint");
    blocks.back().is_block = true;
    scalar(BKind::Beta, "beta");
    scalar(BKind::BetaURidge, "beta_u");
    scalar(BKind::LogPsi, "psi");
    for (CarField f : active_car_fields(variant)) {
      const std::string fname = car_field_name(f);
      for (int i = 0; i < N; ++i) {
        Block b;
        b.kind = BKind::CarSite;
        b.field = f;
        b.i = i;
        b.name = fname + "[" + std::to_string(i) + "]";
        b.family = fname;
        add_block(std::move(b));
      }
      Block tb;
      tb.kind = BKind::LogTauCar;
      tb.field = f;
      tb.name = "tau_" + fname;
      tb.family = tb.name;
      add_block(std::move(tb));
    }
    for (int i = 0; i < N; ++i) {
      Block b;
      b.kind = BKind::DeltaRow;
      b.i = i;
      b.name = "delta[" + std::to_string(i) + "]";
      b.family = "delta";
      b.is_block = true;
      b.log_scale = 0.0;  // prior-shaped proposal: unit scale is the natural start
      add_block(std::move(b));
    }
    scalar(BKind::LogTauDelta, "tau_delta");
    scalar(BKind::TauDeltaShear, "tau_delta_scale");
    if (mixture) {
      for (int tc = 1; tc < T; ++tc) {
        const std::string label = std::to_string(tc + 1);  // 1-based period
        Block w;
        w.kind = BKind::Omega;
        w.t = tc;
        w.name = "omega[" + label + "]";
        w.family = "omega";
        add_block(std::move(w));
        // Paired independence kernel: where the likelihood barely constrains
        // omega_t the conditional prior is close to the full conditional, so
        // drawing from it restores mixing that the random walk loses.
        Block wp;
        wp.kind = BKind::OmegaPrior;
        wp.t = tc;
        wp.name = "omega_prior[" + label + "]";
        wp.family = "omega_prior";
        add_block(std::move(wp));
        for (int which : {1, 2}) {
          Block q;
          q.kind = BKind::LogQ;
          q.t = tc;
          q.which = which;
          q.name = "q" + std::to_string(which) + "[" + label + "]";
          q.family = "q" + std::to_string(which);
          add_block(std::move(q));
        }
      }
    }
  }

  void init_state() {
    std::string last_err = "non-finite log posterior";
    for (int attempt = 0; attempt < config.max_init_retries; ++attempt) {
      state = LatentState::zeros(variant, N, T);
      state.psi = 10.0;
      state.tau.fill(1.0);
      state.tau_delta = 1.0;
      state.omega.setConstant(0.1);
      state.q1.setOnes();
      state.q2.setOnes();
      auto jit = [&] { return config.init_jitter_sd * rng.normal(); };
      if (has_log) {
        state.alpha1 = jit();
        state.alpha2 = jit();
      }
      if (has_logit) {
        state.kappa1 = jit();
        state.kappa2 = jit();
      }
      state.beta = jit();
      try {
        const double lp = total_log_posterior(state, variant, weights, data, prior);
        if (std::isfinite(lp)) {
          refresh_all();
          return;
        }
      } catch (const std::exception& e) {
        last_err = e.what();
      }
    }
    throw SamplerError("no finite initial state after " + std::to_string(config.max_init_retries) +
                       " retries: " + last_err);
  }

  // --- cache maintenance ---

  double mix2(double w, double ep, double sp) const {
    switch (variant.kind) {
      case Variant::M1: return ep;
      case Variant::M2: return sp;
      default: return w * ep + (1.0 - w) * sp;
    }
  }

  static double nb_cell(double y, double m, double psi, double lg_y_psi_v, double lg_psi_v,
                        double log_psi_v, double lg_y1_v) {
    if (!(m > 0.0) || !std::isfinite(m)) return -kInf;
    const double log_denom = std::log(m + psi);
    return lg_y_psi_v - lg_psi_v - lg_y1_v + y * (std::log(m) - log_denom) +
           psi * (log_psi_v - log_denom);
  }

  double cell_ll(int i, int tc, double m) const {
    return nb_cell(data.y(i, tc), m, state.psi, lg_y_psi(i, tc), lg_psi, log_psi_val,
                   lg_y1(i, tc));
  }

  void rebuild_psi_caches() {
    lg_psi = std::lgamma(state.psi);
    log_psi_val = std::log(state.psi);
    for (int tc = 0; tc < T; ++tc) {
      for (int i = 0; i < N; ++i) lg_y_psi(i, tc) = std::lgamma(data.y(i, tc) + state.psi);
    }
  }

  void rebuild_row(int i) {
    if (has_log) {
      exp_r[i] = capped_exp(state.alpha1 + state.field(f_rho_log)[i]);
      exp_l[i] = capped_exp(state.alpha2 + state.field(f_lam_log)[i]);
    }
    if (has_logit) {
      sta_r[i] = stationary_part(state.kappa1 + state.field(f_rho_sta)[i], variant.range);
      sta_l[i] = stationary_part(state.kappa2 + state.field(f_lam_sta)[i], variant.range);
    }
    eta[i] = data.x[i] * state.beta + state.field(CarField::U)[i];
    for (int tc = 0; tc < T; ++tc) {
      const double w = mixture ? state.omega[tc] : 0.0;
      rho(i, tc) = mix2(w, exp_r[i], sta_r[i]);
      lam(i, tc) = mix2(w, exp_l[i], sta_l[i]);
    }
    for (int tc = 1; tc < T; ++tc) {
      endemic(i, tc) = capped_exp(eta[i] + state.delta(i, tc));
      const double m = rho(i, tc) * data.y(i, tc - 1) + lam(i, tc) * lag(i, tc) + endemic(i, tc);
      mu(i, tc) = m;
      ll(i, tc) = cell_ll(i, tc, m);
    }
  }

  void rebuild_col(int tc) {
    for (int i = 0; i < N; ++i) {
      const double w = mixture ? state.omega[tc] : 0.0;
      rho(i, tc) = mix2(w, exp_r[i], sta_r[i]);
      lam(i, tc) = mix2(w, exp_l[i], sta_l[i]);
      if (tc >= 1) {
        const double m = rho(i, tc) * data.y(i, tc - 1) + lam(i, tc) * lag(i, tc) + endemic(i, tc);
        mu(i, tc) = m;
        ll(i, tc) = cell_ll(i, tc, m);
      }
    }
  }

  void refresh_all() {
    rebuild_psi_caches();
    for (int i = 0; i < N; ++i) rebuild_row(i);
  }

  double full_lp() const { return total_log_posterior(state, variant, weights, data, prior); }

  double cached_ll_total() const {
    double s = 0.0;
    for (int tc = 1; tc < T; ++tc) {
      for (int i = 0; i < N; ++i) s += ll(i, tc);
    }
    return s;
  }

  void verify_caches() {
    const Eigen::ArrayXXd rho0 = rho, lam0 = lam, mu0 = mu, ll0 = ll, end0 = endemic;
    const Eigen::VectorXd eta0 = eta;
    refresh_all();
    const double d = (rho - rho0).abs().maxCoeff() + (lam - lam0).abs().maxCoeff() +
                     (mu - mu0).abs().maxCoeff() + (ll - ll0).abs().maxCoeff() +
                     (endemic - end0).abs().maxCoeff() + (eta - eta0).cwiseAbs().maxCoeff();
    if (!(d <= 1e-12)) {
      throw std::logic_error("sampler caches drifted from the state by " + std::to_string(d));
    }
  }

  // --- proposal plumbing ---

  bool accept_move(double log_ratio) {
    if (std::isnan(log_ratio)) return false;
    return std::log(rng.uniform()) < log_ratio;
  }

  void check_accept(double d_target, const std::string& name) {
    if (!check) return;
    const double lp_new = full_lp();
    const double tol = 1e-7 * (1.0 + std::abs(lp_new) + std::abs(lp_full));
    const double got = lp_new - lp_full;
    if (!(std::abs(got - d_target) <= tol)) {
      throw std::logic_error("fast log-posterior delta for block '" + name + "' is " +
                             std::to_string(d_target) + " but the reference gives " +
                             std::to_string(got));
    }
    lp_full = lp_new;
  }

  // Candidate mu/ll over modelled columns from candidate coefficient parts;
  // returns the log-likelihood delta. Fills rho_c, lam_c, mu_c, ll_c.
  double coeff_candidate(const Eigen::VectorXd& er, const Eigen::VectorXd& sr,
                         const Eigen::VectorXd& el, const Eigen::VectorXd& sl) {
    double dll = 0.0;
    for (int tc = 0; tc < T; ++tc) {
      const double w = mixture ? state.omega[tc] : 0.0;
      for (int i = 0; i < N; ++i) {
        rho_c(i, tc) = mix2(w, er[i], sr[i]);
        lam_c(i, tc) = mix2(w, el[i], sl[i]);
        if (tc >= 1) {
          const double m =
              rho_c(i, tc) * data.y(i, tc - 1) + lam_c(i, tc) * lag(i, tc) + endemic(i, tc);
          mu_c(i, tc) = m;
          ll_c(i, tc) = cell_ll(i, tc, m);
          dll += ll_c(i, tc) - ll(i, tc);
        }
      }
    }
    return dll;
  }

  void commit_coeffs() {
    rho.swap(rho_c);
    lam.swap(lam_c);
    mu.swap(mu_c);
    ll.swap(ll_c);
  }

  // --- block updates ---

  bool up_link_scalar(const Block& b, double scale) {
    double* tgt = nullptr;
    CarField f = CarField::F1;
    bool is_rho = false, is_log = false;
    switch (b.which) {
      case 0: tgt = &state.alpha1; f = f_rho_log; is_rho = true; is_log = true; break;
      case 1: tgt = &state.alpha2; f = f_lam_log; is_rho = false; is_log = true; break;
      case 2: tgt = &state.kappa1; f = f_rho_sta; is_rho = true; is_log = false; break;
      default: tgt = &state.kappa2; f = f_lam_sta; is_rho = false; is_log = false; break;
    }
    const double old = *tgt;
    const double cand = old + scale * rng.normal();
    const Eigen::VectorXd& fv = state.field(f);
    if (is_log) {
      for (int i = 0; i < N; ++i) {
        if (cand + fv[i] > kMaxExpArg) return false;
      }
    }
    for (int i = 0; i < N; ++i) {
      part_c[i] = is_log ? capped_exp(cand + fv[i]) : stationary_part(cand + fv[i], variant.range);
    }
    double dll = 0.0;
    if (is_rho) {
      dll = coeff_candidate(is_log ? part_c : exp_r, is_log ? sta_r : part_c, exp_l, sta_l);
    } else {
      dll = coeff_candidate(exp_r, sta_r, is_log ? part_c : exp_l, is_log ? sta_l : part_c);
    }
    const double d_prior = normal_log_density(cand, 0.0, prior.normal_var_fixed) -
                           normal_log_density(old, 0.0, prior.normal_var_fixed);
    const double d_target = dll + d_prior;
    if (!accept_move(d_target)) return false;
    *tgt = cand;
    if (is_rho) {
      (is_log ? exp_r : sta_r) = part_c;
    } else {
      (is_log ? exp_l : sta_l) = part_c;
    }
    commit_coeffs();
    check_accept(d_target, b.name);
    return true;
  }

  double* link_scalar_slot(int code) {
    switch (code) {
      case 0: return &state.alpha1;
      case 1: return &state.alpha2;
      case 2: return &state.kappa1;
      default: return &state.kappa2;
    }
  }

  // Moves every active link intercept at once. Single-scalar walks crawl
  // along the intercept ridges (self-lag versus neighbour-lag, epidemic
  // versus stationary); a proposal shaped like the burn-in scatter crosses
  // them. Gaussian with history-only covariance, hence symmetric.
  bool up_link_joint(const Block& b, double scale) {
    const int d = static_cast<int>(joint_codes.size());
    for (int k = 0; k < d; ++k) joint_v[k] = *link_scalar_slot(joint_codes[k]);
    if (adapting) {
      joint_obs += 1;
      const Eigen::VectorXd d0 = joint_v - joint_mean;
      joint_mean += d0 / static_cast<double>(joint_obs);
      joint_m2 += d0 * (joint_v - joint_mean).transpose();
    }
    for (int k = 0; k < d; ++k) joint_z[k] = rng.normal();
    Eigen::VectorXd step = joint_z;
    if (joint_obs >= 20L * d) {
      Eigen::MatrixXd sigma = joint_m2 / static_cast<double>(joint_obs - 1);
      sigma.diagonal().array() += 1e-8;
      const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
      if (llt.info() == Eigen::Success) step = llt.matrixL() * joint_z;
    }
    step *= scale;

    double cand[4] = {state.alpha1, state.alpha2, state.kappa1, state.kappa2};
    for (int k = 0; k < d; ++k) cand[joint_codes[k]] += step[k];

    const Eigen::VectorXd& frl = state.field(f_rho_log);
    const Eigen::VectorXd& fll = state.field(f_lam_log);
    const Eigen::VectorXd& frs = state.field(f_rho_sta);
    const Eigen::VectorXd& fls = state.field(f_lam_sta);
    if (has_log) {
      for (int i = 0; i < N; ++i) {
        if (cand[0] + frl[i] > kMaxExpArg || cand[1] + fll[i] > kMaxExpArg) return false;
      }
      for (int i = 0; i < N; ++i) {
        jnt_er[i] = capped_exp(cand[0] + frl[i]);
        jnt_el[i] = capped_exp(cand[1] + fll[i]);
      }
    }
    if (has_logit) {
      for (int i = 0; i < N; ++i) {
        jnt_sr[i] = stationary_part(cand[2] + frs[i], variant.range);
        jnt_sl[i] = stationary_part(cand[3] + fls[i], variant.range);
      }
    }
    const double dll = coeff_candidate(has_log ? jnt_er : exp_r, has_logit ? jnt_sr : sta_r,
                                       has_log ? jnt_el : exp_l, has_logit ? jnt_sl : sta_l);
    double d_prior = 0.0;
    for (int k = 0; k < d; ++k) {
      const int code = joint_codes[k];
      d_prior += normal_log_density(cand[code], 0.0, prior.normal_var_fixed) -
                 normal_log_density(*link_scalar_slot(code), 0.0, prior.normal_var_fixed);
    }
    const double d_target = dll + d_prior;
    if (!accept_move(d_target)) return false;
    for (int k = 0; k < d; ++k) *link_scalar_slot(joint_codes[k]) = cand[joint_codes[k]];
    if (has_log) {
      exp_r = jnt_er;
      exp_l = jnt_el;
    }
    if (has_logit) {
      sta_r = jnt_sr;
      sta_l = jnt_sl;
    }
    commit_coeffs();
    check_accept(d_target, b.name);
    return true;
  }

  bool up_beta(const Block& b, double scale) {
    const double old = state.beta;
    const double cand = old + scale * rng.normal();
    for (int i = 0; i < N; ++i) eta_c[i] = data.x[i] * cand + state.field(CarField::U)[i];
    double dll = 0.0;
    for (int tc = 1; tc < T; ++tc) {
      for (int i = 0; i < N; ++i) {
        const double arg = eta_c[i] + state.delta(i, tc);
        if (arg > kMaxExpArg) return false;
        endemic_c(i, tc) = std::exp(arg);
        const double m = rho(i, tc) * data.y(i, tc - 1) + lam(i, tc) * lag(i, tc) + endemic_c(i, tc);
        mu_c(i, tc) = m;
        ll_c(i, tc) = cell_ll(i, tc, m);
        dll += ll_c(i, tc) - ll(i, tc);
      }
    }
    const double d_prior = normal_log_density(cand, 0.0, prior.normal_var_fixed) -
                           normal_log_density(old, 0.0, prior.normal_var_fixed);
    const double d_target = dll + d_prior;
    if (!accept_move(d_target)) return false;
    state.beta = cand;
    eta.swap(eta_c);
    endemic.swap(endemic_c);
    mu.swap(mu_c);
    ll.swap(ll_c);
    check_accept(d_target, b.name);
    return true;
  }

  // Shears (beta, u) along the direction that keeps eta fixed up to rounding:
  // beta += eps, u -= eps * x. The likelihood is nearly invariant, so the move
  // explores the ridge left open when x lies in the sum-to-zero subspace; the
  // ICAR and beta priors decide acceptance. Unit Jacobian.
  bool up_beta_u_ridge(const Block& b, double scale) {
    const double eps = scale * rng.normal();
    const double cand = state.beta + eps;
    const Eigen::VectorXd& u = state.field(CarField::U);
    for (int i = 0; i < N; ++i) {
      part_c[i] = u[i] - eps * data.x[i];
      eta_c[i] = data.x[i] * cand + part_c[i];
    }
    double dll = 0.0;
    for (int tc = 1; tc < T; ++tc) {
      for (int i = 0; i < N; ++i) {
        const double arg = eta_c[i] + state.delta(i, tc);
        if (arg > kMaxExpArg) return false;
        endemic_c(i, tc) = std::exp(arg);
        const double m = rho(i, tc) * data.y(i, tc - 1) + lam(i, tc) * lag(i, tc) + endemic_c(i, tc);
        mu_c(i, tc) = m;
        ll_c(i, tc) = cell_ll(i, tc, m);
        dll += ll_c(i, tc) - ll(i, tc);
      }
    }
    double dquad = 0.0;
    for (int i = 0; i < N; ++i) {
      for (int j : graph.neighbors[i]) {
        if (j <= i) continue;
        const double du = u[i] - u[j];
        const double dn = part_c[i] - part_c[j];
        dquad += dn * dn - du * du;
      }
    }
    const double d_prior = normal_log_density(cand, 0.0, prior.normal_var_fixed) -
                           normal_log_density(state.beta, 0.0, prior.normal_var_fixed) -
                           0.5 * state.tau[static_cast<int>(CarField::U)] * dquad;
    const double d_target = dll + d_prior;
    if (!accept_move(d_target)) return false;
    state.beta = cand;
    for (int i = 0; i < N; ++i) state.field(CarField::U)[i] = part_c[i];
    eta.swap(eta_c);
    endemic.swap(endemic_c);
    mu.swap(mu_c);
    ll.swap(ll_c);
    check_accept(d_target, b.name);
    recenter(CarField::U);
    return true;
  }

  bool up_log_psi(const Block& b, double scale) {
    const double old = state.psi;
    const double log_cand = std::log(old) + scale * rng.normal();
    if (std::abs(log_cand) > kMaxExpArg) return false;
    const double cand = std::exp(log_cand);
    const double lg_psi_c = std::lgamma(cand);
    const double log_psi_c = std::log(cand);
    double dll = 0.0;
    for (int tc = 1; tc < T; ++tc) {
      for (int i = 0; i < N; ++i) {
        lg_y_psi_c(i, tc) = std::lgamma(data.y(i, tc) + cand);
        ll_c(i, tc) = nb_cell(data.y(i, tc), mu(i, tc), cand, lg_y_psi_c(i, tc), lg_psi_c,
                              log_psi_c, lg_y1(i, tc));
        dll += ll_c(i, tc) - ll(i, tc);
      }
    }
    const double d_prior = gamma_log_density(cand, prior.gamma_shape, prior.gamma_rate) -
                           gamma_log_density(old, prior.gamma_shape, prior.gamma_rate);
    const double d_target = dll + d_prior;
    const double d_jac = std::log(cand) - std::log(old);
    if (!accept_move(d_target + d_jac)) return false;
    state.psi = cand;
    lg_psi = lg_psi_c;
    log_psi_val = log_psi_c;
    // Columns 0 of the psi caches are never read; swapping whole arrays is fine.
    for (int i = 0; i < N; ++i) lg_y_psi_c(i, 0) = std::lgamma(data.y(i, 0) + cand);
    lg_y_psi.swap(lg_y_psi_c);
    ll.swap(ll_c);
    check_accept(d_target, b.name);
    return true;
  }

  bool up_car_site(const Block& b, double scale) {
    const CarField f = b.field;
    const int i = b.i;
    Eigen::VectorXd& fv = state.field(f);
    const double old = fv[i];
    const double cand = old + scale * rng.normal();

    const bool a_er = has_log && f == f_rho_log;
    const bool a_el = has_log && f == f_lam_log;
    const bool a_sr = has_logit && f == f_rho_sta;
    const bool a_sl = has_logit && f == f_lam_sta;
    const bool a_eta = f == CarField::U;

    if (a_er && state.alpha1 + cand > kMaxExpArg) return false;
    if (a_el && state.alpha2 + cand > kMaxExpArg) return false;
    double eta_i = eta[i];
    if (a_eta) {
      eta_i = data.x[i] * state.beta + cand;
      for (int tc = 1; tc < T; ++tc) {
        if (eta_i + state.delta(i, tc) > kMaxExpArg) return false;
      }
    }

    const double er = a_er ? capped_exp(state.alpha1 + cand) : exp_r[i];
    const double el = a_el ? capped_exp(state.alpha2 + cand) : exp_l[i];
    const double sr = a_sr ? stationary_part(state.kappa1 + cand, variant.range) : sta_r[i];
    const double sl = a_sl ? stationary_part(state.kappa2 + cand, variant.range) : sta_l[i];

    double dll = 0.0;
    for (int tc = 1; tc < T; ++tc) {
      const double w = mixture ? state.omega[tc] : 0.0;
      const double r = mix2(w, er, sr);
      const double l = mix2(w, el, sl);
      const double endv = a_eta ? std::exp(eta_i + state.delta(i, tc)) : endemic(i, tc);
      const double m = r * data.y(i, tc - 1) + l * lag(i, tc) + endv;
      dll += cell_ll(i, tc, m) - ll(i, tc);
    }

    double dquad = 0.0;
    for (int j : graph.neighbors[i]) {
      dquad += (cand - fv[j]) * (cand - fv[j]) - (old - fv[j]) * (old - fv[j]);
    }
    const double d_prior = -0.5 * state.tau[static_cast<int>(f)] * dquad;

    const double d_target = dll + d_prior;
    if (!accept_move(d_target)) return false;
    fv[i] = cand;
    rebuild_row(i);
    check_accept(d_target, b.name);
    recenter(f);
    return true;
  }

  // Subtracts the per-component mean from the field (soft sum-to-zero) and
  // rebuilds the caches of every shifted row.
  void recenter(CarField f) {
    Eigen::VectorXd& fv = state.field(f);
    std::vector<double> sum(n_comp, 0.0);
    std::vector<int> cnt(n_comp, 0);
    for (int i = 0; i < N; ++i) {
      sum[comp[i]] += fv[i];
      cnt[comp[i]] += 1;
    }
    bool moved = false;
    for (int c = 0; c < n_comp; ++c) {
      sum[c] /= cnt[c];
      if (sum[c] != 0.0) moved = true;
    }
    if (!moved) return;
    for (int i = 0; i < N; ++i) fv[i] -= sum[comp[i]];
    for (int i = 0; i < N; ++i) rebuild_row(i);
    if (check) lp_full = full_lp();
  }

  bool up_log_tau_car(const Block& b, double scale) {
    const CarField f = b.field;
    const double old = state.tau[static_cast<int>(f)];
    const double log_cand = std::log(old) + scale * rng.normal();
    if (std::abs(log_cand) > kMaxExpArg) return false;
    const double cand = std::exp(log_cand);
    const double q = icar_quadratic_form(state.field(f), graph);
    const double d_target = 0.5 * icar_rank * (std::log(cand) - std::log(old)) -
                            0.5 * (cand - old) * q +
                            gamma_log_density(cand, prior.gamma_shape, prior.gamma_rate) -
                            gamma_log_density(old, prior.gamma_shape, prior.gamma_rate);
    const double d_jac = std::log(cand) - std::log(old);
    if (!accept_move(d_target + d_jac)) return false;
    state.tau[static_cast<int>(f)] = cand;
    check_accept(d_target, b.name);
    return true;
  }

  // Row proposal shaped like the prior: a level draw plus a random-walk path
  // with the current increment sd. Smooth correlated moves traverse the
  // weakly identified stretches that white-noise proposals cannot.
  bool up_delta_row(const Block& b, double scale) {
    const int i = b.i;
    const double sd0 = std::sqrt(prior.delta_init_var);
    const double sd_incr = std::sqrt(state.sigma2_delta());
    double w = sd0 * rng.normal();
    row_prop[0] = state.delta(i, 0) + scale * w;
    for (int tc = 1; tc < T; ++tc) {
      w += sd_incr * rng.normal();
      row_prop[tc] = state.delta(i, tc) + scale * w;
    }
    for (int tc = 1; tc < T; ++tc) {
      if (eta[i] + row_prop[tc] > kMaxExpArg) return false;
    }
    double dll = 0.0;
    for (int tc = 1; tc < T; ++tc) {
      const double endv = std::exp(eta[i] + row_prop[tc]);
      const double m = rho(i, tc) * data.y(i, tc - 1) + lam(i, tc) * lag(i, tc) + endv;
      dll += cell_ll(i, tc, m) - ll(i, tc);
    }
    Eigen::VectorXd cur(T), prop(T);
    for (int tc = 0; tc < T; ++tc) {
      cur[tc] = state.delta(i, tc);
      prop[tc] = row_prop[tc];
    }
    const double s2 = state.sigma2_delta();
    const double d_prior = rw1_log_density(prop, s2, prior.delta_init_var) -
                           rw1_log_density(cur, s2, prior.delta_init_var);
    const double d_target = dll + d_prior;
    if (!accept_move(d_target)) return false;
    for (int tc = 0; tc < T; ++tc) state.delta(i, tc) = row_prop[tc];
    rebuild_row(i);
    check_accept(d_target, b.name);
    return true;
  }

  bool up_log_tau_delta(const Block& b, double scale) {
    const double old = state.tau_delta;
    const double log_cand = std::log(old) + scale * rng.normal();
    if (std::abs(log_cand) > kMaxExpArg) return false;
    const double cand = std::exp(log_cand);
    double s = 0.0;
    for (int i = 0; i < N; ++i) {
      for (int tc = 1; tc < T; ++tc) {
        const double d = state.delta(i, tc) - state.delta(i, tc - 1);
        s += d * d;
      }
    }
    const double m_incr = static_cast<double>(N) * (T - 1);
    const double d_target = 0.5 * m_incr * (std::log(cand) - std::log(old)) -
                            0.5 * (cand - old) * s +
                            gamma_log_density(cand, prior.gamma_shape, prior.gamma_rate) -
                            gamma_log_density(old, prior.gamma_shape, prior.gamma_rate);
    const double d_jac = std::log(cand) - std::log(old);
    if (!accept_move(d_target + d_jac)) return false;
    state.tau_delta = cand;
    check_accept(d_target, b.name);
    return true;
  }

  // Non-centered move through the delta funnel: steps log tau_delta while
  // rescaling every increment by sqrt(tau/tau') so the prior quadratic is
  // unchanged. The increment normalizers and the transform Jacobian cancel
  // except for the log-scale term of the tau step itself.
  bool up_tau_delta_shear(const Block& b, double scale) {
    const double eps = scale * rng.normal();
    const double old_tau = state.tau_delta;
    const double log_cand = std::log(old_tau) + eps;
    if (std::abs(log_cand) > kMaxExpArg) return false;
    const double cand = std::exp(log_cand);
    const double c = std::exp(-0.5 * eps);
    double dll = 0.0;
    for (int i = 0; i < N; ++i) {
      delta_c(i, 0) = state.delta(i, 0);
      for (int tc = 1; tc < T; ++tc) {
        const double inc = state.delta(i, tc) - state.delta(i, tc - 1);
        const double v = delta_c(i, tc - 1) + c * inc;
        delta_c(i, tc) = v;
        const double arg = eta[i] + v;
        if (arg > kMaxExpArg) return false;
        endemic_c(i, tc) = std::exp(arg);
        const double m = rho(i, tc) * data.y(i, tc - 1) + lam(i, tc) * lag(i, tc) +
                         endemic_c(i, tc);
        mu_c(i, tc) = m;
        ll_c(i, tc) = cell_ll(i, tc, m);
        dll += ll_c(i, tc) - ll(i, tc);
      }
    }
    const double m_incr = static_cast<double>(N) * (T - 1);
    const double d_prior = 0.5 * m_incr * eps +
                           gamma_log_density(cand, prior.gamma_shape, prior.gamma_rate) -
                           gamma_log_density(old_tau, prior.gamma_shape, prior.gamma_rate);
    const double d_target = dll + d_prior;
    const double d_jac = -0.5 * m_incr * eps + eps;
    if (!accept_move(d_target + d_jac)) return false;
    state.tau_delta = cand;
    state.delta = delta_c;
    endemic.swap(endemic_c);
    mu.swap(mu_c);
    ll.swap(ll_c);
    check_accept(d_target, b.name);
    return true;
  }

  bool up_omega(const Block& b, double scale) {
    const int tc = b.t;
    const double old = state.omega[tc];
    const double v = logit(old);
    const double cand_v = v + scale * rng.normal();
    if (std::abs(cand_v) > 36.0) return false;
    const double w = expit(cand_v);
    if (!(w > 0.0 && w < 1.0)) return false;
    double dll = 0.0;
    for (int i = 0; i < N; ++i) {
      const double r = mix2(w, exp_r[i], sta_r[i]);
      const double l = mix2(w, exp_l[i], sta_l[i]);
      const double m = r * data.y(i, tc - 1) + l * lag(i, tc) + endemic(i, tc);
      dll += cell_ll(i, tc, m) - ll(i, tc);
    }
    const double d_prior = omega_log_density(w, state.q1[tc], state.q2[tc]) -
                           omega_log_density(old, state.q1[tc], state.q2[tc]);
    const double d_target = dll + d_prior;
    const double d_jac =
        (std::log(w) + std::log1p(-w)) - (std::log(old) + std::log1p(-old));
    if (!accept_move(d_target + d_jac)) return false;
    state.omega[tc] = w;
    rebuild_col(tc);
    check_accept(d_target, b.name);
    return true;
  }

  bool up_omega_prior(const Block& b, double) {
    const int tc = b.t;
    const double old = state.omega[tc];
    const double w = rng.beta(state.q1[tc], state.q2[tc]);
    if (!(w > 0.0 && w < 1.0) || std::abs(logit(w)) > 36.0) return false;
    double dll = 0.0;
    for (int i = 0; i < N; ++i) {
      const double r = mix2(w, exp_r[i], sta_r[i]);
      const double l = mix2(w, exp_l[i], sta_l[i]);
      const double m = r * data.y(i, tc - 1) + l * lag(i, tc) + endemic(i, tc);
      dll += cell_ll(i, tc, m) - ll(i, tc);
    }
    // Proposal density equals the conditional prior, so the prior terms
    // cancel and the acceptance ratio is the likelihood ratio alone.
    if (!accept_move(dll)) return false;
    const double d_prior = omega_log_density(w, state.q1[tc], state.q2[tc]) -
                           omega_log_density(old, state.q1[tc], state.q2[tc]);
    state.omega[tc] = w;
    rebuild_col(tc);
    check_accept(dll + d_prior, b.name);
    return true;
  }

  bool up_log_q(const Block& b, double scale) {
    const int tc = b.t;
    Eigen::VectorXd& qv = b.which == 1 ? state.q1 : state.q2;
    const double old = qv[tc];
    const double log_cand = std::log(old) + scale * rng.normal();
    if (std::abs(log_cand) > kMaxExpArg) return false;
    const double cand = std::exp(log_cand);
    const double q1n = b.which == 1 ? cand : state.q1[tc];
    const double q2n = b.which == 2 ? cand : state.q2[tc];
    const double d_target = omega_log_density(state.omega[tc], q1n, q2n) -
                            omega_log_density(state.omega[tc], state.q1[tc], state.q2[tc]) +
                            gamma_log_density(cand, prior.gamma_shape, prior.gamma_rate) -
                            gamma_log_density(old, prior.gamma_shape, prior.gamma_rate);
    const double d_jac = std::log(cand) - std::log(old);
    if (!accept_move(d_target + d_jac)) return false;
    qv[tc] = cand;
    check_accept(d_target, b.name);
    return true;
  }

  bool do_update(const Block& b, double scale) {
    if (!(scale >= 0.0) || !std::isfinite(scale)) {
      throw std::invalid_argument("update_block: step scale must be finite and >= 0");
    }
    switch (b.kind) {
      case BKind::LinkScalar: return up_link_scalar(b, scale);
      case BKind::LinkJoint: return up_link_joint(b, scale);
      case BKind::Beta: return up_beta(b, scale);
      case BKind::BetaURidge: return up_beta_u_ridge(b, scale);
      case BKind::LogPsi: return up_log_psi(b, scale);
      case BKind::CarSite: return up_car_site(b, scale);
      case BKind::LogTauCar: return up_log_tau_car(b, scale);
      case BKind::DeltaRow: return up_delta_row(b, scale);
      case BKind::LogTauDelta: return up_log_tau_delta(b, scale);
      case BKind::TauDeltaShear: return up_tau_delta_shear(b, scale);
      case BKind::Omega: return up_omega(b, scale);
      case BKind::OmegaPrior: return up_omega_prior(b, scale);
      case BKind::LogQ: return up_log_q(b, scale);
    }
    return false;
  }

  void sweep_once() {
    for (Block& b : blocks) {
      if (!b.enabled) continue;
      const bool acc = do_update(b, std::exp(b.log_scale));
      b.proposals += 1;
      b.win_prop += 1;
      if (acc) {
        b.accepts += 1;
        b.win_acc += 1;
      }
      if (adapting && b.kind != BKind::OmegaPrior && b.win_prop >= config.adapt_window) {
        b.windows += 1;
        const double rate = static_cast<double>(b.win_acc) / static_cast<double>(b.win_prop);
        const double target =
            b.is_block ? config.target_accept_block : config.target_accept_scalar;
        b.log_scale = std::log(adapt_scale(std::exp(b.log_scale), rate, target, b.windows));
        b.win_prop = 0;
        b.win_acc = 0;
      }
    }
    if (check) verify_caches();
    iter += 1;
  }

  // --- retention ---

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    if (has_log) {
      names.emplace_back("alpha1");
      names.emplace_back("alpha2");
    }
    if (has_logit) {
      names.emplace_back("kappa1");
      names.emplace_back("kappa2");
    }
    names.emplace_back("beta");
    names.emplace_back("psi");
    names.emplace_back("sigma2_delta");
    for (CarField f : active_car_fields(variant)) {
      names.push_back(std::string("tau_") + car_field_name(f));
    }
    for (CarField f : active_car_fields(variant)) {
      for (int i = 0; i < N; ++i) {
        names.push_back(std::string(car_field_name(f)) + "[" + std::to_string(i) + "]");
      }
    }
    if (mixture) {
      for (const char* base : {"omega", "q1", "q2"}) {
        for (int tc = 1; tc < T; ++tc) {
          names.push_back(std::string(base) + "[" + std::to_string(tc + 1) + "]");
        }
      }
    }
    return names;
  }

  void flatten(Eigen::RowVectorXd& out) const {
    out.resize(static_cast<long>(param_names().size()));
    int k = 0;
    if (has_log) {
      out[k++] = state.alpha1;
      out[k++] = state.alpha2;
    }
    if (has_logit) {
      out[k++] = state.kappa1;
      out[k++] = state.kappa2;
    }
    out[k++] = state.beta;
    out[k++] = state.psi;
    out[k++] = state.sigma2_delta();
    for (CarField f : active_car_fields(variant)) out[k++] = state.field_tau(f);
    for (CarField f : active_car_fields(variant)) {
      const Eigen::VectorXd& fv = state.field(f);
      for (int i = 0; i < N; ++i) out[k++] = fv[i];
    }
    if (mixture) {
      for (int tc = 1; tc < T; ++tc) out[k++] = state.omega[tc];
      for (int tc = 1; tc < T; ++tc) out[k++] = state.q1[tc];
      for (int tc = 1; tc < T; ++tc) out[k++] = state.q2[tc];
    }
  }

  std::vector<std::string> forecast_names() const {
    std::vector<std::string> names = {"alpha1", "alpha2", "kappa1", "kappa2",
                                      "beta",   "psi",    "tau_delta"};
    if (mixture) {
      names.emplace_back("q1_T");
      names.emplace_back("q2_T");
      names.emplace_back("omega_T");
    }
    auto per_area = [&](const std::string& base) {
      for (int i = 0; i < N; ++i) names.push_back(base + "[" + std::to_string(i) + "]");
    };
    per_area("eta");
    per_area("delta_T");
    per_area("rho_T");
    per_area("lambda_T");
    if (mixture) {
      per_area("exp_rho");
      per_area("sta_rho");
      per_area("exp_lam");
      per_area("sta_lam");
    }
    return names;
  }

  void forecast_row(Eigen::RowVectorXd& out) const {
    out.resize(static_cast<long>(forecast_names().size()));
    int k = 0;
    out[k++] = state.alpha1;
    out[k++] = state.alpha2;
    out[k++] = state.kappa1;
    out[k++] = state.kappa2;
    out[k++] = state.beta;
    out[k++] = state.psi;
    out[k++] = state.tau_delta;
    if (mixture) {
      out[k++] = state.q1[T - 1];
      out[k++] = state.q2[T - 1];
      out[k++] = state.omega[T - 1];
    }
    for (int i = 0; i < N; ++i) out[k++] = eta[i];
    for (int i = 0; i < N; ++i) out[k++] = state.delta(i, T - 1);
    for (int i = 0; i < N; ++i) out[k++] = rho(i, T - 1);
    for (int i = 0; i < N; ++i) out[k++] = lam(i, T - 1);
    if (mixture) {
      for (int i = 0; i < N; ++i) out[k++] = exp_r[i];
      for (int i = 0; i < N; ++i) out[k++] = sta_r[i];
      for (int i = 0; i < N; ++i) out[k++] = exp_l[i];
      for (int i = 0; i < N; ++i) out[k++] = sta_l[i];
    }
  }

  void assert_finite_retention() {
    try {
      const double lp = full_lp();
      if (std::isfinite(lp)) return;
    } catch (const std::exception& e) {
      throw SamplerError(std::string("retained draw has non-finite log posterior: ") + e.what());
    }
    throw SamplerError("retained draw has non-finite log posterior");
  }
};

ChainRunner::ChainRunner(const PanelData& data, const ModelVariant& variant,
                         const SpatialWeights& weights, const PriorConfig& prior,
                         const SamplerConfig& config, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(data, variant, weights, prior, config, seed)) {}

ChainRunner::~ChainRunner() = default;

bool ChainRunner::update_block(const std::string& block_id, double step_scale) {
  auto it = impl_->block_index.find(block_id);
  if (it == impl_->block_index.end()) {
    throw std::invalid_argument("update_block: unknown block '" + block_id + "'");
  }
  Block& b = impl_->blocks[it->second];
  const bool acc = impl_->do_update(b, step_scale);
  b.proposals += 1;
  if (acc) b.accepts += 1;
  return acc;
}

void ChainRunner::sweep() { impl_->sweep_once(); }

const LatentState& ChainRunner::state() const { return impl_->state; }

LatentState& ChainRunner::mutable_state() { return impl_->state; }

void ChainRunner::refresh_caches() {
  impl_->refresh_all();
  if (impl_->check) impl_->lp_full = impl_->full_lp();
}

double ChainRunner::cached_log_likelihood() const { return impl_->cached_ll_total(); }

std::vector<std::string> ChainRunner::block_names() const {
  std::vector<std::string> names;
  names.reserve(impl_->blocks.size());
  for (const Block& b : impl_->blocks) names.push_back(b.name);
  return names;
}

std::vector<BlockLedger> ChainRunner::ledgers() const {
  std::vector<BlockLedger> out;
  out.reserve(impl_->blocks.size());
  for (const Block& b : impl_->blocks) {
    out.push_back({b.name, b.family, b.proposals, b.accepts, std::exp(b.log_scale)});
  }
  return out;
}

Rng& ChainRunner::rng() { return impl_->rng; }

// ---------------------------------------------------------------------------
// Multi-chain orchestration
// ---------------------------------------------------------------------------

namespace {

struct ChainResult {
  Eigen::MatrixXd draws, pointwise, forecast;
  std::vector<std::uint32_t> yrep;
  Eigen::ArrayXXd acc_rho, acc_lam, acc_r, acc_l;
  Eigen::ArrayXXd d_mean, d_m2;
  long n_ret = 0;
  std::vector<BlockLedger> ledger;
  std::vector<std::string> names, forecast_cols;
};

int resolve_workers(const SamplerConfig& config) {
  int workers = config.n_threads > 0 ? config.n_threads
                                     : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (const char* env = std::getenv("EPIMIX_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) workers = std::min<long>(workers, cap);
  }
  return std::min(workers, config.n_chains);
}

}  // namespace

PosteriorSamples run(const PanelData& data, const ModelVariant& variant,
                     const SpatialWeights& weights, const PriorConfig& prior,
                     const SamplerConfig& config) {
  config.validate();
  const int n_ret =
      static_cast<int>((config.n_iterations - config.n_burnin - 1) / config.thin) + 1;
  const int m = config.n_chains;

  auto run_chain = [&](int chain_idx) {
    ChainRunner runner(data, variant, weights, prior, config,
                       config.seed + static_cast<std::uint64_t>(chain_idx));
    auto& I = *runner.impl_;
    const int n = I.N, t = I.T;
    const int n_cells = n * (t - 1);

    ChainResult res;
    res.n_ret = n_ret;
    res.names = I.param_names();
    res.forecast_cols = I.forecast_names();
    res.draws.resize(n_ret, static_cast<long>(res.names.size()));
    res.pointwise.resize(n_ret, n_cells);
    res.forecast.resize(n_ret, static_cast<long>(res.forecast_cols.size()));
    res.yrep.resize(static_cast<std::size_t>(n_ret) * n_cells);
    res.acc_rho = res.acc_lam = res.acc_r = res.acc_l = Eigen::ArrayXXd::Zero(n, t);
    res.d_mean = res.d_m2 = Eigen::ArrayXXd::Zero(n, t);

    Eigen::RowVectorXd buf;
    long r = 0;
    for (long it = 0; it < config.n_iterations; ++it) {
      I.adapting = it < config.n_burnin;
      runner.sweep();
      if (it < config.n_burnin || (it - config.n_burnin) % config.thin != 0) continue;

      I.assert_finite_retention();
      I.flatten(buf);
      res.draws.row(r) = buf;
      I.forecast_row(buf);
      res.forecast.row(r) = buf;
      for (int tc = 1; tc < t; ++tc) {
        for (int i = 0; i < n; ++i) {
          const long cell = static_cast<long>(tc - 1) * n + i;
          res.pointwise(r, cell) = I.ll(i, tc);
          const std::int64_t yr = I.rng.neg_binomial(I.mu(i, tc), I.state.psi);
          res.yrep[static_cast<std::size_t>(r) * n_cells + cell] = static_cast<std::uint32_t>(
              std::min<std::int64_t>(yr, std::numeric_limits<std::uint32_t>::max()));
        }
      }
      res.acc_rho += I.rho;
      res.acc_lam += I.lam;
      res.acc_r += (I.rho > 1.0).cast<double>();
      res.acc_l += (I.lam > 1.0).cast<double>();
      // Welford over retained draws, elementwise on delta.
      const double cnt = static_cast<double>(r + 1);
      const Eigen::ArrayXXd d1 = I.state.delta - res.d_mean;
      res.d_mean += d1 / cnt;
      res.d_m2 += d1 * (I.state.delta - res.d_mean);
      ++r;
    }
    res.ledger = runner.ledgers();
    return res;
  };

  std::vector<ChainResult> results(m);
  std::vector<std::exception_ptr> errors(m);
  const int workers = resolve_workers(config);
  if (workers <= 1) {
    for (int c = 0; c < m; ++c) results[c] = run_chain(c);
  } else {
    std::atomic<int> next{0};
    auto body = [&] {
      for (int c = next.fetch_add(1); c < m; c = next.fetch_add(1)) {
        try {
          results[c] = run_chain(c);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  const int n = data.n_areas(), t = data.n_periods();
  PosteriorSamples out;
  out.variant = variant;
  out.n_retained_per_chain = n_ret;
  out.names = std::move(results[0].names);
  out.forecast_cols = std::move(results[0].forecast_cols);

  out.chain_draws.reserve(m);
  out.rho_mean = out.lambda_mean = Eigen::ArrayXXd::Zero(n, t);
  out.p_rho_gt1 = out.p_lambda_gt1 = Eigen::ArrayXXd::Zero(n, t);
  const double total = static_cast<double>(m) * n_ret;
  for (int c = 0; c < m; ++c) {
    ChainResult& r = results[c];
    out.chain_draws.push_back(std::move(r.draws));
    out.chain_pointwise.push_back(std::move(r.pointwise));
    out.chain_yrep.push_back(std::move(r.yrep));
    out.chain_forecast.push_back(std::move(r.forecast));
    out.ledgers.push_back(std::move(r.ledger));
    out.rho_mean += r.acc_rho / total;
    out.lambda_mean += r.acc_lam / total;
    out.p_rho_gt1 += r.acc_r / total;
    out.p_lambda_gt1 += r.acc_l / total;
  }
  // Period 1 is conditioned on, not modelled; blank its column.
  out.rho_mean.col(0).setZero();
  out.lambda_mean.col(0).setZero();
  out.p_rho_gt1.col(0).setZero();
  out.p_lambda_gt1.col(0).setZero();
  out.rx_mean = out.p_rho_gt1.colwise().sum().matrix().transpose();
  out.lx_mean = out.p_lambda_gt1.colwise().sum().matrix().transpose();

  out.delta_mean = Eigen::ArrayXXd::Zero(n, t);
  for (const auto& r : results) out.delta_mean += r.d_mean / static_cast<double>(m);
  Eigen::ArrayXXd m2_tot = Eigen::ArrayXXd::Zero(n, t);
  for (const auto& r : results) {
    m2_tot += r.d_m2 + static_cast<double>(n_ret) * (r.d_mean - out.delta_mean).square();
  }
  out.delta_sd = (m2_tot / std::max(1.0, total - 1.0)).sqrt();
  out.delta_psrf = Eigen::ArrayXXd::Constant(n, t, kNan);
  if (m >= 2 && n_ret >= 2) {
    std::vector<double> means(m), vars(m);
    for (int i = 0; i < n; ++i) {
      for (int tc = 0; tc < t; ++tc) {
        for (int c = 0; c < m; ++c) {
          means[c] = results[c].d_mean(i, tc);
          vars[c] = results[c].d_m2(i, tc) / static_cast<double>(n_ret - 1);
        }
        out.delta_psrf(i, tc) = psrf_from_moments(means, vars, n_ret);
      }
    }
  }
  return out;
}

}  // namespace epimix
