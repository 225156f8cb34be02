#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epimix/model.hpp"
#include "epimix/priors.hpp"
#include "epimix/rng.hpp"
#include "epimix/spatial_graph.hpp"

namespace epimix {

// Raised when a chain cannot start or produces an invalid state; mapped to
// its own exit code by the command layer.
struct SamplerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SamplerConfig {
  int n_chains = 2;
  int n_iterations = 20000;
  int n_burnin = 10000;
  int thin = 1;
  std::uint64_t seed = 1;
  int adapt_window = 50;
  double target_accept_scalar = 0.44;
  double target_accept_block = 0.234;
  double init_jitter_sd = 0.1;
  int max_init_retries = 20;
  int n_threads = 0;  // 0: one worker per chain, capped by hardware
  // Restrict updates to these block families or exact block names (testing).
  std::optional<std::vector<std::string>> only_blocks;
  // Re-derive every accepted move's log-posterior delta from the reference
  // implementation and re-verify all caches each sweep (slow; testing).
  bool exact_check = false;

  void validate() const;
};

struct BlockLedger {
  std::string name;
  std::string family;
  long proposals = 0;
  long accepts = 0;
  double scale = 0.0;

  double rate() const { return proposals > 0 ? static_cast<double>(accepts) / proposals : 0.0; }
};

// Retained draws and everything derived from them during the run. Parameter
// draws cover all sampled quantities except delta, which is tracked by
// running moments to keep memory linear in the panel size.
struct PosteriorSamples {
  std::vector<std::string> names;                  // flattened parameter names
  std::vector<Eigen::MatrixXd> chain_draws;        // per chain: retained x P
  std::vector<Eigen::MatrixXd> chain_pointwise;    // per chain: retained x N*(T-1)
  std::vector<std::vector<std::uint32_t>> chain_yrep;  // per chain: retained*N*(T-1)
  std::vector<Eigen::MatrixXd> chain_forecast;     // per chain: retained x F
  std::vector<std::string> forecast_cols;

  // Posterior means of the link coefficients and exceedance quantities,
  // pooled over chains. Column 0 (period 1) is outside the modelled range.
  Eigen::ArrayXXd rho_mean, lambda_mean;
  Eigen::ArrayXXd p_rho_gt1, p_lambda_gt1;
  Eigen::VectorXd rx_mean, lx_mean;

  Eigen::ArrayXXd delta_mean, delta_sd, delta_psrf;

  std::vector<std::vector<BlockLedger>> ledgers;   // per chain
  int n_retained_per_chain = 0;
  ModelVariant variant;

  int n_params() const { return static_cast<int>(names.size()); }
  int param_index(const std::string& name) const;  // -1 if absent
  Eigen::VectorXd pooled(int param) const;         // chains concatenated in order
  Eigen::VectorXd pooled(const std::string& name) const;
};

// Adaptive Metropolis-within-Gibbs over the full latent state. Deterministic
// given (data, variant, weights, priors, config).
PosteriorSamples run(const PanelData& data, const ModelVariant& variant,
                     const SpatialWeights& weights, const PriorConfig& prior,
                     const SamplerConfig& config);

// Robbins-Monro step on a proposal scale: nudges log(scale) toward the
// target acceptance rate, with gain decaying in the window count (>= 1).
double adapt_scale(double scale, double accept_rate, double target, int window_index);

// Brooks-Gelman potential scale reduction factor from >= 2 equal-length
// scalar traces. Identical chains give sqrt((n-1)/n), just below 1.
double psrf(const std::vector<Eigen::VectorXd>& chains);
// Same statistic from per-chain first and second moments (used for delta).
double psrf_from_moments(std::span<const double> means, std::span<const double> vars, long n);

struct Summary {
  double mean = 0.0, sd = 0.0, q025 = 0.0, q50 = 0.0, q975 = 0.0;
};

// Mean, sd and {2.5, 50, 97.5}% quantiles (linear interpolation of order
// statistics) of a pooled trace.
Summary summarize(const Eigen::VectorXd& draws);
double quantile(const Eigen::VectorXd& draws, double q);

// Single-chain engine. Exposed so tests can drive individual block updates;
// production use goes through run().
class ChainRunner {
 public:
  ChainRunner(const PanelData& data, const ModelVariant& variant, const SpatialWeights& weights,
              const PriorConfig& prior, const SamplerConfig& config, std::uint64_t seed);
  ~ChainRunner();
  ChainRunner(const ChainRunner&) = delete;
  ChainRunner& operator=(const ChainRunner&) = delete;

  // One Metropolis-Hastings proposal on the named block. A rejected proposal
  // leaves the state bit-identical. Throws on unknown block names.
  bool update_block(const std::string& block_id, double step_scale);

  void sweep();  // one full cycle over all enabled blocks at current scales

  const LatentState& state() const;
  LatentState& mutable_state();   // testing; caller must refresh_caches()
  void refresh_caches();
  double cached_log_likelihood() const;
  std::vector<std::string> block_names() const;
  std::vector<BlockLedger> ledgers() const;
  Rng& rng();

 private:
  friend PosteriorSamples run(const PanelData&, const ModelVariant&, const SpatialWeights&,
                              const PriorConfig&, const SamplerConfig&);
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace epimix
