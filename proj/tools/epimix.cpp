#include <functional>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "CLI11.hpp"
#include "epimix/commands.hpp"
#include "epimix/io.hpp"

namespace {

// Every option doubles as a config-file key: values from --config apply to
// options absent from the command line, so a manifest replays a run and
// explicit flags override it.
struct Bound {
  CLI::Option* opt;
  std::function<void(const std::string&)> apply;
};
using Registry = std::map<std::string, Bound>;

template <typename T>
void bind_option(CLI::App* cmd, Registry& reg, const std::string& key, T& field,
          const std::string& desc) {
  CLI::Option* opt = cmd->add_option("--" + key, field, desc);
  reg[key] = {opt, [&field, key](const std::string& v) {
                if constexpr (std::is_same_v<T, std::string>) {
                  field = v;
                } else {
                  T parsed{};
                  if (!CLI::detail::lexical_cast(v, parsed)) {
                    throw std::runtime_error("config key '" + key + "': cannot parse '" + v + "'");
                  }
                  field = parsed;
                }
              }};
}

void bind_flag(CLI::App* cmd, Registry& reg, const std::string& key, bool& field,
               const std::string& desc) {
  CLI::Option* opt = cmd->add_flag("--" + key, field, desc);
  reg[key] = {opt, [&field, key](const std::string& v) {
                if (v == "true" || v == "1") {
                  field = true;
                } else if (v == "false" || v == "0") {
                  field = false;
                } else {
                  throw std::runtime_error("config key '" + key + "': expected true/false");
                }
              }};
}

void merge_config(const Registry& reg, const std::string& config_path) {
  if (config_path.empty()) return;
  const auto kv = epimix::read_kv_file(config_path);
  for (const auto& [key, bound] : reg) {
    const auto it = kv.find(key);
    if (it != kv.end() && bound.opt->count() == 0) bound.apply(it->second);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"epimix: spatio-temporal count models with endemic/epidemic link mixtures"};
  app.require_subcommand(1);

  epimix::SimulateOptions sim;
  std::string sim_config;
  Registry sim_reg;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "generate a synthetic panel with known truth");
  sim_cmd->add_option("--config", sim_config, "key=value file; explicit flags override it");
  bind_option(sim_cmd, sim_reg, "out", sim.out, "output directory");
  bind_option(sim_cmd, sim_reg, "variant", sim.scenario.variant, "m1|m2|m3|m4");
  bind_option(sim_cmd, sim_reg, "range", sim.scenario.range, "unit|signed stationary range");
  bind_option(sim_cmd, sim_reg, "rows", sim.scenario.rows, "torus rows");
  bind_option(sim_cmd, sim_reg, "cols", sim.scenario.cols, "torus columns");
  bind_option(sim_cmd, sim_reg, "periods", sim.scenario.n_periods, "panel length T (holdout is T+1)");
  bind_option(sim_cmd, sim_reg, "alpha1", sim.scenario.alpha1, "log-link autoregressive intercept");
  bind_option(sim_cmd, sim_reg, "alpha2", sim.scenario.alpha2, "log-link spatial-lag intercept");
  bind_option(sim_cmd, sim_reg, "kappa1", sim.scenario.kappa1, "logit-link autoregressive intercept");
  bind_option(sim_cmd, sim_reg, "kappa2", sim.scenario.kappa2, "logit-link spatial-lag intercept");
  bind_option(sim_cmd, sim_reg, "beta", sim.scenario.beta, "covariate coefficient");
  bind_option(sim_cmd, sim_reg, "psi", sim.scenario.psi, "negative binomial dispersion");
  bind_option(sim_cmd, sim_reg, "car-tau", sim.scenario.car_tau, "ICAR precision of the truth fields");
  bind_option(sim_cmd, sim_reg, "delta-sd", sim.scenario.delta_sd, "random-walk innovation sd");
  bind_option(sim_cmd, sim_reg, "omega-base", sim.scenario.omega_base, "mixture weight outside windows");
  bind_option(sim_cmd, sim_reg, "omega-peak", sim.scenario.omega_peak, "mixture weight inside the window");
  bind_option(sim_cmd, sim_reg, "window-lo", sim.scenario.window_lo, "first epidemic period (inclusive)");
  bind_option(sim_cmd, sim_reg, "window-hi", sim.scenario.window_hi, "last epidemic period (inclusive)");
  bind_option(sim_cmd, sim_reg, "omega-holdout", sim.scenario.omega_holdout,
       "mixture weight at T+1; negative follows the schedule");
  bind_option(sim_cmd, sim_reg, "y-init", sim.scenario.y_init, "count at period 1 in every area");
  bind_option(sim_cmd, sim_reg, "seed", sim.scenario.seed, "generation seed");

  epimix::FitOptions fit;
  std::string fit_config;
  Registry fit_reg;
  CLI::App* fit_cmd = app.add_subcommand("fit", "run the sampler and write run artifacts");
  fit_cmd->add_option("--config", fit_config, "key=value file; explicit flags override it");
  bind_option(fit_cmd, fit_reg, "counts", fit.counts, "counts CSV: area_id,period,count");
  bind_option(fit_cmd, fit_reg, "adjacency", fit.adjacency, "edge list file, zero-based indices");
  bind_option(fit_cmd, fit_reg, "covariate", fit.covariate, "covariate CSV: area_id,population");
  bind_option(fit_cmd, fit_reg, "out", fit.out, "run directory");
  bind_option(fit_cmd, fit_reg, "variant", fit.variant, "m1|m2|m3|m4");
  bind_option(fit_cmd, fit_reg, "range", fit.range, "unit|signed stationary range");
  bind_option(fit_cmd, fit_reg, "chains", fit.chains, "number of chains");
  bind_option(fit_cmd, fit_reg, "iterations", fit.iterations, "iterations per chain");
  bind_option(fit_cmd, fit_reg, "burnin", fit.burnin, "burn-in iterations per chain");
  bind_option(fit_cmd, fit_reg, "thin", fit.thin, "retention stride");
  bind_option(fit_cmd, fit_reg, "adapt-window", fit.adapt_window, "proposals per adaptation window");
  bind_option(fit_cmd, fit_reg, "seed", fit.seed, "sampler seed; chain c uses seed+c");
  bind_flag(fit_cmd, fit_reg, "holdout", fit.holdout, "reserve the final period for forecasting");
  bind_option(fit_cmd, fit_reg, "threads", fit.threads, "chain workers; 0 = one per chain");
  bind_flag(fit_cmd, fit_reg, "trace", fit.trace, "also write the full retained trace");

  epimix::ForecastOptions fc;
  std::string fc_config;
  Registry fc_reg;
  CLI::App* fc_cmd = app.add_subcommand("forecast", "one-step-ahead predictions from a fitted run");
  fc_cmd->add_option("--config", fc_config, "key=value file; explicit flags override it");
  bind_option(fc_cmd, fc_reg, "run", fc.run, "fitted run directory");
  bind_option(fc_cmd, fc_reg, "out", fc.out, "output directory (defaults to the run)");
  bind_option(fc_cmd, fc_reg, "seed", fc.seed, "forecast seed");
  bind_option(fc_cmd, fc_reg, "omega-mode", fc.omega_mode,
       "carry omega_T forward, or draw omega from Beta(q1_T, q2_T)");

  std::string score_run;
  CLI::App* score_cmd = app.add_subcommand("score", "print the scores of a fitted run");
  score_cmd->add_option("run", score_run, "run directory")->required();

  epimix::CompareOptions cmp;
  CLI::App* cmp_cmd = app.add_subcommand("compare", "rank runs on the same data by WAIC");
  cmp_cmd->add_option("runs", cmp.runs, "run directories")->required()->expected(-1);
  cmp_cmd->add_option("--out", cmp.out, "also write the table to this CSV");

  std::string diag_run;
  CLI::App* diag_cmd = app.add_subcommand("diag", "summarize convergence diagnostics of a run");
  diag_cmd->add_option("run", diag_run, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? epimix::kExitOk : epimix::kExitIngest;
  }

  try {
    if (*sim_cmd) {
      merge_config(sim_reg, sim_config);
      return epimix::cmd_simulate(sim, std::cout, std::cerr);
    }
    if (*fit_cmd) {
      merge_config(fit_reg, fit_config);
      return epimix::cmd_fit(fit, std::cout, std::cerr);
    }
    if (*fc_cmd) {
      merge_config(fc_reg, fc_config);
      return epimix::cmd_forecast(fc, std::cout, std::cerr);
    }
    if (*score_cmd) return epimix::cmd_score(score_run, std::cout, std::cerr);
    if (*cmp_cmd) return epimix::cmd_compare(cmp, std::cout, std::cerr);
    if (*diag_cmd) return epimix::cmd_diag(diag_run, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "epimix: " << e.what() << "\n";
    return epimix::kExitIngest;
  }
  return epimix::kExitIngest;
}
