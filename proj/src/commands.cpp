#include "epimix/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <vector>

#include "epimix/forecast.hpp"
#include "epimix/io.hpp"
#include "epimix/model.hpp"
#include "epimix/priors.hpp"
#include "epimix/sampler.hpp"
#include "epimix/scoring.hpp"

namespace epimix {

namespace fs = std::filesystem;

namespace {

using KvList = std::vector<std::pair<std::string, std::string>>;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string config_hash(const KvList& entries) {
  std::uint64_t h = fnv1a("config.v1");
  for (const auto& [k, v] : entries) h = fnv1a(k + "=" + v + "\n", h);
  return hex64(h);
}

void ensure_dir(const std::string& path) {
  if (path.empty()) throw IngestError("output directory not set");
  fs::create_directories(path);
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write file: " + path);
  return f;
}

const std::string& require_key(const std::map<std::string, std::string>& kv,
                               const std::string& key, const std::string& path) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw IngestError(path + ": missing key '" + key + "'");
  return it->second;
}

bool parse_bool(const std::string& v, const std::string& what) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw IngestError(what + ": expected true/false, got '" + v + "'");
}

KvList fit_entries(const FitOptions& o) {
  return {{"counts", o.counts},
          {"adjacency", o.adjacency},
          {"covariate", o.covariate},
          {"out", o.out},
          {"variant", o.variant},
          {"range", o.range},
          {"chains", std::to_string(o.chains)},
          {"iterations", std::to_string(o.iterations)},
          {"burnin", std::to_string(o.burnin)},
          {"thin", std::to_string(o.thin)},
          {"adapt-window", std::to_string(o.adapt_window)},
          {"seed", std::to_string(o.seed)},
          {"holdout", o.holdout ? "true" : "false"},
          {"threads", std::to_string(o.threads)},
          {"trace", o.trace ? "true" : "false"}};
}

KvList simulate_entries(const SimulateOptions& o) {
  const ScenarioConfig& s = o.scenario;
  return {{"out", o.out},
          {"variant", s.variant},
          {"range", s.range},
          {"rows", std::to_string(s.rows)},
          {"cols", std::to_string(s.cols)},
          {"periods", std::to_string(s.n_periods)},
          {"alpha1", format_double(s.alpha1)},
          {"alpha2", format_double(s.alpha2)},
          {"kappa1", format_double(s.kappa1)},
          {"kappa2", format_double(s.kappa2)},
          {"beta", format_double(s.beta)},
          {"psi", format_double(s.psi)},
          {"car-tau", format_double(s.car_tau)},
          {"delta-sd", format_double(s.delta_sd)},
          {"omega-base", format_double(s.omega_base)},
          {"omega-peak", format_double(s.omega_peak)},
          {"window-lo", std::to_string(s.window_lo)},
          {"window-hi", std::to_string(s.window_hi)},
          {"omega-holdout", format_double(s.omega_holdout)},
          {"y-init", format_double(s.y_init)},
          {"seed", std::to_string(s.seed)}};
}

KvList forecast_entries(const ForecastOptions& o) {
  return {{"run", o.run},
          {"out", o.out},
          {"seed", std::to_string(o.seed)},
          {"omega-mode", o.omega_mode}};
}

void write_manifest(const std::string& path, const std::string& section, KvList entries,
                    std::uint64_t data_hash_value) {
  entries.emplace_back("config-hash", config_hash(entries));
  entries.emplace_back("data-hash", hex64(data_hash_value));
  write_kv_file(path, section, entries);
}

struct ScoreRow {
  std::map<std::string, double> metrics;

  double get(const std::string& name) const {
    const auto it = metrics.find(name);
    return it == metrics.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
  }
};

ScoreRow read_score_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  if (table.header != std::vector<std::string>{"metric", "value"}) {
    throw IngestError(path + ": expected header 'metric,value'");
  }
  ScoreRow row;
  for (const auto& r : table.rows) {
    if (r.size() != 2) throw IngestError(path + ": malformed row");
    row.metrics[r[0]] = std::strtod(r[1].c_str(), nullptr);
  }
  return row;
}

}  // namespace

int cmd_simulate(const SimulateOptions& options, std::ostream& out, std::ostream& err) {
  try {
    const Scenario scenario = build_scenario(options.scenario);
    const SimulatedPanel sim = simulate_panel(scenario);
    const PanelData& data = sim.data;
    const int n = data.n_areas();
    const int t = data.n_periods();
    ensure_dir(options.out);

    {
      std::ofstream f = open_out(join(options.out, "counts.csv"));
      f << "area_id,period,count\n";
      for (int i = 0; i < n; ++i) {
        for (int tc = 0; tc < t; ++tc) {
          f << data.area_ids[i] << "," << tc + 1 << ","
            << static_cast<long long>(data.y(i, tc)) << "\n";
        }
        f << data.area_ids[i] << "," << t + 1 << ","
          << static_cast<long long>((*data.holdout)[i]) << "\n";
      }
    }
    {
      std::ofstream f = open_out(join(options.out, "covariate.csv"));
      f << "area_id,population\n";
      double max_abs = 0.0;
      for (int i = 0; i < n; ++i) max_abs = std::max(max_abs, std::abs(data.x[i]));
      const double offset = std::max(2.0, std::ceil(max_abs) + 1.0);
      for (int i = 0; i < n; ++i) {
        f << data.area_ids[i] << "," << format_double((data.x[i] + offset) * 1e5) << "\n";
      }
    }
    {
      std::ofstream f = open_out(join(options.out, "adjacency.txt"));
      f << "# area_index area_index, zero-based into the lexicographic id order\n";
      for (const auto& [a, b] : scenario.graph.edges()) f << a << " " << b << "\n";
    }
    {
      std::ofstream f = open_out(join(options.out, "truth.csv"));
      f << "parameter,value\n";
      const LatentState& s = sim.truth;
      f << "alpha1," << format_double(s.alpha1) << "\n";
      f << "alpha2," << format_double(s.alpha2) << "\n";
      f << "kappa1," << format_double(s.kappa1) << "\n";
      f << "kappa2," << format_double(s.kappa2) << "\n";
      f << "beta," << format_double(s.beta) << "\n";
      f << "psi," << format_double(s.psi) << "\n";
      f << "tau_delta," << format_double(s.tau_delta) << "\n";
      for (CarField field : active_car_fields(scenario.variant)) {
        f << "tau_" << car_field_name(field) << "," << format_double(s.field_tau(field)) << "\n";
      }
      for (CarField field : active_car_fields(scenario.variant)) {
        for (int i = 0; i < n; ++i) {
          f << car_field_name(field) << "[" << i << "],"
            << format_double(s.field(field)[i]) << "\n";
        }
      }
      for (int tc = 1; tc < t; ++tc) {
        f << "omega[" << tc + 1 << "]," << format_double(s.omega[tc]) << "\n";
      }
      f << "omega_holdout," << format_double(scenario.omega_holdout) << "\n";
    }
    write_manifest(join(options.out, "manifest.ini"), "simulate", simulate_entries(options),
                   data_hash(data));
    out << "simulated " << n << " areas x " << t << " periods (+1 holdout) -> " << options.out
        << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "simulate: " << e.what() << "\n";
    return kExitIngest;
  }
}

int cmd_fit(const FitOptions& options, std::ostream& out, std::ostream& err) {
  ModelVariant variant;
  IngestResult in;
  SamplerConfig config;
  try {
    if (options.counts.empty() || options.adjacency.empty() || options.covariate.empty()) {
      throw IngestError("fit needs --counts, --adjacency and --covariate");
    }
    variant = ModelVariant::parse(options.variant, options.range);
    in = ingest(options.counts, options.adjacency, options.covariate, options.holdout);
    config.n_chains = options.chains;
    config.n_iterations = options.iterations;
    config.n_burnin = options.burnin;
    config.thin = options.thin;
    config.seed = options.seed;
    config.adapt_window = options.adapt_window;
    config.n_threads = options.threads;
    config.validate();
    ensure_dir(options.out);
  } catch (const std::exception& e) {
    err << "fit: " << e.what() << "\n";
    return kExitIngest;
  }

  const SpatialWeights weights = row_standardize(in.graph);
  PosteriorSamples samples;
  try {
    samples = run(in.data, variant, weights, PriorConfig{}, config);
  } catch (const std::exception& e) {
    err << "fit: sampler failed: " << e.what() << "\n";
    return kExitSampler;
  }

  const PanelData& data = in.data;
  const int n = data.n_areas();
  const int t = data.n_periods();
  const int n_ret = samples.n_retained_per_chain;
  double max_psrf = 0.0;

  {
    std::ofstream f = open_out(join(options.out, "area_index.csv"));
    f << "index,area_id\n";
    for (int i = 0; i < n; ++i) f << i << "," << data.area_ids[i] << "\n";
  }
  {
    std::ofstream f = open_out(join(options.out, "posterior_summary.csv"));
    f << "parameter,mean,sd,q2.5,q50,q97.5\n";
    for (int p = 0; p < samples.n_params(); ++p) {
      const Summary s = summarize(samples.pooled(p));
      f << samples.names[p] << "," << format_double(s.mean) << "," << format_double(s.sd) << ","
        << format_double(s.q025) << "," << format_double(s.q50) << "," << format_double(s.q975)
        << "\n";
    }
  }
  {
    std::ofstream f = open_out(join(options.out, "diagnostics.csv"));
    f << "kind,name,chain,value\n";
    if (options.chains >= 2 && n_ret >= 2) {
      std::vector<Eigen::VectorXd> per_chain(options.chains);
      for (int p = 0; p < samples.n_params(); ++p) {
        for (int c = 0; c < options.chains; ++c) per_chain[c] = samples.chain_draws[c].col(p);
        const double r = psrf(per_chain);
        if (std::isfinite(r)) max_psrf = std::max(max_psrf, r);
        f << "psrf," << samples.names[p] << ",," << format_double(r) << "\n";
      }
      for (int i = 0; i < n; ++i) {
        for (int tc = 0; tc < t; ++tc) {
          const double r = samples.delta_psrf(i, tc);
          if (std::isfinite(r)) max_psrf = std::max(max_psrf, r);
          f << "psrf,delta[" << i << "][" << tc + 1 << "],," << format_double(r) << "\n";
        }
      }
    }
    for (std::size_t c = 0; c < samples.ledgers.size(); ++c) {
      for (const BlockLedger& b : samples.ledgers[c]) {
        f << "accept_rate," << b.name << "," << c << "," << format_double(b.rate()) << "\n";
      }
    }
    for (std::size_t c = 0; c < samples.ledgers.size(); ++c) {
      for (const BlockLedger& b : samples.ledgers[c]) {
        f << "scale," << b.name << "," << c << "," << format_double(b.scale) << "\n";
      }
    }
  }

  const ScoreReport score = in_sample_scores(samples, data);
  {
    std::ofstream f = open_out(join(options.out, "score.csv"));
    f << "metric,value\n";
    f << "waic," << format_double(score.waic) << "\n";
    f << "p_waic," << format_double(score.p_waic) << "\n";
    f << "lppd," << format_double(score.lppd) << "\n";
    f << "rps_total," << format_double(score.rps_total) << "\n";
    f << "rps_mean," << format_double(score.rps_mean) << "\n";
    f << "dss_total," << format_double(score.dss_total) << "\n";
    f << "dss_mean," << format_double(score.dss_mean) << "\n";
    f << "coverage_in_sample," << format_double(score.coverage_hits) << "\n";
    f << "n_obs," << score.n_obs << "\n";
  }
  {
    std::ofstream f = open_out(join(options.out, "rho_lambda.csv"));
    f << "area_id,period,rho_mean,lambda_mean,p_rho_gt1,p_lambda_gt1\n";
    for (int i = 0; i < n; ++i) {
      for (int tc = 1; tc < t; ++tc) {
        f << data.area_ids[i] << "," << tc + 1 << "," << format_double(samples.rho_mean(i, tc))
          << "," << format_double(samples.lambda_mean(i, tc)) << ","
          << format_double(samples.p_rho_gt1(i, tc)) << ","
          << format_double(samples.p_lambda_gt1(i, tc)) << "\n";
      }
    }
  }
  {
    std::ofstream f = open_out(join(options.out, "Rx_Lx.csv"));
    f << "period,Rx_mean,Lx_mean\n";
    for (int tc = 1; tc < t; ++tc) {
      f << tc + 1 << "," << format_double(samples.rx_mean[tc]) << ","
        << format_double(samples.lx_mean[tc]) << "\n";
    }
  }
  if (variant.is_mixture()) {
    std::ofstream f = open_out(join(options.out, "omega.csv"));
    f << "period,mean,sd,q2.5,q50,q97.5\n";
    for (int tc = 1; tc < t; ++tc) {
      const Summary s = summarize(samples.pooled("omega[" + std::to_string(tc + 1) + "]"));
      f << tc + 1 << "," << format_double(s.mean) << "," << format_double(s.sd) << ","
        << format_double(s.q025) << "," << format_double(s.q50) << "," << format_double(s.q975)
        << "\n";
    }
  }
  {
    long rows = 0;
    for (const auto& m : samples.chain_forecast) rows += m.rows();
    Eigen::MatrixXd merged(rows, static_cast<long>(samples.forecast_cols.size()));
    long at = 0;
    for (const auto& m : samples.chain_forecast) {
      merged.middleRows(at, m.rows()) = m;
      at += m.rows();
    }
    write_matrix_csv(join(options.out, "forecast_state.csv"), samples.forecast_cols, merged);
  }
  if (options.trace) {
    std::ofstream f = open_out(join(options.out, "trace.csv"));
    f << "chain,iteration,parameter,value\n";
    for (std::size_t c = 0; c < samples.chain_draws.size(); ++c) {
      const auto& draws = samples.chain_draws[c];
      for (long r = 0; r < draws.rows(); ++r) {
        const long iter = options.burnin + 1 + r * options.thin;
        for (int p = 0; p < samples.n_params(); ++p) {
          f << c << "," << iter << "," << samples.names[p] << ","
            << format_double(draws(r, p)) << "\n";
        }
      }
    }
  }
  write_manifest(join(options.out, "manifest.ini"), "fit", fit_entries(options),
                 data_hash(data));

  out << "fit " << variant.name() << ": " << n << " areas x " << t << " periods, "
      << options.chains << " chains x " << options.iterations << " iterations, waic "
      << format_double(score.waic) << ", max psrf " << format_double(max_psrf) << " -> "
      << options.out << "\n";
  if (options.chains >= 2 && max_psrf > 1.1) {
    err << "fit: convergence warning: max psrf " << format_double(max_psrf) << " > 1.1\n";
    return kExitConvergence;
  }
  return kExitOk;
}

int cmd_forecast(const ForecastOptions& options, std::ostream& out, std::ostream& err) {
  try {
    const std::string manifest_path = join(options.run, "manifest.ini");
    const std::string state_path = join(options.run, "forecast_state.csv");
    if (!fs::exists(manifest_path) || !fs::exists(state_path)) {
      throw IngestError("missing fitted run in '" + options.run + "'");
    }
    const auto kv = read_kv_file(manifest_path);
    const IngestResult in = ingest(require_key(kv, "counts", manifest_path),
                                   require_key(kv, "adjacency", manifest_path),
                                   require_key(kv, "covariate", manifest_path),
                                   parse_bool(require_key(kv, "holdout", manifest_path),
                                              manifest_path + ": holdout"));
    const std::string recorded = require_key(kv, "data-hash", manifest_path);
    if (hex64(data_hash(in.data)) != recorded) {
      throw IngestError("data files changed since the fit: hash mismatch with " + manifest_path);
    }

    PosteriorSamples samples;
    samples.variant = ModelVariant::parse(require_key(kv, "variant", manifest_path),
                                          require_key(kv, "range", manifest_path));
    samples.chain_forecast.emplace_back(read_matrix_csv(state_path, samples.forecast_cols));

    OmegaForecast mode;
    if (options.omega_mode == "carry") {
      mode = OmegaForecast::Carry;
    } else if (options.omega_mode == "draw") {
      mode = OmegaForecast::Draw;
    } else {
      throw IngestError("omega-mode must be 'carry' or 'draw', got '" + options.omega_mode + "'");
    }

    ForecastOptions resolved = options;
    if (resolved.out.empty()) resolved.out = options.run;
    ensure_dir(resolved.out);

    const SpatialWeights weights = row_standardize(in.graph);
    const ForecastDraws fc = one_step_ahead(samples, in.data, weights, options.seed, mode);

    {
      std::ofstream f = open_out(join(resolved.out, "forecast_areas.csv"));
      f << "area_id,mean,sd,q2.5,q50,q97.5\n";
      for (int i = 0; i < in.data.n_areas(); ++i) {
        const Summary& s = fc.area[i];
        f << in.data.area_ids[i] << "," << format_double(s.mean) << "," << format_double(s.sd)
          << "," << format_double(s.q025) << "," << format_double(s.q50) << ","
          << format_double(s.q975) << "\n";
      }
    }
    {
      std::ofstream f = open_out(join(resolved.out, "forecast_total.csv"));
      const Summary& s = fc.total;
      if (in.data.holdout) {
        const auto actual = static_cast<std::int64_t>(in.data.holdout->sum());
        std::vector<std::uint64_t> totals(fc.totals.size());
        for (long d = 0; d < fc.totals.size(); ++d) {
          totals[d] = static_cast<std::uint64_t>(fc.totals[d]);
        }
        const double one_step = rps(totals, actual);
        const bool covered = coverage(s.q025, s.q975, static_cast<double>(actual));
        f << "mean,sd,q2.5,q50,q97.5,holdout_total,one_step_rps,covered\n";
        f << format_double(s.mean) << "," << format_double(s.sd) << "," << format_double(s.q025)
          << "," << format_double(s.q50) << "," << format_double(s.q975) << "," << actual << ","
          << format_double(one_step) << "," << (covered ? 1 : 0) << "\n";
        out << "forecast total: mean " << format_double(s.mean) << ", 95% interval ["
            << format_double(s.q025) << ", " << format_double(s.q975) << "], holdout " << actual
            << (covered ? " covered" : " NOT covered") << ", rps " << format_double(one_step)
            << "\n";
      } else {
        f << "mean,sd,q2.5,q50,q97.5\n";
        f << format_double(s.mean) << "," << format_double(s.sd) << "," << format_double(s.q025)
          << "," << format_double(s.q50) << "," << format_double(s.q975) << "\n";
        out << "forecast total: mean " << format_double(s.mean) << ", 95% interval ["
            << format_double(s.q025) << ", " << format_double(s.q975) << "]\n";
      }
    }
    write_manifest(join(resolved.out, "manifest_forecast.ini"), "forecast",
                   forecast_entries(resolved), data_hash(in.data));
    return kExitOk;
  } catch (const IngestError& e) {
    err << "forecast: " << e.what() << "\n";
    return kExitIngest;
  } catch (const std::exception& e) {
    err << "forecast: " << e.what() << "\n";
    return kExitSampler;
  }
}

int cmd_score(const std::string& run, std::ostream& out, std::ostream& err) {
  try {
    const ScoreRow row = read_score_csv(join(run, "score.csv"));
    out << "metric,value\n";
    for (const auto& [name, value] : row.metrics) {
      out << name << "," << format_double(value) << "\n";
    }
    const std::string fpath = join(run, "forecast_total.csv");
    if (fs::exists(fpath)) {
      const CsvTable table = read_csv(fpath);
      for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (table.header[c] == "one_step_rps" || table.header[c] == "covered") {
          out << table.header[c] << "," << table.rows.at(0).at(c) << "\n";
        }
      }
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "score: " << e.what() << "\n";
    return kExitIngest;
  }
}

int cmd_compare(const CompareOptions& options, std::ostream& out, std::ostream& err) {
  try {
    if (options.runs.empty()) throw IngestError("compare needs at least one run directory");
    struct Row {
      std::string run, variant;
      double waic, rps, dss;
      std::string one_step_rps = "na", coverage = "na";
    };
    std::vector<Row> rows;
    std::string hash;
    for (const std::string& run : options.runs) {
      const auto kv = read_kv_file(join(run, "manifest.ini"));
      const std::string& h = require_key(kv, "data-hash", join(run, "manifest.ini"));
      if (hash.empty()) {
        hash = h;
      } else if (h != hash) {
        throw IngestError("run '" + run + "' was fitted to different data (hash " + h +
                          " != " + hash + "); refusing to compare");
      }
      const ScoreRow score = read_score_csv(join(run, "score.csv"));
      Row row;
      row.run = run;
      row.variant = require_key(kv, "variant", join(run, "manifest.ini"));
      row.waic = score.get("waic");
      row.rps = score.get("rps_total");
      row.dss = score.get("dss_total");
      const std::string fpath = join(run, "forecast_total.csv");
      if (fs::exists(fpath)) {
        const CsvTable table = read_csv(fpath);
        for (std::size_t c = 0; c < table.header.size(); ++c) {
          if (table.header[c] == "one_step_rps") row.one_step_rps = table.rows.at(0).at(c);
          if (table.header[c] == "covered") row.coverage = table.rows.at(0).at(c);
        }
      }
      rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.waic < b.waic; });
    std::ostringstream table;
    table << "run,variant,waic,rps,dss,one_step_rps,coverage\n";
    for (const Row& r : rows) {
      table << r.run << "," << r.variant << "," << format_double(r.waic) << ","
            << format_double(r.rps) << "," << format_double(r.dss) << "," << r.one_step_rps << ","
            << r.coverage << "\n";
    }
    out << table.str();
    if (!options.out.empty()) {
      std::ofstream f = open_out(options.out);
      f << table.str();
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "compare: " << e.what() << "\n";
    return kExitIngest;
  }
}

int cmd_diag(const std::string& run, std::ostream& out, std::ostream& err) {
  try {
    const CsvTable table = read_csv(join(run, "diagnostics.csv"));
    if (table.header != std::vector<std::string>{"kind", "name", "chain", "value"}) {
      throw IngestError(join(run, "diagnostics.csv") + ": unexpected header");
    }
    double max_psrf = 0.0;
    std::string worst = "none";
    int n_psrf = 0, outside = 0, n_rate = 0;
    for (const auto& r : table.rows) {
      if (r.size() != 4) throw IngestError(join(run, "diagnostics.csv") + ": malformed row");
      const double v = std::strtod(r[3].c_str(), nullptr);
      if (r[0] == "psrf") {
        ++n_psrf;
        if (std::isfinite(v) && v > max_psrf) {
          max_psrf = v;
          worst = r[1];
        }
      } else if (r[0] == "accept_rate") {
        ++n_rate;
        if (v < 0.1 || v > 0.7) ++outside;
      }
    }
    out << "psrf: " << n_psrf << " tracked, max " << format_double(max_psrf) << " (" << worst
        << ")\n";
    out << "acceptance: " << n_rate << " block rates, " << outside
        << " outside [0.1, 0.7]\n";
    if (n_psrf > 0 && max_psrf > 1.1) {
      err << "diag: convergence warning: max psrf " << format_double(max_psrf) << " > 1.1\n";
      return kExitConvergence;
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "diag: " << e.what() << "\n";
    return kExitIngest;
  }
}

}  // namespace epimix
