#pragma once

// Command implementations behind the convest binary: simulate, fit,
// evaluate, split. Every command writes its outputs plus a manifest into
// the output directory and returns a process exit code:
//   0 success, 2 configuration error, 3 data error,
//   4 numerical non-convergence (results still written).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "convest/config.hpp"
#include "convest/criteo.hpp"
#include "convest/evaluate.hpp"
#include "convest/simulate.hpp"

namespace convest {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNonConvergence = 4;

namespace detail {

inline std::uint64_t fnv1a64_file(const std::string& path, std::uint64_t* bytes) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  std::uint64_t total = 0;
  while (is) {
    is.read(buf, sizeof(buf));
    const std::streamsize n = is.gcount();
    total += static_cast<std::uint64_t>(n);
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  if (bytes) *bytes = total;
  return h;
}

inline std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << body;
}

struct ManifestBuilder {
  nlohmann::json j;
  ManifestBuilder(const std::string& command) {
    j["command"] = command;
    j["artifact_version"] = kVersion;
    j["started_at"] = iso_now();
    j["hardware_concurrency"] = std::thread::hardware_concurrency();
  }
  void input(const std::string& path) {
    std::uint64_t bytes = 0;
    const std::uint64_t digest = fnv1a64_file(path, &bytes);
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(digest));
    j["inputs"].push_back({{"path", path}, {"fnv1a64", hex}, {"bytes", bytes}});
  }
  void output(const std::filesystem::path& path) {
    j["outputs"].push_back(path.string());
  }
  void finish(const std::filesystem::path& out_dir) {
    j["finished_at"] = iso_now();
    std::ofstream os(out_dir / "manifest.json");
    os << j.dump(2) << "\n";
  }
};

}  // namespace detail

// ---------- simulate ----------

struct SimulateCommand {
  std::string config_path;
  std::string out_dir;
  int workers = 0;
  std::int64_t replicates_override = 0;  // 0 = use config
  std::int64_t seed_override = -1;       // <0 = use config
};

inline SimulationConfig simulation_config_from(const ConfigFile& cf) {
  SimulationConfig cfg;
  cfg.n_clicks = static_cast<int>(cf.get_int("study", "n_clicks", cfg.n_clicks));
  cfg.horizon_days = cf.get_double("study", "horizon_days", cfg.horizon_days);
  cfg.window_days = cf.get_double("study", "window_days", cfg.window_days);
  const std::string family = cf.get_string("study", "delay_family", std::string("exponential"));
  if (family == "exponential") {
    cfg.delay_family = DelayFamily::Exponential;
  } else if (family == "weibull") {
    cfg.delay_family = DelayFamily::Weibull;
  } else {
    throw ConfigError("study.delay_family must be 'exponential' or 'weibull', got '" +
                      family + "'");
  }
  cfg.weibull_shape = cf.get_double("study", "weibull_shape", cfg.weibull_shape);
  cfg.target_mean_probability =
      cf.get_double("study", "target_mean_probability", cfg.target_mean_probability);
  cfg.target_mean_delay_days =
      cf.get_double("study", "target_mean_delay_days", cfg.target_mean_delay_days);
  cfg.n_time_steps = static_cast<int>(cf.get_int("study", "n_time_steps", cfg.n_time_steps));
  cfg.replicates = static_cast<int>(cf.get_int("study", "replicates", cfg.replicates));
  cfg.master_seed =
      static_cast<std::uint64_t>(cf.get_int("study", "master_seed", 20240601));

  if (cf.has("covariates", "categorical_cardinalities")) {
    cfg.covariates.categorical_cardinalities.clear();
    for (const auto& s : cf.get_list("covariates", "categorical_cardinalities")) {
      cfg.covariates.categorical_cardinalities.push_back(std::stoi(s));
    }
  }
  cfg.covariates.integer_count =
      static_cast<int>(cf.get_int("covariates", "integer_count", cfg.covariates.integer_count));
  cfg.covariates.integer_min =
      static_cast<int>(cf.get_int("covariates", "integer_min", cfg.covariates.integer_min));
  cfg.covariates.integer_max =
      static_cast<int>(cf.get_int("covariates", "integer_max", cfg.covariates.integer_max));
  cfg.coefficients.seed =
      static_cast<std::uint64_t>(cf.get_int("covariates", "coefficient_seed", 7));
  cfg.coefficients.conversion_scale =
      cf.get_double("covariates", "conversion_scale", cfg.coefficients.conversion_scale);
  cfg.coefficients.delay_scale =
      cf.get_double("covariates", "delay_scale", cfg.coefficients.delay_scale);
  cfg.coefficients.delay_log_mean_overlap = cf.get_double(
      "covariates", "delay_log_mean_overlap", cfg.coefficients.delay_log_mean_overlap);
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline std::vector<EstimatorKind> estimators_from(const ConfigFile& cf) {
  std::vector<EstimatorKind> kinds;
  for (const auto& name : cf.get_list(
           "study", "estimators",
           std::string("naive, oracle, bias-adjusted-e, bias-adjusted-true, dfm"))) {
    const auto k = estimator_from_string(name);
    if (!k) throw ConfigError("study.estimators: unknown estimator '" + name + "'");
    kinds.push_back(*k);
  }
  if (kinds.empty()) throw ConfigError("study.estimators: empty list");
  return kinds;
}

inline int cmd_simulate(const SimulateCommand& cmd) {
  namespace fs = std::filesystem;
  try {
    detail::ManifestBuilder manifest("simulate");
    manifest.input(cmd.config_path);
    const ConfigFile cf = ConfigFile::parse_file(cmd.config_path);
    SimulationConfig cfg = simulation_config_from(cf);
    if (cmd.replicates_override > 0) {
      cfg.replicates = static_cast<int>(cmd.replicates_override);
    }
    if (cmd.seed_override >= 0) {
      cfg.master_seed = static_cast<std::uint64_t>(cmd.seed_override);
    }
    const auto kinds = estimators_from(cf);
    StudyOptions opts;
    opts.workers = cmd.workers;

    fs::create_directories(cmd.out_dir);
    const auto results = run_study(cfg, kinds, opts);

    std::ostringstream rs, ts, rp, rt;
    write_results(rs, results.fits);
    write_timings(ts, results.timings);
    const auto report = aggregate(results.fits, results.timings);
    write_report(rp, report);
    write_report_text(rt, report);
    detail::write_text_file(fs::path(cmd.out_dir) / "results.tsv", rs.str());
    detail::write_text_file(fs::path(cmd.out_dir) / "timings.tsv", ts.str());
    detail::write_text_file(fs::path(cmd.out_dir) / "report.tsv", rp.str());
    detail::write_text_file(fs::path(cmd.out_dir) / "report.txt", rt.str());

    manifest.j["config"] = {
        {"n_clicks", cfg.n_clicks},
        {"replicates", cfg.replicates},
        {"master_seed", cfg.master_seed},
        {"delay_family", cfg.delay_family == DelayFamily::Exponential ? "exponential"
                                                                      : "weibull"},
        {"target_mean_probability", cfg.target_mean_probability},
        {"target_mean_delay_days", cfg.target_mean_delay_days},
        {"n_time_steps", cfg.n_time_steps},
        {"workers", cmd.workers}};
    for (const char* f : {"results.tsv", "timings.tsv", "report.tsv", "report.txt"}) {
      manifest.output(fs::path(cmd.out_dir) / f);
    }
    manifest.finish(cmd.out_dir);

    int failed = 0;
    for (const auto& f : results.fits) failed += f.converged ? 0 : 1;
    std::cerr << "simulate: " << results.fits.size() << " fits, " << failed
              << " non-converged\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}

// ---------- fit ----------

struct FitCommand {
  std::string data_path;
  std::string estimator = "naive";
  double t_days = 60.0;
  double window_days = 30.0;
  std::string out_dir;
  std::vector<int> integer_columns = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> categorical_columns = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  int min_count = 50;
  double confidence_level = 0.95;
};

inline int cmd_fit(const FitCommand& cmd) {
  namespace fs = std::filesystem;
  try {
    const auto kind = estimator_from_string(cmd.estimator);
    if (!kind) {
      std::cerr << "config error: unknown estimator '" << cmd.estimator << "'\n";
      return kExitConfig;
    }
    if (*kind == EstimatorKind::BiasAdjustedTrueDelay) {
      std::cerr << "config error: bias-adjusted-true needs a known delay law and is "
                   "only available in simulation\n";
      return kExitConfig;
    }
    if (!(cmd.t_days > 0.0) || !(cmd.window_days > 0.0)) {
      std::cerr << "config error: t and window must be positive\n";
      return kExitConfig;
    }
    detail::ManifestBuilder manifest("fit");
    manifest.input(cmd.data_path);

    ParseReport report;
    const auto rows = parse_criteo_file(cmd.data_path, report);
    if (rows.empty()) {
      std::cerr << "data error: no usable rows in " << cmd.data_path << "\n";
      return kExitData;
    }
    const auto vocab = fit_vocabulary(rows, cmd.integer_columns,
                                      cmd.categorical_columns, cmd.min_count);
    const auto records = encode(rows, vocab);
    const auto snap = snapshot_at(records, cmd.t_days, cmd.window_days);
    if (snap.empty()) {
      std::cerr << "data error: no clicks before t = " << cmd.t_days << "\n";
      return kExitData;
    }

    ConversionFit fit;
    switch (*kind) {
      case EstimatorKind::Naive:
        fit = fit_naive(snap);
        break;
      case EstimatorKind::Oracle:
        fit = fit_oracle(records, cmd.window_days);
        break;
      case EstimatorKind::BiasAdjustedExponential:
        fit = fit_bias_adjusted(snap, DelaySource::exponential_firth());
        break;
      case EstimatorKind::BiasAdjustedWeibull:
        fit = fit_bias_adjusted(snap, DelaySource::weibull_firth());
        break;
      case EstimatorKind::DFM:
        fit = fit_dfm(snap);
        break;
      default:
        return kExitConfig;
    }

    fs::create_directories(cmd.out_dir);
    {
      std::ostringstream os;
      os << "index\tcoefficient\n";
      for (int i = 0; i < fit.beta_c.size(); ++i) {
        os << i << '\t' << detail::fmt_double(fit.beta_c[i]) << "\n";
      }
      detail::write_text_file(fs::path(cmd.out_dir) / "coefficients.tsv", os.str());
      manifest.output(fs::path(cmd.out_dir) / "coefficients.tsv");
    }
    {
      const bool adjusted = *kind == EstimatorKind::BiasAdjustedExponential ||
                            *kind == EstimatorKind::BiasAdjustedWeibull;
      std::vector<ProbabilityInterval> ivs;
      if (adjusted && fit.converged && fit.delay) {
        try {
          const MatrixXd cov = standard_errors(fit, snap, *fit.delay);
          ivs = probability_intervals(fit, snap, cov, cmd.confidence_level, true);
        } catch (const Error&) {
          ivs.clear();
        }
      }
      std::ostringstream os;
      os << "row\tage_days\tconverted\tprobability\tlower\tupper\n";
      for (std::size_t i = 0; i < snap.rows.size(); ++i) {
        const auto& r = snap.rows[i];
        os << i << '\t' << detail::fmt_double(r.age) << '\t' << (r.converted ? 1 : 0)
           << '\t' << detail::fmt_double(fit.probability(r.x()));
        if (!ivs.empty()) {
          os << '\t' << detail::fmt_double(ivs[i].lower) << '\t'
             << detail::fmt_double(ivs[i].upper);
        } else {
          os << "\t-\t-";
        }
        os << "\n";
      }
      detail::write_text_file(fs::path(cmd.out_dir) / "probabilities.tsv", os.str());
      manifest.output(fs::path(cmd.out_dir) / "probabilities.tsv");
    }
    manifest.j["estimator"] = cmd.estimator;
    manifest.j["t_days"] = cmd.t_days;
    manifest.j["window_days"] = cmd.window_days;
    manifest.j["n_rows"] = snap.size();
    manifest.j["dimension"] = vocab.dimension;
    manifest.j["malformed_lines"] = report.malformed.size();
    manifest.j["converged"] = fit.converged;
    manifest.j["status"] = to_string(fit.status);
    if (!fit.failure_stage.empty()) manifest.j["failure_stage"] = fit.failure_stage;
    manifest.finish(cmd.out_dir);

    if (!fit.converged) {
      std::cerr << "fit ran but did not converge (stage: " << fit.failure_stage
                << ", status: " << to_string(fit.status) << ")\n";
      return kExitNonConvergence;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

// ---------- evaluate ----------

struct EvaluateCommand {
  std::vector<std::string> results_dirs;
  std::string out_dir;
};

inline int cmd_evaluate(const EvaluateCommand& cmd) {
  namespace fs = std::filesystem;
  try {
    if (cmd.results_dirs.empty()) {
      std::cerr << "config error: no results directories given\n";
      return kExitConfig;
    }
    detail::ManifestBuilder manifest("evaluate");
    std::vector<FitRecord> fits;
    std::vector<TimingRecord> timings;
    for (const auto& dir : cmd.results_dirs) {
      const auto rpath = fs::path(dir) / "results.tsv";
      std::ifstream rs(rpath);
      if (!rs) {
        std::cerr << "data error: missing " << rpath.string() << "\n";
        return kExitData;
      }
      manifest.input(rpath.string());
      auto part = read_results(rs);
      fits.insert(fits.end(), part.begin(), part.end());
      const auto tpath = fs::path(dir) / "timings.tsv";
      std::ifstream ts(tpath);
      if (ts) {
        manifest.input(tpath.string());
        auto tp = read_timings(ts);
        timings.insert(timings.end(), tp.begin(), tp.end());
      }
    }
    if (fits.empty()) {
      std::cerr << "data error: no fit records found\n";
      return kExitData;
    }
    const auto report = aggregate(fits, timings);
    fs::create_directories(cmd.out_dir);
    std::ostringstream rp, rt;
    write_report(rp, report);
    write_report_text(rt, report);
    detail::write_text_file(fs::path(cmd.out_dir) / "report.tsv", rp.str());
    detail::write_text_file(fs::path(cmd.out_dir) / "report.txt", rt.str());
    manifest.output(fs::path(cmd.out_dir) / "report.tsv");
    manifest.output(fs::path(cmd.out_dir) / "report.txt");
    manifest.finish(cmd.out_dir);
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

// ---------- split (repeated-split NLL protocol) ----------

struct SplitCommand {
  std::string data_path;
  double train_fraction = 0.1;
  int repeats = 40;
  std::uint64_t seed = 1;
  std::string estimator = "bias-adjusted-e";
  double t_days = 60.0;
  double window_days = 30.0;
  std::string out_dir;
  std::vector<int> integer_columns = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> categorical_columns = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  int min_count = 50;
};

inline int cmd_split(const SplitCommand& cmd) {
  namespace fs = std::filesystem;
  try {
    const auto kind = estimator_from_string(cmd.estimator);
    if (!kind || *kind == EstimatorKind::BiasAdjustedTrueDelay) {
      std::cerr << "config error: unsupported estimator '" << cmd.estimator << "'\n";
      return kExitConfig;
    }
    if (cmd.repeats < 1) {
      std::cerr << "config error: repeats must be positive\n";
      return kExitConfig;
    }
    detail::ManifestBuilder manifest("split");
    manifest.input(cmd.data_path);
    ParseReport report;
    const auto rows = parse_criteo_file(cmd.data_path, report);
    if (rows.size() < 10) {
      std::cerr << "data error: too few rows\n";
      return kExitData;
    }
    std::int64_t origin = rows.front().click_timestamp;
    for (const auto& r : rows) origin = std::min(origin, r.click_timestamp);

    std::vector<double> nlls;
    int failed = 0;
    std::ostringstream os;
    os << "split\tn_train\tn_test\tconverged\tnll\n";
    for (int rep = 0; rep < cmd.repeats; ++rep) {
      const auto is_train = split_indices(rows.size(), cmd.train_fraction,
                                          cmd.seed + static_cast<std::uint64_t>(rep));
      std::vector<CriteoRow> train, test;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        (is_train[i] ? train : test).push_back(rows[i]);
      }
      if (train.empty() || test.empty()) {
        ++failed;
        os << rep << '\t' << train.size() << '\t' << test.size() << "\t0\t-\n";
        continue;
      }
      const auto vocab = fit_vocabulary(train, cmd.integer_columns,
                                        cmd.categorical_columns, cmd.min_count, origin);
      const auto train_recs = encode(train, vocab);
      const auto test_recs = encode(test, vocab);
      const auto snap = snapshot_at(train_recs, cmd.t_days, cmd.window_days);
      if (snap.empty()) {
        ++failed;
        os << rep << '\t' << train.size() << '\t' << test.size() << "\t0\t-\n";
        continue;
      }
      ConversionFit fit;
      switch (*kind) {
        case EstimatorKind::Naive:
          fit = fit_naive(snap);
          break;
        case EstimatorKind::Oracle:
          fit = fit_oracle(train_recs, cmd.window_days);
          break;
        case EstimatorKind::BiasAdjustedExponential:
          fit = fit_bias_adjusted(snap, DelaySource::exponential_firth());
          break;
        case EstimatorKind::BiasAdjustedWeibull:
          fit = fit_bias_adjusted(snap, DelaySource::weibull_firth());
          break;
        case EstimatorKind::DFM:
          fit = fit_dfm(snap);
          break;
        default:
          return kExitConfig;
      }
      if (!fit.converged) {
        ++failed;
        os << rep << '\t' << train.size() << '\t' << test.size() << "\t0\t-\n";
        continue;
      }
      const double v = nll(test_recs, cmd.window_days, fit);
      nlls.push_back(v);
      os << rep << '\t' << train.size() << '\t' << test.size() << "\t1\t"
         << detail::fmt_double(v) << "\n";
    }
    fs::create_directories(cmd.out_dir);
    double mean = 0.0;
    for (double v : nlls) mean += v;
    if (!nlls.empty()) mean /= static_cast<double>(nlls.size());
    os << "mean\t-\t-\t" << nlls.size() << '\t'
       << (nlls.empty() ? std::string("-") : detail::fmt_double(mean)) << "\n";
    detail::write_text_file(fs::path(cmd.out_dir) / "nll.tsv", os.str());
    manifest.output(fs::path(cmd.out_dir) / "nll.tsv");
    manifest.j["estimator"] = cmd.estimator;
    manifest.j["repeats"] = cmd.repeats;
    manifest.j["train_fraction"] = cmd.train_fraction;
    manifest.j["seed"] = cmd.seed;
    manifest.j["failed_splits"] = failed;
    manifest.finish(cmd.out_dir);
    if (!nlls.empty() && failed > 0) return kExitNonConvergence;
    if (nlls.empty()) {
      std::cerr << "data error: every split failed\n";
      return kExitData;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace convest
