#pragma once

// Synthetic campaign generator: logistic conversion, exponential or Weibull
// delays, factor calibration by intercept bisection, quantile time steps,
// and the replicate-level study runner.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "convest/core.hpp"
#include "convest/delay.hpp"
#include "convest/estimators.hpp"
#include "convest/rng.hpp"

namespace convest {

struct CalibrationError : Error {
  explicit CalibrationError(const std::string& m) : Error(m) {}
};

struct CovariateSpec {
  std::vector<int> categorical_cardinalities = {7, 6, 6};  // 16 dummies
  int integer_count = 4;
  int integer_min = 0;
  int integer_max = 4;

  int dimension() const {
    int k = 1 + integer_count;
    for (int c : categorical_cardinalities) k += c - 1;
    return k;
  }
};

// The true coefficients are synthetic stand-ins: directions drawn once from
// a fixed-seed standard normal, scaled, with a configurable overlap between
// the conversion direction and the log-mean-delay direction (positive
// overlap means high-probability clicks convert slowly).
struct CoefficientConfig {
  std::uint64_t seed = 7;
  double conversion_scale = 0.5;
  double delay_scale = 0.3;
  double delay_log_mean_overlap = 0.85;
};

struct SimulationConfig {
  int n_clicks = 8500;
  double horizon_days = 60.0;
  double window_days = 30.0;
  DelayFamily delay_family = DelayFamily::Exponential;
  double weibull_shape = 0.5;
  double target_mean_probability = 0.3;
  double target_mean_delay_days = 4.0;
  CovariateSpec covariates;
  CoefficientConfig coefficients;
  int n_time_steps = 17;
  int replicates = 200;
  std::uint64_t master_seed = 20240601;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw Error("SimulationConfig." + field + ": " + why);
    };
    if (n_clicks <= 0) fail("n_clicks", "must be positive");
    if (!(horizon_days > 0.0)) fail("horizon_days", "must be positive");
    if (!(window_days > 0.0)) fail("window_days", "must be positive");
    if (!(weibull_shape > 0.0)) fail("weibull_shape", "must be positive");
    if (!(target_mean_probability > 0.0 && target_mean_probability < 1.0)) {
      fail("target_mean_probability", "must lie in (0,1)");
    }
    if (!(target_mean_delay_days > 0.0)) fail("target_mean_delay_days", "must be positive");
    if (n_time_steps < 1) fail("n_time_steps", "must be at least 1");
    if (replicates < 1) fail("replicates", "must be at least 1");
    if (covariates.integer_count < 0) fail("covariates.integer_count", "negative");
    if (covariates.integer_max < covariates.integer_min) {
      fail("covariates.integer_max", "below integer_min");
    }
    for (int c : covariates.categorical_cardinalities) {
      if (c < 2) fail("covariates.categorical_cardinalities", "cardinality below 2");
    }
    const double lo = std::abs(coefficients.delay_log_mean_overlap);
    if (lo > 1.0) fail("coefficients.delay_log_mean_overlap", "must lie in [-1,1]");
  }
};

struct CalibratedTruth {
  VectorXd beta_c;
  DelayModel delay;
};

namespace detail {

inline FeatureVector draw_covariates(Rng& rng, const CovariateSpec& spec) {
  std::vector<std::pair<int, double>> entries{{0, 1.0}};
  int off = 1;
  for (int c : spec.categorical_cardinalities) {
    const int level = static_cast<int>(rng.uniform_index(c));
    if (level >= 1) entries.emplace_back(off + level - 1, 1.0);
    off += c - 1;
  }
  for (int j = 0; j < spec.integer_count; ++j) {
    const int v = spec.integer_min +
                  static_cast<int>(rng.uniform_index(
                      static_cast<std::uint64_t>(spec.integer_max - spec.integer_min + 1)));
    if (v != 0) entries.emplace_back(off, static_cast<double>(v));
    ++off;
  }
  return FeatureVector(std::move(entries), spec.dimension());
}

// Raw (uncalibrated) coefficient directions; intercepts are zero.
inline std::pair<VectorXd, VectorXd> coefficient_directions(const SimulationConfig& cfg) {
  const int k = cfg.covariates.dimension();
  Rng rng(substream_seed(cfg.coefficients.seed, 0x0C0EFFULL));
  VectorXd uc(k), ud(k);
  for (int i = 0; i < k; ++i) uc[i] = rng.normal();
  for (int i = 0; i < k; ++i) ud[i] = rng.normal();
  VectorXd beta_c = cfg.coefficients.conversion_scale * uc;
  const double rho = cfg.coefficients.delay_log_mean_overlap;
  VectorXd v = cfg.coefficients.delay_scale *
               (rho * uc + std::sqrt(1.0 - rho * rho) * ud);
  // v is the log-mean-delay direction; map to the family parameterization
  // (exponential rate eta = -log mean, Weibull scale eta = +log mean + const)
  VectorXd beta_d = cfg.delay_family == DelayFamily::Exponential ? VectorXd(-v) : v;
  beta_c[0] = 0.0;
  beta_d[0] = 0.0;
  return {beta_c, beta_d};
}

inline double lgamma1p_inv_shape(double nu) { return std::lgamma(1.0 + 1.0 / nu); }

}  // namespace detail

// The covariate population that defines the calibration targets: a fixed
// deterministic sample, independent of the master seed.
inline std::vector<FeatureVector> calibration_population(const SimulationConfig& cfg,
                                                         int size = 50000) {
  Rng rng(substream_seed(0xCA11B8A7E5EEDULL, cfg.coefficients.seed));
  std::vector<FeatureVector> pop;
  pop.reserve(size);
  for (int i = 0; i < size; ++i) pop.push_back(detail::draw_covariates(rng, cfg.covariates));
  return pop;
}

// Bisection on the two intercepts until the population mean conversion
// probability and the population mean delay match their targets.
inline CalibratedTruth calibrate_intercepts(const SimulationConfig& cfg) {
  cfg.validate();
  auto [beta_c, beta_d] = detail::coefficient_directions(cfg);
  const auto pop = calibration_population(cfg);
  const double n = static_cast<double>(pop.size());

  std::vector<double> eta_c(pop.size()), eta_d(pop.size());
  for (std::size_t i = 0; i < pop.size(); ++i) {
    eta_c[i] = pop[i].dot(beta_c);
    eta_d[i] = pop[i].dot(beta_d);
  }

  {
    auto mean_p = [&](double b0) {
      double s = 0.0;
      for (double e : eta_c) s += logistic(e + b0);
      return s / n;
    };
    double lo = -20.0, hi = 20.0;
    if (mean_p(lo) > cfg.target_mean_probability ||
        mean_p(hi) < cfg.target_mean_probability) {
      throw CalibrationError("conversion intercept out of range [-20,20]");
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (mean_p(mid) < cfg.target_mean_probability ? lo : hi) = mid;
    }
    beta_c[0] = 0.5 * (lo + hi);
    if (std::abs(mean_p(beta_c[0]) - cfg.target_mean_probability) > 1e-4) {
      throw CalibrationError("conversion-probability target not reached");
    }
  }

  const bool expo = cfg.delay_family == DelayFamily::Exponential;
  const double shape_mult =
      expo ? 1.0 : std::exp(detail::lgamma1p_inv_shape(cfg.weibull_shape));
  {
    // population mean delay: exponential mean 1/lambda = exp(-eta);
    // Weibull mean gamma * Gamma(1+1/nu) = exp(eta) * const
    auto mean_delay = [&](double d0) {
      double s = 0.0;
      for (double e : eta_d) s += expo ? std::exp(-(e + d0)) : std::exp(e + d0) * shape_mult;
      return s / n;
    };
    double lo = -20.0, hi = 20.0;
    const bool increasing = !expo;
    auto below = [&](double v) { return v < cfg.target_mean_delay_days; };
    if (below(mean_delay(increasing ? hi : lo)) ||
        !below(mean_delay(increasing ? lo : hi))) {
      throw CalibrationError("delay intercept out of range [-20,20]");
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const bool low = below(mean_delay(mid));
      if (increasing == low) lo = mid;
      else hi = mid;
    }
    beta_d[0] = 0.5 * (lo + hi);
    const double achieved = mean_delay(beta_d[0]);
    if (std::abs(achieved - cfg.target_mean_delay_days) >
        1e-3 * cfg.target_mean_delay_days) {
      throw CalibrationError("mean-delay target not reached");
    }
  }

  CalibratedTruth truth;
  truth.beta_c = beta_c;
  truth.delay.family = cfg.delay_family;
  truth.delay.coefficients = beta_d;
  truth.delay.shape = expo ? 1.0 : cfg.weibull_shape;
  return truth;
}

struct ReplicateOutput {
  std::vector<ClickRecord> records;
  VectorXd true_beta_c;
  DelayModel true_delay;
  std::vector<double> true_probabilities;
};

// Deterministic in (master_seed, replicate_index), independent of any other
// replicate.
inline ReplicateOutput simulate_replicate(const SimulationConfig& cfg,
                                          const CalibratedTruth& truth,
                                          int replicate_index) {
  Rng rng(substream_seed(cfg.master_seed, static_cast<std::uint64_t>(replicate_index)));
  ReplicateOutput out;
  out.true_beta_c = truth.beta_c;
  out.true_delay = truth.delay;
  out.records.reserve(cfg.n_clicks);
  out.true_probabilities.reserve(cfg.n_clicks);
  const bool expo = cfg.delay_family == DelayFamily::Exponential;
  for (int i = 0; i < cfg.n_clicks; ++i) {
    ClickRecord rec;
    rec.features = detail::draw_covariates(rng, cfg.covariates);
    rec.click_time = rng.uniform(0.0, cfg.horizon_days);
    const double p = conversion_probability(truth.beta_c, rec.features);
    out.true_probabilities.push_back(p);
    if (rng.bernoulli(p)) {
      const double eta = rec.features.dot(truth.delay.coefficients);
      const double d = expo ? rng.exponential(std::exp(eta))
                            : rng.weibull(std::exp(eta), cfg.weibull_shape);
      // delays past the window never convert (the window assumption holds
      // exactly in the generated data)
      if (d < cfg.window_days) rec.conversion_time = rec.click_time + d;
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

// Empirical click-time quantiles at levels j/n_steps.
inline std::vector<double> time_steps(const std::vector<ClickRecord>& records,
                                      int n_steps) {
  if (n_steps < 1) throw Error("time_steps: n_steps must be at least 1");
  if (records.empty()) throw EmptyInputError("time_steps: no records");
  std::vector<double> times;
  times.reserve(records.size());
  for (const auto& r : records) times.push_back(r.click_time);
  std::sort(times.begin(), times.end());
  std::vector<double> steps;
  steps.reserve(n_steps);
  const std::size_t n = times.size();
  for (int j = 1; j <= n_steps; ++j) {
    const double u = static_cast<double>(j) / n_steps;
    std::size_t idx = static_cast<std::size_t>(std::ceil(u * n));
    idx = std::min(std::max<std::size_t>(idx, 1), n) - 1;
    steps.push_back(times[idx]);
  }
  return steps;
}

// One row per fit in the raw results table. Wall time is recorded
// separately so the table itself is bit-reproducible across worker counts.
struct FitRecord {
  int replicate = 0;
  int step_index = 0;
  double t_days = 0.0;
  EstimatorKind kind = EstimatorKind::Naive;
  int n_rows = 0;
  SolveStatus status = SolveStatus::NonConvergence;
  bool converged = false;
  int iterations = 0;
  double avg_bias = std::numeric_limits<double>::quiet_NaN();
  double mean_abs_bias = std::numeric_limits<double>::quiet_NaN();
  double weighted_bias = std::numeric_limits<double>::quiet_NaN();
  int weighted_excluded = 0;
  double nll_eventual = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double mean_p_hat = std::numeric_limits<double>::quiet_NaN();
  double mean_p_true = std::numeric_limits<double>::quiet_NaN();
};

struct TimingRecord {
  int replicate = 0;
  int step_index = 0;
  EstimatorKind kind = EstimatorKind::Naive;
  double wall_seconds = 0.0;
};

struct StudyOptions {
  EstimatorOptions estimator;
  SeOptions se;
  double confidence_level = 0.95;
  int workers = 0;  // 0 = hardware concurrency
};

struct StudyResults {
  std::vector<FitRecord> fits;
  std::vector<TimingRecord> timings;
};

namespace detail {

struct StepMetrics {
  double avg_bias, mean_abs, weighted, nll, mean_hat, mean_true;
  int weighted_excluded;
};

inline StepMetrics step_metrics(const ObservationSnapshot& snap,
                                const std::vector<double>& true_p,
                                const std::vector<bool>& eventual,
                                const ConversionFit& fit) {
  StepMetrics m{0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0};
  const double n = static_cast<double>(snap.size());
  double wsum = 0.0, wnum = 0.0;
  for (std::size_t i = 0; i < snap.rows.size(); ++i) {
    const double ph = fit.probability(snap.rows[i].x());
    const double pt = true_p[i];
    m.avg_bias += (pt - ph) / n;
    m.mean_abs += std::abs(pt - ph) / n;
    m.mean_hat += ph / n;
    m.mean_true += pt / n;
    if (pt > 0.0 && pt < 1.0) {
      const double w = 1.0 / std::sqrt(pt * (1.0 - pt));
      wnum += w * (pt - ph);
      wsum += w;
    } else {
      ++m.weighted_excluded;
    }
    const double cl = std::min(std::max(ph, 1e-15), 1.0 - 1e-15);
    m.nll -= (eventual[i] ? std::log(cl) : std::log(1.0 - cl)) / n;
  }
  m.weighted = wsum > 0.0 ? wnum / wsum : std::numeric_limits<double>::quiet_NaN();
  return m;
}

}  // namespace detail

// Runs every (replicate x time step x estimator) fit. Replicates execute
// concurrently; output order is deterministic.
inline StudyResults run_study(const SimulationConfig& cfg,
                              const std::vector<EstimatorKind>& kinds,
                              const StudyOptions& opts = {}) {
  cfg.validate();
  const CalibratedTruth truth = calibrate_intercepts(cfg);
  const int R = cfg.replicates;
  const int S = cfg.n_time_steps;
  const int K = static_cast<int>(kinds.size());

  StudyResults results;
  results.fits.resize(static_cast<std::size_t>(R) * S * K);
  results.timings.resize(static_cast<std::size_t>(R) * S * K);

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= R) return;
      ReplicateOutput rep = simulate_replicate(cfg, truth, r);
      const auto steps = time_steps(rep.records, S);
      for (int si = 0; si < S; ++si) {
        const double t = steps[si];
        ObservationSnapshot snap = snapshot_at(rep.records, t, cfg.window_days);
        std::vector<double> true_p;
        std::vector<bool> eventual;
        std::vector<ClickRecord> accrued;
        true_p.reserve(snap.size());
        eventual.reserve(snap.size());
        for (std::size_t i = 0; i < rep.records.size(); ++i) {
          if (rep.records[i].click_time > t) continue;
          true_p.push_back(rep.true_probabilities[i]);
          eventual.push_back(eventual_status(rep.records[i], cfg.window_days));
          accrued.push_back(rep.records[i]);
        }
        for (int ki = 0; ki < K; ++ki) {
          const EstimatorKind kind = kinds[ki];
          const std::size_t slot =
              (static_cast<std::size_t>(r) * S + si) * K + ki;
          FitRecord rec;
          rec.replicate = r;
          rec.step_index = si;
          rec.t_days = t;
          rec.kind = kind;
          rec.n_rows = static_cast<int>(snap.size());
          const auto tic = std::chrono::steady_clock::now();
          ConversionFit fit;
          bool fitted = true;
          try {
            switch (kind) {
              case EstimatorKind::Naive:
                fit = fit_naive(snap, opts.estimator);
                break;
              case EstimatorKind::Oracle:
                fit = fit_oracle(accrued, cfg.window_days, opts.estimator);
                break;
              case EstimatorKind::BiasAdjustedExponential:
                fit = fit_bias_adjusted(snap, DelaySource::exponential_firth(),
                                        opts.estimator);
                break;
              case EstimatorKind::BiasAdjustedWeibull:
                fit = fit_bias_adjusted(snap, DelaySource::weibull_firth(),
                                        opts.estimator);
                break;
              case EstimatorKind::BiasAdjustedTrueDelay:
                fit = fit_bias_adjusted(snap, DelaySource::known_model(rep.true_delay),
                                        opts.estimator);
                break;
              case EstimatorKind::DFM:
                fit = fit_dfm(snap, opts.estimator);
                break;
            }
          } catch (const Error&) {
            fitted = false;  // recorded as a failed fit, never dropped
          }
          const auto toc = std::chrono::steady_clock::now();
          results.timings[slot] = {r, si, kind,
                                   std::chrono::duration<double>(toc - tic).count()};
          if (fitted) {
            rec.status = fit.status;
            rec.converged = fit.converged;
            rec.iterations = fit.iterations;
            const auto m = detail::step_metrics(snap, true_p, eventual, fit);
            rec.avg_bias = m.avg_bias;
            rec.mean_abs_bias = m.mean_abs;
            rec.weighted_bias = m.weighted;
            rec.weighted_excluded = m.weighted_excluded;
            rec.nll_eventual = m.nll;
            rec.mean_p_hat = m.mean_hat;
            rec.mean_p_true = m.mean_true;
            const bool adjusted = kind == EstimatorKind::BiasAdjustedExponential ||
                                  kind == EstimatorKind::BiasAdjustedWeibull ||
                                  kind == EstimatorKind::BiasAdjustedTrueDelay;
            if (adjusted && fit.converged && fit.delay) {
              try {
                const MatrixXd cov = standard_errors(fit, snap, *fit.delay, opts.se);
                const auto intervals = probability_intervals(
                    fit, snap, cov, opts.confidence_level, true);
                double covered = 0.0;
                for (std::size_t i = 0; i < intervals.size(); ++i) {
                  if (true_p[i] >= intervals[i].lower && true_p[i] <= intervals[i].upper) {
                    covered += 1.0;
                  }
                }
                rec.coverage = covered / static_cast<double>(intervals.size());
              } catch (const Error&) {
                // coverage stays NaN when the covariance is unavailable
              }
            }
          }
          results.fits[slot] = rec;
        }
      }
    }
  };

  int workers = opts.workers > 0
                    ? opts.workers
                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, R));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return results;
}

}  // namespace convest
