#pragma once

// The conversion-probability estimators: naive, oracle, bias-adjusted
// (exponential / Weibull / known delay law), and the joint delayed-feedback
// maximizer, plus estimating-equation standard errors.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "convest/core.hpp"
#include "convest/delay.hpp"
#include "convest/numerics.hpp"

namespace convest {

enum class EstimatorKind {
  Naive,
  Oracle,
  BiasAdjustedExponential,
  BiasAdjustedWeibull,
  BiasAdjustedTrueDelay,
  DFM,
};

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Naive: return "naive";
    case EstimatorKind::Oracle: return "oracle";
    case EstimatorKind::BiasAdjustedExponential: return "bias-adjusted-e";
    case EstimatorKind::BiasAdjustedWeibull: return "bias-adjusted-w";
    case EstimatorKind::BiasAdjustedTrueDelay: return "bias-adjusted-true";
    case EstimatorKind::DFM: return "dfm";
  }
  return "unknown";
}

inline std::optional<EstimatorKind> estimator_from_string(const std::string& s) {
  if (s == "naive") return EstimatorKind::Naive;
  if (s == "oracle") return EstimatorKind::Oracle;
  if (s == "bias-adjusted-e") return EstimatorKind::BiasAdjustedExponential;
  if (s == "bias-adjusted-w") return EstimatorKind::BiasAdjustedWeibull;
  if (s == "bias-adjusted-true") return EstimatorKind::BiasAdjustedTrueDelay;
  if (s == "dfm") return EstimatorKind::DFM;
  return std::nullopt;
}

// How the bias-adjusted estimator obtains the delay cdf.
struct DelaySource {
  enum Kind { FitExponentialFirth, FitWeibullFirth, Known } kind = FitExponentialFirth;
  std::optional<DelayModel> known;

  static DelaySource exponential_firth() { return {FitExponentialFirth, std::nullopt}; }
  static DelaySource weibull_firth() { return {FitWeibullFirth, std::nullopt}; }
  static DelaySource known_model(DelayModel m) { return {Known, std::move(m)}; }
};

struct StageDiagnostics {
  std::string stage;
  OptimizationResult result;
};

struct ConversionFit {
  EstimatorKind kind = EstimatorKind::Naive;
  VectorXd beta_c;
  std::optional<DelayModel> delay;
  std::optional<VectorXd> beta_d;              // DFM second block
  std::optional<MatrixXd> delay_information;   // observed info of the delay fit
  std::vector<StageDiagnostics> stages;
  bool converged = false;
  SolveStatus status = SolveStatus::NonConvergence;
  std::string failure_stage;  // empty when converged
  int step3_dropped = 0;      // rows with H(a) below the weight floor
  int iterations = 0;

  double probability(const FeatureVector& x) const {
    return logistic(x.dot(beta_c));
  }
};

struct EstimatorOptions {
  NewtonOptions newton;
  // Weight floor below which step-3 rows are dropped.
  double weight_floor = 1e-12;
  // Evaluate the bias-reduction penalty's information weights at z instead
  // of a (sensitivity switch).
  bool penalty_info_at_z = false;
};

namespace detail {

inline VectorXd naive_start(const WeightedLogisticProblem& p) {
  double sm = 0.0, sw = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sm += p.targets[i];
    sw += p.multipliers[i];
  }
  VectorXd b = VectorXd::Zero(p.dimension);
  const double frac = std::min(std::max(sm / std::max(sw, 1e-12), 1e-6), 1.0 - 1e-6);
  b[0] = logit(frac);
  return b;
}

}  // namespace detail

inline ConversionFit fit_naive(const ObservationSnapshot& snap,
                               const EstimatorOptions& opts = {}) {
  if (snap.empty()) throw EmptyInputError("fit_naive: empty snapshot");
  WeightedLogisticProblem p;
  p.reserve(snap.size());
  for (const auto& r : snap.rows) p.add(r.x(), 1.0, r.converted ? 1.0 : 0.0);
  OptimizationResult res =
      solve_weighted_logistic_score(p, detail::naive_start(p), opts.newton);
  ConversionFit fit;
  fit.kind = EstimatorKind::Naive;
  fit.beta_c = res.argmin;
  fit.converged = res.converged;
  fit.status = res.status;
  fit.iterations = res.iterations;
  if (!res.converged) fit.failure_stage = "naive";
  fit.stages.push_back({"naive", std::move(res)});
  return fit;
}

// Logistic MLE on the eventual statuses C_i (delay >= W never converts).
inline ConversionFit fit_oracle(const std::vector<ClickRecord>& records,
                                double window, const EstimatorOptions& opts = {}) {
  if (records.empty()) throw EmptyInputError("fit_oracle: no records");
  WeightedLogisticProblem p;
  p.reserve(records.size());
  for (const auto& rec : records) {
    p.add(rec.features, 1.0, eventual_status(rec, window) ? 1.0 : 0.0);
  }
  OptimizationResult res =
      solve_weighted_logistic_score(p, detail::naive_start(p), opts.newton);
  ConversionFit fit;
  fit.kind = EstimatorKind::Oracle;
  fit.beta_c = res.argmin;
  fit.converged = res.converged;
  fit.status = res.status;
  fit.iterations = res.iterations;
  if (!res.converged) fit.failure_stage = "oracle";
  fit.stages.push_back({"oracle", std::move(res)});
  return fit;
}

// Three-step bias-adjusted estimator: naive fit, delay-cdf estimate, then
// the weighted quasi-score solve sum_i x_i (p_i(b) H_i(a_i) - theta_i) = 0.
inline ConversionFit fit_bias_adjusted(const ObservationSnapshot& snap,
                                       const DelaySource& source,
                                       const EstimatorOptions& opts = {}) {
  if (snap.empty()) throw EmptyInputError("fit_bias_adjusted: empty snapshot");
  ConversionFit fit;
  switch (source.kind) {
    case DelaySource::FitExponentialFirth:
      fit.kind = EstimatorKind::BiasAdjustedExponential;
      break;
    case DelaySource::FitWeibullFirth:
      fit.kind = EstimatorKind::BiasAdjustedWeibull;
      break;
    case DelaySource::Known:
      fit.kind = EstimatorKind::BiasAdjustedTrueDelay;
      break;
  }

  // Step 1: naive targets.
  ConversionFit naive = fit_naive(snap, opts);
  fit.stages.push_back({"step1-naive", naive.stages.front().result});
  fit.iterations += naive.iterations;
  if (!naive.converged) {
    fit.beta_c = naive.beta_c;
    fit.status = naive.status;
    fit.failure_stage = "step1-naive";
    return fit;
  }

  // Step 2: delay cdf.
  DelayModel delay;
  if (source.kind == DelaySource::Known) {
    if (!source.known) throw Error("fit_bias_adjusted: Known source without model");
    delay = *source.known;
  } else {
    DelayFitSet fs = build_fit_set(snap);
    DelayFitOptions dopts;
    dopts.newton = opts.newton;
    dopts.likelihood = DelayLikelihood::TruncatedConverted;
    dopts.bias_reduce = true;
    dopts.penalty_info_at_z = opts.penalty_info_at_z;
    DelayFitResult dres = source.kind == DelaySource::FitExponentialFirth
                              ? fit_exponential(fs, dopts)
                              : fit_weibull_firth(fs, dopts);
    fit.stages.push_back({"step2-delay", dres.diagnostics});
    fit.iterations += dres.diagnostics.iterations;
    if (!dres.diagnostics.converged || dres.shape_out_of_range) {
      fit.beta_c = naive.beta_c;
      fit.status = dres.shape_out_of_range ? SolveStatus::NonConvergence
                                           : dres.diagnostics.status;
      fit.failure_stage = "step2-delay";
      return fit;
    }
    delay = dres.model;
    fit.delay_information = dres.information;
  }
  fit.delay = delay;

  // Step 3: multipliers H_i(a_i), targets theta_i.
  WeightedLogisticProblem p;
  p.reserve(snap.size());
  int dropped = 0;
  for (const auto& r : snap.rows) {
    const double h = std::min(delay.cdf(r.x(), r.age), 1.0);
    if (h < opts.weight_floor) {
      ++dropped;
      continue;
    }
    p.add(r.x(), h, naive.probability(r.x()));
  }
  fit.step3_dropped = dropped;
  if (p.size() == 0) {
    fit.beta_c = naive.beta_c;
    fit.status = SolveStatus::NonConvergence;
    fit.failure_stage = "step3-adjust";
    return fit;
  }
  OptimizationResult res =
      solve_weighted_logistic_score(p, naive.beta_c, opts.newton);
  fit.beta_c = res.argmin;
  fit.converged = res.converged;
  fit.status = res.status;
  fit.iterations += res.iterations;
  if (!res.converged) fit.failure_stage = "step3-adjust";
  fit.stages.push_back({"step3-adjust", std::move(res)});
  return fit;
}

// Negative log of the delayed-feedback likelihood over both coefficient
// blocks, with analytic gradient. Converted rows: -[log p + log lambda -
// lambda z]; censored rows: -log(1 - p H(a)), written in softplus form so
// neither tail loses precision.
inline double dfm_nll(const VectorXd& beta_c, const VectorXd& beta_d,
                      const ObservationSnapshot& snap, VectorXd* grad_c = nullptr,
                      VectorXd* grad_d = nullptr) {
  if (beta_c.size() != snap.dimension || beta_d.size() != snap.dimension) {
    throw DimensionError("dfm_nll: coefficient dimensions");
  }
  if (grad_c) grad_c->setZero();
  if (grad_d) grad_d->setZero();
  double nll = 0.0;
  for (const auto& r : snap.rows) {
    const double ec = r.x().dot(beta_c);
    const double ed = r.x().dot(beta_d);
    const double lam = std::exp(std::min(ed, 690.0));
    if (r.converted) {
      nll += log1pexp(-ec) - ed + lam * r.observed;
      if (grad_c) r.x().add_scaled(*grad_c, logistic(ec) - 1.0);
      if (grad_d) r.x().add_scaled(*grad_d, lam * r.observed - 1.0);
    } else {
      const double la = lam * r.age;
      nll += log1pexp(ec) - log1pexp(ec - la);
      if (grad_c) r.x().add_scaled(*grad_c, logistic(ec) - logistic(ec - la));
      if (grad_d) r.x().add_scaled(*grad_d, logistic(ec - la) * la);
    }
  }
  return nll;
}

// Joint maximizer of the delayed-feedback likelihood, started from the
// naive fit and the censored-exponential MLE.
inline ConversionFit fit_dfm(const ObservationSnapshot& snap,
                             const EstimatorOptions& opts = {}) {
  if (snap.empty()) throw EmptyInputError("fit_dfm: empty snapshot");
  const int k = snap.dimension;
  ConversionFit fit;
  fit.kind = EstimatorKind::DFM;

  ConversionFit naive = fit_naive(snap, opts);
  VectorXd bc0 = naive.beta_c;
  if (!naive.converged) bc0 = detail::naive_start([&] {
    WeightedLogisticProblem p;
    for (const auto& r : snap.rows) p.add(r.x(), 1.0, r.converted ? 1.0 : 0.0);
    return p;
  }());
  fit.stages.push_back({"start-naive", naive.stages.front().result});

  VectorXd bd0 = VectorXd::Zero(k);
  try {
    DelayFitSet fs = build_fit_set(snap);
    DelayFitResult mle = fit_exponential_mle(fs, opts.newton);
    if (mle.diagnostics.converged) bd0 = mle.model.coefficients;
    fit.stages.push_back({"start-delay", mle.diagnostics});
  } catch (const EmptyInputError&) {
    double exposure = 0.0;
    for (const auto& r : snap.rows) exposure += std::max(r.observed, 1e-12);
    bd0[0] = std::log(0.5 / std::max(exposure, 1e-12));
  }

  const double n = static_cast<double>(snap.size());
  VectorXd gc(k), gd(k);
  auto f = [&](const VectorXd& theta, VectorXd& grad) {
    const VectorXd bc = theta.head(k);
    const VectorXd bd = theta.tail(k);
    const double v = dfm_nll(bc, bd, snap, &gc, &gd);
    grad.head(k) = gc / n;
    grad.tail(k) = gd / n;
    return v / n;
  };
  VectorXd theta0(2 * k);
  theta0.head(k) = bc0;
  theta0.tail(k) = bd0;
  NewtonOptions mopts = opts.newton;
  mopts.max_iterations = std::max(mopts.max_iterations, 400);
  OptimizationResult res = minimize(f, theta0, mopts);
  fit.beta_c = res.argmin.head(k);
  fit.beta_d = res.argmin.tail(k);
  DelayModel dm;
  dm.family = DelayFamily::Exponential;
  dm.coefficients = *fit.beta_d;
  fit.delay = dm;
  fit.converged = res.converged;
  fit.status = res.status;
  fit.iterations = res.iterations;
  if (!res.converged) fit.failure_stage = "dfm-minimize";
  fit.stages.push_back({"dfm-minimize", std::move(res)});
  return fit;
}

struct SeOptions {
  // Propagate the delay-fit coefficient noise through the estimating
  // equation (A^-1 C V_d C' A^-T term). Without it the covariance is the
  // pure plug-in sandwich.
  bool propagate_delay_noise = true;
  double weight_floor = 1e-12;
  double ridge = 1e-10;
};

struct SingularJacobianError : Error {
  explicit SingularJacobianError(const std::string& m) : Error(m) {}
};

// Sandwich covariance of the bias-adjusted coefficient estimate:
//   A = sum H p(1-p) x x',   B = sum (y - p H)^2 x x'
//   Cov = A^-1 (B [+ C V_d C']) A^-T
// where C = sum p (dH/deta_d) x x' maps delay-coefficient noise into the
// estimating function.
inline MatrixXd standard_errors(const ConversionFit& fit,
                                const ObservationSnapshot& snap,
                                const DelayModel& delay,
                                const SeOptions& opts = {}) {
  const int k = snap.dimension;
  MatrixXd a = MatrixXd::Zero(k, k);
  MatrixXd b = MatrixXd::Zero(k, k);
  MatrixXd c = MatrixXd::Zero(k, k);
  const bool weib = delay.family == DelayFamily::Weibull;
  for (const auto& r : snap.rows) {
    const double h = std::min(delay.cdf(r.x(), r.age), 1.0);
    if (h < opts.weight_floor) continue;
    const double p = fit.probability(r.x());
    const double e = (r.converted ? 1.0 : 0.0) - p * h;
    r.x().add_scaled_outer(a, h * p * (1.0 - p));
    r.x().add_scaled_outer(b, e * e);
    if (opts.propagate_delay_noise && fit.delay_information) {
      double dh;  // dH/deta_d at a
      if (weib) {
        const double u = r.age > 0.0
                             ? std::exp(std::min(delay.shape * (std::log(r.age) -
                                                                r.x().dot(delay.coefficients)),
                                                 700.0))
                             : 0.0;
        dh = -delay.shape * u * std::exp(-u);
      } else {
        const double u = r.age * std::exp(r.x().dot(delay.coefficients));
        dh = u * std::exp(-u);
      }
      r.x().add_scaled_outer(c, p * dh);
    }
  }
  a.diagonal().array() += opts.ridge;
  Eigen::LDLT<MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success) {
    throw SingularJacobianError("standard_errors: estimating-equation Jacobian");
  }
  MatrixXd meat = b;
  if (opts.propagate_delay_noise && fit.delay_information) {
    MatrixXd vd = fit.delay_information->ldlt().solve(
        MatrixXd::Identity(k, k));
    meat += c * vd * c.transpose();
  }
  MatrixXd ainv_meat = ldlt.solve(meat);
  MatrixXd cov = ldlt.solve(ainv_meat.transpose()).transpose();
  if (!cov.allFinite()) {
    throw SingularJacobianError("standard_errors: covariance not finite");
  }
  return cov;
}

struct ProbabilityInterval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 1.0;
};

// Inverse standard normal cdf (Acklam's rational approximation).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("normal_quantile: p in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double q, r, x;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= phigh) {
    q = p - 0.5;
    r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  return x;
}

// Per-click Wald intervals for p_i. Logit-scale by default (keeps the
// interval inside (0,1)); probability-scale via the flag.
inline std::vector<ProbabilityInterval> probability_intervals(
    const ConversionFit& fit, const ObservationSnapshot& snap, const MatrixXd& cov,
    double level = 0.95, bool logit_scale = true) {
  const double zq = normal_quantile(0.5 + level / 2.0);
  std::vector<ProbabilityInterval> out;
  out.reserve(snap.size());
  for (const auto& r : snap.rows) {
    const double eta = r.x().dot(fit.beta_c);
    const double se_eta = std::sqrt(std::max(r.x().quadratic_form(cov), 0.0));
    ProbabilityInterval pi;
    pi.estimate = logistic(eta);
    if (logit_scale) {
      pi.lower = logistic(eta - zq * se_eta);
      pi.upper = logistic(eta + zq * se_eta);
    } else {
      const double se_p = pi.estimate * (1.0 - pi.estimate) * se_eta;
      pi.lower = std::max(pi.estimate - zq * se_p, 0.0);
      pi.upper = std::min(pi.estimate + zq * se_p, 1.0);
    }
    out.push_back(pi);
  }
  return out;
}

}  // namespace convest
