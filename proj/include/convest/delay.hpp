#pragma once

// Censored delay-distribution fitting: plain MLE and Firth-type
// bias-reduced fits for exponential delays and Weibull delays with fixed
// shape, plus delay cdf evaluation used as adjustment weights.
//
// Two likelihood modes are supported:
//   CensoredSurvival    converted rows contribute the density, censored
//                       rows the survival at z = a (the eventual-converter
//                       set treatment).
//   TruncatedConverted  converted rows only, density conditioned on the
//                       conversion being observable by age a: h(z)/H(a).
//                       This is the consistent choice when the fit set is
//                       approximated from observables, because unconverted
//                       young clicks are dominated by never-converters.
//
// The Firth-type fits are two-stage: plain MLE, then re-solve with the
// linear penalty -gamma'beta where gamma is the first-order bias term of
// the score expansion evaluated at the MLE. In the uncensored
// intercept-only exponential case this reproduces lambda = (n - 1/2)/T.

#include <cmath>
#include <string>
#include <vector>

#include "convest/core.hpp"
#include "convest/numerics.hpp"

namespace convest {

enum class DelayFamily { Exponential, Weibull };

struct DelayModel {
  DelayFamily family = DelayFamily::Exponential;
  VectorXd coefficients;  // rate lambda_i = exp(b'x) or scale gamma_i = exp(b'x)
  double shape = 1.0;     // nu, meaningful only for Weibull

  double cdf(const FeatureVector& x, double age) const {
    if (age <= 0.0) return 0.0;
    const double eta = x.dot(coefficients);
    if (family == DelayFamily::Exponential) {
      return -std::expm1(-age * std::exp(eta));
    }
    const double u = std::exp(shape * (std::log(age) - eta));
    return -std::expm1(-u);
  }
};

inline double exponential_cdf(const DelayModel& m, const FeatureVector& x, double a) {
  if (m.family != DelayFamily::Exponential) throw Error("exponential_cdf: wrong family");
  return m.cdf(x, a);
}

inline double weibull_cdf(const DelayModel& m, const FeatureVector& x, double a) {
  if (m.family != DelayFamily::Weibull) throw Error("weibull_cdf: wrong family");
  if (!(m.shape > 0.0)) throw Error("weibull_cdf: shape must be positive");
  return m.cdf(x, a);
}

struct DelayObservation {
  const FeatureVector* features = nullptr;
  double observed = 0.0;  // z_i
  double age = 0.0;       // a_i
  bool converted = false;

  const FeatureVector& x() const { return *features; }
};

// The estimation subset: converted clicks plus unconverted clicks younger
// than the window.
struct DelayFitSet {
  int dimension = 0;
  double window = 0.0;
  std::vector<DelayObservation> rows;

  std::size_t size() const { return rows.size(); }
  std::size_t converted_count() const {
    std::size_t c = 0;
    for (const auto& r : rows) c += r.converted ? 1 : 0;
    return c;
  }
};

inline DelayFitSet build_fit_set(const ObservationSnapshot& snap) {
  DelayFitSet fs;
  fs.dimension = snap.dimension;
  fs.window = snap.window;
  fs.rows.reserve(snap.rows.size());
  for (const auto& r : snap.rows) {
    if (!r.converted && r.age >= snap.window) continue;
    fs.rows.push_back({r.features, r.observed, r.age, r.converted});
  }
  if (fs.rows.empty()) throw EmptyInputError("build_fit_set: empty fit set");
  return fs;
}

enum class DelayLikelihood { CensoredSurvival, TruncatedConverted };

struct DelayFitOptions {
  NewtonOptions newton;
  DelayLikelihood likelihood = DelayLikelihood::CensoredSurvival;
  bool bias_reduce = false;
  // Evaluate the penalty's information ingredients at z_i instead of a_i
  // (sensitivity variant; identical for censored rows where z = a).
  bool penalty_info_at_z = false;
  double shape_min = 0.05;
  double shape_max = 20.0;
};

struct DelayFitResult {
  DelayModel model;
  OptimizationResult diagnostics;
  OptimizationResult shape_diagnostics;  // Weibull stage 1 only
  MatrixXd information;  // observed information of beta at the optimum
  int rows_used = 0;
  int zero_age_excluded = 0;
  bool shape_out_of_range = false;
};

namespace detail {

// phi(u) = u e^-u / (1 - e^-u) and derivatives, stable near u = 0.
struct Phi {
  double phi, dphi, d2phi;
};
inline Phi phi_eval(double u) {
  if (u < 1e-6) {
    return {1.0 - 0.5 * u + u * u / 12.0, -0.5 + u / 6.0, 1.0 / 6.0};
  }
  const double e = std::exp(-u);
  const double om = -std::expm1(-u);
  const double phi = u * e / om;
  const double dphi = e * (1.0 - u - e) / (om * om);
  const double d2phi = e * (u + u * e + 2.0 * e - 2.0) / (om * om * om);
  return {phi, dphi, d2phi};
}

// Per-row expected information and third-order combination
// c3 = kappa_111/2 + kappa_11,1 in the eta parameterization, for the
// exponential model (nu = 1); Weibull rows scale by powers of nu.
struct RowCurvature {
  double info;  // -E[l'']
  double c3;
};

inline RowCurvature censored_curvature(double u) {
  // v = min(Exp(1), u): E[v] = H, E[v^2] = 2 psi, E[v c] = psi.
  if (u < 1e-8) {
    const double H = u;
    const double psi = 0.5 * u * u;
    return {H, 2.0 * psi - 0.5 * H};
  }
  const double e = std::exp(-u);
  const double H = -std::expm1(-u);
  const double psi = H - u * e;
  // kappa_111 = -H, kappa_11,1 = +psi
  return {H, psi - 0.5 * H};
}

inline RowCurvature truncated_curvature(double u) {
  if (u < 1e-6) {
    return {u * u / 12.0, -u * u / 24.0};
  }
  const auto p = phi_eval(u);
  const double e = std::exp(-u);
  const double H = -std::expm1(-u);
  const double M1 = 1.0 - p.phi;
  const double psi2 = 1.0 - e * (1.0 + u + 0.5 * u * u);
  const double M2 = 2.0 * psi2 / H;
  const double var = M2 - M1 * M1;
  const double B = u * p.dphi;
  const double info = M1 + B;
  // kappa_111 = -(M1 + B + u^2 phi''), kappa_11,1 = +Var(v)
  const double c3 = -0.5 * (M1 + B + u * u * p.d2phi) + var;
  return {info, c3};
}

}  // namespace detail

// Censored exponential regression (optionally truncated mode, optionally
// with a fixed linear penalty -gamma'beta). Newton with analytic
// gradient/Hessian on the concave log-likelihood.
inline DelayFitResult fit_exponential(const DelayFitSet& fs,
                                      const DelayFitOptions& opts = {},
                                      const VectorXd* penalty_gamma = nullptr) {
  const int k = fs.dimension;
  const bool truncated = opts.likelihood == DelayLikelihood::TruncatedConverted;

  std::vector<const DelayObservation*> rows;
  rows.reserve(fs.size());
  int zero_age_excluded = 0;
  for (const auto& r : fs.rows) {
    if (truncated) {
      if (!r.converted) continue;
      if (r.age <= 0.0) {
        ++zero_age_excluded;
        continue;
      }
    } else if (!r.converted && r.observed <= 0.0 &&
               (opts.bias_reduce || penalty_gamma)) {
      // zero-age censored rows carry no information and would put a log(0)
      // in the classic penalty; excluded with a count
      ++zero_age_excluded;
      continue;
    }
    rows.push_back(&r);
  }
  DelayFitResult out;
  out.zero_age_excluded = zero_age_excluded;
  out.rows_used = static_cast<int>(rows.size());
  if (rows.empty()) throw EmptyInputError("fit_exponential: no usable rows");
  const double n = static_cast<double>(rows.size());

  const auto objective = [&](const VectorXd& b) {
    double o = 0.0;
    for (const auto* r : rows) {
      const double eta = r->x().dot(b);
      const double lam = std::exp(eta);
      if (r->converted) o += eta - lam * r->observed;
      else o += -lam * r->observed;
      if (truncated) {
        const double om = -std::expm1(-r->age * lam);
        o -= std::log(std::max(om, 1e-300));
      }
    }
    if (penalty_gamma) o -= penalty_gamma->dot(b);
    return o;
  };

  VectorXd beta = VectorXd::Zero(k);
  {
    double events = 0.0, exposure = 0.0;
    for (const auto* r : rows) {
      events += r->converted ? 1.0 : 0.0;
      exposure += r->observed;
    }
    beta[0] = std::log(std::max(events, 0.5) / std::max(exposure, 1e-12));
  }

  VectorXd grad(k);
  MatrixXd info(k, k);
  // expected = true builds the Fisher-information matrix (always positive
  // row-wise); otherwise the observed -l'' is used for quadratic local
  // convergence.
  auto eval = [&](const VectorXd& b, VectorXd& g, MatrixXd& h, bool expected) {
    g.setZero();
    h.setZero();
    for (const auto* r : rows) {
      const double lam = std::exp(r->x().dot(b));
      double gs, w;
      if (truncated) {
        const double u = r->age * lam;
        const auto p = detail::phi_eval(u);
        gs = 1.0 - lam * r->observed - p.phi;
        w = expected ? (1.0 - p.phi) + u * p.dphi
                     : lam * r->observed + u * p.dphi;
      } else {
        gs = (r->converted ? 1.0 : 0.0) - lam * r->observed;
        w = lam * r->observed;
      }
      r->x().add_scaled(g, gs);
      r->x().add_scaled_outer(h, truncated && !expected ? w : std::max(w, 0.0));
    }
    if (penalty_gamma) g -= *penalty_gamma;
    h.diagonal().array() += opts.newton.ridge;
  };

  OptimizationResult diag;
  bool done = false;
  for (int it = 0; it < opts.newton.max_iterations && !done; ++it) {
    diag.iterations = it;
    eval(beta, grad, info, false);
    if (!grad.allFinite()) {
      diag.status = SolveStatus::NonFiniteObjective;
      break;
    }
    if (grad.norm() / n <= opts.newton.gradient_tolerance) {
      diag.converged = true;
      diag.status = SolveStatus::Converged;
      done = true;
      break;
    }
    Eigen::LDLT<MatrixXd> ldlt(info);
    VectorXd step = ldlt.solve(grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite() || step.dot(grad) <= 0.0) {
      // indefinite observed curvature away from the optimum; retry with
      // the Fisher information
      eval(beta, grad, info, true);
      Eigen::LDLT<MatrixXd> ldlt2(info);
      step = ldlt2.solve(grad);
      if (ldlt2.info() != Eigen::Success || !step.allFinite()) {
        diag.status = SolveStatus::RankDeficient;
        break;
      }
    }
    const double o0 = objective(beta);
    for (int h = 0; h <= opts.newton.step_halving_limit; ++h) {
      if (objective(beta + step) > o0 - 1e-12) break;
      step *= 0.5;
    }
    beta += step;
    if (beta.lpNorm<Eigen::Infinity>() > kSeparationBound) {
      diag.status = SolveStatus::SeparationDetected;
      break;
    }
  }
  eval(beta, grad, info, false);
  diag.argmin = beta;
  diag.gradient_norm = grad.norm() / n;
  diag.objective_value = -objective(beta);
  if (!diag.converged && diag.gradient_norm <= opts.newton.gradient_tolerance &&
      diag.status != SolveStatus::SeparationDetected &&
      diag.status != SolveStatus::RankDeficient) {
    diag.converged = true;
    diag.status = SolveStatus::Converged;
  }

  out.model.family = DelayFamily::Exponential;
  out.model.coefficients = beta;
  out.diagnostics = diag;
  out.information = info;

  if ((opts.bias_reduce && penalty_gamma == nullptr) && diag.converged) {
    // First-order bias term of the score expansion at the MLE.
    MatrixXd expinfo = MatrixXd::Zero(k, k);
    std::vector<detail::RowCurvature> cur(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto* r = rows[i];
      const double lam = std::exp(r->x().dot(beta));
      const double arg = opts.penalty_info_at_z ? r->observed : r->age;
      const double u = std::max(arg, 0.0) * lam;
      cur[i] = truncated ? detail::truncated_curvature(u)
                         : detail::censored_curvature(u);
      r->x().add_scaled_outer(expinfo, cur[i].info);
    }
    expinfo.diagonal().array() += opts.newton.ridge;
    Eigen::LDLT<MatrixXd> ldlt(expinfo);
    if (ldlt.info() != Eigen::Success) {
      out.diagnostics.status = SolveStatus::RankDeficient;
      out.diagnostics.converged = false;
      return out;
    }
    VectorXd gamma = VectorXd::Zero(k);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const VectorXd xd = rows[i]->x().to_dense();
      const double q = xd.dot(ldlt.solve(xd));
      rows[i]->x().add_scaled(gamma, q * cur[i].c3);
    }
    DelayFitOptions stage2 = opts;
    stage2.bias_reduce = false;
    DelayFitResult reduced = fit_exponential(fs, stage2, &gamma);
    reduced.zero_age_excluded = out.zero_age_excluded;
    reduced.shape_diagnostics = out.diagnostics;  // keep the MLE stage record
    return reduced;
  }
  return out;
}

// Spec-facing wrappers.
inline DelayFitResult fit_exponential_mle(const DelayFitSet& fs,
                                          const NewtonOptions& newton = {}) {
  DelayFitOptions o;
  o.newton = newton;
  return fit_exponential(fs, o);
}

inline DelayFitResult fit_exponential_firth(const DelayFitSet& fs,
                                            const NewtonOptions& newton = {}) {
  DelayFitOptions o;
  o.newton = newton;
  o.bias_reduce = true;
  return fit_exponential(fs, o);
}

namespace detail {

struct WeibullData {
  std::vector<const DelayObservation*> rows;
  int zero_age_excluded = 0;
};

inline WeibullData weibull_rows(const DelayFitSet& fs, bool truncated) {
  WeibullData wd;
  wd.rows.reserve(fs.size());
  for (const auto& r : fs.rows) {
    if (truncated) {
      if (!r.converted) continue;
      if (r.age <= 0.0) {
        ++wd.zero_age_excluded;
        continue;
      }
    } else if (!r.converted && r.observed <= 0.0) {
      ++wd.zero_age_excluded;
      continue;
    }
    wd.rows.push_back(&r);
  }
  return wd;
}

// Mean-normalized negative log-likelihood of the fixed-or-free-shape
// Weibull model over theta = [rho = log nu, beta...]; analytic gradient.
inline double weibull_nll(const std::vector<const DelayObservation*>& rows,
                          bool truncated, const VectorXd& theta, VectorXd& grad) {
  const double n = static_cast<double>(rows.size());
  const double rho = theta[0];
  const double nu = std::exp(rho);
  grad.setZero();
  double nll = 0.0;
  for (const auto* r : rows) {
    double eta = 0.0;
    for (const auto& [i, v] : r->x().entries()) eta += theta[i + 1] * v;
    const double zc = std::max(r->observed, 1e-9);
    const double mz = std::log(zc) - eta;
    const double uz = std::exp(std::min(nu * mz, 700.0));
    double ll, geta, grho;
    if (r->converted) {
      ll = rho + (nu - 1.0) * std::log(zc) - nu * eta - uz;
      geta = nu * (uz - 1.0);
      grho = 1.0 + nu * mz - nu * mz * uz;
    } else {
      ll = -uz;
      geta = nu * uz;
      grho = -nu * mz * uz;
    }
    if (truncated) {
      const double ma = std::log(std::max(r->age, 1e-9)) - eta;
      const double ua = std::exp(std::min(nu * ma, 700.0));
      const double om = std::max(-std::expm1(-ua), 1e-300);
      const auto p = phi_eval(ua);
      ll -= std::log(om);
      geta += nu * p.phi;
      grho -= nu * ma * p.phi;
    }
    nll -= ll;
    grad[0] -= grho;
    for (const auto& [i, v] : r->x().entries()) grad[i + 1] -= geta * v;
  }
  grad /= n;
  return nll / n;
}

}  // namespace detail

// Censored/truncated Weibull fit with fixed shape: Newton over the scale
// coefficients, optional anchored bias-reduction penalty.
inline DelayFitResult fit_weibull_fixed_shape(const DelayFitSet& fs, double nu,
                                              const DelayFitOptions& opts = {},
                                              const VectorXd* penalty_gamma = nullptr) {
  const int k = fs.dimension;
  const bool truncated = opts.likelihood == DelayLikelihood::TruncatedConverted;
  auto wd = detail::weibull_rows(fs, truncated);
  const auto& rows = wd.rows;
  DelayFitResult out;
  out.zero_age_excluded = wd.zero_age_excluded;
  out.rows_used = static_cast<int>(rows.size());
  if (rows.empty()) throw EmptyInputError("fit_weibull_fixed_shape: no usable rows");
  const double n = static_cast<double>(rows.size());

  const auto objective = [&](const VectorXd& b) {
    double o = 0.0;
    for (const auto* r : rows) {
      const double eta = r->x().dot(b);
      const double zc = std::max(r->observed, 1e-9);
      const double uz = std::exp(std::min(nu * (std::log(zc) - eta), 700.0));
      if (r->converted) o += (nu - 1.0) * std::log(zc) - nu * eta - uz;
      else o += -uz;
      if (truncated) {
        const double ua =
            std::exp(std::min(nu * (std::log(std::max(r->age, 1e-9)) - eta), 700.0));
        o -= std::log(std::max(-std::expm1(-ua), 1e-300));
      }
    }
    if (penalty_gamma) o -= penalty_gamma->dot(b);
    return o;
  };

  VectorXd beta = VectorXd::Zero(k);
  {
    // intercept-only closed form: gamma^nu = sum z^nu / events
    double events = 0.0, upow = 0.0;
    for (const auto* r : rows) {
      events += r->converted ? 1.0 : 0.0;
      upow += std::pow(std::max(r->observed, 1e-9), nu);
    }
    beta[0] = std::log(std::max(upow, 1e-12) / std::max(events, 0.5)) / nu;
  }

  VectorXd grad(k);
  MatrixXd info(k, k);
  auto eval = [&](const VectorXd& b, VectorXd& g, MatrixXd& h) {
    g.setZero();
    h.setZero();
    for (const auto* r : rows) {
      const double eta = r->x().dot(b);
      const double zc = std::max(r->observed, 1e-9);
      const double uz = std::exp(std::min(nu * (std::log(zc) - eta), 700.0));
      double gs, w;
      if (truncated) {
        const double ua =
            std::exp(std::min(nu * (std::log(std::max(r->age, 1e-9)) - eta), 700.0));
        const auto p = detail::phi_eval(ua);
        gs = nu * (uz - 1.0 + p.phi);
        w = nu * nu * ((1.0 - p.phi) + ua * p.dphi);
      } else {
        gs = nu * (uz - (r->converted ? 1.0 : 0.0));
        w = nu * nu * uz;
      }
      r->x().add_scaled(g, gs);
      r->x().add_scaled_outer(h, std::max(w, 0.0));
    }
    if (penalty_gamma) g -= *penalty_gamma;
    h.diagonal().array() += opts.newton.ridge;
  };

  OptimizationResult diag;
  for (int it = 0; it < opts.newton.max_iterations; ++it) {
    diag.iterations = it;
    eval(beta, grad, info);
    if (!grad.allFinite()) {
      diag.status = SolveStatus::NonFiniteObjective;
      break;
    }
    if (grad.norm() / n <= opts.newton.gradient_tolerance) {
      diag.converged = true;
      diag.status = SolveStatus::Converged;
      break;
    }
    Eigen::LDLT<MatrixXd> ldlt(info);
    VectorXd step = ldlt.solve(grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      diag.status = SolveStatus::RankDeficient;
      break;
    }
    const double o0 = objective(beta);
    for (int h = 0; h <= opts.newton.step_halving_limit; ++h) {
      if (objective(beta + step) > o0 - 1e-12) break;
      step *= 0.5;
    }
    beta += step;
    if (beta.lpNorm<Eigen::Infinity>() > kSeparationBound) {
      diag.status = SolveStatus::SeparationDetected;
      break;
    }
  }
  eval(beta, grad, info);
  diag.argmin = beta;
  diag.gradient_norm = grad.norm() / n;
  diag.objective_value = -objective(beta);
  if (!diag.converged && diag.gradient_norm <= opts.newton.gradient_tolerance &&
      diag.status != SolveStatus::SeparationDetected &&
      diag.status != SolveStatus::RankDeficient) {
    diag.converged = true;
    diag.status = SolveStatus::Converged;
  }
  out.model.family = DelayFamily::Weibull;
  out.model.coefficients = beta;
  out.model.shape = nu;
  out.diagnostics = diag;
  out.information = info;

  if (opts.bias_reduce && penalty_gamma == nullptr && diag.converged) {
    MatrixXd expinfo = MatrixXd::Zero(k, k);
    std::vector<detail::RowCurvature> cur(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto* r = rows[i];
      const double eta = r->x().dot(beta);
      const double arg = opts.penalty_info_at_z ? r->observed : r->age;
      const double u =
          std::exp(std::min(nu * (std::log(std::max(arg, 1e-9)) - eta), 700.0));
      auto c = truncated ? detail::truncated_curvature(u)
                         : detail::censored_curvature(u);
      // eta-parameterization scaling: info by nu^2, third order by -nu^3
      // (the Weibull score is the sign-flipped exponential score in u).
      cur[i] = {nu * nu * c.info, -nu * nu * nu * c.c3};
      r->x().add_scaled_outer(expinfo, cur[i].info);
    }
    expinfo.diagonal().array() += opts.newton.ridge;
    Eigen::LDLT<MatrixXd> ldlt(expinfo);
    if (ldlt.info() != Eigen::Success) {
      out.diagnostics.status = SolveStatus::RankDeficient;
      out.diagnostics.converged = false;
      return out;
    }
    VectorXd gamma = VectorXd::Zero(k);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const VectorXd xd = rows[i]->x().to_dense();
      const double q = xd.dot(ldlt.solve(xd));
      rows[i]->x().add_scaled(gamma, q * cur[i].c3);
    }
    DelayFitOptions stage2 = opts;
    stage2.bias_reduce = false;
    DelayFitResult reduced = fit_weibull_fixed_shape(fs, nu, stage2, &gamma);
    reduced.zero_age_excluded = out.zero_age_excluded;
    reduced.shape_diagnostics = out.diagnostics;
    return reduced;
  }
  return out;
}

// Joint censored Weibull MLE of (nu, beta) by quasi-Newton.
inline DelayFitResult fit_weibull_mle(const DelayFitSet& fs,
                                      const DelayFitOptions& opts = {}) {
  const int k = fs.dimension;
  const bool truncated = opts.likelihood == DelayLikelihood::TruncatedConverted;
  auto wd = detail::weibull_rows(fs, truncated);
  DelayFitResult out;
  out.zero_age_excluded = wd.zero_age_excluded;
  out.rows_used = static_cast<int>(wd.rows.size());
  if (wd.rows.empty()) throw EmptyInputError("fit_weibull_mle: no usable rows");

  VectorXd theta0 = VectorXd::Zero(k + 1);
  {
    double mean_z = 0.0;
    for (const auto* r : wd.rows) mean_z += std::max(r->observed, 1e-9);
    mean_z /= static_cast<double>(wd.rows.size());
    theta0[1] = std::log(std::max(mean_z, 1e-6));
  }
  NewtonOptions mopts = opts.newton;
  mopts.max_iterations = std::max(mopts.max_iterations, 300);
  auto f = [&](const VectorXd& th, VectorXd& g) {
    return detail::weibull_nll(wd.rows, truncated, th, g);
  };
  OptimizationResult r = minimize(f, theta0, mopts);
  out.diagnostics = r;
  out.model.family = DelayFamily::Weibull;
  out.model.shape = std::exp(r.argmin[0]);
  out.model.coefficients = r.argmin.tail(k);
  if (out.model.shape < opts.shape_min || out.model.shape > opts.shape_max) {
    out.shape_out_of_range = true;
  }
  return out;
}

// Two-stage Weibull fit: shape by its MLE, then the bias-reduced
// fixed-shape fit of the scale coefficients.
inline DelayFitResult fit_weibull_firth(const DelayFitSet& fs,
                                        const DelayFitOptions& opts_in = {}) {
  DelayFitOptions opts = opts_in;
  DelayFitResult stage1 = fit_weibull_mle(fs, opts);
  if (stage1.shape_out_of_range || !stage1.diagnostics.converged) {
    stage1.shape_diagnostics = stage1.diagnostics;
    return stage1;
  }
  opts.bias_reduce = true;
  DelayFitResult stage2 = fit_weibull_fixed_shape(fs, stage1.model.shape, opts);
  stage2.shape_diagnostics = stage1.diagnostics;
  return stage2;
}

}  // namespace convest
