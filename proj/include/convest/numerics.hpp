#pragma once

// Optimization kernels: Newton iteration on the weighted logistic score
// with fractional targets, a limited-memory quasi-Newton minimizer, and a
// central-difference gradient checker.

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "convest/core.hpp"

namespace convest {

struct NewtonOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;  // on the mean (per-row) score norm
  int step_halving_limit = 30;
  double ridge = 1e-10;
};

enum class SolveStatus {
  Converged,
  NonConvergence,
  SeparationDetected,
  RankDeficient,
  NonFiniteObjective,
};

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::NonConvergence: return "non-convergence";
    case SolveStatus::SeparationDetected: return "separation";
    case SolveStatus::RankDeficient: return "rank-deficient";
    case SolveStatus::NonFiniteObjective: return "non-finite";
  }
  return "unknown";
}

struct OptimizationResult {
  VectorXd argmin;
  double objective_value = std::numeric_limits<double>::quiet_NaN();
  double gradient_norm = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  SolveStatus status = SolveStatus::NonConvergence;
};

// Rows of a weighted logistic estimating problem:
//   sum_i x_i (w_i * logistic(beta'x_i) - m_i) = 0
// with w_i in (0,1] and targets m_i. Unit multipliers with binary targets
// reproduce maximum-likelihood logistic regression.
struct WeightedLogisticProblem {
  std::vector<const FeatureVector*> rows;
  std::vector<double> multipliers;
  std::vector<double> targets;
  int dimension = 0;

  void reserve(std::size_t n) {
    rows.reserve(n);
    multipliers.reserve(n);
    targets.reserve(n);
  }
  void add(const FeatureVector& x, double w, double m) {
    if (dimension == 0) dimension = x.dimension();
    rows.push_back(&x);
    multipliers.push_back(w);
    targets.push_back(m);
  }
  std::size_t size() const { return rows.size(); }
};

namespace detail {

inline void logistic_score(const WeightedLogisticProblem& p, const VectorXd& beta,
                           VectorXd& score) {
  score.setZero();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double mu = p.multipliers[i] * logistic(p.rows[i]->dot(beta));
    p.rows[i]->add_scaled(score, mu - p.targets[i]);
  }
}

}  // namespace detail

// Coefficients past this magnitude mean the logistic has saturated to
// machine precision; treat the fit as separated.
inline constexpr double kSeparationBound = 30.0;

inline OptimizationResult solve_weighted_logistic_score(
    const WeightedLogisticProblem& p, const VectorXd& start,
    const NewtonOptions& opts = {}) {
  const int k = p.dimension;
  if (p.size() == 0) throw EmptyInputError("solve_weighted_logistic_score: no rows");
  if (start.size() != k) throw DimensionError("solve_weighted_logistic_score: start size");
  double sum_w = 0.0, sum_m = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p.multipliers[i] > 0.0) || p.multipliers[i] > 1.0 + 1e-9) {
      throw Error("solve_weighted_logistic_score: multipliers must lie in (0,1]");
    }
    if (p.targets[i] < -1e-9 || p.targets[i] > 1.0 + 1e-9) {
      throw Error("solve_weighted_logistic_score: targets must lie in [0,1]");
    }
    sum_w += p.multipliers[i];
    sum_m += p.targets[i];
  }
  OptimizationResult res;
  res.argmin = start;
  // A root requires mean logistic strictly inside (0,1); all-saturated
  // targets push the solution to infinity.
  if (sum_m <= 1e-12 * sum_w || sum_m >= sum_w * (1.0 - 1e-12)) {
    res.status = SolveStatus::SeparationDetected;
    return res;
  }

  const double n = static_cast<double>(p.size());
  VectorXd beta = start;
  VectorXd score(k), trial_score(k);
  MatrixXd jac(k, k);
  detail::logistic_score(p, beta, score);
  double score_norm = score.norm();

  for (int it = 0; it < opts.max_iterations; ++it) {
    res.iterations = it;
    if (!std::isfinite(score_norm)) {
      res.status = SolveStatus::NonFiniteObjective;
      res.argmin = beta;
      return res;
    }
    if (score_norm / n <= opts.gradient_tolerance) {
      res.converged = true;
      res.status = SolveStatus::Converged;
      // one polishing step; quadratic convergence puts the returned point
      // far below the stopping tolerance
      jac.setZero();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double pr = logistic(p.rows[i]->dot(beta));
        p.rows[i]->add_scaled_outer(jac, p.multipliers[i] * pr * (1.0 - pr));
      }
      jac.diagonal().array() += opts.ridge;
      Eigen::LDLT<MatrixXd> polish(jac);
      if (polish.info() == Eigen::Success) {
        VectorXd trial = beta - polish.solve(score);
        detail::logistic_score(p, trial, trial_score);
        if (trial_score.allFinite() && trial_score.norm() < score_norm) {
          beta = trial;
          score = trial_score;
          score_norm = score.norm();
        }
      }
      break;
    }
    jac.setZero();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double pr = logistic(p.rows[i]->dot(beta));
      p.rows[i]->add_scaled_outer(jac, p.multipliers[i] * pr * (1.0 - pr));
    }
    jac.diagonal().array() += opts.ridge;
    Eigen::LDLT<MatrixXd> ldlt(jac);
    VectorXd step = ldlt.solve(score);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      res.status = SolveStatus::RankDeficient;
      res.argmin = beta;
      return res;
    }
    bool improved = false;
    for (int h = 0; h <= opts.step_halving_limit; ++h) {
      VectorXd trial = beta - step;
      detail::logistic_score(p, trial, trial_score);
      const double tn = trial_score.norm();
      if (std::isfinite(tn) && tn < score_norm) {
        beta = trial;
        score = trial_score;
        score_norm = tn;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      // Take the smallest step anyway; flat score curvature near the
      // solution can stall the halving test at machine precision.
      beta -= step;
      detail::logistic_score(p, beta, score);
      score_norm = score.norm();
    }
    if (beta.lpNorm<Eigen::Infinity>() > kSeparationBound) {
      res.status = SolveStatus::SeparationDetected;
      res.argmin = beta;
      res.gradient_norm = score_norm / n;
      return res;
    }
  }
  if (!res.converged && score_norm / n <= opts.gradient_tolerance) {
    res.converged = true;
    res.status = SolveStatus::Converged;
  }
  res.argmin = beta;
  res.gradient_norm = score_norm / n;
  return res;
}

// Smooth objective with analytic gradient: f(x, grad_out) -> value.
using ObjectiveFn = std::function<double(const VectorXd&, VectorXd&)>;

// Limited-memory BFGS with a Wolfe line search (sufficient decrease plus
// curvature, bracket-and-zoom). Convergence is on the sup-norm of the
// gradient; callers normalize their objectives so the default tolerance is
// meaningful. Returns the best iterate seen, never one worse than the
// start.
inline OptimizationResult minimize(const ObjectiveFn& f, const VectorXd& start,
                                   const NewtonOptions& opts = {}) {
  const int k = static_cast<int>(start.size());
  const int memory = 10;
  const double c1 = 1e-4;
  const double c2 = 0.9;

  OptimizationResult res;
  VectorXd x = start, grad(k);
  double fx = f(x, grad);
  if (!std::isfinite(fx) || !grad.allFinite()) {
    res.status = SolveStatus::NonFiniteObjective;
    res.argmin = start;
    return res;
  }
  VectorXd best_x = x;
  double best_f = fx;

  std::deque<VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  VectorXd q(k), new_grad(k), x_new(k);

  for (int it = 0; it < opts.max_iterations; ++it) {
    res.iterations = it;
    if (grad.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) {
      res.converged = true;
      res.status = SolveStatus::Converged;
      break;
    }
    // Two-loop recursion.
    q = grad;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    } else {
      q *= 1.0 / std::max(1.0, grad.norm());
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double b = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - b) * s_hist[i];
    }
    VectorXd dir = -q;
    double dg0 = dir.dot(grad);
    if (!(dg0 < 0.0)) {  // not a descent direction; reset to steepest descent
      dir = -grad;
      dg0 = -grad.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    // Wolfe line search: expand to bracket, then bisection zoom.
    double f_new = std::numeric_limits<double>::quiet_NaN();
    bool accepted = false;
    {
      auto eval_at = [&](double a, double& fa, double& ga) {
        x_new = x + a * dir;
        fa = f(x_new, new_grad);
        ga = std::isfinite(fa) && new_grad.allFinite() ? new_grad.dot(dir)
                                                       : std::numeric_limits<double>::quiet_NaN();
      };
      double lo = 0.0, flo = fx, glo = dg0;
      double a = 1.0, hi = -1.0, fhi = 0.0;
      double fa, ga;
      for (int ls = 0; ls < 25 && !accepted; ++ls) {
        eval_at(a, fa, ga);
        if (!std::isfinite(fa) || fa > fx + c1 * a * dg0 || (ls > 0 && fa >= flo)) {
          hi = a;
          fhi = fa;
          break;
        }
        if (std::abs(ga) <= -c2 * dg0) {
          accepted = true;
          f_new = fa;
          break;
        }
        if (ga >= 0.0) {
          hi = lo;
          fhi = flo;
          lo = a;
          flo = fa;
          glo = ga;
          break;
        }
        lo = a;
        flo = fa;
        glo = ga;
        a *= 2.0;
      }
      if (!accepted && hi >= 0.0) {
        for (int z = 0; z < 40 && !accepted; ++z) {
          a = 0.5 * (lo + hi);
          eval_at(a, fa, ga);
          if (!std::isfinite(fa) || fa > fx + c1 * a * dg0 || fa >= flo) {
            hi = a;
            fhi = fa;
          } else {
            if (std::abs(ga) <= -c2 * dg0) {
              accepted = true;
              f_new = fa;
              break;
            }
            if (ga * (hi - lo) >= 0.0) {
              hi = lo;
              fhi = flo;
            }
            lo = a;
            flo = fa;
            glo = ga;
          }
          if (hi - lo < 1e-16 * std::max(1.0, std::abs(lo))) break;
        }
        // fall back to the last sufficient-decrease point
        if (!accepted && flo < fx && lo > 0.0) {
          eval_at(lo, fa, ga);
          if (std::isfinite(fa) && fa < fx) {
            accepted = true;
            f_new = fa;
          }
        }
      }
      (void)fhi;
      (void)glo;
    }
    if (!accepted) {
      res.status = SolveStatus::NonConvergence;
      break;
    }
    VectorXd s = x_new - x;
    VectorXd yv = new_grad - grad;
    const double sy = s.dot(yv);
    if (sy > 1e-10 * s.norm() * yv.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = x_new;
    fx = f_new;
    grad = new_grad;
    if (fx < best_f) {
      best_f = fx;
      best_x = x;
    }
  }
  if (!res.converged && grad.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) {
    res.converged = true;
    res.status = SolveStatus::Converged;
  }
  if (fx < best_f) {
    best_f = fx;
    best_x = x;
  }
  res.argmin = best_x;
  res.objective_value = best_f;
  res.gradient_norm = grad.lpNorm<Eigen::Infinity>();
  return res;
}

// Central finite differences, component-wise.
inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f,
                            const VectorXd& x, double h) {
  if (!(h > 0.0)) throw Error("fd_gradient: h must be positive");
  VectorXd g(x.size());
  VectorXd xp = x, xm = x;
  for (int i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return g;
}

}  // namespace convest
