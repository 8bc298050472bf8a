#pragma once

// Metrics and report aggregation: signed and weighted bias, log-loss on
// eventual statuses, coverage with score-test bands, runtime summaries, and
// the delimited raw-results/report formats.

#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "convest/core.hpp"
#include "convest/estimators.hpp"
#include "convest/simulate.hpp"

namespace convest {

inline double average_bias(const std::vector<double>& true_p,
                           const std::vector<double>& est_p) {
  if (true_p.size() != est_p.size()) throw DimensionError("average_bias: lengths");
  if (true_p.empty()) throw EmptyInputError("average_bias: empty");
  double s = 0.0;
  for (std::size_t i = 0; i < true_p.size(); ++i) s += true_p[i] - est_p[i];
  return s / static_cast<double>(true_p.size());
}

inline double mean_absolute_bias(const std::vector<double>& true_p,
                                 const std::vector<double>& est_p) {
  if (true_p.size() != est_p.size()) throw DimensionError("mean_absolute_bias: lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < true_p.size(); ++i) s += std::abs(true_p[i] - est_p[i]);
  return s / static_cast<double>(true_p.size());
}

struct WeightedBias {
  double value = std::numeric_limits<double>::quiet_NaN();
  int excluded = 0;  // clicks with true p exactly 0 or 1
};

// Each bias weighted by its true standard deviation: w = 1/sqrt(p(1-p)).
inline WeightedBias weighted_bias(const std::vector<double>& true_p,
                                  const std::vector<double>& est_p) {
  if (true_p.size() != est_p.size()) throw DimensionError("weighted_bias: lengths");
  WeightedBias out;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < true_p.size(); ++i) {
    const double p = true_p[i];
    if (!(p > 0.0 && p < 1.0)) {
      ++out.excluded;
      continue;
    }
    const double w = 1.0 / std::sqrt(p * (1.0 - p));
    num += w * (true_p[i] - est_p[i]);
    den += w;
  }
  if (den > 0.0) out.value = num / den;
  return out;
}

// Mean Bernoulli negative log-likelihood of the fit's probabilities against
// eventual statuses; predictions are clamped at 1e-15.
inline double nll(const std::vector<ClickRecord>& test_records, double window,
                  const ConversionFit& fit) {
  if (test_records.empty()) throw EmptyInputError("nll: no test records");
  double s = 0.0;
  for (const auto& rec : test_records) {
    const double p =
        std::min(std::max(fit.probability(rec.features), 1e-15), 1.0 - 1e-15);
    s -= eventual_status(rec, window) ? std::log(p) : std::log(1.0 - p);
  }
  return s / static_cast<double>(test_records.size());
}

struct CoverageBand {
  double lower = 0.0;
  double upper = 1.0;
};

// Non-rejection region of the score test for coverage = level over R
// replicates: level +- 2 sqrt(level(1-level)/R).
inline CoverageBand coverage_band(int replicates, double level = 0.95) {
  if (replicates < 1) throw Error("coverage_band: replicates must be positive");
  const double half = 2.0 * std::sqrt(level * (1.0 - level) / replicates);
  return {level - half, level + half};
}

inline double coverage_fraction(const std::vector<double>& true_p,
                                const std::vector<ProbabilityInterval>& ivs) {
  if (true_p.size() != ivs.size()) throw DimensionError("coverage_fraction: lengths");
  if (true_p.empty()) throw EmptyInputError("coverage_fraction: empty");
  double c = 0.0;
  for (std::size_t i = 0; i < true_p.size(); ++i) {
    if (true_p[i] >= ivs[i].lower && true_p[i] <= ivs[i].upper) c += 1.0;
  }
  return c / static_cast<double>(true_p.size());
}

struct RuntimeSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double ssd = std::numeric_limits<double>::quiet_NaN();  // absent for one sample
  int count = 0;
};

inline RuntimeSummary runtime_summary(const std::vector<double>& seconds) {
  RuntimeSummary s;
  s.count = static_cast<int>(seconds.size());
  if (seconds.empty()) return s;
  double m = 0.0;
  for (double v : seconds) m += v;
  m /= seconds.size();
  s.mean = m;
  if (seconds.size() > 1) {
    double ss = 0.0;
    for (double v : seconds) ss += (v - m) * (v - m);
    s.ssd = std::sqrt(ss / (seconds.size() - 1));
  }
  return s;
}

// One aggregated row per (time step x estimator).
struct ReportRow {
  int step_index = 0;
  EstimatorKind kind = EstimatorKind::Naive;
  double mean_t_days = 0.0;
  int n_fits = 0;
  int n_converged = 0;
  double nonconvergence_rate = 0.0;
  double avg_bias = std::numeric_limits<double>::quiet_NaN();
  double mean_abs_bias = std::numeric_limits<double>::quiet_NaN();
  double weighted_bias = std::numeric_limits<double>::quiet_NaN();
  double nll = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  int coverage_fits = 0;
  double mean_wall_seconds = std::numeric_limits<double>::quiet_NaN();
  double ssd_wall_seconds = std::numeric_limits<double>::quiet_NaN();
};

struct EvaluationReport {
  std::vector<ReportRow> rows;
};

// Aggregates raw fit records (and optional timings) into the report.
// Non-converged fits count toward the non-convergence rate and are
// excluded from the metric means, mirroring the excluded-estimates
// convention.
inline EvaluationReport aggregate(const std::vector<FitRecord>& fits,
                                  const std::vector<TimingRecord>& timings = {}) {
  std::map<std::pair<int, int>, ReportRow> rows;
  std::map<std::pair<int, int>, std::vector<double>> walls;
  std::map<std::pair<int, int>, double> tsum;
  std::map<std::pair<int, int>, std::array<double, 5>> sums;
  std::map<std::pair<int, int>, int> cov_n;
  for (const auto& f : fits) {
    const auto key = std::make_pair(f.step_index, static_cast<int>(f.kind));
    auto& row = rows[key];
    row.step_index = f.step_index;
    row.kind = f.kind;
    ++row.n_fits;
    tsum[key] += f.t_days;
    if (f.converged) {
      ++row.n_converged;
      auto& s = sums[key];
      s[0] += f.avg_bias;
      s[1] += f.mean_abs_bias;
      if (std::isfinite(f.weighted_bias)) s[2] += f.weighted_bias;
      s[3] += f.nll_eventual;
      if (std::isfinite(f.coverage)) {
        s[4] += f.coverage;
        ++cov_n[key];
      }
    }
  }
  for (const auto& t : timings) {
    walls[std::make_pair(t.step_index, static_cast<int>(t.kind))].push_back(
        t.wall_seconds);
  }
  EvaluationReport report;
  for (auto& [key, row] : rows) {
    row.mean_t_days = tsum[key] / row.n_fits;
    row.nonconvergence_rate =
        1.0 - static_cast<double>(row.n_converged) / row.n_fits;
    if (row.n_converged > 0) {
      const auto& s = sums[key];
      row.avg_bias = s[0] / row.n_converged;
      row.mean_abs_bias = s[1] / row.n_converged;
      row.weighted_bias = s[2] / row.n_converged;
      row.nll = s[3] / row.n_converged;
      row.coverage_fits = cov_n[key];
      if (cov_n[key] > 0) row.coverage = s[4] / cov_n[key];
    }
    auto it = walls.find(key);
    if (it != walls.end()) {
      const auto rs = runtime_summary(it->second);
      row.mean_wall_seconds = rs.mean;
      row.ssd_wall_seconds = rs.ssd;
    }
    report.rows.push_back(row);
  }
  return report;
}

// ---------- delimited I/O ----------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kResultsHeader =
    "replicate\tstep\tt_days\testimator\tn\tstatus\tconverged\titerations\t"
    "avg_bias\tmean_abs_bias\tweighted_bias\tweighted_excluded\tnll\t"
    "coverage\tmean_p_hat\tmean_p_true";

inline void write_results(std::ostream& os, const std::vector<FitRecord>& fits) {
  os << kResultsHeader << "\n";
  for (const auto& f : fits) {
    os << f.replicate << '\t' << f.step_index << '\t' << detail::fmt_double(f.t_days)
       << '\t' << to_string(f.kind) << '\t' << f.n_rows << '\t'
       << to_string(f.status) << '\t' << (f.converged ? 1 : 0) << '\t'
       << f.iterations << '\t' << detail::fmt_double(f.avg_bias) << '\t'
       << detail::fmt_double(f.mean_abs_bias) << '\t'
       << detail::fmt_double(f.weighted_bias) << '\t' << f.weighted_excluded
       << '\t' << detail::fmt_double(f.nll_eventual) << '\t'
       << detail::fmt_double(f.coverage) << '\t'
       << detail::fmt_double(f.mean_p_hat) << '\t'
       << detail::fmt_double(f.mean_p_true) << "\n";
  }
}

inline std::vector<FitRecord> read_results(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kResultsHeader) {
    throw Error("read_results: missing or unexpected header");
  }
  std::vector<FitRecord> fits;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 16) {
      throw Error("read_results: line " + std::to_string(lineno) + ": expected 16 fields");
    }
    FitRecord f;
    f.replicate = std::stoi(fields[0]);
    f.step_index = std::stoi(fields[1]);
    f.t_days = std::stod(fields[2]);
    const auto kind = estimator_from_string(fields[3]);
    if (!kind) throw Error("read_results: unknown estimator " + fields[3]);
    f.kind = *kind;
    f.n_rows = std::stoi(fields[4]);
    f.status = fields[5] == "converged"      ? SolveStatus::Converged
               : fields[5] == "separation"    ? SolveStatus::SeparationDetected
               : fields[5] == "rank-deficient" ? SolveStatus::RankDeficient
               : fields[5] == "non-finite"     ? SolveStatus::NonFiniteObjective
                                               : SolveStatus::NonConvergence;
    f.converged = fields[6] == "1";
    f.iterations = std::stoi(fields[7]);
    f.avg_bias = std::stod(fields[8]);
    f.mean_abs_bias = std::stod(fields[9]);
    f.weighted_bias = std::stod(fields[10]);
    f.weighted_excluded = std::stoi(fields[11]);
    f.nll_eventual = std::stod(fields[12]);
    f.coverage = std::stod(fields[13]);
    f.mean_p_hat = std::stod(fields[14]);
    f.mean_p_true = std::stod(fields[15]);
    fits.push_back(f);
  }
  return fits;
}

inline constexpr const char* kTimingsHeader =
    "replicate\tstep\testimator\twall_seconds";

inline void write_timings(std::ostream& os, const std::vector<TimingRecord>& ts) {
  os << kTimingsHeader << "\n";
  for (const auto& t : ts) {
    os << t.replicate << '\t' << t.step_index << '\t' << to_string(t.kind) << '\t'
       << detail::fmt_double(t.wall_seconds) << "\n";
  }
}

inline std::vector<TimingRecord> read_timings(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kTimingsHeader) {
    throw Error("read_timings: missing or unexpected header");
  }
  std::vector<TimingRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f0, f1, f2, f3;
    std::getline(ss, f0, '\t');
    std::getline(ss, f1, '\t');
    std::getline(ss, f2, '\t');
    std::getline(ss, f3, '\t');
    const auto kind = estimator_from_string(f2);
    if (!kind) throw Error("read_timings: unknown estimator " + f2);
    out.push_back({std::stoi(f0), std::stoi(f1), *kind, std::stod(f3)});
  }
  return out;
}

inline constexpr const char* kReportHeader =
    "step\tmean_t_days\testimator\tn_fits\tn_converged\tnonconvergence_rate\t"
    "avg_bias\tmean_abs_bias\tweighted_bias\tnll\tcoverage\tcoverage_fits\t"
    "mean_wall_seconds\tssd_wall_seconds";

inline void write_report(std::ostream& os, const EvaluationReport& rep) {
  os << kReportHeader << "\n";
  for (const auto& r : rep.rows) {
    os << r.step_index << '\t' << detail::fmt_double(r.mean_t_days) << '\t'
       << to_string(r.kind) << '\t' << r.n_fits << '\t' << r.n_converged << '\t'
       << detail::fmt_double(r.nonconvergence_rate) << '\t'
       << detail::fmt_double(r.avg_bias) << '\t'
       << detail::fmt_double(r.mean_abs_bias) << '\t'
       << detail::fmt_double(r.weighted_bias) << '\t' << detail::fmt_double(r.nll)
       << '\t' << detail::fmt_double(r.coverage) << '\t' << r.coverage_fits << '\t'
       << detail::fmt_double(r.mean_wall_seconds) << '\t'
       << detail::fmt_double(r.ssd_wall_seconds) << "\n";
  }
}

inline void write_report_text(std::ostream& os, const EvaluationReport& rep) {
  os << "step  t(days)  estimator            conv     bias      |bias|    nll      "
        "coverage  wall(s)\n";
  char buf[256];
  for (const auto& r : rep.rows) {
    char cov[16], wall[16];
    if (std::isfinite(r.coverage)) std::snprintf(cov, sizeof(cov), "%.4f", r.coverage);
    else std::snprintf(cov, sizeof(cov), "-");
    if (std::isfinite(r.mean_wall_seconds)) {
      std::snprintf(wall, sizeof(wall), "%.4f", r.mean_wall_seconds);
    } else {
      std::snprintf(wall, sizeof(wall), "-");
    }
    std::snprintf(buf, sizeof(buf),
                  "%4d  %7.2f  %-19s  %3d/%-3d  %+8.4f  %8.4f  %7.4f  %8s  %s\n",
                  r.step_index, r.mean_t_days, to_string(r.kind), r.n_converged,
                  r.n_fits, r.avg_bias, r.mean_abs_bias, r.nll, cov, wall);
    os << buf;
  }
}

}  // namespace convest
