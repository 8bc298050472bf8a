#pragma once

// Core data model: sparse feature vectors, click records, and the
// time-indexed observation snapshot shared by every estimator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace convest {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Contract violations (bad inputs, dimension mismatches) throw; numerical
// outcomes such as non-convergence are reported through result statuses.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};
struct EmptyInputError : Error {
  explicit EmptyInputError(const std::string& msg) : Error(msg) {}
};

// logistic(eta) = exp(eta)/(1+exp(eta)), branch form so neither tail
// overflows. The result stays inside the open interval (0,1).
inline double logistic(double eta) {
  if (eta >= 0.0) {
    const double v = 1.0 / (1.0 + std::exp(-eta));
    return std::min(v, 1.0 - std::numeric_limits<double>::epsilon() / 2.0);
  }
  const double e = std::exp(eta);
  return std::max(e / (1.0 + e), std::numeric_limits<double>::denorm_min());
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Sparse covariate row. Entry 0 is always the intercept with value 1 and
// indices are strictly increasing below `dimension`.
class FeatureVector {
 public:
  FeatureVector() = default;
  FeatureVector(std::vector<std::pair<int, double>> entries, int dimension)
      : entries_(std::move(entries)), dimension_(dimension) {
    validate();
  }

  // Dense-construction convenience used by tests and the simulator.
  static FeatureVector from_dense(const VectorXd& v) {
    std::vector<std::pair<int, double>> e;
    for (int i = 0; i < v.size(); ++i) {
      if (v[i] != 0.0) e.emplace_back(i, v[i]);
    }
    return FeatureVector(std::move(e), static_cast<int>(v.size()));
  }

  int dimension() const { return dimension_; }
  const std::vector<std::pair<int, double>>& entries() const { return entries_; }

  double dot(const VectorXd& beta) const {
    if (beta.size() != dimension_) {
      throw DimensionError("FeatureVector::dot: coefficient length " +
                           std::to_string(beta.size()) + " != dimension " +
                           std::to_string(dimension_));
    }
    double s = 0.0;
    for (const auto& [i, v] : entries_) s += beta[i] * v;
    return s;
  }

  // y += c * x
  void add_scaled(VectorXd& y, double c) const {
    for (const auto& [i, v] : entries_) y[i] += c * v;
  }

  // M += c * x x'
  void add_scaled_outer(MatrixXd& m, double c) const {
    for (const auto& [i, vi] : entries_) {
      for (const auto& [j, vj] : entries_) m(i, j) += c * vi * vj;
    }
  }

  // x' M x
  double quadratic_form(const MatrixXd& m) const {
    double s = 0.0;
    for (const auto& [i, vi] : entries_) {
      for (const auto& [j, vj] : entries_) s += vi * m(i, j) * vj;
    }
    return s;
  }

  VectorXd to_dense() const {
    VectorXd v = VectorXd::Zero(dimension_);
    for (const auto& [i, val] : entries_) v[i] = val;
    return v;
  }

 private:
  void validate() const {
    if (dimension_ <= 0) throw Error("FeatureVector: dimension must be positive");
    if (entries_.empty() || entries_.front().first != 0 ||
        entries_.front().second != 1.0) {
      throw Error("FeatureVector: entry 0 must be the intercept with value 1");
    }
    int prev = -1;
    for (const auto& [i, v] : entries_) {
      if (i <= prev) throw Error("FeatureVector: indices must be strictly increasing");
      if (i >= dimension_) throw Error("FeatureVector: index exceeds dimension");
      if (!std::isfinite(v)) throw Error("FeatureVector: non-finite value");
      prev = i;
    }
  }

  std::vector<std::pair<int, double>> entries_;
  int dimension_ = 0;
};

// One click. Times are in days since the start of data collection.
struct ClickRecord {
  double click_time = 0.0;
  std::optional<double> conversion_time;  // present iff the click ever converts
  FeatureVector features;

  void validate() const {
    if (!(click_time >= 0.0) || !std::isfinite(click_time)) {
      throw Error("ClickRecord: click_time must be finite and >= 0");
    }
    if (conversion_time && !(*conversion_time > click_time)) {
      throw Error("ClickRecord: conversion_time must exceed click_time");
    }
  }

  // Delay D_i, defined when the click converts.
  std::optional<double> delay() const {
    if (!conversion_time) return std::nullopt;
    return *conversion_time - click_time;
  }
};

// Eventual status C_i under the conversion window: a conversion with delay
// >= W never counts (strict boundary).
inline bool eventual_status(const ClickRecord& rec, double window) {
  return rec.conversion_time && (*rec.conversion_time - rec.click_time) < window;
}

// One row of the dataset as visible at analysis time t. Feature storage is
// borrowed from the source records, which must outlive the snapshot.
struct SnapshotRow {
  const FeatureVector* features = nullptr;
  double age = 0.0;      // a_i = min(t - t_i0, W)
  double observed = 0.0; // z_i = min(d_i, a_i)
  bool converted = false;

  const FeatureVector& x() const { return *features; }
};

struct ObservationSnapshot {
  double analysis_time = 0.0;
  double window = 0.0;
  int dimension = 0;
  std::vector<SnapshotRow> rows;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
};

// Builds the snapshot at time t with window W. A click is currently
// converted iff its conversion happened strictly before t and within W of
// the click; this keeps y=1 <=> z<a exact.
inline ObservationSnapshot snapshot_at(const std::vector<ClickRecord>& records,
                                       double t, double window) {
  if (!(t > 0.0) || !std::isfinite(t)) throw Error("snapshot_at: t must be positive");
  if (!(window > 0.0) || !std::isfinite(window)) {
    throw Error("snapshot_at: window must be positive");
  }
  ObservationSnapshot snap;
  snap.analysis_time = t;
  snap.window = window;
  snap.rows.reserve(records.size());
  for (const auto& rec : records) {
    rec.validate();
    if (rec.click_time > t) continue;
    SnapshotRow row;
    row.features = &rec.features;
    row.age = std::min(t - rec.click_time, window);
    const bool conv = rec.conversion_time && *rec.conversion_time < t &&
                      (*rec.conversion_time - rec.click_time) < window;
    row.converted = conv;
    row.observed = conv ? (*rec.conversion_time - rec.click_time) : row.age;
    if (snap.dimension == 0) {
      snap.dimension = rec.features.dimension();
    } else if (rec.features.dimension() != snap.dimension) {
      throw DimensionError("snapshot_at: inconsistent feature dimensions");
    }
    snap.rows.push_back(row);
  }
  return snap;
}

inline double conversion_probability(const VectorXd& beta, const FeatureVector& x) {
  return logistic(x.dot(beta));
}

}  // namespace convest
