#pragma once

// Criteo-format conversion-log ingestion: streaming TSV parse with a
// malformed-line report, one-hot encoding with a fitted vocabulary,
// train/test splitting, and the internal dataset text format.

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "convest/core.hpp"
#include "convest/rng.hpp"

namespace convest {

struct DataError : Error {
  explicit DataError(const std::string& m) : Error(m) {}
};

inline constexpr int kCriteoIntegerColumns = 8;
inline constexpr int kCriteoCategoricalColumns = 9;
inline constexpr double kSecondsPerDay = 86400.0;

struct CriteoRow {
  std::int64_t click_timestamp = 0;
  std::optional<std::int64_t> conversion_timestamp;
  std::array<std::optional<std::int64_t>, kCriteoIntegerColumns> integers;
  std::array<std::string, kCriteoCategoricalColumns> categoricals;  // "" = missing
};

struct ParseReport {
  std::size_t lines_read = 0;
  std::vector<std::pair<std::size_t, std::string>> malformed;  // line no, reason
};

struct ParseLimits {
  std::size_t max_malformed = 1000;
  std::size_t max_rows = 0;  // 0 = unlimited
};

namespace detail {

inline std::optional<std::int64_t> parse_int_field(std::string_view f) {
  std::int64_t v = 0;
  const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
  if (res.ec != std::errc() || res.ptr != f.data() + f.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// Single-pass, constant-memory-per-line parse. Malformed lines are
// collected with line numbers, up to the abort threshold.
inline std::vector<CriteoRow> parse_criteo(std::istream& is, ParseReport& report,
                                           const ParseLimits& limits = {}) {
  std::vector<CriteoRow> rows;
  std::string line;
  while (std::getline(is, line)) {
    ++report.lines_read;
    if (limits.max_rows > 0 && rows.size() >= limits.max_rows) break;
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    fields.reserve(19);
    std::string_view sv(line);
    std::size_t start = 0;
    for (std::size_t i = 0; i <= sv.size(); ++i) {
      if (i == sv.size() || sv[i] == '\t') {
        fields.push_back(sv.substr(start, i - start));
        start = i + 1;
      }
    }
    auto reject = [&](const std::string& why) {
      report.malformed.emplace_back(report.lines_read, why);
      if (report.malformed.size() > limits.max_malformed) {
        throw DataError("parse_criteo: too many malformed lines (" +
                        std::to_string(report.malformed.size()) + ")");
      }
    };
    if (fields.size() != 2 + kCriteoIntegerColumns + kCriteoCategoricalColumns) {
      reject("expected 19 tab-separated fields, got " + std::to_string(fields.size()));
      continue;
    }
    CriteoRow row;
    const auto click = detail::parse_int_field(fields[0]);
    if (!click) {
      reject("unreadable click timestamp");
      continue;
    }
    row.click_timestamp = *click;
    if (!fields[1].empty()) {
      const auto conv = detail::parse_int_field(fields[1]);
      if (!conv) {
        reject("unreadable conversion timestamp");
        continue;
      }
      if (*conv < *click) {
        reject("conversion before click");
        continue;
      }
      row.conversion_timestamp = *conv;
    }
    bool ok = true;
    for (int j = 0; j < kCriteoIntegerColumns; ++j) {
      const auto f = fields[2 + j];
      if (f.empty()) continue;
      const auto v = detail::parse_int_field(f);
      if (!v) {
        reject("unreadable integer column " + std::to_string(j));
        ok = false;
        break;
      }
      row.integers[j] = v;
    }
    if (!ok) continue;
    for (int j = 0; j < kCriteoCategoricalColumns; ++j) {
      row.categoricals[j] = std::string(fields[2 + kCriteoIntegerColumns + j]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<CriteoRow> parse_criteo_file(const std::string& path,
                                                ParseReport& report,
                                                const ParseLimits& limits = {}) {
  std::ifstream is(path);
  if (!is) throw DataError("parse_criteo: cannot open " + path);
  return parse_criteo(is, report, limits);
}

// Fitted one-hot vocabulary plus integer standardization constants. Tokens
// seen fewer than min_count times collapse into the per-column "other"
// slot, which also absorbs unseen tokens at transform time.
struct EncoderVocabulary {
  struct CategoricalColumn {
    int source_column = 0;
    std::map<std::string, int> token_to_offset;  // offsets within the column block
    int other_offset = 0;
    int width = 0;  // kept tokens + other
  };
  struct IntegerColumn {
    int source_column = 0;
    double mean = 0.0;
    double sd = 1.0;
    bool missing_indicator = false;
  };

  std::vector<CategoricalColumn> categorical;
  std::vector<IntegerColumn> integer;
  int dimension = 0;
  std::int64_t origin_seconds = 0;
};

// Two-pass deterministic fit: count tokens, then assign indices in sorted
// token order.
inline EncoderVocabulary fit_vocabulary(
    const std::vector<CriteoRow>& rows, const std::vector<int>& integer_columns,
    const std::vector<int>& categorical_columns, int min_count = 50,
    std::optional<std::int64_t> origin_seconds = std::nullopt) {
  if (rows.empty()) throw EmptyInputError("fit_vocabulary: no rows");
  for (int c : integer_columns) {
    if (c < 0 || c >= kCriteoIntegerColumns) {
      throw Error("fit_vocabulary: integer column " + std::to_string(c) + " out of range");
    }
  }
  for (int c : categorical_columns) {
    if (c < 0 || c >= kCriteoCategoricalColumns) {
      throw Error("fit_vocabulary: categorical column " + std::to_string(c) +
                  " out of range");
    }
  }
  EncoderVocabulary vocab;
  std::int64_t origin = origin_seconds.value_or(rows.front().click_timestamp);
  if (!origin_seconds) {
    for (const auto& r : rows) origin = std::min(origin, r.click_timestamp);
  }
  vocab.origin_seconds = origin;

  int dim = 1;  // intercept
  for (int c : categorical_columns) {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : rows) {
      if (!r.categoricals[c].empty()) ++counts[r.categoricals[c]];
    }
    EncoderVocabulary::CategoricalColumn col;
    col.source_column = c;
    int off = 0;
    for (const auto& [tok, n] : counts) {
      if (n >= static_cast<std::size_t>(min_count)) col.token_to_offset[tok] = off++;
    }
    col.other_offset = off;
    col.width = off + 1;
    dim += col.width;
    vocab.categorical.push_back(std::move(col));
  }
  for (int c : integer_columns) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    bool any_missing = false;
    for (const auto& r : rows) {
      if (r.integers[c]) {
        const double v = static_cast<double>(*r.integers[c]);
        sum += v;
        sum2 += v * v;
        ++n;
      } else {
        any_missing = true;
      }
    }
    EncoderVocabulary::IntegerColumn col;
    col.source_column = c;
    if (n > 0) {
      col.mean = sum / n;
      const double var = sum2 / n - col.mean * col.mean;
      col.sd = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    col.missing_indicator = any_missing;
    dim += 1 + (any_missing ? 1 : 0);
    vocab.integer.push_back(col);
  }
  vocab.dimension = dim;
  return vocab;
}

// Pure transform of one row under a fitted vocabulary.
inline FeatureVector encode_features(const CriteoRow& row,
                                     const EncoderVocabulary& vocab) {
  std::vector<std::pair<int, double>> entries{{0, 1.0}};
  int base = 1;
  for (const auto& col : vocab.categorical) {
    const std::string& tok = row.categoricals[col.source_column];
    if (!tok.empty()) {
      const auto it = col.token_to_offset.find(tok);
      const int off = it != col.token_to_offset.end() ? it->second : col.other_offset;
      entries.emplace_back(base + off, 1.0);
    }
    // missing categorical: reference level, no active dummy
    base += col.width;
  }
  for (const auto& col : vocab.integer) {
    const auto v = row.integers[col.source_column];
    if (v) {
      const double z = (static_cast<double>(*v) - col.mean) / col.sd;
      if (z != 0.0) entries.emplace_back(base, z);
    } else if (col.missing_indicator) {
      entries.emplace_back(base + 1, 1.0);
    }
    base += 1 + (col.missing_indicator ? 1 : 0);
  }
  return FeatureVector(std::move(entries), vocab.dimension);
}

inline std::vector<ClickRecord> encode(const std::vector<CriteoRow>& rows,
                                       const EncoderVocabulary& vocab) {
  std::vector<ClickRecord> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    ClickRecord rec;
    rec.click_time =
        static_cast<double>(r.click_timestamp - vocab.origin_seconds) / kSecondsPerDay;
    if (r.conversion_timestamp) {
      double ct = static_cast<double>(*r.conversion_timestamp - vocab.origin_seconds) /
                  kSecondsPerDay;
      // zero-delay conversions get a half-second nudge so delays stay positive
      if (ct <= rec.click_time) ct = rec.click_time + 0.5 / kSecondsPerDay;
      rec.conversion_time = ct;
    }
    rec.features = encode_features(r, vocab);
    rec.validate();
    out.push_back(std::move(rec));
  }
  return out;
}

// Uniform random partition: each index lands in train with the given
// probability, deterministically in the seed.
inline std::vector<bool> split_indices(std::size_t n, double train_fraction,
                                       std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error("split_indices: train_fraction must lie in (0,1)");
  }
  Rng rng(substream_seed(seed, 0x57117ULL));
  std::vector<bool> is_train(n);
  for (std::size_t i = 0; i < n; ++i) is_train[i] = rng.bernoulli(train_fraction);
  return is_train;
}

// ---------- internal dataset text format ----------
// Line 1: "convest-dataset 1 <dimension>"
// Then one record per line: click_day<TAB>conversion_day_or_dash<TAB>
// comma-separated index:value pairs (intercept included).

inline void save_records(std::ostream& os, const std::vector<ClickRecord>& records,
                         int dimension) {
  os << "convest-dataset\t1\t" << dimension << "\n";
  char buf[40];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.click_time);
    os << buf << '\t';
    if (r.conversion_time) {
      std::snprintf(buf, sizeof(buf), "%.17g", *r.conversion_time);
      os << buf;
    } else {
      os << '-';
    }
    os << '\t';
    bool first = true;
    for (const auto& [i, v] : r.features.entries()) {
      if (!first) os << ',';
      first = false;
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      os << i << ':' << buf;
    }
    os << "\n";
  }
}

inline std::vector<ClickRecord> load_records(std::istream& is, int* dimension_out = nullptr) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("load_records: empty input");
  std::istringstream hs(line);
  std::string magic;
  int version = 0, dim = 0;
  hs >> magic >> version >> dim;
  if (magic != "convest-dataset" || version != 1 || dim <= 0) {
    throw DataError("load_records: bad header");
  }
  if (dimension_out) *dimension_out = dim;
  std::vector<ClickRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string click, conv, feats;
    if (!std::getline(ss, click, '\t') || !std::getline(ss, conv, '\t') ||
        !std::getline(ss, feats, '\t')) {
      throw DataError("load_records: line " + std::to_string(lineno));
    }
    ClickRecord rec;
    rec.click_time = std::stod(click);
    if (conv != "-") rec.conversion_time = std::stod(conv);
    std::vector<std::pair<int, double>> entries;
    std::istringstream fs(feats);
    std::string item;
    while (std::getline(fs, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) {
        throw DataError("load_records: bad feature entry at line " +
                        std::to_string(lineno));
      }
      entries.emplace_back(std::stoi(item.substr(0, colon)),
                           std::stod(item.substr(colon + 1)));
    }
    rec.features = FeatureVector(std::move(entries), dim);
    rec.validate();
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace convest
