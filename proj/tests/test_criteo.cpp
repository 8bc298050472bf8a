#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "convest/criteo.hpp"

using namespace convest;

namespace {

std::string sample_line(std::int64_t click, const std::string& conv,
                        const std::string& int0 = "5",
                        const std::string& cat0 = "tokenA") {
  std::ostringstream os;
  os << click << '\t' << conv;
  os << '\t' << int0;
  for (int i = 1; i < kCriteoIntegerColumns; ++i) os << '\t' << (10 + i);
  os << '\t' << cat0;
  for (int i = 1; i < kCriteoCategoricalColumns; ++i) os << '\t' << "c" << i;
  return os.str();
}

}  // namespace

TEST_CASE("parse_criteo reads the tab-separated format", "[criteo][parse]") {
  SECTION("well-formed line with a conversion") {
    std::istringstream is(sample_line(1000, "2000") + "\n");
    ParseReport rep;
    auto rows = parse_criteo(is, rep);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].click_timestamp == 1000);
    REQUIRE(rows[0].conversion_timestamp);
    CHECK(*rows[0].conversion_timestamp == 2000);
    CHECK(rows[0].integers[0] == 5);
    CHECK(rows[0].categoricals[0] == "tokenA");
  }
  SECTION("empty second field means no conversion") {
    std::istringstream is(sample_line(1000, "") + "\n");
    ParseReport rep;
    auto rows = parse_criteo(is, rep);
    REQUIRE(rows.size() == 1);
    CHECK_FALSE(rows[0].conversion_timestamp);
  }
  SECTION("conversion before click is malformed and reported") {
    std::istringstream is(sample_line(1000, "900") + "\n" + sample_line(1000, "1500") +
                          "\n");
    ParseReport rep;
    auto rows = parse_criteo(is, rep);
    CHECK(rows.size() == 1);
    REQUIRE(rep.malformed.size() == 1);
    CHECK(rep.malformed[0].first == 1);
  }
  SECTION("wrong field count is malformed") {
    std::istringstream is("1\t2\t3\n");
    ParseReport rep;
    auto rows = parse_criteo(is, rep);
    CHECK(rows.empty());
    CHECK(rep.malformed.size() == 1);
  }
  SECTION("too many malformed lines aborts") {
    std::ostringstream data;
    for (int i = 0; i < 10; ++i) data << "bad\tline\n";
    std::istringstream is(data.str());
    ParseReport rep;
    ParseLimits lim;
    lim.max_malformed = 5;
    CHECK_THROWS_AS(parse_criteo(is, rep, lim), DataError);
  }
  SECTION("missing file") {
    ParseReport rep;
    CHECK_THROWS_AS(parse_criteo_file("/nonexistent/file.tsv", rep), DataError);
  }
}

TEST_CASE("vocabulary fitting and encoding", "[criteo][encode]") {
  SECTION("min_count collapsing and dimension arithmetic") {
    std::vector<CriteoRow> rows(3);
    rows[0].categoricals[0] = "a";
    rows[1].categoricals[0] = "a";
    rows[2].categoricals[0] = "b";
    for (auto& r : rows) r.click_timestamp = 0;
    auto vocab = fit_vocabulary(rows, {}, {0}, 1);
    // intercept + dummies for a, b + other
    CHECK(vocab.dimension == 1 + 3);
    auto x0 = encode_features(rows[0], vocab);
    auto x2 = encode_features(rows[2], vocab);
    CHECK(x0.entries().size() == 2);
    CHECK(x0.entries()[1].first != x2.entries()[1].first);
    // unseen token maps to the other slot
    CriteoRow unseen;
    unseen.categoricals[0] = "zzz";
    auto xu = encode_features(unseen, vocab);
    CHECK(xu.entries()[1].first == 1 + vocab.categorical[0].other_offset);
    // below min_count everything collapses
    auto vocab2 = fit_vocabulary(rows, {}, {0}, 3);
    CHECK(vocab2.dimension == 1 + 1);
  }
  SECTION("all-missing integer column gives zero feature plus indicator") {
    std::vector<CriteoRow> rows(4);
    for (auto& r : rows) r.click_timestamp = 100;
    auto vocab = fit_vocabulary(rows, {2}, {}, 1);
    CHECK(vocab.dimension == 1 + 2);  // standardized value + indicator
    auto x = encode_features(rows[0], vocab);
    REQUIRE(x.entries().size() == 2);
    CHECK(x.entries()[1].first == 2);  // the indicator slot
    CHECK(x.entries()[1].second == 1.0);
  }
  SECTION("integer standardization") {
    std::vector<CriteoRow> rows(4);
    for (int i = 0; i < 4; ++i) {
      rows[i].click_timestamp = 0;
      rows[i].integers[1] = 2 * i;  // 0 2 4 6: mean 3, sd sqrt(5)
    }
    auto vocab = fit_vocabulary(rows, {1}, {}, 1);
    REQUIRE(vocab.integer.size() == 1);
    CHECK(vocab.integer[0].mean == Catch::Approx(3.0));
    CHECK(vocab.integer[0].sd == Catch::Approx(std::sqrt(5.0)));
    CHECK_FALSE(vocab.integer[0].missing_indicator);
    auto x = encode_features(rows[3], vocab);
    CHECK(x.entries()[1].second == Catch::Approx((6.0 - 3.0) / std::sqrt(5.0)));
  }
  SECTION("timestamp round trip through days") {
    std::vector<CriteoRow> rows(2);
    rows[0].click_timestamp = 86400;           // day 1 after origin
    rows[0].conversion_timestamp = 86400 * 3;  // day 3
    rows[1].click_timestamp = 0;
    auto vocab = fit_vocabulary(rows, {}, {}, 1);
    auto recs = encode(rows, vocab);
    CHECK(recs[0].click_time == Catch::Approx(1.0).margin(1e-6));
    CHECK(*recs[0].conversion_time == Catch::Approx(3.0).margin(1e-6));
    const double back = recs[0].click_time * kSecondsPerDay + vocab.origin_seconds;
    CHECK(back == Catch::Approx(86400.0).margin(1e-6 * kSecondsPerDay));
  }
  SECTION("empty input") {
    CHECK_THROWS_AS(fit_vocabulary({}, {}, {0}, 1), EmptyInputError);
  }
}

TEST_CASE("split_indices", "[criteo][split]") {
  SECTION("binomially concentrated train size") {
    auto s = split_indices(1000, 0.1, 42);
    int train = 0;
    for (bool b : s) train += b ? 1 : 0;
    const double se = std::sqrt(1000 * 0.1 * 0.9);
    CHECK(std::abs(train - 100.0) < 4.0 * se);
  }
  SECTION("deterministic per seed, partition by construction") {
    auto a = split_indices(500, 0.3, 7);
    auto b = split_indices(500, 0.3, 7);
    CHECK(a == b);
    auto c = split_indices(500, 0.3, 8);
    CHECK(a != c);
  }
  SECTION("invalid fraction") {
    CHECK_THROWS_AS(split_indices(10, 0.0, 1), Error);
    CHECK_THROWS_AS(split_indices(10, 1.0, 1), Error);
  }
}

TEST_CASE("dataset text format round trip", "[criteo][io]") {
  std::mt19937_64 gen(2);
  std::vector<ClickRecord> records;
  for (int i = 0; i < 50; ++i) {
    ClickRecord r;
    r.click_time = std::uniform_real_distribution<double>(0.0, 60.0)(gen);
    if (i % 3 == 0) r.conversion_time = r.click_time + 0.25 + i * 0.01;
    r.features = FeatureVector({{0, 1.0}, {2, 1.5}, {4, -0.75}}, 5);
    records.push_back(r);
  }
  std::ostringstream os;
  save_records(os, records, 5);
  std::istringstream is(os.str());
  int dim = 0;
  auto back = load_records(is, &dim);
  CHECK(dim == 5);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].click_time == records[i].click_time);
    CHECK(back[i].conversion_time == records[i].conversion_time);
    CHECK(back[i].features.entries() == records[i].features.entries());
  }
}

TEST_CASE("encoded records satisfy the data-model invariants", "[criteo][property]") {
  std::mt19937_64 gen(6);
  std::vector<CriteoRow> rows;
  std::uniform_int_distribution<int> tok(0, 30);
  for (int i = 0; i < 300; ++i) {
    CriteoRow r;
    r.click_timestamp = 1700000000 + std::uniform_int_distribution<int>(0, 5000000)(gen);
    if (std::bernoulli_distribution(0.3)(gen)) {
      r.conversion_timestamp =
          r.click_timestamp + std::uniform_int_distribution<int>(0, 2000000)(gen);
    }
    for (int j = 0; j < kCriteoIntegerColumns; ++j) {
      if (!std::bernoulli_distribution(0.2)(gen)) {
        r.integers[j] = std::uniform_int_distribution<int>(-5, 40)(gen);
      }
    }
    for (int j = 0; j < kCriteoCategoricalColumns; ++j) {
      if (!std::bernoulli_distribution(0.1)(gen)) {
        r.categoricals[j] = "t" + std::to_string(tok(gen));
      }
    }
    rows.push_back(r);
  }
  auto vocab = fit_vocabulary(rows, {0, 1, 2}, {0, 1}, 5);
  auto recs = encode(rows, vocab);
  for (const auto& r : recs) {
    r.validate();  // throws on violation
    CHECK(r.features.dimension() == vocab.dimension);
  }
}
