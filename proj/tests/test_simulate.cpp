#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "convest/evaluate.hpp"
#include "convest/simulate.hpp"

using namespace convest;

namespace {

SimulationConfig small_config() {
  SimulationConfig cfg;
  cfg.n_clicks = 2000;
  cfg.replicates = 2;
  cfg.n_time_steps = 3;
  return cfg;
}

}  // namespace

TEST_CASE("intercept calibration closed forms", "[simulate][calibration]") {
  SECTION("zero slopes: conversion intercept is the logit of the target") {
    SimulationConfig cfg;
    cfg.coefficients.conversion_scale = 0.0;
    cfg.coefficients.delay_scale = 0.0;
    cfg.target_mean_probability = 0.3;
    cfg.target_mean_delay_days = 4.0;
    auto truth = calibrate_intercepts(cfg);
    CHECK(std::abs(truth.beta_c[0] - logit(0.3)) < 1e-6);
    CHECK(std::abs(truth.delay.coefficients[0] - std::log(1.0 / 4.0)) < 1e-6);
  }
  SECTION("Weibull mean uses the gamma function") {
    SimulationConfig cfg;
    cfg.delay_family = DelayFamily::Weibull;
    cfg.weibull_shape = 0.5;  // mean = 2 gamma
    cfg.coefficients.conversion_scale = 0.0;
    cfg.coefficients.delay_scale = 0.0;
    cfg.target_mean_delay_days = 4.0;
    auto truth = calibrate_intercepts(cfg);
    CHECK(std::abs(std::exp(truth.delay.coefficients[0]) - 2.0) < 1e-3);
  }
  SECTION("non-trivial coefficients hit the targets on the population") {
    SimulationConfig cfg;
    auto truth = calibrate_intercepts(cfg);
    const auto pop = calibration_population(cfg);
    double mp = 0.0, md = 0.0;
    for (const auto& x : pop) {
      mp += conversion_probability(truth.beta_c, x) / pop.size();
      md += std::exp(-x.dot(truth.delay.coefficients)) / pop.size();
    }
    CHECK(std::abs(mp - cfg.target_mean_probability) <= 1e-4);
    CHECK(std::abs(md - cfg.target_mean_delay_days) <=
          1e-3 * cfg.target_mean_delay_days);
  }
  SECTION("unreachable target fails loudly") {
    SimulationConfig cfg;
    cfg.target_mean_probability = 1e-12;
    CHECK_THROWS_AS(calibrate_intercepts(cfg), Error);
  }
}

TEST_CASE("simulate_replicate", "[simulate][replicate]") {
  SimulationConfig cfg;
  cfg.n_clicks = 8500;
  auto truth = calibrate_intercepts(cfg);

  SECTION("realized conversion fraction is near the target") {
    auto rep = simulate_replicate(cfg, truth, 0);
    double frac = 0.0;
    for (const auto& r : rep.records) {
      frac += eventual_status(r, cfg.window_days) ? 1.0 : 0.0;
    }
    frac /= cfg.n_clicks;
    // 4 binomial SEs around the target (the window cut removes a little)
    const double se = std::sqrt(0.3 * 0.7 / cfg.n_clicks);
    CHECK(std::abs(frac - 0.3) < 4.0 * se + 0.01);
  }
  SECTION("true probabilities match the coefficient model exactly") {
    auto rep = simulate_replicate(cfg, truth, 1);
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(rep.true_probabilities[i] ==
            conversion_probability(truth.beta_c, rep.records[i].features));
    }
  }
  SECTION("identical seeds give identical datasets") {
    auto a = simulate_replicate(cfg, truth, 3);
    auto b = simulate_replicate(cfg, truth, 3);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      CHECK(a.records[i].click_time == b.records[i].click_time);
      CHECK(a.records[i].conversion_time == b.records[i].conversion_time);
    }
  }
  SECTION("Weibull shape 1 matches exponential delays in distribution") {
    SimulationConfig we = cfg;
    we.n_clicks = 10000;
    we.delay_family = DelayFamily::Weibull;
    we.weibull_shape = 1.0;
    auto tw = calibrate_intercepts(we);
    auto re = simulate_replicate(cfg, truth, 5);
    auto rw = simulate_replicate(we, tw, 6);
    std::vector<double> de, dw;
    for (const auto& r : re.records) {
      if (auto d = r.delay()) de.push_back(*d);
    }
    for (const auto& r : rw.records) {
      if (auto d = r.delay()) dw.push_back(*d);
    }
    std::sort(de.begin(), de.end());
    std::sort(dw.begin(), dw.end());
    // Kolmogorov distance between the two empirical delay cdfs
    double ks = 0.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < de.size(); ++i) {
      while (j < dw.size() && dw[j] <= de[i]) ++j;
      const double fe = static_cast<double>(i + 1) / de.size();
      const double fw = static_cast<double>(j) / dw.size();
      ks = std::max(ks, std::abs(fe - fw));
    }
    CHECK(ks < 0.03);
  }
}

TEST_CASE("time_steps are click-time quantiles", "[simulate][steps]") {
  SimulationConfig cfg;
  cfg.n_clicks = 8500;
  auto truth = calibrate_intercepts(cfg);
  auto rep = simulate_replicate(cfg, truth, 0);

  SECTION("uniform arrivals give near-uniform steps") {
    auto steps = time_steps(rep.records, 17);
    REQUIRE(steps.size() == 17);
    for (int j = 1; j <= 17; ++j) {
      CHECK(std::abs(steps[j - 1] - 60.0 * j / 17.0) < 1.0);
    }
  }
  SECTION("single step is the maximum click time") {
    auto steps = time_steps(rep.records, 1);
    double tmax = 0.0;
    for (const auto& r : rep.records) tmax = std::max(tmax, r.click_time);
    REQUIRE(steps.size() == 1);
    CHECK(steps[0] == tmax);
  }
  SECTION("each interval holds an equal share of clicks") {
    auto steps = time_steps(rep.records, 17);
    double prev = 0.0;
    for (double s : steps) {
      int count = 0;
      for (const auto& r : rep.records) {
        if (r.click_time > prev && r.click_time <= s) ++count;
      }
      CHECK(std::abs(count - 8500.0 / 17.0) <= 1.0);
      prev = s;
    }
  }
}

TEST_CASE("run_study shapes and determinism", "[simulate][study]") {
  auto cfg = small_config();
  const std::vector<EstimatorKind> kinds{EstimatorKind::Naive};

  SECTION("one row per replicate x step x estimator") {
    auto res = run_study(cfg, kinds);
    CHECK(res.fits.size() == 2u * 3u * 1u);
    CHECK(res.timings.size() == res.fits.size());
  }
  SECTION("results are byte-identical across worker counts") {
    StudyOptions o1, o4;
    o1.workers = 1;
    o4.workers = 4;
    auto r1 = run_study(cfg, kinds, o1);
    auto r4 = run_study(cfg, kinds, o4);
    std::ostringstream s1, s4;
    write_results(s1, r1.fits);
    write_results(s4, r4.fits);
    CHECK(s1.str() == s4.str());
  }
  SECTION("snapshot statuses stay monotone across consecutive steps") {
    SimulationConfig cfg2 = small_config();
    auto truth = calibrate_intercepts(cfg2);
    auto rep = simulate_replicate(cfg2, truth, 0);
    auto steps = time_steps(rep.records, 5);
    std::vector<bool> prev(rep.records.size(), false);
    for (double t : steps) {
      auto snap = snapshot_at(rep.records, t, cfg2.window_days);
      std::vector<bool> cur(rep.records.size(), false);
      std::size_t j = 0;
      for (std::size_t i = 0; i < rep.records.size(); ++i) {
        if (rep.records[i].click_time > t) continue;
        cur[i] = snap.rows[j++].converted;
      }
      int flips = 0;
      for (std::size_t i = 0; i < prev.size(); ++i) {
        if (prev[i] && !cur[i]) ++flips;
      }
      CHECK(flips == 0);
      prev = cur;
    }
  }
}

TEST_CASE("config validation names the failing field", "[simulate][config]") {
  SimulationConfig cfg;
  cfg.target_mean_probability = 1.5;
  try {
    cfg.validate();
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("target_mean_probability") != std::string::npos);
  }
}
