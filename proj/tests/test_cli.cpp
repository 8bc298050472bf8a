#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "convest/cli.hpp"

using namespace convest;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("convest-test-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Criteo-format fixture: 3 categorical tokens, 2 informative integers,
// exponential delays.
void write_fixture(const fs::path& file, int n, std::uint64_t seed,
                   double conv_rate = 0.35) {
  std::mt19937_64 gen(seed);
  std::ofstream os(file);
  const char* toks[3] = {"alpha", "beta", "gamma"};
  for (int i = 0; i < n; ++i) {
    const std::int64_t click = 1600000000 + std::uniform_int_distribution<int>(
                                                0, 50 * 86400)(gen);
    std::ostringstream line;
    line << click << '\t';
    const int tok = std::uniform_int_distribution<int>(0, 2)(gen);
    const double p = conv_rate + 0.1 * (tok - 1);
    if (std::bernoulli_distribution(p)(gen)) {
      const double delay_days = std::exponential_distribution<double>(0.3)(gen);
      if (delay_days < 30.0) {
        line << click + static_cast<std::int64_t>(delay_days * 86400.0) + 1;
      }
    }
    for (int j = 0; j < kCriteoIntegerColumns; ++j) {
      line << '\t';
      if (j < 2) line << std::uniform_int_distribution<int>(0, 9)(gen);
    }
    for (int j = 0; j < kCriteoCategoricalColumns; ++j) {
      line << '\t';
      if (j == 0) line << toks[tok];
    }
    os << line.str() << "\n";
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config file parsing", "[cli][config]") {
  std::istringstream is(
      "# comment\n"
      "[study]\n"
      "n_clicks = 1200\n"
      "delay_family = weibull   ; trailing comment\n"
      "estimators = naive, dfm\n"
      "[covariates]\n"
      "integer_count = 2\n");
  auto cf = ConfigFile::parse(is);
  CHECK(cf.get_int("study", "n_clicks") == 1200);
  CHECK(cf.get_string("study", "delay_family") == "weibull");
  CHECK(cf.get_list("study", "estimators").size() == 2);
  CHECK(cf.get_int("covariates", "integer_count") == 2);
  CHECK(cf.get_double("study", "absent", 1.5) == 1.5);
  CHECK_THROWS_AS(cf.get_int("study", "absent"), ConfigError);
  CHECK_THROWS_AS(cf.get_int("study", "delay_family"), ConfigError);

  SECTION("simulation config surfaces the failing field") {
    std::istringstream bad(
        "[study]\n"
        "target_mean_probability = 2.0\n");
    auto cfb = ConfigFile::parse(bad);
    try {
      simulation_config_from(cfb);
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("target_mean_probability") != std::string::npos);
    }
  }
}

TEST_CASE("cmd_simulate smoke run", "[cli][simulate]") {
  TempDir tmp;
  const fs::path cfgfile = tmp.path / "study.ini";
  {
    std::ofstream os(cfgfile);
    os << "[study]\n"
          "n_clicks = 1500\n"
          "replicates = 3\n"
          "n_time_steps = 17\n"
          "master_seed = 11\n"
          "estimators = naive, oracle\n";
  }
  SimulateCommand cmd;
  cmd.config_path = cfgfile.string();
  cmd.out_dir = (tmp.path / "out").string();
  cmd.workers = 2;
  REQUIRE(cmd_simulate(cmd) == kExitOk);
  REQUIRE(fs::exists(tmp.path / "out" / "results.tsv"));
  REQUIRE(fs::exists(tmp.path / "out" / "report.tsv"));
  REQUIRE(fs::exists(tmp.path / "out" / "manifest.json"));
  std::ifstream rs(tmp.path / "out" / "results.tsv");
  const auto fits = read_results(rs);
  CHECK(fits.size() == 3u * 17u * 2u);

  SECTION("rerun with the same seed is byte-identical, workers ignored") {
    SimulateCommand cmd2 = cmd;
    cmd2.out_dir = (tmp.path / "out2").string();
    cmd2.workers = 1;
    REQUIRE(cmd_simulate(cmd2) == kExitOk);
    CHECK(slurp(tmp.path / "out" / "results.tsv") ==
          slurp(tmp.path / "out2" / "results.tsv"));
  }
  SECTION("invalid config exits with the config code") {
    const fs::path bad = tmp.path / "bad.ini";
    {
      std::ofstream os(bad);
      os << "[study]\ntarget_mean_probability = 7\n";
    }
    SimulateCommand cmdb;
    cmdb.config_path = bad.string();
    cmdb.out_dir = (tmp.path / "outb").string();
    CHECK(cmd_simulate(cmdb) == kExitConfig);
  }
}

TEST_CASE("cmd_fit on a fixture", "[cli][fit]") {
  TempDir tmp;
  const fs::path data = tmp.path / "clicks.tsv";
  write_fixture(data, 4000, 99);

  SECTION("naive fit writes one coefficient per column") {
    FitCommand cmd;
    cmd.data_path = data.string();
    cmd.estimator = "naive";
    cmd.t_days = 45.0;
    cmd.window_days = 30.0;
    cmd.out_dir = (tmp.path / "fit").string();
    cmd.integer_columns = {0, 1};
    cmd.categorical_columns = {0};
    cmd.min_count = 5;
    REQUIRE(cmd_fit(cmd) == kExitOk);
    const auto coef = slurp(tmp.path / "fit" / "coefficients.tsv");
    // header + k lines; k = 1 + (3 tokens + other) + 2 integers
    const long lines = std::count(coef.begin(), coef.end(), '\n');
    CHECK(lines == 1 + 1 + 4 + 2);
    REQUIRE(fs::exists(tmp.path / "fit" / "probabilities.tsv"));
    REQUIRE(fs::exists(tmp.path / "fit" / "manifest.json"));
  }

  SECTION("bias-adjusted-e equals the scripted three-step pipeline") {
    FitCommand cmd;
    cmd.data_path = data.string();
    cmd.estimator = "bias-adjusted-e";
    cmd.t_days = 30.0;
    cmd.window_days = 30.0;
    cmd.out_dir = (tmp.path / "fit-ba").string();
    cmd.integer_columns = {0, 1};
    cmd.categorical_columns = {0};
    cmd.min_count = 5;
    REQUIRE(cmd_fit(cmd) == kExitOk);

    // manual pipeline on the same data
    ParseReport rep;
    auto rows = parse_criteo_file(data.string(), rep);
    auto vocab = fit_vocabulary(rows, {0, 1}, {0}, 5);
    auto recs = encode(rows, vocab);
    auto snap = snapshot_at(recs, 30.0, 30.0);
    auto naive = fit_naive(snap);
    DelayFitSet fset = build_fit_set(snap);
    DelayFitOptions dopts;
    dopts.likelihood = DelayLikelihood::TruncatedConverted;
    dopts.bias_reduce = true;
    auto delay = fit_exponential(fset, dopts);
    WeightedLogisticProblem p;
    for (const auto& r : snap.rows) {
      const double h = std::min(delay.model.cdf(r.x(), r.age), 1.0);
      if (h < 1e-12) continue;
      p.add(r.x(), h, logistic(r.x().dot(naive.beta_c)));
    }
    auto step3 = solve_weighted_logistic_score(p, naive.beta_c);
    REQUIRE(step3.converged);

    const auto coef = slurp(tmp.path / "fit-ba" / "coefficients.tsv");
    std::istringstream cs(coef);
    std::string line;
    std::getline(cs, line);  // header
    int idx = 0;
    while (std::getline(cs, line)) {
      const auto tab = line.find('\t');
      const double v = std::stod(line.substr(tab + 1));
      CHECK(v == Catch::Approx(step3.argmin[idx]).margin(1e-12));
      ++idx;
    }
    CHECK(idx == step3.argmin.size());
  }

  SECTION("dfm with almost no conversions is reported, not a hard failure") {
    const fs::path sparse = tmp.path / "sparse.tsv";
    write_fixture(sparse, 120, 5, 0.02);
    FitCommand cmd;
    cmd.data_path = sparse.string();
    cmd.estimator = "dfm";
    cmd.t_days = 2.0;  // early snapshot, conversions scarcer than coefficients
    cmd.window_days = 30.0;
    cmd.out_dir = (tmp.path / "fit-dfm").string();
    cmd.integer_columns = {0, 1};
    cmd.categorical_columns = {0};
    cmd.min_count = 1;
    const int code = cmd_fit(cmd);
    CHECK((code == kExitOk || code == kExitNonConvergence));
    REQUIRE(fs::exists(tmp.path / "fit-dfm" / "manifest.json"));
    if (code == kExitNonConvergence) {
      const auto manifest = slurp(tmp.path / "fit-dfm" / "manifest.json");
      CHECK(manifest.find("\"converged\": false") != std::string::npos);
    }
  }

  SECTION("unreadable data exits with the data code") {
    FitCommand cmd;
    cmd.data_path = (tmp.path / "missing.tsv").string();
    cmd.estimator = "naive";
    cmd.t_days = 10.0;
    cmd.out_dir = (tmp.path / "nope").string();
    CHECK(cmd_fit(cmd) == kExitData);
  }
}

TEST_CASE("cmd_evaluate merges partial result directories", "[cli][evaluate]") {
  TempDir tmp;
  const fs::path cfgfile = tmp.path / "study.ini";
  {
    std::ofstream os(cfgfile);
    os << "[study]\nn_clicks = 1200\nreplicates = 4\nn_time_steps = 3\n"
          "master_seed = 3\nestimators = naive\n";
  }
  // full run
  SimulateCommand full;
  full.config_path = cfgfile.string();
  full.out_dir = (tmp.path / "full").string();
  REQUIRE(cmd_simulate(full) == kExitOk);

  // two partial runs covering the same replicate set
  {
    std::ifstream rs(tmp.path / "full" / "results.tsv");
    auto fits = read_results(rs);
    std::vector<FitRecord> a, b;
    for (const auto& f : fits) (f.replicate < 2 ? a : b).push_back(f);
    fs::create_directories(tmp.path / "part1");
    fs::create_directories(tmp.path / "part2");
    std::ofstream o1(tmp.path / "part1" / "results.tsv");
    std::ofstream o2(tmp.path / "part2" / "results.tsv");
    write_results(o1, a);
    write_results(o2, b);
  }
  EvaluateCommand merged;
  merged.results_dirs = {(tmp.path / "part1").string(), (tmp.path / "part2").string()};
  merged.out_dir = (tmp.path / "merged").string();
  REQUIRE(cmd_evaluate(merged) == kExitOk);

  EvaluateCommand whole;
  whole.results_dirs = {(tmp.path / "full").string()};
  whole.out_dir = (tmp.path / "whole").string();
  REQUIRE(cmd_evaluate(whole) == kExitOk);

  // merged report equals the single-run report except for runtime columns
  // (the full dir carries timings; the partials do not)
  auto strip_walls = [](const std::string& s) {
    std::istringstream is(s);
    std::ostringstream os;
    std::string line;
    while (std::getline(is, line)) {
      const auto tab1 = line.rfind('\t');
      const auto tab2 = line.rfind('\t', tab1 - 1);
      os << line.substr(0, tab2) << "\n";
    }
    return os.str();
  };
  CHECK(strip_walls(slurp(tmp.path / "merged" / "report.tsv")) ==
        strip_walls(slurp(tmp.path / "whole" / "report.tsv")));

  SECTION("missing directory is an explicit error") {
    EvaluateCommand bad;
    bad.results_dirs = {(tmp.path / "absent").string()};
    bad.out_dir = (tmp.path / "nope").string();
    CHECK(cmd_evaluate(bad) == kExitData);
  }
}

TEST_CASE("cmd_split runs the repeated-split protocol", "[cli][split]") {
  TempDir tmp;
  const fs::path data = tmp.path / "clicks.tsv";
  write_fixture(data, 3000, 17);
  SplitCommand cmd;
  cmd.data_path = data.string();
  cmd.train_fraction = 0.5;
  cmd.repeats = 40;
  cmd.seed = 4;
  cmd.estimator = "naive";
  cmd.t_days = 45.0;
  cmd.window_days = 30.0;
  cmd.out_dir = (tmp.path / "splits").string();
  cmd.integer_columns = {0, 1};
  cmd.categorical_columns = {0};
  cmd.min_count = 5;
  REQUIRE(cmd_split(cmd) == kExitOk);
  const auto body = slurp(tmp.path / "splits" / "nll.tsv");
  // header + 40 splits + mean line
  CHECK(std::count(body.begin(), body.end(), '\n') == 42);
  CHECK(body.find("mean\t") != std::string::npos);
}
