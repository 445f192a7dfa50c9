#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mecor/errors.hpp"
#include "mecor/io.hpp"
#include "mecor/simstudy.hpp"
#include "test_support.hpp"

#include <json.hpp>

#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

using namespace mecor;

namespace {

double variance(const Eigen::VectorXd& v) {
  return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
}

HarnessConfig quick_harness() {
  HarnessConfig h;
  h.simex.n_sim = 3;
  h.n_boot = 0;
  return h;
}

} // namespace

TEST_CASE("generate_dataset layout and determinism") {
  ScenarioConfig cfg;
  cfg.n = 50;
  cfg.k = 4;
  const Dataset a = generate_dataset(cfg, 3);
  const Dataset b = generate_dataset(cfg, 3);
  const Dataset c = generate_dataset(cfg, 4);
  CHECK(a.column_names() ==
        std::vector<std::string>{"creatinine", "bp_star_1", "bp_star_2", "bp_star_3", "bp_star_4", "age"});
  CHECK(a.n_rows() == 50);
  CHECK(a.values() == b.values());
  CHECK(a.values() != c.values());
}

TEST_CASE("zero error variance makes all replicates identical") {
  ScenarioConfig cfg;
  cfg.tau2 = 0.0;
  cfg.n = 100;
  const Dataset d = generate_dataset(cfg, 0);
  CHECK(d.column("bp_star_1") == d.column("bp_star_2"));
  CHECK(d.column("bp_star_1") == d.column("bp_star_3"));
}

TEST_CASE("large-sample moments match the data-generating mechanism") {
  ScenarioConfig cfg;
  cfg.n = 1000000;
  const Dataset d = generate_dataset(cfg, 0);
  CHECK(variance(d.column("age")) == doctest::Approx(25.0).epsilon(0.01));
  CHECK(variance(d.column("bp_star_1")) == doctest::Approx(80.0).epsilon(0.01));
  CHECK(d.column("age").mean() == doctest::Approx(32.0).epsilon(0.001));
}

TEST_CASE("empirical reliability under covariate dependency") {
  ScenarioConfig cfg;
  cfg.n = 1000000;
  cfg.gamma = 4.0;
  const Dataset d = generate_dataset(cfg, 0);
  const double tau2_hat = estimate_tau2_from_replicates(d, simulation_spec(3)).tau2;
  const double reliability = 1.0 - tau2_hat / variance(d.column("bp_star_1"));
  CHECK(reliability == doctest::Approx(0.9375).epsilon(0.01));
  CHECK(derive(cfg).reliability == doctest::Approx(0.9375));
}

TEST_CASE("derived scenario quantities") {
  ScenarioConfig base;
  const auto d = derive(base);
  CHECK(d.reliability == doctest::Approx(0.625));
  CHECK(d.attenuation == doctest::Approx(0.625));
  CHECK(d.r_squared == doctest::Approx(3.0 / 103.0));
  CHECK(d.crude_effect == doctest::Approx(0.2));

  // Reported reliabilities for gamma = 1, 4, 8 (two decimals).
  const std::vector<std::pair<double, double>> reported{{1.0, 0.71}, {4.0, 0.94}, {8.0, 0.98}};
  for (auto [gamma, rel] : reported) {
    ScenarioConfig c;
    c.gamma = gamma;
    CHECK(std::round(derive(c).reliability * 100.0) / 100.0 == doctest::Approx(rel));
    CHECK(derive(c).attenuation == doctest::Approx(0.625));
    CHECK(derive(c).crude_effect == doctest::Approx(0.2 + 5.0 * gamma / (25.0 * gamma * gamma + 50.0)));
  }
  ScenarioConfig high_r2;
  high_r2.sigma2 = 1.0;
  CHECK(derive(high_r2).r_squared == doctest::Approx(0.75));
  ScenarioConfig low_rel;
  low_rel.tau2 = 200.0;
  CHECK(derive(low_rel).reliability == doctest::Approx(0.2));
}

TEST_CASE("derived R-squared matches the generated data") {
  for (double sigma2 : {100.0, 1.0}) {
    for (double gamma : {0.0, 4.0}) {
      ScenarioConfig cfg;
      cfg.n = 400000;
      cfg.tau2 = 0.0; // bp_star_1 is then the error-free bp
      cfg.sigma2 = sigma2;
      cfg.gamma = gamma;
      const Dataset d = generate_dataset(cfg, 1);
      const double r2 = fit_uncorrected(d, simulation_spec(3)).r_squared;
      CHECK(r2 == doctest::Approx(derive(cfg).r_squared).epsilon(0.05));
    }
  }
}

TEST_CASE("scenario grid") {
  const auto grid = scenario_grid();
  REQUIRE(grid.size() == 22);
  const auto& base = grid.front();
  CHECK(base.is_base());
  CHECK(base.tau2 == 30.0);
  CHECK(base.n == 500);
  CHECK(base.k == 3);
  CHECK(base.sigma2 == 100.0);
  CHECK(base.gamma == 0.0);

  std::map<std::string, int> per_sweep;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const auto& c = grid[i];
    const int changed = (c.tau2 != base.tau2) + (c.n != base.n) + (c.k != base.k) +
                        (c.sigma2 != base.sigma2) + (c.gamma != base.gamma);
    CHECK(changed == 1);
    ++per_sweep[c.sweep];
  }
  CHECK(per_sweep["reliability"] == 8);
  CHECK(per_sweep["sample_size"] == 4);
  CHECK(per_sweep["replicates"] == 3);
  CHECK(per_sweep["r_squared"] == 3);
  CHECK(per_sweep["covariate_dependency"] == 3);

  std::set<std::uint64_t> seeds;
  for (const auto& c : grid) seeds.insert(c.seed);
  CHECK(seeds.size() == 22);
  CHECK(scenario_grid(5)[3].seed == scenario_grid(5)[3].seed);
  CHECK(scenario_grid(5)[3].seed != scenario_grid(6)[3].seed);
}

TEST_CASE("summary metrics follow their definitions") {
  ScenarioConfig cfg;
  cfg.n = 200;
  cfg.n_reps = 40;
  HarnessConfig h = quick_harness();
  h.n_boot = 50;
  std::vector<RepetitionResult> reps;
  for (std::size_t r = 0; r < cfg.n_reps; ++r) reps.push_back(run_repetition(cfg, h, r));
  const auto s = summarize_repetitions(cfg, h, reps);
  CHECK(s.n_reps_used == 40);
  CHECK(s.n_failures == 0);

  for (std::size_t m = 0; m < h.methods.size(); ++m) {
    std::vector<double> est;
    for (const auto& r : reps) est.push_back(r.estimates[m]);
    const double R = static_cast<double>(est.size());
    const double mean = std::accumulate(est.begin(), est.end(), 0.0) / R;
    double ss = 0.0, mse = 0.0;
    for (double e : est) {
      ss += (e - mean) * (e - mean);
      mse += (e - 0.2) * (e - 0.2);
    }
    mse /= R;
    const auto& p = s.methods[m];
    CHECK(p.mean_estimate == doctest::Approx(mean).epsilon(1e-12));
    CHECK(p.percent_bias == doctest::Approx(100.0 * (mean - 0.2) / 0.2).epsilon(1e-10));
    CHECK(p.bias_mcse == doctest::Approx(std::sqrt(ss / (R - 1.0)) / std::sqrt(R)).epsilon(1e-10));
    CHECK(p.mse == doctest::Approx(mse).epsilon(1e-12));
    CHECK(p.mse >= p.bias * p.bias);
    CHECK(p.mse_mcse >= 0.0);
    if (h.methods[m] == Method::simex) {
      CHECK_FALSE(p.coverage.has_value());
    } else {
      REQUIRE(p.coverage.has_value());
      double covered = 0;
      for (const auto& r : reps) covered += (r.cis[m]->lower <= 0.2 && 0.2 <= r.cis[m]->upper);
      CHECK(*p.coverage == doctest::Approx(covered / R));
      CHECK(*p.coverage_mcse == doctest::Approx(std::sqrt(*p.coverage * (1 - *p.coverage) / R)));
    }
  }
}

TEST_CASE("run_scenario is deterministic and independent of thread count") {
  ScenarioConfig cfg;
  cfg.n = 150;
  cfg.n_reps = 24;
  HarnessConfig h = quick_harness();
  h.n_boot = 50;
  const auto a = run_scenario(cfg, h);
  h.threads = 4;
  const auto b = run_scenario(cfg, h);
  for (std::size_t m = 0; m < a.methods.size(); ++m) {
    CHECK(a.methods[m].mean_estimate == b.methods[m].mean_estimate);
    CHECK(a.methods[m].mse == b.methods[m].mse);
    CHECK(a.methods[m].coverage == b.methods[m].coverage);
  }
}

TEST_CASE("uncorrected percent bias reflects attenuation") {
  ScenarioConfig cfg;
  cfg.n_reps = 300;
  HarnessConfig h = quick_harness();
  h.methods = {Method::uncorrected, Method::rc};
  const auto s = run_scenario(cfg, h);
  const auto& u = s.of(Method::uncorrected);
  CHECK(std::fabs(u.percent_bias - (-37.5)) <= 3.0 * u.percent_bias_mcse);
  CHECK(s.mean_tau2_hat == doctest::Approx(30.0).epsilon(0.02));
}

TEST_CASE("scenario aborts when too many repetitions fail") {
  ScenarioConfig cfg;
  cfg.n = 30;
  cfg.tau2 = 10000.0;
  cfg.n_reps = 40;
  HarnessConfig h = quick_harness();
  h.methods = {Method::uncorrected, Method::rc};
  CHECK_THROWS_AS(run_scenario(cfg, h), Error);
}

TEST_CASE("scenario config validation") {
  ScenarioConfig cfg;
  cfg.k = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.sigma2 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.n_reps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("emit_study_report") {
  mecor::test::TempDir dir;
  HarnessConfig h = quick_harness();
  h.n_boot = 50;
  h.max_failure_fraction = 0.5; // tiny runs at low reliability
  std::vector<PerformanceSummary> summaries;
  for (auto cfg : scenario_grid(3, 4)) {
    if (cfg.sweep != "base" && cfg.sweep != "reliability" && cfg.sweep != "replicates") continue;
    cfg.n = 300;
    summaries.push_back(run_scenario(cfg, h));
  }
  const auto files = emit_study_report(summaries, dir.path());
  REQUIRE(files.size() == 3);
  CHECK(files[0] == dir.file("reliability.csv"));
  CHECK(files[1] == dir.file("replicates.csv"));
  CHECK(files[2] == dir.file("summaries.json"));

  const std::string csv = mecor::test::read_file(dir.file("reliability.csv"));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "knob,value,is_base,method,percent_bias,bias_mcse,mse,mse_mcse,coverage,coverage_mcse");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) rows.push_back(split(line, ','));
  REQUIRE(rows.size() == 27);
  int base_rows = 0;
  double prev = -1.0;
  for (const auto& r : rows) {
    CHECK(r.size() == 10);
    CHECK(r[0] == "tau2");
    const double v = std::stod(r[1]);
    CHECK(v >= prev);
    prev = v;
    if (r[2] == "1") {
      ++base_rows;
      CHECK(v == 30.0);
    }
  }
  CHECK(base_rows == 3);

  // Values parse back to the summary numbers exactly.
  const PerformanceSummary& tau200 = *std::find_if(summaries.begin(), summaries.end(),
                                                   [](const auto& s) { return s.config.tau2 == 200.0; });
  const auto& last = rows.back(); // tau2 = 200, simex
  CHECK(last[3] == "simex");
  CHECK(std::stod(last[4]) == tau200.of(Method::simex).percent_bias);
  CHECK(std::stod(last[6]) == tau200.of(Method::simex).mse);
  CHECK(last[8].empty());
  const auto& rc_row = rows[rows.size() - 2];
  CHECK(std::stod(rc_row[8]) == *tau200.of(Method::rc).coverage);

  const auto j = nlohmann::json::parse(mecor::test::read_file(dir.file("summaries.json")));
  REQUIRE(j.size() == summaries.size());
  CHECK(j[0]["name"] == "base");
  CHECK(j[0]["methods"][2]["coverage"].is_null());
  CHECK(j[0]["methods"][0]["mean_estimate"].get<double>() == summaries[0].methods[0].mean_estimate);

  // Byte-identical on a rerun.
  mecor::test::TempDir dir2;
  emit_study_report(summaries, dir2.path());
  CHECK(mecor::test::read_file(dir2.file("reliability.csv")) == csv);
}

TEST_CASE("a base-only report writes base.csv") {
  mecor::test::TempDir dir;
  ScenarioConfig cfg;
  cfg.n = 100;
  cfg.n_reps = 3;
  const std::vector<PerformanceSummary> s{run_scenario(cfg, quick_harness())};
  const auto files = emit_study_report(s, dir.path());
  CHECK(files.front() == dir.file("base.csv"));
}

TEST_CASE("load_scenarios_json") {
  mecor::test::TempDir dir;
  SUBCASE("fields default to base and the sweep is inferred") {
    const auto p = dir.write("s.json", R"([{"tau2": 80, "n_reps": 10}, {"name": "tiny", "n": 60}, {}])");
    const auto s = load_scenarios_json(p);
    REQUIRE(s.size() == 3);
    CHECK(s[0].tau2 == 80.0);
    CHECK(s[0].n_reps == 10);
    CHECK(s[0].sweep == "reliability");
    CHECK(s[1].name == "tiny");
    CHECK(s[1].sweep == "sample_size");
    CHECK(s[2].sweep == "base");
  }
  SUBCASE("invalid inputs") {
    CHECK_THROWS_AS(load_scenarios_json(dir.write("a.json", "{}")), ConfigError);
    CHECK_THROWS_AS(load_scenarios_json(dir.write("b.json", "[{\"k\": 1}]")), ConfigError);
    CHECK_THROWS_AS(load_scenarios_json(dir.write("c.json", "[{\"tau2\": 1, \"n\": 60}]")), ConfigError);
    CHECK_THROWS_AS(load_scenarios_json(dir.write("d.json", "[{\"sweep\": \"weird\"}]")), ConfigError);
    CHECK_THROWS_AS(load_scenarios_json(dir.write("e.json", "[{\"tau2\": \"x\"}]")), ConfigError);
    CHECK_THROWS_AS(load_scenarios_json(dir.write("f.json", "[oops")), ConfigError);
  }
}
