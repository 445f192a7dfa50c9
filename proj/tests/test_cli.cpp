#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mecor/cli.hpp"
#include "mecor/dataset.hpp"
#include "mecor/simstudy.hpp"
#include "test_support.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <sys/wait.h>
#include <sstream>

using namespace mecor;
using mecor::test::TempDir;
using mecor::test::read_file;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mecor");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

// Exposure with no covariates and sample variance exactly 20.
std::string v20_csv() { return "y,x\n1,6\n2,-6\n3,2\n4,-2\n5,0\n"; }

std::filesystem::path write_base_data(const TempDir& dir, std::size_t n = 300) {
  ScenarioConfig cfg;
  cfg.n = n;
  cfg.seed = 9;
  const auto path = dir.file("base.csv");
  write_csv(generate_dataset(cfg, 0), path);
  return path;
}

} // namespace

TEST_CASE("fit prints a coefficient table") {
  TempDir dir;
  const auto path = dir.write("d.csv", "y,x,age\n1,0,3\n3,1,1\n5,2,4\n7.5,3,1\n8,4,2\n");
  const auto r = run_cli({"fit", "--input", path.string(), "--outcome", "y", "--exposure", "x",
                          "--covariates", "age", "--output", dir.file("fit.json").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("(intercept)") != std::string::npos);
  CHECK(r.out.find("age") != std::string::npos);
  CHECK(r.out.find("R^2") != std::string::npos);
  const auto j = nlohmann::json::parse(read_file(dir.file("fit.json")));
  CHECK(j["coefficients"].size() == 3);
  CHECK(j["coefficients"][1]["term"] == "x");
}

TEST_CASE("correct reports infeasible RC with exit code 1") {
  TempDir dir;
  const auto path = dir.write("d.csv", v20_csv());
  const auto out_json = dir.file("r.json");
  const auto r = run_cli({"correct", "--method", "rc", "--tau2", "30", "--input", path.string(), "--outcome",
                          "y", "--exposure", "x", "--output", out_json.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("infeasible correction: tau2 (30) >= conditional exposure variance (20)") != std::string::npos);
  CHECK(r.err.find("stage 'correct'") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(out_json));
}

TEST_CASE("correct with replicates runs rc and simex with intervals") {
  TempDir dir;
  const auto data = write_base_data(dir);
  const auto out_json = dir.file("rc.json");
  auto r = run_cli({"correct", "--input", data.string(), "--outcome", "creatinine", "--replicates",
                    "bp_star_1,bp_star_2,bp_star_3", "--covariates", "age", "--method", "rc", "--n-boot", "100",
                    "--output", out_json.string()});
  REQUIRE(r.code == 0);
  auto j = nlohmann::json::parse(read_file(out_json));
  CHECK(j["tau2_source"] == "replicates");
  CHECK(j["ci_lower"].get<double>() < j["estimate"].get<double>());
  CHECK(j["diagnostics"]["correction_factor"].get<double>() > 1.0);

  r = run_cli({"correct", "--input", data.string(), "--outcome", "creatinine", "--exposure", "bp_star_1",
               "--covariates", "age", "--method", "simex", "--tau2", "30", "--n-sim", "10", "--n-boot", "0",
               "--extrapolant", "linear", "--output", out_json.string()});
  REQUIRE(r.code == 0);
  j = nlohmann::json::parse(read_file(out_json));
  CHECK(j["diagnostics"]["points"].size() == 5);
  CHECK(j["diagnostics"]["extrapolant_coefficients"].size() == 2);
  CHECK(j["ci_lower"].is_null());
}

TEST_CASE("usage errors exit with code 2") {
  TempDir dir;
  const auto path = dir.write("d.csv", v20_csv());
  const std::string in = path.string();
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({"fit", "--input", in}).code == 2);
  // tau2 source: neither, or both
  auto r = run_cli({"correct", "--input", in, "--outcome", "y", "--exposure", "x"});
  CHECK(r.code == 2);
  CHECK(r.err.find("exactly one tau2 source") != std::string::npos);
  CHECK(run_cli({"correct", "--input", in, "--outcome", "y", "--replicates", "x,y", "--tau2", "3"}).code == 2);
  CHECK(run_cli({"correct", "--input", in, "--outcome", "y", "--exposure", "x", "--tau2", "1", "--method",
                 "magic"}).code == 2);
  CHECK(run_cli({"correct", "--input", in, "--outcome", "y", "--exposure", "x", "--tau2", "1",
                 "--lambda-grid", "0.5,1"}).code == 2);
  CHECK(run_cli({"sensitivity", "--input", in, "--outcome", "y", "--exposure", "x", "--tau2-dist", "triangular",
                 "--tau2-min", "1", "--tau2-max", "2", "--output", dir.file("s.csv").string()}).code == 2);
  CHECK(run_cli({"simulate", "--scenario", "nope", "--output", dir.file("sim").string()}).code == 2);
}

TEST_CASE("runtime errors exit with code 1 and name the stage") {
  TempDir dir;
  const auto r = run_cli({"fit", "--input", dir.file("missing.csv").string(), "--outcome", "y", "--exposure", "x"});
  CHECK(r.code == 1);
  CHECK(r.err.find("stage 'load'") != std::string::npos);
}

TEST_CASE("--help documents flags and defaults") {
  const auto r = run_cli({"correct", "--help"});
  CHECK(r.code == 0);
  for (const char* s : {"--lambda-grid", "0,0.5,1,1.5,2", "--n-sim", "100", "--level", "0.95", "--seed",
                        "--extrapolant", "quadratic", "--n-boot", "--threads", "--tau2", "--replicates"}) {
    CHECK_MESSAGE(r.out.find(s) != std::string::npos, s);
  }
  const auto s = run_cli({"simulate", "--help"});
  CHECK(s.code == 0);
  CHECK(s.out.find("--full") != std::string::npos);
  CHECK(s.out.find("--scenarios-json") != std::string::npos);
  CHECK(run_cli({"sensitivity", "--help"}).out.find("--tau2-lower-mode") != std::string::npos);
  CHECK(run_cli({"fit", "--help"}).code == 0);
}

TEST_CASE("sensitivity writes plot data and a summary") {
  TempDir dir;
  const auto data = write_base_data(dir);
  const auto csv = dir.file("sens.csv");
  const auto r = run_cli({"sensitivity", "--input", data.string(), "--outcome", "creatinine", "--exposure",
                          "bp_star_1", "--covariates", "age", "--tau2-dist", "triangular", "--tau2-min", "20",
                          "--tau2-mode", "30", "--tau2-max", "40", "--draws", "12", "--n-boot", "50",
                          "--output", csv.string()});
  REQUIRE(r.code == 0);
  const std::string body = read_file(csv);
  CHECK(body.rfind("tau2,estimate,ci_lower,ci_upper,status\n", 0) == 0);
  CHECK(std::count(body.begin(), body.end(), '\n') == 13);
  const auto j = nlohmann::json::parse(read_file(dir.file("sens.json")));
  CHECK(j["m"] == 12);
  CHECK(j["method"] == "rc");
}

TEST_CASE("sensitivity failure leaves no output") {
  TempDir dir;
  const auto path = dir.write("d.csv", v20_csv());
  const auto csv = dir.file("sens.csv");
  const auto r = run_cli({"sensitivity", "--input", path.string(), "--outcome", "y", "--exposure", "x",
                          "--tau2-dist", "uniform", "--tau2-min", "30", "--tau2-max", "40", "--no-ci",
                          "--output", csv.string()});
  CHECK(r.code == 1);
  CHECK_FALSE(std::filesystem::exists(csv));
  CHECK_FALSE(std::filesystem::exists(dir.file("sens.json")));
}

TEST_CASE("simulate twice with the same seed gives byte-identical reports") {
  TempDir dir;
  const auto a = dir.file("a");
  const auto b = dir.file("b");
  for (const auto& out : {a, b}) {
    const auto r = run_cli({"simulate", "--scenario", "base", "--reps", "50", "--seed", "7", "--n-sim", "20",
                            "--n-boot", "50", "--output", out.string()});
    REQUIRE(r.code == 0);
  }
  CHECK(read_file(a / "base.csv") == read_file(b / "base.csv"));
  CHECK(read_file(a / "summaries.json") == read_file(b / "summaries.json"));
}

TEST_CASE("simulate a sweep from the grid and from a scenario file") {
  TempDir dir;
  auto r = run_cli({"simulate", "--scenario", "replicates", "--reps", "5", "--n-sim", "3", "--n-boot", "0",
                    "--output", dir.file("rep").string()});
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir.file("rep") / "replicates.csv"));
  const auto j = nlohmann::json::parse(read_file(dir.file("rep") / "summaries.json"));
  CHECK(j.size() == 4);

  const auto spec = dir.write("grid.json", R"([{"name": "small", "n": 100, "n_reps": 5}])");
  r = run_cli({"simulate", "--scenarios-json", spec.string(), "--n-sim", "3", "--n-boot", "0", "--output",
               dir.file("custom").string()});
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir.file("custom") / "sample_size.csv"));

  const auto bad = dir.write("bad.json", R"([{"n": 30, "tau2": 10000, "n_reps": 20}])");
  r = run_cli({"simulate", "--scenarios-json", bad.string(), "--methods", "uncorrected,rc", "--n-boot", "0",
               "--output", dir.file("bad").string()});
  CHECK(r.code == 1);
  CHECK_FALSE(std::filesystem::exists(dir.file("bad") / "summaries.json"));
}

#ifdef MECOR_CLI_PATH
TEST_CASE("the installed binary maps errors to exit codes") {
  TempDir dir;
  const auto path = dir.write("d.csv", v20_csv());
  const std::string cli = MECOR_CLI_PATH;
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status(cli + " fit --input " + path.string() + " --outcome y --exposure x") == 0);
  CHECK(status(cli + " correct --method rc --tau2 30 --input " + path.string() + " --outcome y --exposure x") == 1);
  CHECK(status(cli + " correct --input " + path.string()) == 2);
}
#endif
