#include <catch_amalgamated.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "winfrac/winfrac.hpp"

using namespace winfrac;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("winfrac_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run(const std::string& args) {
  const fs::path o = workdir() / "stdout", e = workdir() / "stderr";
  const std::string cmd = std::string("\"") + WINFRAC_CLI_PATH + "\" " + args + " >\"" + o.string() + "\" 2>\"" + e.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

// Simulated data shared by the fit tests.
const std::string& sample_csv() {
  static const std::string p = [] {
    const std::string f = path("sample.csv");
    REQUIRE(run("simulate --n 150 --seed 11 --output " + f).code == 0);
    return f;
  }();
  return p;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line.front() != '#') rows.push_back(split(line, ','));
  return rows;
}

}  // namespace

TEST_CASE("cli simulate: same seed gives byte-identical files") {
  REQUIRE(run("simulate --n 200 --seed 7 --output " + path("a.csv")).code == 0);
  REQUIRE(run("simulate --n 200 --seed 7 --output " + path("b.csv")).code == 0);
  const std::string a = slurp(path("a.csv"));
  CHECK(a == slurp(path("b.csv")));
  CHECK(a.find("# seed=7") != std::string::npos);
  const Dataset ds = load_csv(path("a.csv"), ColumnMap::standard(2, 1, 0));
  CHECK(ds.size() == 200);
  CHECK(ds.p() == 2);
}

TEST_CASE("cli fit: JSON fields, config echo and library agreement") {
  const Run r = run("fit --data " + sample_csv() + " --L 0.5");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["status"] == "ok");
  CHECK(j["config"]["floor"].get<double>() == 0.01);
  CHECK(j["config"]["structure"] == "marginal");
  CHECK(j["config"]["splits"] == 1);
  CHECK(j["config"].contains("seed"));
  CHECK(j["config"].contains("threads"));
  for (const char* k : {"censoring_rate", "resolved_fraction", "weight_min", "weight_median", "weight_max",
                        "winsorized_count", "m_n", "h_n", "iterations"})
    CHECK(j["diagnostics"].contains(k));
  REQUIRE(j["coefficients"].size() == 2);

  ModelSpec spec;
  spec.restriction = RestrictionRule::fixed(0.5);
  const FitResult lib = fit(load_csv(sample_csv(), ColumnMap::standard(2, 1, 0)), spec);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& c = j["coefficients"][k];
    CHECK(c["estimate"].get<double>() == lib.beta[static_cast<Eigen::Index>(k)]);
    CHECK(c["se"].get<double>() == lib.se[static_cast<Eigen::Index>(k)]);
    for (const char* f : {"ci_low", "ci_high", "p"}) CHECK(c.contains(f));
  }
  CHECK_FALSE(j.contains("equivalence"));
}

TEST_CASE("cli fit: resolved-indicator logit is flagged as the pairwise fraction model") {
  const Run r = run("fit --data " + sample_csv() + " --L 0.5 --weights resolved");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["equivalence"] == "PWFM");
  CHECK(j["pwfm_residual_norm"].get<double>() < 1e-8);
}

TEST_CASE("cli fit: identity link carries the additive label") {
  REQUIRE(run("simulate --design identity --n 200 --seed 3 --output " + path("identity.csv")).code == 0);
  const Run r = run("fit --data " + path("identity.csv") + " --L 11.5 --link identity --pair-covariate left");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["interpretation"] == "additive change in the win fraction");
  CHECK(j["config"]["pair_covariate"] == "left");
  CHECK(j["config"]["columns"]["censoring_covariates"][0] == "c1");
}

TEST_CASE("cli fit: probit output includes the logit-scale transform") {
  const Run r = run("fit --data " + sample_csv() + " --L 0.5 --link probit");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  REQUIRE(j["logit_scale"].size() == 2);
  const double b = j["coefficients"][0]["estimate"].get<double>();
  const double want = std::log(std::erfc(-b / std::sqrt(2.0)) / std::erfc(b / std::sqrt(2.0)));
  CHECK(std::abs(j["logit_scale"][0]["log_win_odds"].get<double>() - want) < 1e-12);
}

TEST_CASE("cli fit: bad column exits 2 and names the flag") {
  const Run r = run("fit --data " + sample_csv() + " --L 0.5 --fatal-time death");
  CHECK(r.code == 2);
  CHECK(r.out.empty());
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j["error"]["flag"] == "--fatal-time");
  CHECK(j["error"]["message"].get<std::string>().find("death") != std::string::npos);

  const Run c = run("fit --data " + sample_csv() + " --L 0.5 --covariates x1,x9");
  CHECK(c.code == 2);
  CHECK(nlohmann::json::parse(c.err)["error"]["flag"] == "--covariates");
}

TEST_CASE("cli fit: invalid values are rejected before computing") {
  CHECK(run("fit --data " + sample_csv() + " --L -1").code == 2);
  CHECK(run("fit --data " + sample_csv() + " --L 0.5 --floor 0").code == 2);
  CHECK(run("fit --data " + sample_csv() + " --L 0.5 --link cloglog").code == 2);
  CHECK(run("fit --data " + sample_csv() + " --L 0.5 --weights ipcw-infinity").code == 2);
  CHECK(run("fit --data " + path("missing.csv") + " --L 0.5").code == 2);
  CHECK(run("fit --L 0.5").code == 2);
  CHECK(run("fit --data " + sample_csv() + " --L 0.5 --no-such-flag").code == 2);
}

TEST_CASE("cli fit: CSV format matches JSON") {
  const auto j = nlohmann::json::parse(run("fit --data " + sample_csv() + " --L 0.5").out);
  const Run r = run("fit --data " + sample_csv() + " --L 0.5 --format csv");
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][0] == "x1");
  CHECK(*parse_double(rows[1][1]) == j["coefficients"][0]["estimate"].get<double>());
}

TEST_CASE("cli trajectory: single L equals fit") {
  const auto j = nlohmann::json::parse(run("fit --data " + sample_csv() + " --L 0.5").out);
  const Run r = run("trajectory --data " + sample_csv() + " --grid 0.5");
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"L", "covariate", "estimate", "se", "ci_low", "ci_high", "status"});
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& c = j["coefficients"][k];
    CHECK(rows[k + 1][2] == fmt17(c["estimate"].get<double>()));
    CHECK(rows[k + 1][3] == fmt17(c["se"].get<double>()));
    CHECK(rows[k + 1][6] == "ok");
  }
}

TEST_CASE("cli trajectory: default grid spans the fatal-time quartile to the 99th percentile") {
  const Run r = run("trajectory --data " + sample_csv());
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 1 + 20 * 2);
  const Dataset ds = load_csv(sample_csv(), ColumnMap::standard(2, 1, 0));
  CHECK(*parse_double(rows[1][0]) == choose_restriction(ds, RestrictionRule::fatal_quantile(0.25)));
  CHECK(*parse_double(rows.back()[0]) == Catch::Approx(choose_restriction(ds, RestrictionRule::fatal_quantile(0.99))));
  CHECK(r.out.find("# grid=fatal-quantile") != std::string::npos);
}

TEST_CASE("cli trajectory: a failing L becomes a row and the run continues") {
  // A restriction time before every event leaves no resolved pairs.
  const Run r = run("trajectory --data " + sample_csv() + " --grid 1e-9,0.5");
  CHECK(r.code == 1);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 5);
  CHECK(rows[1][6] != "ok");
  CHECK(rows[3][6] == "ok");
}

TEST_CASE("cli truth: first design at L = 0.5") {
  const Run r = run("truth --design gumbel --alpha 1 --L 0.5");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(std::abs(j["beta_L"][0].get<double>() - 0.367) < 0.015);
  CHECK(std::abs(j["beta_L"][1].get<double>() - 0.223) < 0.015);
  CHECK(j["config"]["pair_draws"] == 100000);
}

TEST_CASE("cli study: CSV with the summary columns") {
  const Run r = run("study --L 0.5 --n 60 --reps 4 --truth 0.367,0.223 --seed 2");
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"coefficient", "beta_L", "mean", "rbias_pct", "mcsd", "ase", "cp",
                                            "censoring_pct", "reps", "failures"});
  CHECK(rows[1][1] == fmt17(0.367));
  CHECK(rows[1][8] == "4");
  CHECK(r.out.find("# seed=2") != std::string::npos);
  CHECK(run("study --L 0.5 --reps 1").code == 2);
  CHECK(run("study --L-quantile 0.5").code == 2);
}

TEST_CASE("cli config file: values apply and flags override") {
  const std::string cfg = path("run.cfg");
  {
    std::ofstream f(cfg);
    f << "# fit settings\nL = 0.5\nlink = \"probit\"\nweights = resolved\n";
  }
  const Run a = run("fit --config " + cfg + " --data " + sample_csv());
  REQUIRE(a.code == 0);
  const auto ja = nlohmann::json::parse(a.out);
  CHECK(ja["config"]["link"] == "probit");
  CHECK(ja["config"]["weights"] == "resolved");
  CHECK(ja["config"]["restriction"].get<double>() == 0.5);
  const Run b = run("fit --data " + sample_csv() + " --link logit --config " + cfg);
  REQUIRE(b.code == 0);
  CHECK(nlohmann::json::parse(b.out)["config"]["link"] == "logit");

  {
    std::ofstream f(cfg);
    f << "this line is not a setting\n";
  }
  CHECK(run("fit --config " + cfg + " --data " + sample_csv()).code == 2);
}

TEST_CASE("cli: thread count does not change results") {
  const auto a = nlohmann::json::parse(run("fit --data " + sample_csv() + " --L 0.5").out);
  const auto b = nlohmann::json::parse(run("fit --data " + sample_csv() + " --L 0.5 --threads 3").out);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(std::abs(a["coefficients"][k]["estimate"].get<double>() - b["coefficients"][k]["estimate"].get<double>()) < 1e-10);
    CHECK(std::abs(a["coefficients"][k]["se"].get<double>() - b["coefficients"][k]["se"].get<double>()) < 1e-10);
  }
}
