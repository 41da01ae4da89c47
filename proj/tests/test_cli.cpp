#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <random>
#include <sstream>

#include "reqiv/cli.hpp"
#include "reqiv/csv.hpp"
#include "reqiv/error.hpp"
#include "reqiv/fitfile.hpp"
#include "reqiv/panel.hpp"
#include "reqiv/synthgen.hpp"

namespace fs = std::filesystem;
using namespace reqiv;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result reqiv_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Fresh scratch directory per test case; the process cwd moves into it.
struct Scratch {
  fs::path dir;
  fs::path previous;
  explicit Scratch(const std::string& name) {
    dir = fs::temp_directory_path() / ("reqiv_cli_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    previous = fs::current_path();
    fs::current_path(dir);
  }
  ~Scratch() {
    fs::current_path(previous);
    fs::remove_all(dir);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    rows.push_back(cells);
  }
  return rows;
}

std::map<std::string, std::string> keyed(const fs::path& p, std::size_t key_col, std::size_t value_col) {
  std::map<std::string, std::string> m;
  const auto rows = csv_rows(p);
  for (std::size_t i = 1; i < rows.size(); ++i) m[rows[i][key_col]] = rows[i][value_col];
  return m;
}

// Simulated contacts with a binary group covariate and a normal covariate.
void write_group_contacts(const fs::path& path, int n, std::uint64_t seed) {
  SimConfig c;
  c.n_subjects = n;
  c.propensities = {0.3, 0.5};
  c.msr = {MsrKind::probit_index, 0.5, 0.0, 0.2, 0.4};
  c.seed = seed;
  ContactTable t = sim_contacts(simulate(c));
  t.covariate_names = {"male", "x1"};
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    t.records[i].covariates = {static_cast<double>(i % 2), std::round(z(gen) * 1000.0) / 1000.0};
  }
  write_contacts_file(path.string(), t);
}

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("help, version and usage errors") {
  Scratch s("usage");
  CHECK(reqiv_cli({"--help"}).code == 0);
  CHECK(reqiv_cli({"fit", "--help"}).code == 0);
  const Result v = reqiv_cli({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.find(cli::kVersion) != std::string::npos);
  CHECK(reqiv_cli({}).code == 1);
  CHECK(reqiv_cli({"frobnicate"}).code == 1);
  CHECK(reqiv_cli({"lar", "--no-such-flag", "1"}).code == 1);
  CHECK(reqiv_cli({"lar"}).code == 1);  // --panel missing
  CHECK(reqiv_cli({"lar", "--panel", "missing.csv"}).code == 1);
  CHECK(reqiv_cli({"fit", "--panel", "missing.csv", "--rho", "abc"}).code == 1);
}

TEST_CASE("malformed inputs report the line") {
  Scratch s("malformed");
  spit("bad.csv",
       "subject_id,cluster_id,term_id,stratum_id,opt_out,request_ts_1,response_ts,outcome\n"
       "a,a,T,,0,2020-01-01T00:00:00Z,,\n"
       "b,b,T,,0,not-a-time,,\n");
  const Result r = reqiv_cli({"build-panel", "--contacts", "bad.csv"});
  CHECK(r.code == 1);
  CHECK(r.err.find(":3") != std::string::npos);

  spit("fit.json", "{\"format\": \"something-else\"}");
  spit("p.csv", "");
  CHECK(reqiv_cli({"msr-curve", "--fit", "fit.json", "--panel", "p.csv"}).code == 1);
}

TEST_CASE("non-convergence exits with 2") {
  Scratch s("nonconv");
  REQUIRE(reqiv_cli({"simulate", "--n-subjects", "2000", "--propensities", "0.3,0.5", "--msr-beta", "0.2", "--msr-rho",
                     "0.4", "--out-dir", "sim"})
              .code == 0);
  REQUIRE(reqiv_cli({"build-panel", "--contacts", "sim/contacts.csv", "--out", "p.csv"}).code == 0);
  const Result r = reqiv_cli({"fit", "--panel", "p.csv", "--max-iterations", "1"});
  CHECK(r.code == 2);
  CHECK(fs::exists("parameters.csv.meta.json"));
}

TEST_CASE("config file values apply unless a flag overrides them") {
  Scratch s("config");
  REQUIRE(reqiv_cli({"build-panel", "--timing-term", "2016-fall", "--subjects", "500", "--out", "p.csv"}).code == 0);
  spit("run.cfg",
       "# lar settings\n"
       "panel = p.csv\n"
       "r = 2\n"
       "out = from_config.csv\n"
       "lar.r_prime = 1\n"
       "fit.replicates = 3\n"
       "seed = 99\n");
  Result r = reqiv_cli({"--config", "run.cfg", "lar", "--out", "from_flag.csv"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists("from_flag.csv"));
  CHECK_FALSE(fs::exists("from_config.csv"));
  const auto rows = csv_rows("from_flag.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1][0] == "2");
  CHECK(rows[1][1] == "1");
  const auto meta = nlohmann::json::parse(slurp("from_flag.csv.meta.json"));
  CHECK(meta["config"]["seed"] == "99");
  CHECK(meta["config"]["lar.out"] == "from_flag.csv");

  spit("bad.cfg", "panel = p.csv\n\nfrobnicate = 3\n");
  r = reqiv_cli({"--config", "bad.cfg", "lar"});
  CHECK(r.code == 1);
  CHECK(r.err.find("bad.cfg:3") != std::string::npos);
  spit("bad2.cfg", "just words\n");
  CHECK(reqiv_cli({"--config", "bad2.cfg", "lar"}).code == 1);
}

TEST_CASE("timing fixture: build-panel then lar gives the published propensities") {
  Scratch s("timing");
  REQUIRE(reqiv_cli({"build-panel", "--timing-term", "2016-fall", "--subjects", "2000", "--out", "p.csv"}).code == 0);
  REQUIRE(reqiv_cli({"lar", "--panel", "p.csv", "--propensities", "props.csv"}).code == 0);
  const auto p = keyed("props.csv", 0, 1);
  CHECK(std::stod(p.at("1")) == doctest::Approx(0.11).epsilon(1e-9));
  CHECK(std::stod(p.at("2")) == doctest::Approx(0.17).epsilon(1e-9));
  CHECK(std::stod(p.at("3")) == doctest::Approx(0.19).epsilon(1e-9));
}

TEST_CASE("outputs are byte-identical across runs, including a threaded bootstrap") {
  Scratch s("determinism");
  write_group_contacts("c.csv", 1500, 4);
  auto pipeline = [] {
    std::map<std::string, std::string> files;
    REQUIRE(reqiv_cli({"--output-dir", "o", "build-panel", "--contacts", "c.csv", "--out", "p.csv"}).code == 0);
    REQUIRE(reqiv_cli({"--output-dir", "o", "--threads", "3", "fit", "--panel", "o/p.csv", "--x", "x1", "--group",
                       "male", "--variance", "cluster_bootstrap", "--replicates", "12", "--means", "means.csv"})
                .code == 0);
    REQUIRE(reqiv_cli({"--output-dir", "o", "--threads", "2", "decompose", "--fit", "o/fit.json", "--panel", "o/p.csv",
                       "--replicates", "6"})
                .code == 0);
    REQUIRE(reqiv_cli({"--output-dir", "o", "fit", "--panel", "o/p.csv", "--group", "male", "--out", "p0.csv",
                       "--fit-out", "fit0.json"})
                .code == 0);
    REQUIRE(reqiv_cli({"--output-dir", "o", "msr-curve", "--fit", "o/fit0.json", "--panel", "o/p.csv", "--group", "1",
                       "--grid", "9"})
                .code == 0);
    for (const auto& e : fs::directory_iterator("o")) files[e.path().filename().string()] = slurp(e.path());
    fs::remove_all("o");
    return files;
  };
  const auto a = pipeline();
  const auto b = pipeline();
  CHECK(a.size() >= 12);
  CHECK(a == b);

  // A different global seed moves the bootstrap.
  REQUIRE(reqiv_cli({"--output-dir", "o", "build-panel", "--contacts", "c.csv", "--out", "p.csv"}).code == 0);
  REQUIRE(reqiv_cli({"--output-dir", "o", "--seed", "5", "fit", "--panel", "o/p.csv", "--variance", "cluster_bootstrap",
                     "--replicates", "12"})
              .code == 0);
  const std::string other = slurp("o/parameters.csv");
  REQUIRE(reqiv_cli({"--output-dir", "o", "--seed", "6", "fit", "--panel", "o/p.csv", "--variance", "cluster_bootstrap",
                     "--replicates", "12"})
              .code == 0);
  CHECK(slurp("o/parameters.csv") != other);
}

TEST_CASE("metadata sidecar records seeds, outputs and config hash") {
  Scratch s("meta");
  REQUIRE(reqiv_cli({"--seed", "17", "simulate", "--n-subjects", "300", "--out-dir", "sim"}).code == 0);
  const auto meta = nlohmann::json::parse(slurp("sim/run.meta.json"));
  CHECK(meta["tool"] == "reqiv");
  CHECK(meta["subcommand"] == "simulate");
  CHECK(meta["seeds"].contains("simulate"));
  CHECK(meta["outputs"].size() == 2);
  CHECK(meta["config_hash"].get<std::string>().size() == 16);
  CHECK(meta["config_hash"] == cli::config_hash([&] {
          std::vector<std::pair<std::string, std::string>> kv;
          for (const auto& [k, v] : meta["config"].items()) kv.emplace_back(k, v.get<std::string>());
          return kv;
        }()));
  REQUIRE(reqiv_cli({"--seed", "18", "simulate", "--n-subjects", "300", "--out-dir", "sim"}).code == 0);
  const auto meta2 = nlohmann::json::parse(slurp("sim/run.meta.json"));
  CHECK(meta2["config_hash"] != meta["config_hash"]);
  CHECK(meta2["seeds"]["simulate"] != meta["seeds"]["simulate"]);
}

TEST_CASE("output directory from the environment") {
  Scratch s("env");
  ::setenv("REQIV_OUTPUT_DIR", "envout", 1);
  const Result r = reqiv_cli({"simulate", "--n-subjects", "100", "--out-dir", "sim"});
  ::unsetenv("REQIV_OUTPUT_DIR");
  REQUIRE(r.code == 0);
  CHECK(fs::exists("envout/sim/contacts.csv"));
  CHECK(fs::exists("envout/sim/truth.csv"));
}

TEST_CASE("fit file round trip") {
  Scratch s("roundtrip");
  write_group_contacts("c.csv", 1200, 8);
  REQUIRE(reqiv_cli({"build-panel", "--contacts", "c.csv", "--out", "p.csv"}).code == 0);
  REQUIRE(reqiv_cli({"fit", "--panel", "p.csv", "--x", "x1", "--group", "male", "--fit-out", "f.json"}).code == 0);
  const SelectionFit f = read_fit_file("f.json");
  std::ostringstream again;
  write_fit(again, f);
  CHECK(again.str() == slurp("f.json"));
  CHECK(f.converged);
  CHECK(f.n_groups() == 2);
  CHECK(f.theta.size() == static_cast<Eigen::Index>(f.param_names.size()));
  CHECK(f.vcov.rows() == f.theta.size());
  CHECK(reqiv_cli({"msr-curve", "--fit", "f.json", "--panel", "p.csv", "--group", "1"}).code == 1);
  CHECK(reqiv_cli({"msr-curve", "--fit", "f.json", "--panel", "p.csv", "--group", "1", "--profile", "0.25", "--grid",
                   "8"})
            .code == 0);
  CHECK(csv_rows("msr_curve.csv").size() == 9);
  std::istringstream truncated(slurp("f.json").substr(0, 200));
  CHECK_THROWS_AS(read_fit(truncated, "cut"), ValidationError);
}

TEST_CASE("rho fixed at zero on respondents matches a plain probit") {
  Scratch s("probit");
  write_group_contacts("c.csv", 4000, 12);
  REQUIRE(reqiv_cli({"build-panel", "--contacts", "c.csv", "--out", "p.csv"}).code == 0);
  REQUIRE(reqiv_cli({"fit", "--panel", "p.csv", "--x", "x1", "--rho", "0", "--out", "params.csv"}).code == 0);

  // Weighted probit of Y on (1, x1) over responding rows, by Newton's method.
  const Panel p = read_panel_file("p.csv");
  const std::size_t ix = *p.covariate_index("x1");
  double b0 = 0.0, b1 = 0.0;
  for (int it = 0; it < 50; ++it) {
    double g0 = 0, g1 = 0, h00 = 0, h01 = 0, h11 = 0;
    for (const auto& row : p.rows) {
      if (row.R < 1 || !row.S_hat) continue;
      const double x = row.covariates[ix];
      const double q = 2.0 * row.Y_hat - 1.0;
      const double a = q * (b0 + b1 * x);
      const double pdf = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
      const double lam = q * pdf / phi(a);
      const double w = row.weight;
      g0 += w * lam;
      g1 += w * lam * x;
      const double d = lam * (lam + b0 + b1 * x);
      h00 += w * d;
      h01 += w * d * x;
      h11 += w * d * x * x;
    }
    const double det = h00 * h11 - h01 * h01;
    b0 += (h11 * g0 - h01 * g1) / det;
    b1 += (h00 * g1 - h01 * g0) / det;
  }
  const auto est = keyed("params.csv", 0, 1);
  CHECK(std::stod(est.at("beta:(intercept)")) == doctest::Approx(b0).epsilon(1e-7));
  CHECK(std::stod(est.at("beta:x1")) == doctest::Approx(b1).scale(1.0).epsilon(1e-7));
}

TEST_CASE("overid through the command line") {
  Scratch s("overid");
  REQUIRE(reqiv_cli({"simulate", "--n-subjects", "6000", "--propensities", "0.2,0.35,0.45,0.52", "--msr-beta", "0.2",
                     "--msr-rho", "0.4", "--out-dir", "sim"})
              .code == 0);
  REQUIRE(reqiv_cli({"build-panel", "--contacts", "sim/contacts.csv", "--out", "p.csv"}).code == 0);
  const Result r = reqiv_cli({"overid", "--panel", "p.csv", "--identification", "1,2", "--lr"});
  REQUIRE(r.code == 0);
  const auto rows = csv_rows("event_study.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][1] == "3");
  CHECK(rows[2][1] == "4");
  const auto tests = csv_rows("overid_tests.csv");
  REQUIRE(tests.size() == 3);
  CHECK(tests[1][0] == "wald");
  CHECK(tests[2][0] == "lr");
  CHECK(reqiv_cli({"overid", "--panel", "p.csv", "--tested", "2,3,4"}).code == 1);
  CHECK(reqiv_cli({"overid", "--panel", "p.csv", "--tested", "2", "--identification", "1,2"}).code == 1);
}

TEST_CASE("reproduce-nct reports the respondent bias in earnings") {
  Scratch s("nct");
  const Result r = reqiv_cli({"reproduce-nct", "--replicates", "50"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("MLE") != std::string::npos);
  std::map<std::string, double> bias, fiml;
  for (const auto& row : csv_rows("nct_estimates.csv")) {
    if (row.size() < 4) continue;
    if (row[2] == "bias_gap") bias[row[0]] = std::stod(row[3]);
    if (row[2] == "fiml") fiml[row[0]] = std::stod(row[3]);
  }
  // Respondents average 3668 against a corrected 3197.
  CHECK(std::abs(bias.at("earnings_before") - 471.0) <= 0.015 * 3197.0);
  CHECK(fiml.at("earnings_before") == doctest::Approx(3197.0).epsilon(0.015));

  REQUIRE(reqiv_cli({"synth-nct", "--out-dir", "gen"}).code == 0);
  const auto truth = keyed("gen/ground_truth.csv", 0, 2);
  CHECK(std::stod(truth.at("earnings_before")) == 3095.0);
  CHECK(fs::exists("gen/contacts_employment_loss.csv"));
}
