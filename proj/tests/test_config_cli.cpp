// Tests for the run configuration (text and JSON), the model registry and
// parameter files, the CSV layer, and the command implementations behind
// the CLI, including byte-level reproducibility of their outputs.

#include <catch2/catch_amalgamated.hpp>

#include "regime_coupler/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace rcoup;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rcoup_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  REQUIRE(out);
  out << text;
}

// filename -> bytes for every CSV in the directory
std::map<std::string, std::string> csv_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") out[e.path().filename().string()] = slurp(e.path());
  return out;
}

int run(const std::string& command, const RunConfig& cfg, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int rc = dispatch_command(command, cfg, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

}  // namespace

TEST_CASE("real rendering round-trips doubles", "[csv]") {
  PathRng rng(7, 0);
  for (int i = 0; i < 200; ++i) {
    const double v = (rng.uniform01() - 0.5) * std::pow(10.0, rng.uniform(-12.0, 12.0));
    const std::string s = csv_real(v);
    REQUIRE(std::strtod(s.c_str(), nullptr) == v);
    REQUIRE(s.find(',') == std::string::npos);  // decimal point only, never a locale comma
  }
  // 17 significant digits, general form: round-trip exact, not shortest
  REQUIRE(csv_real(0.1) == "0.10000000000000001");
  REQUIRE(csv_real(1.0) == "1");
  REQUIRE(csv_real(0.5) == "0.5");
}

TEST_CASE("csv writer enforces the column count", "[csv]") {
  const fs::path dir = fresh_dir("csv");
  CsvWriter w((dir / "t.csv").string(), {"a", "b"});
  w.row({"1", "2"});
  REQUIRE_THROWS_AS(w.row({"1"}), ConfigError);
  REQUIRE_THROWS_AS(w.row({"1", "2", "3"}), ConfigError);
  w.close();
  REQUIRE(slurp(dir / "t.csv") == "a,b\n1,2\n");
  REQUIRE_THROWS_AS(CsvWriter((dir / "no_such_dir" / "t.csv").string(), {"a"}), ConfigError);
}

TEST_CASE("config serialization round-trips", "[config]") {
  RunConfig c;
  REQUIRE(serialize_run_config(parse_run_config(serialize_run_config(c))) ==
          serialize_run_config(c));

  c.model = "segavg2";
  c.out_dir = "somewhere";
  c.seed = 1234567890123456789ULL;
  c.seed_set = true;
  c.workers = 3;
  c.simulate.dt = 0.002;
  c.simulate.x0 = {0.25, -1.5};
  c.couple.meet_eps = 1e-4;
  c.couple.regime0_second = 1;
  c.tail.fit = false;
  c.tail.t_min = 2.5;
  c.bounds.gamma = 4.0;
  c.meanfield.sigma = "const:0.95";
  c.meanfield.meet_eps = 0.015;
  c.meanfield.rho_inits = {0.1, 0.7};
  c.validate.corrupt = true;
  const std::string text = serialize_run_config(c);
  const RunConfig back = parse_run_config(text);
  REQUIRE(serialize_run_config(back) == text);
  REQUIRE(back.model == "segavg2");
  REQUIRE(back.seed == 1234567890123456789ULL);
  REQUIRE(back.seed_set);
  REQUIRE(back.simulate.x0 == std::vector<double>{0.25, -1.5});
  REQUIRE(back.couple.meet_eps == 1e-4);
  REQUIRE_FALSE(back.tail.fit);
  REQUIRE(back.meanfield.sigma == "const:0.95");
  REQUIRE(back.meanfield.meet_eps == 0.015);
  REQUIRE(back.validate.corrupt);

  // a config without an explicit seed keeps seed_set false after the trip
  RunConfig d;
  REQUIRE_FALSE(parse_run_config(serialize_run_config(d)).seed_set);
}

TEST_CASE("config rejects unknown keys and malformed lines", "[config]") {
  REQUIRE_THROWS_MATCHES(parse_run_config("[simulate]\nbogus = 1\n"), ConfigError,
                         Catch::Matchers::MessageMatches(
                             ContainsSubstring("unknown key 'simulate.bogus'")));
  REQUIRE_THROWS_MATCHES(parse_run_config("[conjure]\ndt = 1\n"), ConfigError,
                         Catch::Matchers::MessageMatches(
                             ContainsSubstring("unknown section 'conjure'")));
  REQUIRE_THROWS_MATCHES(parse_run_config("frobnicate = 1\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("unknown key")));
  REQUIRE_THROWS_AS(parse_run_config("[simulate\ndt = 1\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config("[simulate]\ndt 0.5\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config("[simulate]\ndt = abc\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config("[simulate]\nn_paths = 1.5\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config("[tail]\nfit = maybe\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config("seed = -3\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config("seed = abc\n"), ConfigError);

  // comments and blank lines are fine
  const RunConfig ok = parse_run_config("# comment\n; another\n\nmodel = ou2\n");
  REQUIRE(ok.model == "ou2");
}

TEST_CASE("JSON config is equivalent to the text form", "[config]") {
  const std::string json_text = R"({
    "model": "segavg2",
    "seed": 7,
    "couple": {"horizon": 25.0, "x0": [1.0], "y0": [-1.0]},
    "tail": {"fit": false}
  })";
  const std::string ini_text =
      "model = segavg2\nseed = 7\n\n[couple]\nhorizon = 25\nx0 = 1\ny0 = -1\n\n[tail]\nfit = "
      "false\n";
  REQUIRE(serialize_run_config(parse_run_config(json_text)) ==
          serialize_run_config(parse_run_config(ini_text)));

  REQUIRE_THROWS_MATCHES(parse_run_config(R"({"couple": {"x0": ["a"]}})"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("must be numbers")));
  REQUIRE_THROWS_AS(parse_run_config(R"({"simulate": {"dt": {"nested": 1}}})"), ConfigError);
  REQUIRE_THROWS_MATCHES(parse_run_config("{ not json"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("JSON parse")));
  REQUIRE_THROWS_MATCHES(parse_run_config(R"({"simulate": {"bogus": 1}})"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("unknown key")));
}

TEST_CASE("model registry and parameter files", "[models]") {
  REQUIRE(resolve_model("ou2").name == "ou2");
  REQUIRE(resolve_model("logistic2").spec.regime_count == 2);
  REQUIRE(resolve_model("segavg2").spec.rate_bound == 0.4);
  REQUIRE_THROWS_MATCHES(resolve_model("no-such-model"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("neither")));

  const fs::path dir = fresh_dir("models");
  const fs::path ou_file = dir / "ou.model";
  spit(ou_file,
       "# demo parameters\ntype = ou\ntheta = 1, 2\nsigma = 1.5, 1\n"
       "rates = 0, 0.25; 0.25, 0\n");
  const NamedModel nm = resolve_model(ou_file.string());
  REQUIRE(nm.name == ou_file.string());
  REQUIRE(nm.spec.dim == 1);
  REQUIRE(nm.spec.regime_count == 2);
  REQUIRE(nm.spec.rate_bound == 0.25);
  Vec x(1);
  x << 0.5;
  REQUIRE(nm.spec.drift(x, 1)[0] == Catch::Approx(-1.0));
  const HistorySegment seg = HistorySegment::constant(x, 0.5, 0.1);
  const RateRow row = nm.spec.rates(seg, 0);
  REQUIRE(row.size() == 1);
  REQUIRE(row[0].to == 1);
  REQUIRE(row[0].rate == 0.25);

  const fs::path lg_file = dir / "lg.model";
  spit(lg_file, "type = logistic\na = 1, 2\nb = 1, 1\nsigma = 0.3, 0.5\nrates = 0, 0.5; 0.5, 0\n");
  const NamedModel lg = load_model_file(lg_file.string());
  Vec neg(1);
  neg << -1.0;
  lg.spec.constrain(neg);
  REQUIRE(neg[0] == 0.0);

  spit(dir / "bad1.model", "type = banana\n");
  REQUIRE_THROWS_MATCHES(load_model_file((dir / "bad1.model").string()), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("unknown type")));
  spit(dir / "bad2.model", "type = ou\ntheta = 1\nrates = 0\n");
  REQUIRE_THROWS_MATCHES(load_model_file((dir / "bad2.model").string()), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("missing key")));
  spit(dir / "bad3.model", "type = ou\ntheta = 1\nsigma = 1\nrates = 0\nextra = 2\n");
  REQUIRE_THROWS_MATCHES(load_model_file((dir / "bad3.model").string()), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("unknown key")));
  spit(dir / "bad4.model", "type = ou\ntheta = 1, 2\nsigma = 1, 1\nrates = 0.1, 0.2; 0.2, 0\n");
  REQUIRE_THROWS_MATCHES(load_model_file((dir / "bad4.model").string()), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("diagonal")));
  spit(dir / "bad5.model", "type = ou\ntheta = 1, 2\nsigma = 1, 1\nrates = 0, 0.2; 0.2\n");
  REQUIRE_THROWS_AS(load_model_file((dir / "bad5.model").string()), ConfigError);
}

TEST_CASE("mean-field parameters from the config section", "[models]") {
  MeanfieldSection s;  // defaults: identity sigma, two regimes
  const MeanFieldParams p = meanfield_from_config(s);
  REQUIRE(p.n_bodies == 2);
  REQUIRE(p.rate_bound == 0.35);
  REQUIRE(p.sigma(Vec::Zero(2), 0) == Mat::Identity(2, 2));
  const HistorySegment seg = HistorySegment::constant(Vec::Zero(2), 0.5, 0.1);
  const RateRow r0 = p.rates(seg, 0);
  REQUIRE(r0.size() == 1);
  REQUIRE(r0[0].rate == Catch::Approx(0.15));  // tanh(0) = 0

  MeanfieldSection cs = s;
  cs.sigma = "const:0.95";
  REQUIRE(meanfield_from_config(cs).sigma(Vec::Zero(2), 0)(0, 0) == Catch::Approx(0.95));

  MeanfieldSection sd = s;
  sd.sigma = "statedep";
  Vec far = Vec::Constant(2, 3.0);
  REQUIRE(meanfield_from_config(sd).sigma(far, 0)(0, 0) == Catch::Approx(std::sqrt(10.0)));

  MeanfieldSection bad = s;
  bad.sigma = "wat";
  REQUIRE_THROWS_AS(meanfield_from_config(bad), ConfigError);
  MeanfieldSection three = s;
  three.alpha = {1.0, 0.5, 0.2};
  three.beta = {0.5, 1.0, 0.2};
  REQUIRE_THROWS_AS(meanfield_from_config(three), ConfigError);
}

TEST_CASE("simulate command writes a stable set of files", "[cli][slow]") {
  RunConfig cfg;
  cfg.model = "ou2";
  cfg.seed = 4242;
  cfg.simulate.n_paths = 40;

  const fs::path d1 = fresh_dir("sim1"), d2 = fresh_dir("sim2"), d3 = fresh_dir("sim3");
  cfg.out_dir = d1.string();
  REQUIRE(run("simulate", cfg) == 0);
  cfg.out_dir = d2.string();
  REQUIRE(run("simulate", cfg) == 0);
  cfg.out_dir = d3.string();
  cfg.workers = 3;
  REQUIRE(run("simulate", cfg) == 0);

  const auto b1 = csv_bytes(d1);
  REQUIRE(b1.count("path.csv"));
  REQUIRE(b1.count("events.csv"));
  REQUIRE(b1.count("summary.csv"));
  REQUIRE(b1 == csv_bytes(d2));  // same seed, same bytes
  REQUIRE(b1 == csv_bytes(d3));  // worker count cannot leak into the data
  REQUIRE(slurp(d1 / "simulate_meta.json") == slurp(d2 / "simulate_meta.json"));

  // path.csv: header plus one row per grid point of the recorded path
  std::istringstream lines(b1.at("path.csv"));
  std::string line;
  int n_lines = 0;
  while (std::getline(lines, line)) ++n_lines;
  REQUIRE(n_lines == 102);  // header + horizon/dt + 1 points
  REQUIRE(b1.at("path.csv").rfind("time,regime,x1\n0,1,1\n", 0) == 0);
  REQUIRE_THAT(b1.at("summary.csv"), ContainsSubstring("final_regime_frac_2"));

  // dimension mismatch is a config error
  RunConfig bad = cfg;
  bad.simulate.x0 = {1.0, 2.0};
  std::string err;
  REQUIRE(run("simulate", bad, nullptr, &err) == 1);
  REQUIRE_THAT(err, ContainsSubstring("config error"));
  RunConfig badreg = cfg;
  badreg.simulate.regime0 = 3;
  REQUIRE(run("simulate", badreg) == 1);
}

TEST_CASE("couple command tail output and reproducibility", "[cli][slow]") {
  RunConfig cfg;
  cfg.model = "ou2";
  cfg.seed = 91;
  cfg.couple.n_paths = 120;
  cfg.couple.dt = 0.02;
  cfg.couple.horizon = 15.0;
  cfg.tail.grid_points = 51;

  const fs::path d1 = fresh_dir("cpl1"), d2 = fresh_dir("cpl2");
  cfg.out_dir = d1.string();
  std::string err1;
  REQUIRE(run("couple", cfg, nullptr, &err1) == 0);
  cfg.out_dir = d2.string();
  cfg.workers = 4;
  REQUIRE(run("couple", cfg) == 0);
  REQUIRE(csv_bytes(d1) == csv_bytes(d2));

  const std::string tail = slurp(d1 / "tail.csv");
  REQUIRE(tail.rfind("t,survival,se\n0,1,0\n", 0) == 0);  // nobody couples at t = 0
  std::istringstream lines(tail);
  std::string line;
  int n_lines = 0;
  while (std::getline(lines, line)) ++n_lines;
  REQUIRE(n_lines == 52);

  const std::string meta = slurp(d1 / "couple_meta.json");
  REQUIRE_THAT(meta, ContainsSubstring("\"command\": \"couple\""));
  REQUIRE_THAT(meta, ContainsSubstring("\"fit\""));

  // the recorded trajectory covers the whole grid and starts unglued
  const std::string pair = slurp(d1 / "pair.csv");
  REQUIRE(pair.rfind("time,x1,y1,k,l,glued\n0,1,-1,1,2,0\n", 0) == 0);
  REQUIRE(std::count(pair.begin(), pair.end(), '\n') == 752);  // header + 751 grid points

  // a pair started glued couples at exactly the delay on every path
  RunConfig glued = cfg;
  glued.couple.y0 = glued.couple.x0;
  glued.couple.regime0_second = glued.couple.regime0;
  glued.couple.horizon = 2.0;
  glued.couple.dt = 0.05;
  glued.couple.n_paths = 30;
  glued.tail.fit = false;
  const fs::path dg = fresh_dir("cplglued");
  glued.out_dir = dg.string();
  REQUIRE(run("couple", glued) == 0);
  const std::string rows = slurp(dg / "couple_paths.csv");
  REQUIRE_THAT(rows, ContainsSubstring("\n0,0,0.5,1,0\n"));
  REQUIRE_THAT(rows, ContainsSubstring("\n29,0,0.5,1,0\n"));

  // a horizon below the gluing window censors everything and warns
  RunConfig cens = glued;
  cens.couple.y0 = {-1.0};
  cens.couple.horizon = 0.3;
  cens.couple.delay = 0.25;
  const fs::path dc = fresh_dir("cplcens");
  cens.out_dir = dc.string();
  std::string err;
  REQUIRE(run("couple", cens, nullptr, &err) == 0);
  REQUIRE_THAT(err, ContainsSubstring("warning:"));
  REQUIRE_THAT(slurp(dc / "couple_meta.json"), ContainsSubstring("censored"));

  // dt must divide the delay
  RunConfig baddt = cfg;
  baddt.couple.dt = 0.03;
  REQUIRE(run("couple", baddt) == 1);
}

TEST_CASE("bounds command emits the constant tables", "[cli]") {
  RunConfig cfg;
  cfg.bounds.gamma = 4.0;
  const fs::path d = fresh_dir("bounds");
  cfg.out_dir = d.string();
  REQUIRE(run("bounds", cfg) == 0);

  const TheoryConstants c = theory_constants(1.0, 2.0, 1.0, 1.0);
  const std::string consts = slurp(d / "constants.csv");
  REQUIRE_THAT(consts, ContainsSubstring("delta2"));
  REQUIRE_THAT(consts, ContainsSubstring(csv_real(c.delta2)));
  REQUIRE_THAT(consts, ContainsSubstring("beta_gamma_lb"));
  REQUIRE_THAT(consts, ContainsSubstring(csv_real(beta_gamma_lower(c, 4.0))));

  const std::string poly = slurp(d / "polylog.csv");
  std::istringstream lines(poly);
  std::string line;
  int n_lines = 0, n_ok = 0;
  while (std::getline(lines, line)) {
    ++n_lines;
    if (line.size() >= 2 && line.compare(line.size() - 2, 2, ",1") == 0) ++n_ok;
  }
  REQUIRE(n_lines == 73);  // header + 9 rho values x 8 orders
  REQUIRE(n_ok == 72);     // the inequality holds everywhere

  const std::string moments = slurp(d / "moments.csv");
  REQUIRE_THAT(moments, ContainsSubstring("moment_bound"));
  REQUIRE_THAT(moments, ContainsSubstring(csv_real(c.R_hat)));

  // alpha <= 0 cannot produce constants
  RunConfig bad = cfg;
  bad.bounds.alpha = 0.0;
  bad.out_dir = fresh_dir("bounds_bad").string();
  std::string err;
  REQUIRE(run("bounds", bad, nullptr, &err) == 1);
  REQUIRE_THAT(err, ContainsSubstring("config error"));

  // gamma in (0, 2] is not a valid finite-window index
  RunConfig badg = cfg;
  badg.bounds.gamma = 1.5;
  badg.out_dir = fresh_dir("bounds_badg").string();
  REQUIRE(run("bounds", badg) == 1);
}

TEST_CASE("meanfield command: tables, drift check, rejection", "[cli][slow]") {
  RunConfig cfg;
  cfg.seed = 20;
  cfg.meanfield.rho_points = 7;
  cfg.meanfield.rho_max = 2.0;
  cfg.meanfield.check_directions = 2;
  cfg.meanfield.couple_paths = 40;
  cfg.meanfield.dt = 0.01;
  cfg.meanfield.horizon = 10.0;
  cfg.meanfield.meet_eps = 0.02;
  cfg.meanfield.rho_inits = {0.5};

  const fs::path d1 = fresh_dir("mf1"), d2 = fresh_dir("mf2");
  cfg.out_dir = d1.string();
  REQUIRE(run("meanfield", cfg) == 0);
  cfg.out_dir = d2.string();
  cfg.workers = 3;
  REQUIRE(run("meanfield", cfg) == 0);
  REQUIRE(csv_bytes(d1) == csv_bytes(d2));

  const std::string gt = slurp(d1 / "gtable.csv");
  REQUIRE(gt.rfind("rho,f,G\n0,", 0) == 0);
  REQUIRE_THAT(gt, ContainsSubstring(",0\n"));  // G(0) = 0 exactly
  REQUIRE(fs::exists(d1 / "driftcheck.csv"));
  const std::string dc = slurp(d1 / "driftcheck.csv");
  REQUIRE(dc.rfind("r,omega_value,margin\n", 0) == 0);
  REQUIRE(fs::exists(d1 / "mfcouple.csv"));
  REQUIRE_THAT(slurp(d1 / "mfcouple.csv"), ContainsSubstring("rho0,mean_T,se,bound"));
  REQUIRE_THAT(slurp(d1 / "meanfield_meta.json"), ContainsSubstring("\"drift_check_ok\": true"));
  REQUIRE_THAT(slurp(d1 / "meanfield_meta.json"), ContainsSubstring("\"couple_all_ok\": true"));

  // the state-grown sigma violates the ellipticity ceiling: numeric failure
  RunConfig bad = cfg;
  bad.meanfield.sigma = "statedep";
  bad.out_dir = fresh_dir("mf_bad").string();
  std::string err;
  REQUIRE(run("meanfield", bad, nullptr, &err) == 2);
  REQUIRE_THAT(err, ContainsSubstring("not uniformly elliptic"));
  REQUIRE_THAT(err, ContainsSubstring("sigma_i^2"));

  RunConfig badgrid = cfg;
  badgrid.meanfield.rho_points = 1;
  REQUIRE(run("meanfield", badgrid) == 1);
}

TEST_CASE("validate command reports, hashes and exit codes", "[cli][slow]") {
  RunConfig cfg;
  cfg.seed = 3;
  cfg.validate.n_samples = 60;

  const fs::path d1 = fresh_dir("val1"), d2 = fresh_dir("val2");
  cfg.out_dir = d1.string();
  std::string out1, out2;
  REQUIRE(run("validate", cfg, &out1) == 0);
  cfg.out_dir = d2.string();
  REQUIRE(run("validate", cfg, &out2) == 0);

  REQUIRE(out1 == out2);  // same seed: identical report, identical hash line
  REQUIRE_THAT(out1, ContainsSubstring("ALL SUITES PASSED"));
  REQUIRE_THAT(out1, ContainsSubstring("report_hash "));
  REQUIRE_THAT(slurp(d1 / "validate_report.txt"), ContainsSubstring("ALL SUITES PASSED"));
  REQUIRE_THAT(slurp(d1 / "validate_meta.json"), ContainsSubstring("\"passed\": true"));

  // injected rate corruption must fail the coupling-consistency suite
  RunConfig corrupt = cfg;
  corrupt.validate.corrupt = true;
  corrupt.out_dir = fresh_dir("val3").string();
  std::string outc;
  REQUIRE(run("validate", corrupt, &outc) == 2);
  REQUIRE_THAT(outc, ContainsSubstring("FAIL"));
  REQUIRE_THAT(outc, ContainsSubstring("SUITE FAILURES PRESENT"));
}

TEST_CASE("unknown command exits with a usage error", "[cli]") {
  RunConfig cfg;
  std::string err;
  REQUIRE(run("transmogrify", cfg, nullptr, &err) == 1);
  REQUIRE_THAT(err, ContainsSubstring("unknown command"));
}
