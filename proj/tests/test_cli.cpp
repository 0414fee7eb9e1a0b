#include <catch_amalgamated.hpp>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "uniform_lse/cli.hpp"
#include "uniform_lse/simulation.hpp"

using namespace uniform_lse;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::vector<std::string> &args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir() {
  static const fs::path dir = [] {
    const fs::path p = fs::temp_directory_path() / ("uniform_lse_cli_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string write_csv(const std::string &name, const std::string &content) {
  const fs::path p = scratch_dir() / name;
  std::ofstream(p) << content;
  return p.string();
}

std::string read_file(const fs::path &p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string golden(const std::string &name) { return (fs::path(UNIFORM_LSE_GOLDEN_DIR) / name).string(); }

std::vector<std::vector<std::string>> parse_csv(const std::string &text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      cells.push_back(cell);
    }
    rows.push_back(cells);
  }
  return rows;
}

// Same keys in the same order, same strings and booleans, numbers to 1e-12.
void check_same_shape(const json &got, const json &want, const std::string &where) {
  CAPTURE(where);
  REQUIRE(got.type() == want.type());
  if (want.is_object()) {
    std::vector<std::string> got_keys;
    std::vector<std::string> want_keys;
    for (const auto &[k, v] : got.items()) {
      got_keys.push_back(k);
    }
    for (const auto &[k, v] : want.items()) {
      want_keys.push_back(k);
    }
    REQUIRE(got_keys == want_keys);
    for (const auto &k : want_keys) {
      check_same_shape(got[k], want[k], where + "." + k);
    }
  } else if (want.is_array()) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      check_same_shape(got[i], want[i], where + "[" + std::to_string(i) + "]");
    }
  } else if (want.is_number_float()) {
    CHECK_THAT(got.get<double>(), WithinAbs(want.get<double>(), 1e-12 * (1.0 + std::fabs(want.get<double>()))));
  } else {
    CHECK(got == want);
  }
}

// x = (0, 1, 2, 3, 4); hand values: S1 = 10, S2 = 30, d = 50,
// beta1_hat = 20.3 / 10 = 2.03, beta0_hat = 5.12 - 2 * 2.03 = 1.06.
const std::string sample_csv = golden("sample.csv");

} // namespace

TEST_CASE("json reports match the pinned golden files") {
  struct Case {
    std::string file;
    std::vector<std::string> args;
  };
  const std::vector<Case> cases{
      {"fit.json", {"fit", sample_csv}},
      {"ci_exact.json", {"ci", sample_csv, "--theta", "1"}},
      {"ci_gaussian.json", {"ci", sample_csv, "--sigma-sq", "0.5", "--method", "gaussian", "--format", "json"}},
      {"test_plug_in.json", {"test", sample_csv, "--estimate-theta"}},
      {"diagnose.json", {"diagnose", sample_csv}},
  };
  for (const auto &c : cases) {
    const Outcome r = run_cli(c.args);
    CAPTURE(c.file, r.err);
    REQUIRE(r.code == 0);
    const json got = json::parse(r.out);
    const json want = json::parse(read_file(golden(c.file)));
    CHECK(got["schema_version"] == cli::schema_version);
    check_same_shape(got, want, c.file);
  }
}

TEST_CASE("fit report values") {
  const Outcome r = run_cli({"fit", sample_csv});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["n"] == 5);
  CHECK(j["s1"].get<double>() == 10.0);
  CHECK(j["s2"].get<double>() == 30.0);
  CHECK(j["d"].get<double>() == 50.0);
  CHECK_THAT(j["beta0_hat"].get<double>(), WithinAbs(1.06, 1e-14));
  CHECK_THAT(j["beta1_hat"].get<double>(), WithinAbs(2.03, 1e-14));
  // Residuals (0.14, -0.19, 0.18, -0.35, 0.22): sum of squares 0.259.
  CHECK_THAT(j["sigma_sq_hat"].get<double>(), WithinAbs(0.259 / 3.0, 1e-14));
  CHECK_THAT(j["theta_sq_hat"].get<double>(), WithinAbs(0.259, 1e-14));

  const auto line = write_csv("line.csv", "x,y\n-1,3\n0,7\n2,15\n5,27\n");
  const json exact = json::parse(run_cli({"fit", line}).out);
  CHECK_THAT(exact["beta0_hat"].get<double>(), WithinAbs(7.0, 1e-13));
  CHECK_THAT(exact["beta1_hat"].get<double>(), WithinAbs(4.0, 1e-13));
  CHECK_THAT(exact["theta_sq_hat"].get<double>(), WithinAbs(0.0, 1e-24));

  const Outcome csv = run_cli({"fit", line, "--format", "csv"});
  REQUIRE(csv.code == 0);
  const auto rows = parse_csv(csv.out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == std::vector<std::string>{"n", "s1", "s2", "d", "beta0_hat", "beta1_hat", "theta_sq_hat",
                                            "sigma_sq_hat"});
}

TEST_CASE("exit codes") {
  const auto no_y = write_csv("no_y.csv", "x,z\n1,2\n2,3\n3,3\n");
  Outcome r = run_cli({"fit", no_y});
  CHECK(r.code == 2);
  CHECK_THAT(r.err, ContainsSubstring("x,z"));
  CHECK_THAT(r.err, ContainsSubstring("'y'"));

  r = run_cli({"fit", write_csv("bad_number.csv", "x,y\n1,2\n2,abc\n3,3\n")});
  CHECK(r.code == 2);
  CHECK_THAT(r.err, ContainsSubstring("line 3"));

  CHECK(run_cli({"fit", write_csv("two.csv", "x,y\n1,2\n2,3\n")}).code == 3);
  CHECK(run_cli({"fit", write_csv("flat.csv", "x,y\n1,2\n1,3\n1,4\n")}).code == 3);
  CHECK(run_cli({"density", "--weights", "0,0", "--theta", "1"}).code == 3);

  r = run_cli({"density", "--n", "30", "--theta", "3"});
  CHECK(r.code == 4);
  CHECK_THAT(r.err, ContainsSubstring("--fallback-normal"));
  CHECK(run_cli({"density", "--n", "30", "--theta", "3", "--fallback-normal", "--points", "11"}).code == 0);
  CHECK(run_cli({"density", "--n", "30", "--theta", "3", "--exact-limit", "30", "--points", "3"}).code == 0);

  CHECK(run_cli({}).code == 5);
  CHECK(run_cli({"bogus"}).code == 5);
  CHECK(run_cli({"fit"}).code == 5);
  CHECK(run_cli({"ci", sample_csv, "--theta", "1", "--sigma-sq", "1"}).code == 5);
  CHECK(run_cli({"ci", sample_csv, "--theta", "1", "--estimate-theta"}).code == 5);
  CHECK(run_cli({"ci", sample_csv}).code == 5);
  CHECK(run_cli({"ci", sample_csv, "--theta", "-1"}).code == 5);
  CHECK(run_cli({"ci", sample_csv, "--theta", "1", "--level", "1.5"}).code == 5);
  CHECK(run_cli({"fit", sample_csv, "--format", "xml"}).code == 5);
  CHECK(run_cli({"density", "--weights", "1,2", "--theta", "1", "--step", "0"}).code == 5);

  r = run_cli({"fit", (scratch_dir() / "does_not_exist.csv").string()});
  CHECK(r.code == 1);
  CHECK_THAT(r.err, ContainsSubstring("cannot open"));

  r = run_cli({"--help"});
  CHECK(r.code == 0);
  CHECK_THAT(r.out, ContainsSubstring("convergence"));
}

TEST_CASE("density of two unit boxes is the triangle (2 - |x|) / 4") {
  const Outcome r = run_cli({"density", "--weights", "1,1", "--theta", "1", "--from", "-2", "--to", "2", "--step",
                             "0.5"});
  REQUIRE(r.code == 0);
  CHECK(r.out == read_file(golden("density_triangle.csv")));
  const auto rows = parse_csv(r.out);
  REQUIRE(rows.size() == 10);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double x = std::stod(rows[i][0]);
    CHECK(std::stod(rows[i][1]) == (2.0 - std::fabs(x)) / 4.0);
  }

  const json j = json::parse(run_cli({"density", "--weights", "1,1", "--theta", "1", "--points", "4001", "--format",
                                      "json"})
                                 .out);
  const auto xs = j["x"].get<std::vector<double>>();
  const auto fx = j["density"].get<std::vector<double>>();
  REQUIRE(xs.size() == 4001);
  CHECK(xs.front() == -2.0);
  CHECK(xs.back() == 2.0);
  double area = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    area += 0.5 * (fx[i] + fx[i - 1]) * (xs[i] - xs[i - 1]);
  }
  CHECK_THAT(area, WithinAbs(1.0, 1e-6));
}

TEST_CASE("density of a generated design integrates to one and can overlay the normal limit") {
  for (const std::string coefficient : {"beta0", "beta1"}) {
    const Outcome r = run_cli({"density", "--n", "10", "--theta", "3", "--coefficient", coefficient, "--points",
                               "20001", "--overlay-normal", "--format", "json"});
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    const auto xs = j["x"].get<std::vector<double>>();
    const auto fx = j["density"].get<std::vector<double>>();
    const auto fn = j["normal_density"].get<std::vector<double>>();
    double area = 0.0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
      area += 0.5 * (fx[i] + fx[i - 1]) * (xs[i] - xs[i - 1]);
    }
    CAPTURE(coefficient);
    CHECK_THAT(area, WithinAbs(1.0, 1e-6));
    CHECK_THAT(j["center"].get<double>(), WithinAbs(coefficient == "beta0" ? 7.0 : 4.0, 0.0));
    CHECK(fn.size() == fx.size());
  }
}

TEST_CASE("density from a data file centers on the fitted coefficient") {
  const Outcome r = run_cli({"density", sample_csv, "--theta", "1", "--coefficient", "beta1", "--points", "3",
                             "--format", "json"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK_THAT(j["center"].get<double>(), WithinAbs(2.03, 1e-14));
  CHECK_THAT(j["scale"].get<double>(), WithinAbs(1.0 / 50.0, 1e-16));
}

TEST_CASE("interval half-widths from the command line") {
  // x = (0, 1, 1): p = (2, 0, 0) and d = 2, so beta0_hat - beta0 ~ U(-theta, theta).
  const auto m1 = write_csv("m1.csv", "x,y\n0,1\n1,2\n1,2.5\n");
  Outcome r = run_cli({"ci", m1, "--theta", "3", "--coefficient", "beta0"});
  REQUIRE(r.code == 0);
  json j = json::parse(r.out);
  REQUIRE(j["intervals"].size() == 1);
  CHECK_THAT(j["intervals"][0]["half_width"].get<double>(), WithinAbs(2.85, 1e-12));

  // Gaussian: q sigma sqrt(S2 / d) with x = (0, 1, 3): S2 = 10, d = 14.
  const auto three = write_csv("three.csv", "x,y\n0,1\n1,2\n3,2\n");
  r = run_cli({"ci", three, "--method", "gaussian", "--sigma-sq", "4", "--format", "json"});
  REQUIRE(r.code == 0);
  j = json::parse(r.out);
  const double q = boost::math::quantile(boost::math::normal_distribution<double>(), 0.975);
  CHECK_THAT(j["intervals"][0]["half_width"].get<double>(), WithinRel(q * 2.0 * std::sqrt(10.0 / 14.0), 1e-14));
  CHECK_THAT(j["intervals"][1]["half_width"].get<double>(), WithinRel(q * 2.0 * std::sqrt(3.0 / 14.0), 1e-14));

  // --sigma-sq with the exact method uses theta = sqrt(3 sigma^2).
  const json a = json::parse(run_cli({"ci", three, "--sigma-sq", "3"}).out);
  const json b = json::parse(run_cli({"ci", three, "--theta", "3"}).out);
  CHECK_THAT(a["intervals"][1]["half_width"].get<double>(),
             WithinRel(b["intervals"][1]["half_width"].get<double>(), 1e-14));
}

TEST_CASE("interval excludes 0 exactly when the test rejects, across seeded data sets") {
  SimConfig config;
  config.n = 5;
  config.beta0 = 0.8;
  config.beta1 = 0.15;
  config.noise = UniformNoise{3.0};
  config.resample_x_each_replicate = true;
  std::size_t rejections = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const Dataset data = generate_dataset(config, i);
    std::string text = "x,y\n";
    for (std::size_t k = 0; k < data.size(); ++k) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", data.x[k], data.y[k]);
      text += buf;
    }
    const auto path = write_csv("dual.csv", text);
    for (const auto &scale :
         {std::vector<std::string>{"--theta", "3"}, std::vector<std::string>{"--estimate-theta"}}) {
      std::vector<std::string> ci_args{"ci", path, "--format", "json"};
      std::vector<std::string> test_args{"test", path};
      ci_args.insert(ci_args.end(), scale.begin(), scale.end());
      test_args.insert(test_args.end(), scale.begin(), scale.end());
      const Outcome ci = run_cli(ci_args);
      const Outcome test = run_cli(test_args);
      REQUIRE(ci.code == 0);
      REQUIRE(test.code == 0);
      const json jc = json::parse(ci.out);
      const json jt = json::parse(test.out);
      for (std::size_t c = 0; c < 2; ++c) {
        const bool excludes = jc["intervals"][c]["lo"].get<double>() > 0.0 || jc["intervals"][c]["hi"].get<double>() < 0.0;
        const bool reject = jt["tests"][c]["reject"].get<bool>();
        CAPTURE(i, c);
        CHECK(excludes == reject);
        rejections += reject;
      }
    }
  }
  // Both outcomes occur, so the property is exercised on each side.
  CHECK(rejections > 20);
  CHECK(rejections < 380);
}

TEST_CASE("seeded study commands are byte-identical across runs and thread caps") {
  const std::vector<std::vector<std::string>> commands{
      {"simulate", "--n", "10", "--theta", "3", "--replicates", "3000", "--seed", "42"},
      {"simulate", "--n", "8", "--noise", "gaussian", "--sigma-sq", "2", "--replicates", "2000", "--resample-x",
       "--seed", "42"},
      {"coverage", "--n-list", "5,10", "--replicates", "2000", "--seed", "42"},
      {"convergence", "--n-list", "5,8", "--seed", "42"},
  };
  for (const auto &base : commands) {
    std::vector<std::string> serial = base;
    serial.insert(serial.end(), {"--threads", "1"});
    std::vector<std::string> wide = base;
    wide.insert(wide.end(), {"--threads", "6"});
    const Outcome a = run_cli(base);
    const Outcome b = run_cli(base);
    CAPTURE(base.front(), a.err);
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    if (base.front() != "convergence") {
      CHECK(run_cli(serial).out == a.out);
      CHECK(run_cli(wide).out == a.out);
    }
    std::vector<std::string> reseeded = base;
    reseeded.insert(reseeded.end(), {"--seed", "43"});
    if (base.front() != "convergence") {
      CHECK(run_cli(reseeded).out != a.out);
    }
  }
}

TEST_CASE("coverage rows: exact coverage and the sigma^2 = 1 pitfall") {
  const Outcome r = run_cli({"coverage", "--n-list", "10", "--replicates", "100000", "--noise", "uniform", "--theta",
                             "3"});
  REQUIRE(r.code == 0);
  const auto rows = parse_csv(r.out);
  REQUIRE(rows.front() == std::vector<std::string>{"n", "noise", "method", "coefficient", "level", "coverage",
                                                   "mean_half_width", "replicates"});
  std::size_t exact_rows = 0;
  std::size_t pitfall_rows = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto &row = rows[i];
    const double coverage = std::stod(row[5]);
    CAPTURE(row[2], row[3], coverage);
    if (row[2] == "exact_uniform/known") {
      ++exact_rows;
      CHECK(coverage >= 0.945);
      CHECK(coverage <= 0.955);
    } else if (row[2] == "gaussian_asymptotic/sigma_sq=1") {
      ++pitfall_rows;
      CHECK(coverage < 0.80);
    }
  }
  CHECK(exact_rows == 2);
  CHECK(pitfall_rows == 2);
}

TEST_CASE("simulate histogram agrees with the density command") {
  const fs::path svg = scratch_dir() / "hist.svg";
  const Outcome sim = run_cli({"simulate", "--n", "10", "--theta", "3", "--replicates", "100000", "--coefficient",
                               "beta0", "--bins", "30", "--plot", svg.string(), "--format", "json"});
  REQUIRE(sim.code == 0);
  CHECK(fs::exists(svg));
  CHECK_THAT(read_file(svg), ContainsSubstring("<svg"));
  const auto hist = parse_csv(read_file(scratch_dir() / "hist.csv"));
  REQUIRE(hist.size() == 31);

  const Outcome dens = run_cli({"density", "--n", "10", "--theta", "3", "--coefficient", "beta0", "--points",
                                "200001", "--format", "json"});
  REQUIRE(dens.code == 0);
  const json j = json::parse(dens.out);
  const auto xs = j["x"].get<std::vector<double>>();
  const auto fx = j["density"].get<std::vector<double>>();
  auto interpolate = [&](double t) {
    if (t <= xs.front() || t >= xs.back()) {
      return 0.0;
    }
    const double h = xs[1] - xs[0];
    const auto k = static_cast<std::size_t>((t - xs.front()) / h);
    const double w = (t - xs[k]) / h;
    return (1.0 - w) * fx[k] + w * fx[std::min(k + 1, xs.size() - 1)];
  };
  auto mass = [&](double a, double b) {
    const int steps = 2000;
    double acc = 0.0;
    for (int s = 0; s < steps; ++s) {
      const double t0 = a + (b - a) * s / steps;
      const double t1 = a + (b - a) * (s + 1) / steps;
      acc += 0.5 * (interpolate(t0) + interpolate(t1)) * (t1 - t0);
    }
    return acc;
  };
  double chi_sq = 0.0;
  int used = 0;
  for (std::size_t i = 1; i < hist.size(); ++i) {
    const double expected = 100000.0 * mass(std::stod(hist[i][1]), std::stod(hist[i][2]));
    if (expected < 20.0) {
      continue;
    }
    const double observed = std::stod(hist[i][3]);
    chi_sq += (observed - expected) * (observed - expected) / expected;
    ++used;
  }
  REQUIRE(used > 10);
  const boost::math::chi_squared_distribution<double> dist(used - 1);
  CAPTURE(chi_sq, used);
  CHECK(boost::math::cdf(boost::math::complement(dist, chi_sq)) > 0.001);

  // The plot is a side channel: numeric output is unchanged without it.
  const Outcome plain = run_cli({"simulate", "--n", "10", "--theta", "3", "--replicates", "100000", "--coefficient",
                                 "beta0", "--bins", "30", "--format", "json"});
  CHECK(plain.out == sim.out);
}

TEST_CASE("convergence command reports a decreasing distance") {
  const Outcome r = run_cli({"convergence", "--theta", "3", "--format", "json"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  const auto &rows = j["rows"];
  REQUIRE(rows.size() == 5);
  std::vector<std::size_t> ns;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ns.push_back(rows[i]["n"].get<std::size_t>());
    if (i > 0) {
      CHECK(rows[i]["sup_distance_beta1"].get<double>() < rows[i - 1]["sup_distance_beta1"].get<double>());
      CHECK(rows[i]["cond_beta0"].get<double>() < rows[i - 1]["cond_beta0"].get<double>());
      CHECK(rows[i]["cond_beta1"].get<double>() < rows[i - 1]["cond_beta1"].get<double>());
    }
  }
  CHECK(ns == std::vector<std::size_t>{5, 8, 12, 16, 20});

  const fs::path svg = scratch_dir() / "conv.svg";
  const Outcome plotted = run_cli({"convergence", "--theta", "3", "--format", "json", "--plot", svg.string()});
  CHECK(plotted.out == r.out);
  CHECK(fs::exists(svg));
  CHECK(fs::exists(scratch_dir() / "conv.csv"));
}

TEST_CASE("reports can be written to a file") {
  const fs::path target = scratch_dir() / "fit_out.json";
  const Outcome r = run_cli({"fit", sample_csv, "-o", target.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.empty());
  CHECK(json::parse(read_file(target))["command"] == "fit");
}
