#pragma once

// Command-line front end. `run` is the whole program; the executable in
// tools/ only forwards argv. Kept in a header so tests drive it in-process.
//
// Exit codes: 0 ok, 2 parse error, 3 degenerate design, 4 exact mode
// infeasible, 5 bad flags.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uniform_lse/dataset_csv.hpp"
#include "uniform_lse/errors.hpp"
#include "uniform_lse/estimator_law.hpp"
#include "uniform_lse/normal.hpp"
#include "uniform_lse/regression.hpp"
#include "uniform_lse/simulation.hpp"
#include "uniform_lse/svg_plot.hpp"
#include "uniform_lse/uniform_sum.hpp"

namespace uniform_lse::cli {

inline constexpr int schema_version = 1;

enum ExitCode : int {
  exit_ok = 0,
  exit_failure = 1,
  exit_parse_error = 2,
  exit_degenerate = 3,
  exit_exact_infeasible = 4,
  exit_bad_flags = 5,
};

/// Flags of every subcommand; each subcommand reads the subset it declares.
struct CommandConfig {
  std::string subcommand;
  std::string input_path;
  std::string output_path;
  std::string format; // empty: the subcommand's default
  std::string plot_path;

  std::optional<double> theta;
  std::optional<double> sigma_sq;
  bool estimate_theta = false;
  double level = 0.95;
  double alpha = 0.05;
  std::string method = "exact-uniform";
  std::string coefficient = "both";

  std::vector<double> weights;
  std::optional<double> center;
  std::optional<double> grid_from;
  std::optional<double> grid_to;
  std::optional<double> grid_step;
  std::size_t grid_points = 201;
  bool overlay_normal = false;
  bool fallback_normal = false;
  unsigned exact_limit = default_exact_limit;

  std::size_t n = 10;
  std::vector<std::size_t> n_list;
  std::uint64_t seed = 42;
  std::size_t replicates = 100000;
  std::string x_design = "iid-uniform";
  double x_min = -10.0;
  double x_max = 10.0;
  bool resample_x = false;
  double beta0 = 7.0;
  double beta1 = 4.0;
  std::string noise = "uniform";
  std::size_t threads = 0;
  std::size_t bins = 60;
};

namespace detail {

/// Bad flag combinations detected after parsing.
class UsageError : public Error {
public:
  using Error::Error;
};

inline std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string csv_join(const std::vector<std::string> &cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i != 0) {
      out += ',';
    }
    out += cells[i];
  }
  out += '\n';
  return out;
}

inline nlohmann::ordered_json envelope(const std::string &command) {
  nlohmann::ordered_json j;
  j["schema_version"] = schema_version;
  j["command"] = command;
  return j;
}

inline std::string companion_csv_path(const std::string &svg_path) {
  const auto dot = svg_path.rfind('.');
  const auto slash = svg_path.find_last_of("/\\");
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) {
    return svg_path.substr(0, dot) + ".csv";
  }
  return svg_path + ".csv";
}

inline void write_text(const std::string &path, const std::string &text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw Error("cannot write '" + path + "'");
  }
  f << text;
}

inline void emit_plot(const CommandConfig &cfg, const SvgPlot &plot, const std::string &table) {
  if (cfg.plot_path.empty()) {
    return;
  }
  plot.write(cfg.plot_path);
  write_text(companion_csv_path(cfg.plot_path), table);
}

inline std::vector<Coefficient> selected_coefficients(const std::string &name) {
  if (name == "beta0") {
    return {Coefficient::beta0};
  }
  if (name == "beta1") {
    return {Coefficient::beta1};
  }
  return {Coefficient::beta0, Coefficient::beta1};
}

inline SumOptions sum_options(const CommandConfig &cfg) {
  SumOptions o;
  o.exact_limit = cfg.exact_limit;
  return o;
}

inline std::string format_or(const CommandConfig &cfg, const char *fallback) {
  return cfg.format.empty() ? std::string(fallback) : cfg.format;
}

inline XSpec x_spec(const CommandConfig &cfg, std::size_t n) {
  if (cfg.x_design == "equispaced") {
    return Equispaced{cfg.x_min, cfg.x_max};
  }
  if (cfg.x_design == "iid-uniform") {
    return IidUniformX{cfg.x_min, cfg.x_max};
  }
  // "fixed": covariates come from --input.
  if (cfg.input_path.empty()) {
    throw UsageError("--x-design fixed needs --input with an x column");
  }
  Dataset data = read_dataset_csv(cfg.input_path);
  if (data.size() != n) {
    throw UsageError("--x-design fixed: input has " + std::to_string(data.size()) + " rows but n = " +
                     std::to_string(n));
  }
  return FixedX{std::move(data.x)};
}

inline NoiseSpec noise_spec(const CommandConfig &cfg, const std::string &family) {
  // --theta / --sigma-sq set the noise scale; the other family gets the
  // matching variance theta^2 / 3 = sigma^2.
  double variance = 3.0;
  if (cfg.theta) {
    variance = *cfg.theta * *cfg.theta / 3.0;
  } else if (cfg.sigma_sq) {
    variance = *cfg.sigma_sq;
  }
  if (family == "gaussian") {
    return GaussianNoise{variance};
  }
  return UniformNoise{std::sqrt(3.0 * variance)};
}

inline SimConfig sim_config(const CommandConfig &cfg, std::size_t n) {
  SimConfig c;
  c.n = n;
  c.x_spec = x_spec(cfg, n);
  c.beta0 = cfg.beta0;
  c.beta1 = cfg.beta1;
  c.noise = noise_spec(cfg, cfg.noise);
  c.replicates = cfg.replicates;
  c.seed = cfg.seed;
  c.resample_x_each_replicate = cfg.resample_x;
  c.level = cfg.level;
  c.threads = cfg.threads;
  c.sum_options = sum_options(cfg);
  return c;
}

/// Design for density/diagnose: --input if given, else a generated design.
inline std::vector<double> design_x(const CommandConfig &cfg, std::optional<Dataset> &data) {
  if (!cfg.input_path.empty()) {
    data = read_dataset_csv(cfg.input_path);
    return data->x;
  }
  if (cfg.x_design == "fixed") {
    throw UsageError("--x-design fixed needs --input");
  }
  SimConfig c;
  c.n = cfg.n;
  c.x_spec = x_spec(cfg, cfg.n);
  c.seed = cfg.seed;
  c.replicates = 1;
  c.validate();
  return shared_design(c);
}

inline void add_design_fields(nlohmann::ordered_json &j, const DesignSummary &design) {
  j["n"] = design.n;
  j["s1"] = design.s1;
  j["s2"] = design.s2;
  j["d"] = design.d;
}

// ---------------------------------------------------------------- fit

inline std::string cmd_fit(const CommandConfig &cfg) {
  const Dataset data = read_dataset_csv(cfg.input_path);
  const FitResult f = fit(data);
  const DesignSummary design = summarize(data.x);
  if (format_or(cfg, "json") == "csv") {
    return csv_join({"n", "s1", "s2", "d", "beta0_hat", "beta1_hat", "theta_sq_hat", "sigma_sq_hat"}) +
           csv_join({std::to_string(design.n), csv_number(design.s1), csv_number(design.s2), csv_number(design.d),
                     csv_number(f.beta0_hat), csv_number(f.beta1_hat), csv_number(f.theta_sq_hat),
                     csv_number(f.sigma_sq_hat)});
  }
  auto j = envelope("fit");
  add_design_fields(j, design);
  j["beta0_hat"] = f.beta0_hat;
  j["beta1_hat"] = f.beta1_hat;
  j["theta_sq_hat"] = f.theta_sq_hat;
  j["sigma_sq_hat"] = f.sigma_sq_hat;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- density

inline double theta_from_flags(const CommandConfig &cfg) {
  if (cfg.theta) {
    return *cfg.theta;
  }
  if (cfg.sigma_sq) {
    return std::sqrt(3.0 * *cfg.sigma_sq);
  }
  throw UsageError("this command needs --theta or --sigma-sq");
}

inline std::vector<double> grid(const CommandConfig &cfg, double lo, double hi) {
  const double from = cfg.grid_from.value_or(lo);
  const double to = cfg.grid_to.value_or(hi);
  if (!(to >= from)) {
    throw UsageError("grid needs --from <= --to");
  }
  std::vector<double> xs;
  if (cfg.grid_step) {
    const double step = *cfg.grid_step;
    if (!(step > 0.0)) {
      throw UsageError("--step must be positive");
    }
    const auto count = static_cast<std::size_t>(std::floor((to - from) / step + 1e-9)) + 1;
    if (count > 10'000'000) {
      throw UsageError("grid has too many points");
    }
    for (std::size_t i = 0; i < count; ++i) {
      xs.push_back(from + step * static_cast<double>(i));
    }
    return xs;
  }
  const std::size_t count = std::max<std::size_t>(cfg.grid_points, 2);
  for (std::size_t i = 0; i < count; ++i) {
    xs.push_back(from + (to - from) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  return xs;
}

inline std::string cmd_density(const CommandConfig &cfg) {
  const double theta = theta_from_flags(cfg);
  std::vector<double> w;
  double center = 0.0;
  double scale = 1.0;
  std::string label = "W";
  if (!cfg.weights.empty()) {
    if (!cfg.input_path.empty()) {
      throw UsageError("--weights and --input are mutually exclusive");
    }
    w = cfg.weights;
    center = cfg.center.value_or(0.0);
  } else {
    std::optional<Dataset> data;
    const DesignSummary design = summarize(design_x(cfg, data), data ? 3 : 2);
    const Coefficient c = cfg.coefficient == "beta1" ? Coefficient::beta1 : Coefficient::beta0;
    const auto span = coefficient_weights(design, c);
    w.assign(span.begin(), span.end());
    scale = 1.0 / design.d;
    label = std::string(to_string(c)) + "_hat";
    if (cfg.center) {
      center = *cfg.center;
    } else if (data) {
      center = coefficient_estimate(fit(*data), c);
    } else {
      center = c == Coefficient::beta0 ? cfg.beta0 : cfg.beta1;
    }
  }

  double sum_sq = 0.0;
  double sum_abs = 0.0;
  for (double v : w) {
    sum_sq += v * v;
    sum_abs += std::fabs(v);
  }
  const double normal_var = scale * scale * theta * theta / 3.0 * sum_sq;

  std::optional<WeightedUniformSum> core;
  bool fallback = false;
  try {
    core = make_sum(w, theta, sum_options(cfg));
  } catch (const ExactModeTooLarge &) {
    if (!cfg.fallback_normal) {
      throw;
    }
    fallback = true;
  }
  if (!fallback && !(normal_var > 0.0)) {
    throw DegenerateSum("all weights are zero");
  }
  const double half = scale * theta * sum_abs;
  const std::vector<double> xs = grid(cfg, center - half, center + half);

  const double sd = std::sqrt(normal_var);
  std::vector<double> fx;
  std::vector<double> fn;
  fx.reserve(xs.size());
  for (double x : xs) {
    const double z = (x - center) / sd;
    const double normal = normal_pdf(z) / sd;
    fn.push_back(normal);
    fx.push_back(fallback ? normal : core->density((x - center) / scale) / scale);
  }

  const bool overlay = cfg.overlay_normal && !fallback;
  std::vector<std::string> header{"x", "density"};
  if (overlay) {
    header.emplace_back("normal_density");
  }
  std::string table = csv_join(header);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<std::string> row{csv_number(xs[i]), csv_number(fx[i])};
    if (overlay) {
      row.push_back(csv_number(fn[i]));
    }
    table += csv_join(row);
  }

  SvgPlot plot("density of " + label, label, "density");
  plot.add_series(fallback ? "normal approximation" : "exact", xs, fx);
  if (overlay) {
    plot.add_series("normal approximation", xs, fn);
  }
  emit_plot(cfg, plot, table);

  if (format_or(cfg, "csv") == "csv") {
    return table;
  }
  auto j = envelope("density");
  j["method"] = fallback ? "gaussian_asymptotic" : "exact_uniform";
  j["fallback"] = fallback;
  j["theta"] = theta;
  j["center"] = center;
  j["scale"] = scale;
  j["x"] = xs;
  j["density"] = fx;
  if (overlay) {
    j["normal_density"] = fn;
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- ci / test

struct Inference {
  Dataset data;
  FitResult fit;
  DesignSummary design;
};

inline Inference load_inference(const CommandConfig &cfg) {
  Inference in;
  in.data = read_dataset_csv(cfg.input_path);
  in.fit = fit(in.data);
  in.design = summarize(in.data.x);
  return in;
}

inline void check_parameter_flags(const CommandConfig &cfg) {
  if (cfg.method != "exact-uniform" && cfg.method != "gaussian") {
    throw UsageError("--method must be exact-uniform or gaussian");
  }
  if (cfg.method == "exact-uniform" && !cfg.theta && !cfg.sigma_sq && !cfg.estimate_theta) {
    throw UsageError("exact-uniform needs --theta, --sigma-sq or --estimate-theta");
  }
}

// Known parameters as passed to the library: theta for the exact law,
// sigma^2 for the Gaussian one (var(eps) = theta^2 / 3 links the two).
inline std::optional<double> known_theta(const CommandConfig &cfg) {
  if (cfg.estimate_theta) {
    return std::nullopt;
  }
  if (cfg.theta) {
    return cfg.theta;
  }
  return std::sqrt(3.0 * *cfg.sigma_sq);
}

inline std::optional<double> known_sigma_sq(const CommandConfig &cfg) {
  if (cfg.estimate_theta) {
    return std::nullopt;
  }
  if (cfg.sigma_sq) {
    return cfg.sigma_sq;
  }
  if (cfg.theta) {
    return *cfg.theta * *cfg.theta / 3.0;
  }
  return std::nullopt;
}

inline std::string parameter_name(IntervalMethod m) {
  return m == IntervalMethod::exact_uniform ? "theta" : "sigma_sq";
}

inline std::string cmd_ci(const CommandConfig &cfg) {
  check_parameter_flags(cfg);
  const Inference in = load_inference(cfg);
  std::vector<ConfidenceInterval> cis;
  std::vector<bool> fell_back;
  for (Coefficient c : selected_coefficients(cfg.coefficient)) {
    if (cfg.method == "gaussian") {
      cis.push_back(gaussian_confidence_interval(in.fit, in.design, known_sigma_sq(cfg), c, cfg.level));
      fell_back.push_back(false);
      continue;
    }
    try {
      cis.push_back(exact_confidence_interval(in.fit, in.design, known_theta(cfg), c, cfg.level, sum_options(cfg)));
      fell_back.push_back(false);
    } catch (const ExactModeTooLarge &) {
      if (!cfg.fallback_normal) {
        throw;
      }
      cis.push_back(gaussian_confidence_interval(in.fit, in.design, known_sigma_sq(cfg), c, cfg.level));
      fell_back.push_back(true);
    }
  }

  if (format_or(cfg, "json") == "csv") {
    std::string out = csv_join({"coefficient", "estimate", "lo", "hi", "level", "method", "parameter_source",
                                "parameter", "fallback"});
    for (std::size_t i = 0; i < cis.size(); ++i) {
      const auto &ci = cis[i];
      out += csv_join({std::string(to_string(ci.coefficient)), csv_number(ci.estimate), csv_number(ci.lo),
                       csv_number(ci.hi), csv_number(ci.level), std::string(to_string(ci.method)),
                       std::string(to_string(ci.source)), csv_number(ci.scale_parameter),
                       fell_back[i] ? "true" : "false"});
    }
    return out;
  }
  auto j = envelope("ci");
  add_design_fields(j, in.design);
  j["beta0_hat"] = in.fit.beta0_hat;
  j["beta1_hat"] = in.fit.beta1_hat;
  j["theta_sq_hat"] = in.fit.theta_sq_hat;
  j["sigma_sq_hat"] = in.fit.sigma_sq_hat;
  j["level"] = cfg.level;
  auto arr = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < cis.size(); ++i) {
    const auto &ci = cis[i];
    nlohmann::ordered_json e;
    e["coefficient"] = to_string(ci.coefficient);
    e["estimate"] = ci.estimate;
    e["lo"] = ci.lo;
    e["hi"] = ci.hi;
    e["half_width"] = ci.half_width();
    e["level"] = ci.level;
    e["method"] = to_string(ci.method);
    e["parameter_source"] = to_string(ci.source);
    e[parameter_name(ci.method)] = ci.scale_parameter;
    e["fallback"] = static_cast<bool>(fell_back[i]);
    arr.push_back(std::move(e));
  }
  j["intervals"] = std::move(arr);
  return j.dump(2) + "\n";
}

inline std::string cmd_test(const CommandConfig &cfg) {
  check_parameter_flags(cfg);
  const Inference in = load_inference(cfg);
  std::vector<TestResult> tests;
  std::vector<bool> fell_back;
  for (Coefficient c : selected_coefficients(cfg.coefficient)) {
    if (cfg.method == "gaussian") {
      tests.push_back(gaussian_test(in.fit, in.design, known_sigma_sq(cfg), c, cfg.alpha));
      fell_back.push_back(false);
      continue;
    }
    try {
      tests.push_back(exact_test(in.fit, in.design, known_theta(cfg), c, cfg.alpha, sum_options(cfg)));
      fell_back.push_back(false);
    } catch (const ExactModeTooLarge &) {
      if (!cfg.fallback_normal) {
        throw;
      }
      tests.push_back(gaussian_test(in.fit, in.design, known_sigma_sq(cfg), c, cfg.alpha));
      fell_back.push_back(true);
    }
  }

  if (format_or(cfg, "json") == "csv") {
    std::string out = csv_join({"coefficient", "statistic", "critical_value", "p_value", "reject", "alpha", "method",
                                "parameter_source", "parameter", "fallback"});
    for (std::size_t i = 0; i < tests.size(); ++i) {
      const auto &t = tests[i];
      out += csv_join({std::string(to_string(t.coefficient)), csv_number(t.statistic),
                       csv_number(t.critical_value), csv_number(t.p_value), t.reject ? "true" : "false",
                       csv_number(t.alpha), std::string(to_string(t.method)), std::string(to_string(t.source)),
                       csv_number(t.scale_parameter), fell_back[i] ? "true" : "false"});
    }
    return out;
  }
  auto j = envelope("test");
  add_design_fields(j, in.design);
  j["beta0_hat"] = in.fit.beta0_hat;
  j["beta1_hat"] = in.fit.beta1_hat;
  j["theta_sq_hat"] = in.fit.theta_sq_hat;
  j["sigma_sq_hat"] = in.fit.sigma_sq_hat;
  j["alpha"] = cfg.alpha;
  auto arr = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto &t = tests[i];
    nlohmann::ordered_json e;
    e["coefficient"] = to_string(t.coefficient);
    e["null_value"] = 0.0;
    e["statistic"] = t.statistic;
    e["critical_value"] = t.critical_value;
    e["p_value"] = t.p_value;
    e["reject"] = t.reject;
    e["alpha"] = t.alpha;
    e["level"] = 1.0 - t.alpha;
    e["method"] = to_string(t.method);
    e["parameter_source"] = to_string(t.source);
    e[parameter_name(t.method)] = t.scale_parameter;
    e["fallback"] = static_cast<bool>(fell_back[i]);
    arr.push_back(std::move(e));
  }
  j["tests"] = std::move(arr);
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- simulate

inline IntervalRule interval_rule(const CommandConfig &cfg) {
  IntervalRule rule;
  if (cfg.method == "gaussian") {
    rule.method = IntervalMethod::gaussian_asymptotic;
  } else if (cfg.method != "exact-uniform") {
    throw UsageError("--method must be exact-uniform or gaussian");
  }
  rule.source = cfg.estimate_theta ? ParameterSource::plug_in : ParameterSource::known;
  return rule;
}

inline void add_histogram(const CommandConfig &cfg, const ReplicateSet &set, Coefficient c,
                          std::string &table, SvgPlot &plot) {
  std::vector<double> values;
  values.reserve(set.records.size());
  for (const auto &r : set.records) {
    values.push_back(coefficient_of(r, c));
  }
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn;
  const double hi = *mx > *mn ? *mx : *mn + 1.0;
  const std::size_t bins = std::max<std::size_t>(cfg.bins, 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<double> counts(bins, 0.0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    counts[std::min(b, bins - 1)] += 1.0;
  }

  std::optional<EstimatorLaw> law;
  const bool uniform_noise = std::holds_alternative<UniformNoise>(set.config.noise);
  if (!set.resampled_x() && uniform_noise) {
    const double truth = c == Coefficient::beta0 ? set.config.beta0 : set.config.beta1;
    law.emplace(law_for(summarize(set.x), std::get<UniformNoise>(set.config.noise).theta, c, truth,
                        set.config.sum_options));
  }
  const std::string name = std::string(to_string(c));
  table += csv_join({"coefficient", "bin_lo", "bin_hi", "count", "histogram_density", "exact_bin_density"});
  std::vector<double> centers;
  std::vector<double> hist;
  std::vector<double> exact;
  const double total = static_cast<double>(values.size());
  for (std::size_t b = 0; b < bins; ++b) {
    const double a = lo + width * static_cast<double>(b);
    const double e = b + 1 == bins ? hi : a + width;
    const double h = counts[b] / (total * (e - a));
    double ex = std::nan("");
    if (law) {
      ex = (law->cdf_at(e) - law->cdf_at(a)) / (e - a);
    }
    centers.push_back(0.5 * (a + e));
    hist.push_back(h);
    exact.push_back(ex);
    table += csv_join({name, csv_number(a), csv_number(e), csv_number(counts[b]), csv_number(h), csv_number(ex)});
  }
  plot.add_series(name + " histogram", centers, hist, SvgPlot::Style::bars);
  if (law) {
    plot.add_series(name + " exact law", centers, exact);
  }
}

inline std::string cmd_simulate(const CommandConfig &cfg) {
  SimConfig config = sim_config(cfg, cfg.n);
  config.interval = interval_rule(cfg);
  const ReplicateSet set = run_replicates(config);
  const ReplicateSummary s = summarize_replicates(set);

  if (!cfg.plot_path.empty()) {
    std::string table;
    SvgPlot plot("simulated estimator distribution", "estimate", "density");
    for (Coefficient c : selected_coefficients(cfg.coefficient)) {
      add_histogram(cfg, set, c, table, plot);
    }
    emit_plot(cfg, plot, table);
  }

  if (format_or(cfg, "csv") == "csv") {
    std::string out = csv_join({"replicate", "beta0_hat", "beta1_hat", "theta_sq_hat", "sigma_sq_hat",
                                "covered_beta0", "covered_beta1"});
    for (std::size_t i = 0; i < set.records.size(); ++i) {
      const auto &r = set.records[i];
      out += csv_join({std::to_string(i), csv_number(r.beta0_hat), csv_number(r.beta1_hat),
                       csv_number(r.theta_sq_hat), csv_number(r.sigma_sq_hat), r.ci_covered_beta0 ? "1" : "0",
                       r.ci_covered_beta1 ? "1" : "0"});
    }
    return out;
  }
  auto j = envelope("simulate");
  j["seed"] = cfg.seed;
  j["n"] = config.n;
  j["replicates"] = s.replicates;
  j["noise"] = noise_label(config.noise);
  j["method"] = config.interval.label();
  j["level"] = config.level;
  j["resample_x"] = config.resample_x_each_replicate;
  j["regenerated"] = set.regenerated;
  j["mean_beta0_hat"] = s.mean[0];
  j["mean_beta1_hat"] = s.mean[1];
  j["var_beta0_hat"] = s.variance[0];
  j["var_beta1_hat"] = s.variance[1];
  j["correlation"] = s.correlation;
  j["mean_theta_sq_hat"] = s.mean_theta_sq_hat;
  j["mean_sigma_sq_hat"] = s.mean_sigma_sq_hat;
  j["coverage_beta0"] = s.coverage[0];
  j["coverage_beta1"] = s.coverage[1];
  if (!set.resampled_x()) {
    j["x"] = set.x;
    j["half_width_beta0"] = set.half_width[0];
    j["half_width_beta1"] = set.half_width[1];
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- coverage

/// Interval rules scored by the coverage study, including the misspecified
/// Gaussian interval with sigma^2 = 1.
inline std::vector<IntervalRule> coverage_rules() {
  return {
      {IntervalMethod::exact_uniform, ParameterSource::known, std::nullopt},
      {IntervalMethod::exact_uniform, ParameterSource::plug_in, std::nullopt},
      {IntervalMethod::gaussian_asymptotic, ParameterSource::known, std::nullopt},
      {IntervalMethod::gaussian_asymptotic, ParameterSource::plug_in, std::nullopt},
      {IntervalMethod::gaussian_asymptotic, ParameterSource::known, 1.0},
  };
}

inline std::vector<std::size_t> n_list_or(const CommandConfig &cfg, std::vector<std::size_t> fallback) {
  return cfg.n_list.empty() ? fallback : cfg.n_list;
}

inline std::string cmd_coverage(const CommandConfig &cfg) {
  const auto n_list = n_list_or(cfg, {5, 10, 20});
  const auto rules = coverage_rules();
  std::vector<std::string> families;
  if (cfg.noise == "both") {
    families = {"uniform", "gaussian"};
  } else {
    families = {cfg.noise};
  }

  std::vector<CoverageRow> rows;
  std::size_t regenerated = 0;
  for (const auto &family : families) {
    // Every n shares one set of flags; fixed designs need one n.
    SimConfig base = sim_config(cfg, n_list.front());
    base.noise = noise_spec(cfg, family);
    if (std::holds_alternative<FixedX>(base.x_spec) && n_list.size() != 1) {
      throw UsageError("--x-design fixed supports a single n");
    }
    const CoverageReport report = coverage_study(base, n_list, cfg.level, rules);
    rows.insert(rows.end(), report.rows.begin(), report.rows.end());
    regenerated += report.regenerated;
  }

  std::string table =
      csv_join({"n", "noise", "method", "coefficient", "level", "coverage", "mean_half_width", "replicates"});
  for (const auto &r : rows) {
    table += csv_join({std::to_string(r.n), r.noise, r.method, std::string(to_string(r.coefficient)),
                       csv_number(r.level), csv_number(r.coverage), csv_number(r.mean_half_width),
                       std::to_string(r.replicates)});
  }

  if (!cfg.plot_path.empty()) {
    const Coefficient c = cfg.coefficient == "beta0" ? Coefficient::beta0 : Coefficient::beta1;
    SvgPlot plot("mean 95% interval half-width of " + std::string(to_string(c)) + "_hat vs n", "n",
                 "mean half-width");
    for (const auto &family : families) {
      for (const auto &rule : rules) {
        std::vector<double> xs;
        std::vector<double> ys;
        for (const auto &r : rows) {
          if (r.coefficient == c && r.method == rule.label() && r.noise.rfind(family, 0) == 0) {
            xs.push_back(static_cast<double>(r.n));
            ys.push_back(r.mean_half_width);
          }
        }
        plot.add_series(family + " " + rule.label(), xs, ys);
      }
    }
    emit_plot(cfg, plot, table);
  }

  if (format_or(cfg, "csv") == "csv") {
    return table;
  }
  auto j = envelope("coverage");
  j["seed"] = cfg.seed;
  j["level"] = cfg.level;
  j["regenerated"] = regenerated;
  auto arr = nlohmann::ordered_json::array();
  for (const auto &r : rows) {
    nlohmann::ordered_json e;
    e["n"] = r.n;
    e["noise"] = r.noise;
    e["method"] = r.method;
    e["coefficient"] = to_string(r.coefficient);
    e["level"] = r.level;
    e["coverage"] = r.coverage;
    e["mean_half_width"] = r.mean_half_width;
    e["replicates"] = r.replicates;
    arr.push_back(std::move(e));
  }
  j["rows"] = std::move(arr);
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- diagnose

inline std::string cmd_diagnose(const CommandConfig &cfg) {
  std::optional<Dataset> data;
  const DesignSummary design = summarize(design_x(cfg, data), data ? 3 : 2);
  const CltDiagnostics diag = clt_diagnostics(design);
  auto active = [](std::span<const double> w) {
    return static_cast<std::size_t>(std::count_if(w.begin(), w.end(), [](double v) { return v != 0.0; }));
  };
  const std::size_t m0 = active(design.p);
  const std::size_t m1 = active(design.p_prime);
  const std::size_t limit = std::min<std::size_t>(cfg.exact_limit, max_exact_limit);

  if (format_or(cfg, "json") == "csv") {
    return csv_join({"n", "s1", "s2", "d", "cond_beta0", "cond_beta1", "cond_joint", "terms_beta0", "terms_beta1",
                     "exact_feasible"}) +
           csv_join({std::to_string(design.n), csv_number(design.s1), csv_number(design.s2), csv_number(design.d),
                     csv_number(diag.cond_beta0), csv_number(diag.cond_beta1), csv_number(diag.cond_joint),
                     std::to_string(m0), std::to_string(m1), m0 <= limit && m1 <= limit ? "true" : "false"});
  }
  auto j = envelope("diagnose");
  add_design_fields(j, design);
  j["cond_beta0"] = diag.cond_beta0;
  j["cond_beta1"] = diag.cond_beta1;
  j["cond_joint"] = diag.cond_joint;
  j["terms_beta0"] = m0;
  j["terms_beta1"] = m1;
  j["exact_limit"] = limit;
  j["exact_feasible"] = m0 <= limit && m1 <= limit;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- convergence

inline std::string cmd_convergence(const CommandConfig &cfg) {
  const auto n_list = n_list_or(cfg, {5, 8, 12, 16, 20});
  if (cfg.x_design == "fixed") {
    throw UsageError("convergence needs --x-design equispaced or iid-uniform");
  }
  const double theta = cfg.theta ? *cfg.theta : cfg.sigma_sq ? std::sqrt(3.0 * *cfg.sigma_sq) : 3.0;
  const XSpec family = x_spec(cfg, 0);
  const auto rows = convergence_study(family, n_list, theta, cfg.seed, std::max<std::size_t>(cfg.grid_points, 2),
                                      sum_options(cfg));

  std::string table = csv_join({"n", "sup_distance_beta0", "sup_distance_beta1", "cond_beta0", "cond_beta1",
                                "cond_joint", "terms_beta0", "terms_beta1"});
  for (const auto &r : rows) {
    table += csv_join({std::to_string(r.n), csv_number(r.sup_distance_beta0), csv_number(r.sup_distance_beta1),
                       csv_number(r.diagnostics.cond_beta0), csv_number(r.diagnostics.cond_beta1),
                       csv_number(r.diagnostics.cond_joint), std::to_string(r.terms_beta0),
                       std::to_string(r.terms_beta1)});
  }

  if (!cfg.plot_path.empty()) {
    std::vector<double> ns;
    std::vector<double> s0;
    std::vector<double> s1;
    for (const auto &r : rows) {
      ns.push_back(static_cast<double>(r.n));
      s0.push_back(r.sup_distance_beta0);
      s1.push_back(r.sup_distance_beta1);
    }
    SvgPlot plot("sup distance to the normal limit", "n", "sup |F_exact - F_normal|");
    plot.add_series("beta0", ns, s0);
    plot.add_series("beta1", ns, s1);
    emit_plot(cfg, plot, table);
  }

  if (format_or(cfg, "csv") == "csv") {
    return table;
  }
  auto j = envelope("convergence");
  j["seed"] = cfg.seed;
  j["theta"] = theta;
  auto arr = nlohmann::ordered_json::array();
  for (const auto &r : rows) {
    nlohmann::ordered_json e;
    e["n"] = r.n;
    e["sup_distance_beta0"] = r.sup_distance_beta0;
    e["sup_distance_beta1"] = r.sup_distance_beta1;
    e["cond_beta0"] = r.diagnostics.cond_beta0;
    e["cond_beta1"] = r.diagnostics.cond_beta1;
    e["cond_joint"] = r.diagnostics.cond_joint;
    e["terms_beta0"] = r.terms_beta0;
    e["terms_beta1"] = r.terms_beta1;
    arr.push_back(std::move(e));
  }
  j["rows"] = std::move(arr);
  return j.dump(2) + "\n";
}

inline std::string dispatch(const CommandConfig &cfg) {
  if (cfg.subcommand == "fit") {
    return cmd_fit(cfg);
  }
  if (cfg.subcommand == "density") {
    return cmd_density(cfg);
  }
  if (cfg.subcommand == "ci") {
    return cmd_ci(cfg);
  }
  if (cfg.subcommand == "test") {
    return cmd_test(cfg);
  }
  if (cfg.subcommand == "simulate") {
    return cmd_simulate(cfg);
  }
  if (cfg.subcommand == "coverage") {
    return cmd_coverage(cfg);
  }
  if (cfg.subcommand == "diagnose") {
    return cmd_diagnose(cfg);
  }
  return cmd_convergence(cfg);
}

} // namespace detail

/// Runs one command line. `args` excludes the program name.
inline int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CommandConfig cfg;
  CLI::App app{"Exact inference for simple linear regression with uniform errors", "uniform-lse"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  const std::vector<std::string> formats{"json", "csv"};
  const std::vector<std::string> coefficients{"beta0", "beta1", "both"};
  const std::vector<std::string> designs{"equispaced", "iid-uniform", "fixed"};

  auto add_io = [&](CLI::App *sub, bool input_required) {
    auto *in = sub->add_option("input,--input", cfg.input_path, "CSV file with header x,y");
    if (input_required) {
      in->required();
    }
    sub->add_option("--format", cfg.format, "Output format")->check(CLI::IsMember(formats));
    sub->add_option("-o,--output", cfg.output_path, "Write the report here instead of stdout");
  };
  auto add_scale = [&](CLI::App *sub) {
    auto *th = sub->add_option("--theta", cfg.theta, "Error half-width: eps ~ U(-theta, theta)")
                   ->check(CLI::PositiveNumber);
    auto *sg = sub->add_option("--sigma-sq", cfg.sigma_sq, "Error variance (theta = sqrt(3 sigma^2))")
                   ->check(CLI::NonNegativeNumber);
    th->excludes(sg);
    return std::pair{th, sg};
  };
  auto add_exact = [&](CLI::App *sub) {
    sub->add_option("--exact-limit", cfg.exact_limit, "Largest number of terms evaluated exactly")
        ->check(CLI::Range(1U, static_cast<unsigned>(max_exact_limit)));
    sub->add_flag("--fallback-normal", cfg.fallback_normal, "Use the normal approximation beyond --exact-limit");
  };
  auto add_design = [&](CLI::App *sub) {
    sub->add_option("--x-design", cfg.x_design, "Covariate design")->check(CLI::IsMember(designs));
    sub->add_option("--x-min", cfg.x_min, "Design interval start");
    sub->add_option("--x-max", cfg.x_max, "Design interval end");
    sub->add_option("--seed", cfg.seed, "RNG seed");
  };
  auto add_study = [&](CLI::App *sub) {
    add_io(sub, false);
    add_design(sub);
    add_exact(sub);
    sub->add_option("--replicates", cfg.replicates, "Monte Carlo replicates")->check(CLI::PositiveNumber);
    sub->add_option("--beta0", cfg.beta0, "True intercept");
    sub->add_option("--beta1", cfg.beta1, "True slope");
    sub->add_option("--threads", cfg.threads, "Worker threads (0: UNIFORM_LSE_THREADS or all cores)");
    sub->add_flag("--resample-x", cfg.resample_x, "Draw a new design for every replicate");
    sub->add_option("--level", cfg.level, "Confidence level")->check(CLI::Bound(1e-12, 1.0 - 1e-12));
    sub->add_option("--plot", cfg.plot_path, "Write an SVG plot (and a CSV of its data)");
  };

  auto *fit_cmd = app.add_subcommand("fit", "Least-squares fit and theta^2 estimate");
  add_io(fit_cmd, true);

  auto *density_cmd = app.add_subcommand("density", "Exact density of an estimator or of a weighted uniform sum");
  add_io(density_cmd, false);
  add_scale(density_cmd);
  add_exact(density_cmd);
  add_design(density_cmd);
  density_cmd->add_option("--n", cfg.n, "Generated design size (without --input)")->check(CLI::Range(2, 100000));
  density_cmd->add_option("--beta0", cfg.beta0, "Center for beta0 on a generated design");
  density_cmd->add_option("--beta1", cfg.beta1, "Center for beta1 on a generated design");
  density_cmd->add_option("--coefficient", cfg.coefficient, "beta0 or beta1")
      ->check(CLI::IsMember(std::vector<std::string>{"beta0", "beta1"}));
  density_cmd->add_option("--weights", cfg.weights, "Raw weights w_k of W = sum w_k eps_k")
      ->delimiter(',')
      ->allow_extra_args(false);
  density_cmd->add_option("--center", cfg.center, "Location of the law");
  density_cmd->add_option("--from", cfg.grid_from, "Grid start (default: support start)");
  density_cmd->add_option("--to", cfg.grid_to, "Grid end (default: support end)");
  density_cmd->add_option("--step", cfg.grid_step, "Grid step")->check(CLI::PositiveNumber);
  density_cmd->add_option("--points", cfg.grid_points, "Grid points when --step is absent")
      ->check(CLI::Range(2, 10'000'000));
  density_cmd->add_flag("--overlay-normal", cfg.overlay_normal, "Add the normal approximation");
  density_cmd->add_option("--plot", cfg.plot_path, "Write an SVG plot (and a CSV of its data)");

  auto add_inference = [&](CLI::App *sub) {
    add_io(sub, true);
    auto [th, sg] = add_scale(sub);
    auto *est = sub->add_flag("--estimate-theta", cfg.estimate_theta, "Plug in the residual estimate");
    est->excludes(th);
    est->excludes(sg);
    add_exact(sub);
    sub->add_option("--method", cfg.method, "exact-uniform or gaussian")
        ->check(CLI::IsMember(std::vector<std::string>{"exact-uniform", "gaussian"}));
    sub->add_option("--coefficient", cfg.coefficient, "beta0, beta1 or both")->check(CLI::IsMember(coefficients));
  };
  auto *ci_cmd = app.add_subcommand("ci", "Confidence intervals for the coefficients");
  add_inference(ci_cmd);
  ci_cmd->add_option("--level", cfg.level, "Confidence level")->check(CLI::Bound(1e-12, 1.0 - 1e-12));
  auto *test_cmd = app.add_subcommand("test", "Two-sided tests of beta_j = 0");
  add_inference(test_cmd);
  test_cmd->add_option("--alpha", cfg.alpha, "Significance level")->check(CLI::Bound(1e-12, 1.0 - 1e-12));

  auto *simulate_cmd = app.add_subcommand("simulate", "Monte Carlo replicates of the fitted model");
  add_study(simulate_cmd);
  add_scale(simulate_cmd);
  simulate_cmd->add_option("--n", cfg.n, "Sample size")->check(CLI::Range(3, 100000));
  simulate_cmd->add_option("--noise", cfg.noise, "uniform or gaussian")
      ->check(CLI::IsMember(std::vector<std::string>{"uniform", "gaussian"}));
  simulate_cmd->add_option("--method", cfg.method, "Interval scored per replicate")
      ->check(CLI::IsMember(std::vector<std::string>{"exact-uniform", "gaussian"}));
  simulate_cmd->add_flag("--estimate-theta", cfg.estimate_theta, "Plug in the residual estimate");
  simulate_cmd->add_option("--coefficient", cfg.coefficient, "Coefficients histogrammed by --plot")
      ->check(CLI::IsMember(coefficients));
  simulate_cmd->add_option("--bins", cfg.bins, "Histogram bins for --plot")->check(CLI::Range(1, 100000));

  auto *coverage_cmd = app.add_subcommand("coverage", "Coverage of every interval rule across n");
  add_study(coverage_cmd);
  add_scale(coverage_cmd);
  coverage_cmd->add_option("--n-list", cfg.n_list, "Sample sizes")->delimiter(',')->check(CLI::Range(3, 100000));
  coverage_cmd->add_option("--noise", cfg.noise, "uniform, gaussian or both")
      ->check(CLI::IsMember(std::vector<std::string>{"uniform", "gaussian", "both"}));
  coverage_cmd->add_option("--coefficient", cfg.coefficient, "Coefficient plotted by --plot")
      ->check(CLI::IsMember(coefficients));
  cfg.noise = "both";

  auto *diagnose_cmd = app.add_subcommand("diagnose", "Design summary and normal-approximation conditions");
  add_io(diagnose_cmd, false);
  add_design(diagnose_cmd);
  diagnose_cmd->add_option("--n", cfg.n, "Generated design size (without --input)")->check(CLI::Range(2, 100000));
  diagnose_cmd->add_option("--exact-limit", cfg.exact_limit, "Largest number of terms evaluated exactly")
      ->check(CLI::Range(1U, static_cast<unsigned>(max_exact_limit)));

  auto *convergence_cmd = app.add_subcommand("convergence", "Distance of the exact laws to their normal limit");
  convergence_cmd->add_option("--format", cfg.format, "Output format")->check(CLI::IsMember(formats));
  convergence_cmd->add_option("-o,--output", cfg.output_path, "Write the report here instead of stdout");
  add_design(convergence_cmd);
  add_scale(convergence_cmd);
  add_exact(convergence_cmd);
  convergence_cmd->add_option("--n-list", cfg.n_list, "Sample sizes")->delimiter(',')->check(CLI::Range(2, 100000));
  convergence_cmd->add_option("--grid-points", cfg.grid_points, "Grid points for the sup distance")
      ->check(CLI::Range(2, 10'000'000));
  convergence_cmd->add_option("--plot", cfg.plot_path, "Write an SVG plot (and a CSV of its data)");

  // Per-subcommand defaults that differ from the shared struct defaults.
  convergence_cmd->preparse_callback([&](std::size_t) { cfg.x_design = "equispaced"; });
  density_cmd->preparse_callback([&](std::size_t) { cfg.coefficient = "beta0"; });
  simulate_cmd->preparse_callback([&](std::size_t) { cfg.noise = "uniform"; });

  std::vector<std::string> argv_store;
  argv_store.reserve(args.size() + 1);
  argv_store.emplace_back("uniform-lse");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char *> argv;
  argv.reserve(argv_store.size());
  for (const auto &a : argv_store) {
    argv.push_back(a.c_str());
  }

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp &e) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp &e) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n";
    return exit_bad_flags;
  }
  cfg.subcommand = app.get_subcommands().front()->get_name();

  try {
    const std::string report = detail::dispatch(cfg);
    if (cfg.output_path.empty()) {
      out << report;
    } else {
      detail::write_text(cfg.output_path, report);
    }
    return exit_ok;
  } catch (const ParseError &e) {
    err << "error: " << e.what() << "\n";
    return exit_parse_error;
  } catch (const TooFewPoints &e) {
    err << "error: " << e.what() << "\n";
    return exit_degenerate;
  } catch (const CollinearDesign &e) {
    err << "error: " << e.what() << "\n";
    return exit_degenerate;
  } catch (const DegenerateSum &e) {
    err << "error: " << e.what() << "\n";
    return exit_degenerate;
  } catch (const ExactModeTooLarge &e) {
    err << "error: " << e.what() << " (raise --exact-limit or pass --fallback-normal)\n";
    return exit_exact_infeasible;
  } catch (const detail::UsageError &e) {
    err << "error: " << e.what() << "\n";
    return exit_bad_flags;
  } catch (const DomainError &e) {
    err << "error: " << e.what() << "\n";
    return exit_bad_flags;
  } catch (const GridTooCoarse &e) {
    err << "error: " << e.what() << "\n";
    return exit_bad_flags;
  } catch (const MismatchedDesign &e) {
    err << "error: " << e.what() << "\n";
    return exit_bad_flags;
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return exit_failure;
  }
}

} // namespace uniform_lse::cli
