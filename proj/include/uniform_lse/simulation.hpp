#pragma once

// Seeded Monte Carlo studies of the least-squares estimators: sampling
// distributions, KS agreement with the exact laws, interval coverage as a
// function of n, and convergence of the exact law to the normal limit.
//
// Every random number is a pure function of (seed, stream, draw index), with
// one stream per replicate, so results do not depend on the thread count or
// on the order in which replicates run.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

#include "uniform_lse/detail/summation.hpp"
#include "uniform_lse/errors.hpp"
#include "uniform_lse/estimator_law.hpp"
#include "uniform_lse/normal.hpp"
#include "uniform_lse/regression.hpp"
#include "uniform_lse/rng.hpp"
#include "uniform_lse/uniform_sum.hpp"

namespace uniform_lse {

struct Equispaced {
  double a = -10.0;
  double b = 10.0;
};

struct IidUniformX {
  double a = -10.0;
  double b = 10.0;
};

struct FixedX {
  std::vector<double> values;
};

using XSpec = std::variant<Equispaced, IidUniformX, FixedX>;

struct UniformNoise {
  double theta = 3.0;
};

struct GaussianNoise {
  double sigma_sq = 3.0;
};

using NoiseSpec = std::variant<UniformNoise, GaussianNoise>;

inline double noise_variance(const NoiseSpec &noise) {
  if (const auto *u = std::get_if<UniformNoise>(&noise)) {
    return u->theta * u->theta / 3.0;
  }
  return std::get<GaussianNoise>(noise).sigma_sq;
}

inline std::string noise_label(const NoiseSpec &noise) {
  return std::holds_alternative<UniformNoise>(noise) ? "uniform" : "gaussian";
}

/// How a replicate's confidence interval is built. An empty `parameter` with
/// source == known means "the value matching the simulated noise": theta for
/// the exact law (sqrt(3 sigma^2) under Gaussian noise) and sigma^2 =
/// var(eps) for the Gaussian interval. With source == plug_in the parameter
/// is estimated from each replicate's residuals.
struct IntervalRule {
  IntervalMethod method = IntervalMethod::exact_uniform;
  ParameterSource source = ParameterSource::known;
  std::optional<double> parameter;

  std::string label() const {
    std::string out(to_string(method));
    if (source == ParameterSource::plug_in) {
      return out + "/plug_in";
    }
    if (parameter) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "/%s=%.6g", method == IntervalMethod::exact_uniform ? "theta" : "sigma_sq",
                    *parameter);
      return out + buf;
    }
    return out + "/known";
  }
};

struct SimConfig {
  std::size_t n = 10;
  XSpec x_spec = IidUniformX{};
  double beta0 = 7.0;
  double beta1 = 4.0;
  NoiseSpec noise = UniformNoise{};
  std::size_t replicates = 100000;
  std::uint64_t seed = 42;
  /// When false the covariates are drawn once (stream reserved for x) and
  /// shared by every replicate, so the exact law applies conditionally.
  bool resample_x_each_replicate = false;
  double level = 0.95;
  IntervalRule interval{};
  /// 0 means UNIFORM_LSE_THREADS, or the hardware concurrency if unset.
  std::size_t threads = 0;
  SumOptions sum_options{};

  void validate() const {
    if (n < 3) {
      throw DomainError("simulation needs n >= 3");
    }
    if (replicates < 1) {
      throw DomainError("replicates must be at least 1");
    }
    if (!(level > 0.0 && level < 1.0)) {
      throw DomainError("confidence level must lie in (0, 1)");
    }
    std::visit(
        [&](const auto &spec) {
          using T = std::decay_t<decltype(spec)>;
          if constexpr (std::is_same_v<T, FixedX>) {
            if (spec.values.size() != n) {
              throw DomainError("fixed design has " + std::to_string(spec.values.size()) +
                                " values but n = " + std::to_string(n));
            }
          } else if (!(spec.a < spec.b)) {
            throw DomainError("design interval needs a < b");
          }
        },
        x_spec);
    if (const auto *u = std::get_if<UniformNoise>(&noise); u && !(u->theta > 0.0)) {
      throw DomainError("uniform noise needs theta > 0");
    }
    if (const auto *g = std::get_if<GaussianNoise>(&noise); g && !(g->sigma_sq > 0.0)) {
      throw DomainError("gaussian noise needs sigma^2 > 0");
    }
  }
};

/// x_k = (b - a)(k - 1)/(n - 1) + a, k = 1..n.
inline std::vector<double> equispaced_design(double a, double b, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k) {
    x[k] = n == 1 ? a : (b - a) * static_cast<double>(k) / static_cast<double>(n - 1) + a;
  }
  if (n > 1) {
    x.back() = b;
  }
  return x;
}

namespace detail {

inline constexpr std::uint64_t shared_x_stream = ~std::uint64_t{0};
inline constexpr std::uint64_t max_attempts = 64;

inline std::uint64_t replicate_stream(std::uint64_t index, std::uint64_t attempt) {
  return index * max_attempts + attempt;
}

inline bool has_two_distinct(std::span<const double> x) {
  return std::any_of(x.begin(), x.end(), [&](double v) { return v != x.front(); });
}

inline std::vector<double> draw_x(const XSpec &spec, std::size_t n, CounterRng &rng) {
  return std::visit(
      [&](const auto &s) -> std::vector<double> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Equispaced>) {
          return equispaced_design(s.a, s.b, n);
        } else if constexpr (std::is_same_v<T, FixedX>) {
          return s.values;
        } else {
          std::vector<double> x(n);
          for (double &v : x) {
            v = rng.uniform(s.a, s.b);
          }
          return x;
        }
      },
      spec);
}

inline double draw_noise(const NoiseSpec &noise, CounterRng &rng) {
  if (const auto *u = std::get_if<UniformNoise>(&noise)) {
    return rng.uniform(-u->theta, u->theta);
  }
  return std::sqrt(std::get<GaussianNoise>(noise).sigma_sq) * rng.normal();
}

inline bool usable_design(std::span<const double> x) {
  if (!has_two_distinct(x)) {
    return false;
  }
  try {
    (void)summarize(x);
  } catch (const CollinearDesign &) {
    return false;
  }
  return true;
}

} // namespace detail

/// The covariates shared by all replicates of a fixed-design study.
inline std::vector<double> shared_design(const SimConfig &config) {
  for (std::uint64_t attempt = 0; attempt < detail::max_attempts; ++attempt) {
    CounterRng rng(config.seed, detail::shared_x_stream - attempt);
    auto x = detail::draw_x(config.x_spec, config.n, rng);
    if (detail::usable_design(x)) {
      return x;
    }
    if (!std::holds_alternative<IidUniformX>(config.x_spec)) {
      break;
    }
  }
  throw CollinearDesign("simulation design has a single distinct covariate value");
}

/// Replicate `replicate_index`, attempt `attempt` (attempts > 0 only matter
/// when resampled covariates came out collinear). Bitwise reproducible.
inline Dataset generate_dataset(const SimConfig &config, std::uint64_t replicate_index, std::uint64_t attempt = 0,
                                std::span<const double> fixed_x = {}) {
  CounterRng rng(config.seed, detail::replicate_stream(replicate_index, attempt));
  Dataset data;
  if (config.resample_x_each_replicate) {
    data.x = detail::draw_x(config.x_spec, config.n, rng);
  } else if (!fixed_x.empty()) {
    data.x.assign(fixed_x.begin(), fixed_x.end());
  } else {
    data.x = shared_design(config);
  }
  data.y.resize(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    data.y[i] = config.beta0 + config.beta1 * data.x[i] + detail::draw_noise(config.noise, rng);
  }
  return data;
}

/// Worker count: explicit request, else UNIFORM_LSE_THREADS, else hardware.
inline std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) {
    return requested;
  }
  if (const char *env = std::getenv("UNIFORM_LSE_THREADS")) {
    char *end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) {
      return static_cast<std::size_t>(v);
    }
  }
  return std::max<unsigned>(1, std::thread::hardware_concurrency());
}

namespace detail {

/// Runs body(i) for i in [0, count) on `threads` workers over contiguous
/// chunks. The exception from the lowest failing chunk is rethrown.
template <class Body> void parallel_for(std::size_t count, std::size_t threads, Body &&body) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      body(i);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> workers;
  workers.reserve(threads);
  const std::size_t chunk = (count + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      try {
        const std::size_t end = std::min(count, (t + 1) * chunk);
        for (std::size_t i = t * chunk; i < end; ++i) {
          body(i);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto &w : workers) {
    w.join();
  }
  for (auto &e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

// Interval half-widths per unit of the scale parameter (theta or sigma).
struct UnitHalfWidths {
  std::array<double, 2> exact{0.0, 0.0};
  std::array<double, 2> gaussian{0.0, 0.0};
};

inline UnitHalfWidths unit_half_widths(const DesignSummary &design, double level, bool need_exact,
                                       const SumOptions &options) {
  UnitHalfWidths out;
  const double z = normal_quantile(0.5 * (1.0 + level));
  for (Coefficient c : {Coefficient::beta0, Coefficient::beta1}) {
    const auto i = static_cast<std::size_t>(c);
    out.gaussian[i] = z * gaussian_se_factor(design, c);
    if (need_exact) {
      out.exact[i] = law_for(design, 1.0, c, 0.0, options).half_width(level);
    }
  }
  return out;
}

inline double rule_half_width(const IntervalRule &rule, const NoiseSpec &noise, const UnitHalfWidths &unit,
                              const FitResult &fit, Coefficient c) {
  const auto i = static_cast<std::size_t>(c);
  if (rule.method == IntervalMethod::exact_uniform) {
    double theta = 0.0;
    if (rule.source == ParameterSource::plug_in) {
      theta = std::sqrt(fit.theta_sq_hat);
    } else if (rule.parameter) {
      theta = *rule.parameter;
    } else {
      theta = std::sqrt(3.0 * noise_variance(noise));
    }
    return theta * unit.exact[i];
  }
  double sigma_sq = 0.0;
  if (rule.source == ParameterSource::plug_in) {
    sigma_sq = fit.sigma_sq_hat;
  } else if (rule.parameter) {
    sigma_sq = *rule.parameter;
  } else {
    sigma_sq = noise_variance(noise);
  }
  return std::sqrt(sigma_sq) * unit.gaussian[i];
}

inline bool needs_exact(std::span<const IntervalRule> rules) {
  return std::any_of(rules.begin(), rules.end(),
                     [](const IntervalRule &r) { return r.method == IntervalMethod::exact_uniform; });
}

struct ReplicateOutcome {
  FitResult fit; // residuals cleared
  std::vector<std::array<double, 2>> half_widths; // per rule, per coefficient
  std::uint32_t regenerated = 0;
};

/// Generates and fits every replicate, evaluating each rule's interval.
inline std::vector<ReplicateOutcome> simulate_outcomes(const SimConfig &config, std::span<const IntervalRule> rules,
                                                       std::span<const double> fixed_x) {
  const bool exact = needs_exact(rules);
  std::optional<UnitHalfWidths> shared_unit;
  if (!config.resample_x_each_replicate) {
    shared_unit = unit_half_widths(summarize(fixed_x), config.level, exact, config.sum_options);
  }
  std::vector<ReplicateOutcome> out(config.replicates);
  parallel_for(config.replicates, resolve_threads(config.threads), [&](std::size_t i) {
    ReplicateOutcome &rec = out[i];
    Dataset data;
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt >= max_attempts) {
        throw CollinearDesign("could not draw a non-collinear design for replicate " + std::to_string(i));
      }
      data = generate_dataset(config, i, attempt, fixed_x);
      if (!config.resample_x_each_replicate || usable_design(data.x)) {
        rec.regenerated = static_cast<std::uint32_t>(attempt);
        break;
      }
    }
    rec.fit = fit(data);
    rec.fit.residuals.clear();
    rec.fit.residuals.shrink_to_fit();
    const UnitHalfWidths unit =
        shared_unit ? *shared_unit : unit_half_widths(summarize(data.x), config.level, exact, config.sum_options);
    rec.half_widths.reserve(rules.size());
    for (const IntervalRule &rule : rules) {
      rec.half_widths.push_back({rule_half_width(rule, config.noise, unit, rec.fit, Coefficient::beta0),
                                 rule_half_width(rule, config.noise, unit, rec.fit, Coefficient::beta1)});
    }
  });
  return out;
}

} // namespace detail

struct ReplicateRecord {
  double beta0_hat = 0.0;
  double beta1_hat = 0.0;
  double theta_sq_hat = 0.0;
  double sigma_sq_hat = 0.0;
  bool ci_covered_beta0 = false;
  bool ci_covered_beta1 = false;
};

struct ReplicateSet {
  SimConfig config;
  std::vector<ReplicateRecord> records;
  std::vector<double> x; // shared design; empty when resampled
  std::size_t regenerated = 0; // collinear resampled designs that were redrawn
  std::array<double, 2> half_width{0.0, 0.0}; // shared-design interval half-widths

  bool resampled_x() const noexcept { return config.resample_x_each_replicate; }
};

/// One record per replicate, in replicate order.
inline ReplicateSet run_replicates(const SimConfig &config) {
  config.validate();
  ReplicateSet set;
  set.config = config;
  if (!config.resample_x_each_replicate) {
    set.x = shared_design(config);
  }
  const std::array<IntervalRule, 1> rules{config.interval};
  const auto outcomes = detail::simulate_outcomes(config, rules, set.x);
  set.records.reserve(outcomes.size());
  for (const auto &o : outcomes) {
    ReplicateRecord r;
    r.beta0_hat = o.fit.beta0_hat;
    r.beta1_hat = o.fit.beta1_hat;
    r.theta_sq_hat = o.fit.theta_sq_hat;
    r.sigma_sq_hat = o.fit.sigma_sq_hat;
    r.ci_covered_beta0 = std::fabs(r.beta0_hat - config.beta0) <= o.half_widths[0][0];
    r.ci_covered_beta1 = std::fabs(r.beta1_hat - config.beta1) <= o.half_widths[0][1];
    set.regenerated += o.regenerated;
    set.records.push_back(r);
  }
  if (!config.resample_x_each_replicate && !outcomes.empty()) {
    set.half_width = outcomes.front().half_widths[0];
  }
  return set;
}

inline double coefficient_of(const ReplicateRecord &r, Coefficient c) {
  return c == Coefficient::beta0 ? r.beta0_hat : r.beta1_hat;
}

/// Sample means, variances and the beta0/beta1 correlation of a replicate set.
struct ReplicateSummary {
  std::size_t replicates = 0;
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 2> variance{0.0, 0.0};
  double correlation = 0.0;
  double mean_theta_sq_hat = 0.0;
  double mean_sigma_sq_hat = 0.0;
  std::array<double, 2> coverage{0.0, 0.0};
};

inline ReplicateSummary summarize_replicates(const ReplicateSet &set) {
  ReplicateSummary s;
  const auto &r = set.records;
  s.replicates = r.size();
  if (r.empty()) {
    return s;
  }
  const double n = static_cast<double>(r.size());
  detail::CompensatedSum m0, m1, mt, ms, c0, c1;
  for (const auto &rec : r) {
    m0.add(rec.beta0_hat);
    m1.add(rec.beta1_hat);
    mt.add(rec.theta_sq_hat);
    ms.add(rec.sigma_sq_hat);
    c0.add(rec.ci_covered_beta0 ? 1.0 : 0.0);
    c1.add(rec.ci_covered_beta1 ? 1.0 : 0.0);
  }
  s.mean = {m0.value() / n, m1.value() / n};
  s.mean_theta_sq_hat = mt.value() / n;
  s.mean_sigma_sq_hat = ms.value() / n;
  s.coverage = {c0.value() / n, c1.value() / n};
  detail::CompensatedSum v0, v1, cov;
  for (const auto &rec : r) {
    const double a = rec.beta0_hat - s.mean[0];
    const double b = rec.beta1_hat - s.mean[1];
    v0.add(a * a);
    v1.add(b * b);
    cov.add(a * b);
  }
  if (r.size() > 1) {
    s.variance = {v0.value() / (n - 1.0), v1.value() / (n - 1.0)};
    const double denom = std::sqrt(v0.value() * v1.value());
    s.correlation = denom > 0.0 ? cov.value() / denom : 0.0;
  }
  return s;
}

/// One-sample Kolmogorov-Smirnov distance sup_t |F_N(t) - F(t)|, evaluated at
/// the sample points.
template <class Cdf> double ks_statistic(std::vector<double> samples, Cdf &&reference_cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = reference_cdf(samples[i]);
    const double i_d = static_cast<double>(i);
    worst = std::max({worst, (i_d + 1.0) / n - f, f - i_d / n});
  }
  return worst;
}

struct KsReport {
  double statistic = 0.0;
  std::size_t sample_size = 0;
  std::string comparison;
  /// Asymptotic 5% critical value 1.36 / sqrt(N).
  double critical_value_05 = 0.0;
};

/// Compares the replicates' beta_j_hat with an exact law. The law conditions
/// on one design, so resampled-covariate replicates are rejected.
inline KsReport ks_against_exact(const ReplicateSet &set, const EstimatorLaw &law, Coefficient coefficient) {
  if (set.resampled_x()) {
    throw MismatchedDesign("replicates used resampled covariates; the exact law conditions on a fixed design");
  }
  std::vector<double> samples;
  samples.reserve(set.records.size());
  for (const auto &r : set.records) {
    samples.push_back(coefficient_of(r, coefficient));
  }
  KsReport out;
  out.sample_size = samples.size();
  out.statistic = ks_statistic(std::move(samples), [&](double v) { return law.cdf_at(v); });
  char buf[160];
  std::snprintf(buf, sizeof buf, "exact %s law, center %.9g, theta %.9g, m = %zu",
                std::string(to_string(coefficient)).c_str(), law.center(), law.core().theta(), law.core().m());
  out.comparison = buf;
  out.critical_value_05 = out.sample_size > 0 ? 1.36 / std::sqrt(static_cast<double>(out.sample_size)) : 0.0;
  return out;
}

struct CoverageRow {
  std::size_t n = 0;
  std::string noise;
  std::string method;
  Coefficient coefficient = Coefficient::beta0;
  double level = 0.0;
  double coverage = 0.0;
  double mean_half_width = 0.0;
  std::size_t replicates = 0;
};

struct CoverageReport {
  std::vector<CoverageRow> rows;
  std::size_t regenerated = 0;
};

/// Empirical coverage and mean half-width per (n, rule, coefficient). All
/// rules are scored on the same replicates for a given n.
inline CoverageReport coverage_study(const SimConfig &base, std::span<const std::size_t> n_list, double level,
                                     std::span<const IntervalRule> rules) {
  CoverageReport report;
  for (std::size_t n : n_list) {
    SimConfig config = base;
    config.n = n;
    config.level = level;
    config.validate();
    std::vector<double> x;
    if (!config.resample_x_each_replicate) {
      x = shared_design(config);
    }
    const auto outcomes = detail::simulate_outcomes(config, rules, x);
    for (const auto &o : outcomes) {
      report.regenerated += o.regenerated;
    }
    const double reps = static_cast<double>(outcomes.size());
    for (std::size_t r = 0; r < rules.size(); ++r) {
      for (Coefficient c : {Coefficient::beta0, Coefficient::beta1}) {
        const auto ci = static_cast<std::size_t>(c);
        const double truth = c == Coefficient::beta0 ? config.beta0 : config.beta1;
        detail::CompensatedSum covered;
        detail::CompensatedSum width;
        for (const auto &o : outcomes) {
          const double h = o.half_widths[r][ci];
          covered.add(std::fabs(coefficient_estimate(o.fit, c) - truth) <= h ? 1.0 : 0.0);
          width.add(h);
        }
        report.rows.push_back({n, noise_label(config.noise), rules[r].label(), c, level, covered.value() / reps,
                               width.value() / reps, outcomes.size()});
      }
    }
  }
  return report;
}

struct ConvergenceRow {
  std::size_t n = 0;
  double sup_distance_beta0 = 0.0;
  double sup_distance_beta1 = 0.0;
  CltDiagnostics diagnostics;
  std::size_t terms_beta0 = 0;
  std::size_t terms_beta1 = 0;
};

/// Sup-norm distance between the exact CDF of sqrt(d/S2)(beta0_hat - beta0)
/// (resp. sqrt(d/n)(beta1_hat - beta1)) and the N(0, theta^2/3) CDF, over a
/// uniform grid spanning the exact support.
inline double standardized_sup_distance(const DesignSummary &design, double theta, Coefficient c,
                                        std::size_t grid_points, const SumOptions &options) {
  const auto core = make_sum(coefficient_weights(design, c), theta, options);
  const double factor = c == Coefficient::beta0 ? design.s2 : static_cast<double>(design.n);
  const double standardizer = std::sqrt(design.d * factor); // Z = W / standardizer
  const double limit = core.half_support() / standardizer;
  const double sd = theta / std::sqrt(3.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double z =
        grid_points == 1 ? 0.0 : -limit + 2.0 * limit * static_cast<double>(i) / static_cast<double>(grid_points - 1);
    worst = std::max(worst, std::fabs(core.cdf(z * standardizer) - normal_cdf(z / sd)));
  }
  return worst;
}

inline std::vector<ConvergenceRow> convergence_study(const XSpec &family, std::span<const std::size_t> n_list,
                                                     double theta, std::uint64_t seed = 42,
                                                     std::size_t grid_points = 1000, SumOptions options = {}) {
  if (std::holds_alternative<FixedX>(family)) {
    throw DomainError("convergence study needs an equispaced or iid-uniform design family");
  }
  std::vector<ConvergenceRow> rows;
  for (std::size_t n : n_list) {
    SimConfig config;
    config.n = n;
    config.x_spec = family;
    config.seed = seed;
    config.replicates = 1;
    config.validate();
    const auto design = summarize(shared_design(config));
    ConvergenceRow row;
    row.n = n;
    row.sup_distance_beta0 = standardized_sup_distance(design, theta, Coefficient::beta0, grid_points, options);
    row.sup_distance_beta1 = standardized_sup_distance(design, theta, Coefficient::beta1, grid_points, options);
    row.diagnostics = clt_diagnostics(design);
    row.terms_beta0 = make_sum(design.p, theta, options).m();
    row.terms_beta1 = make_sum(design.p_prime, theta, options).m();
    rows.push_back(row);
  }
  return rows;
}

} // namespace uniform_lse
