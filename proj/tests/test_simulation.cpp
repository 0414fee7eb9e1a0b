#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <vector>

#include "uniform_lse/estimator_law.hpp"
#include "uniform_lse/regression.hpp"
#include "uniform_lse/rng.hpp"
#include "uniform_lse/simulation.hpp"

using namespace uniform_lse;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SimConfig random_design_config(std::size_t replicates) {
  SimConfig config;
  config.n = 10;
  config.noise = UniformNoise{3.0};
  config.replicates = replicates;
  return config;
}

bool same_records(const ReplicateSet &a, const ReplicateSet &b) {
  if (a.records.size() != b.records.size() || a.x != b.x) {
    return false;
  }
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto &r = a.records[i];
    const auto &s = b.records[i];
    if (r.beta0_hat != s.beta0_hat || r.beta1_hat != s.beta1_hat || r.theta_sq_hat != s.theta_sq_hat ||
        r.sigma_sq_hat != s.sigma_sq_hat || r.ci_covered_beta0 != s.ci_covered_beta0 ||
        r.ci_covered_beta1 != s.ci_covered_beta1) {
      return false;
    }
  }
  return true;
}

} // namespace

TEST_CASE("equispaced design endpoints and spacing") {
  const auto x = equispaced_design(-10.0, 10.0, 10);
  REQUIRE(x.size() == 10);
  CHECK(x.front() == -10.0);
  CHECK(x.back() == 10.0);
  CHECK_THAT(x[1] - x[0], WithinRel(20.0 / 9.0, 1e-14));
}

TEST_CASE("generated datasets are deterministic and noise stays in its support") {
  SimConfig config = random_design_config(1);
  config.beta0 = 0.0;
  config.beta1 = 0.0;
  const auto x = shared_design(config);
  const Dataset a = generate_dataset(config, 0);
  const Dataset b = generate_dataset(config, 0);
  const Dataset c = generate_dataset(config, 1);
  CHECK(a.x == x);
  CHECK(a.y == b.y);
  CHECK(a.y != c.y);
  for (std::size_t i = 0; i < 5000; ++i) {
    const Dataset d = generate_dataset(config, i);
    for (double e : d.y) {
      REQUIRE(std::fabs(e) <= 3.0);
    }
  }
  for (double v : x) {
    CHECK(v >= -10.0);
    CHECK(v < 10.0);
  }
  // The design stream is separate from every replicate stream.
  SimConfig other = config;
  other.seed = 43;
  CHECK(shared_design(other) != x);
}

TEST_CASE("gaussian noise has the configured variance") {
  SimConfig config = random_design_config(1);
  config.beta0 = 0.0;
  config.beta1 = 0.0;
  config.noise = GaussianNoise{2.5};
  double sum = 0.0;
  double sum_sq = 0.0;
  const std::size_t reps = 20000;
  for (std::size_t i = 0; i < reps; ++i) {
    for (double e : generate_dataset(config, i).y) {
      sum += e;
      sum_sq += e * e;
    }
  }
  const double count = static_cast<double>(reps * config.n);
  CHECK_THAT(sum / count, WithinAbs(0.0, 5.0 * std::sqrt(2.5 / count)));
  CHECK_THAT(sum_sq / count, WithinAbs(2.5, 5.0 * 2.5 * std::sqrt(2.0 / count)));
}

TEST_CASE("vanishing noise recovers the true coefficients") {
  SimConfig config = random_design_config(1);
  config.noise = UniformNoise{1e-9};
  const auto set = run_replicates(config);
  REQUIRE(set.records.size() == 1);
  CHECK_THAT(set.records[0].beta0_hat, WithinAbs(7.0, 1e-8));
  CHECK_THAT(set.records[0].beta1_hat, WithinAbs(4.0, 1e-8));
}

TEST_CASE("replicate records do not depend on the thread count") {
  SimConfig config = random_design_config(5000);
  config.threads = 1;
  const auto serial = run_replicates(config);
  for (std::size_t threads : {2, 3, 8, 64}) {
    config.threads = threads;
    CAPTURE(threads);
    CHECK(same_records(serial, run_replicates(config)));
  }
  config.resample_x_each_replicate = true;
  config.threads = 1;
  const auto resampled = run_replicates(config);
  config.threads = 7;
  CHECK(same_records(resampled, run_replicates(config)));
  CHECK_FALSE(same_records(serial, resampled));
}

TEST_CASE("thread count resolution") {
  CHECK(resolve_threads(3) == 3);
  ::setenv("UNIFORM_LSE_THREADS", "5", 1);
  CHECK(resolve_threads(0) == 5);
  ::setenv("UNIFORM_LSE_THREADS", "junk", 1);
  CHECK(resolve_threads(0) >= 1);
  ::unsetenv("UNIFORM_LSE_THREADS");
  CHECK(resolve_threads(0) >= 1);
}

TEST_CASE("parallel_for rethrows a worker exception") {
  std::vector<int> hits(100, 0);
  CHECK_THROWS_AS(detail::parallel_for(100, 4,
                                       [&](std::size_t i) {
                                         hits[i] = 1;
                                         if (i == 60) {
                                           throw std::runtime_error("boom");
                                         }
                                       }),
                  std::runtime_error);
  CHECK(hits[0] == 1);
}

TEST_CASE("simulation config validation") {
  SimConfig config = random_design_config(10);
  config.n = 2;
  CHECK_THROWS_AS(run_replicates(config), DomainError);
  config = random_design_config(0);
  CHECK_THROWS_AS(run_replicates(config), DomainError);
  config = random_design_config(10);
  config.x_spec = IidUniformX{1.0, 1.0};
  CHECK_THROWS_AS(run_replicates(config), DomainError);
  config = random_design_config(10);
  config.x_spec = FixedX{{1.0, 2.0}};
  CHECK_THROWS_AS(run_replicates(config), DomainError);
  config = random_design_config(10);
  config.noise = GaussianNoise{0.0};
  CHECK_THROWS_AS(run_replicates(config), DomainError);
}

TEST_CASE("collinear resampled designs are regenerated and counted") {
  // Covariates confined to a 1e-6 window are sometimes numerically collinear.
  SimConfig config = random_design_config(2000);
  config.n = 3;
  config.x_spec = IidUniformX{1.0, 1.0 + 1e-6};
  config.resample_x_each_replicate = true;
  config.noise = UniformNoise{1e-12};
  const auto set = run_replicates(config);
  CHECK(set.regenerated > 0);
  CHECK(set.records.size() == 2000);
  for (const auto &r : set.records) {
    REQUIRE(std::isfinite(r.beta0_hat));
    REQUIRE(std::isfinite(r.beta1_hat));
  }
  config.x_spec = IidUniformX{1.0, 1.0 + 1e-15};
  CHECK_THROWS_AS(run_replicates(config), CollinearDesign);
}

TEST_CASE("estimators are unbiased and match the design variance and correlation") {
  for (bool gaussian : {false, true}) {
    SimConfig config = random_design_config(100000);
    if (gaussian) {
      config.noise = GaussianNoise{3.0};
    }
    const auto set = run_replicates(config);
    const auto summary = summarize_replicates(set);
    const auto design = summarize(set.x);
    const double n = static_cast<double>(config.n);
    const double reps = static_cast<double>(summary.replicates);
    const double sigma_sq = 3.0;
    const double var0 = sigma_sq * design.s2 / design.d;
    const double var1 = sigma_sq * n / design.d;
    CAPTURE(gaussian);
    CHECK(std::fabs(summary.mean[0] - 7.0) <= 3.0 * std::sqrt(var0 / reps));
    CHECK(std::fabs(summary.mean[1] - 4.0) <= 3.0 * std::sqrt(var1 / reps));
    CHECK_THAT(summary.variance[0], WithinRel(var0, 0.05));
    CHECK_THAT(summary.variance[1], WithinRel(var1, 0.05));

    // theta^2 = 3 sigma^2; sample SE from the replicates themselves.
    double ss = 0.0;
    for (const auto &r : set.records) {
      ss += (r.theta_sq_hat - summary.mean_theta_sq_hat) * (r.theta_sq_hat - summary.mean_theta_sq_hat);
    }
    const double se_theta = std::sqrt(ss / (reps - 1.0) / reps);
    CHECK(std::fabs(summary.mean_theta_sq_hat - 9.0) <= 3.0 * se_theta);
    CHECK_THAT(summary.mean_sigma_sq_hat, WithinRel(summary.mean_theta_sq_hat / 3.0, 1e-12));

    // corr(beta0_hat, beta1_hat) = -S1 / sqrt(n S2).
    const double rho = -design.s1 / std::sqrt(n * design.s2);
    CHECK(std::fabs(summary.correlation - rho) <= 3.0 * (1.0 - rho * rho) / std::sqrt(reps));
  }
}

TEST_CASE("ks statistic of samples drawn from the reference law") {
  // x = (0, 1, 3) gives a three-term beta1 law that is cheap to invert.
  const auto design = summarize(std::vector<double>{0.0, 1.0, 3.0});
  const auto law = law_for(design, 1.0, Coefficient::beta1, 0.0);
  const std::size_t reruns = 200;
  const std::size_t n = 10000;
  std::size_t above_05 = 0;
  std::size_t above_01 = 0;
  for (std::size_t run = 0; run < reruns; ++run) {
    CounterRng rng(31337, run);
    std::vector<double> sample(n);
    for (double &v : sample) {
      v = law.quantile_at(rng.uniform01() * (1.0 - 0x1p-53) + 0x1p-54);
    }
    const double ks = ks_statistic(std::move(sample), [&](double t) { return law.cdf_at(t); });
    above_05 += ks >= 1.36 / std::sqrt(static_cast<double>(n));
    above_01 += ks >= 1.63 / std::sqrt(static_cast<double>(n));
  }
  // 1.36 / sqrt(N) and 1.63 / sqrt(N) are the 5% and 1% critical values.
  CAPTURE(above_05, above_01);
  CHECK(above_05 <= 20);
  CHECK(above_01 <= 7);
}

TEST_CASE("ks agreement with the exact law and the mis-specified negative control") {
  SimConfig config = random_design_config(100000);
  const auto set = run_replicates(config);
  const auto design = summarize(set.x);
  for (Coefficient c : {Coefficient::beta0, Coefficient::beta1}) {
    const double truth = c == Coefficient::beta0 ? config.beta0 : config.beta1;
    const auto good = ks_against_exact(set, law_for(design, 3.0, c, truth), c);
    const auto bad = ks_against_exact(set, law_for(design, 6.0, c, truth), c);
    CAPTURE(c, good.statistic, bad.statistic);
    CHECK(good.sample_size == 100000);
    CHECK(good.statistic < 0.006);
    CHECK_THAT(good.critical_value_05, WithinRel(1.36 / std::sqrt(1e5), 1e-12));
    CHECK(bad.statistic > 0.1);
    CHECK(bad.statistic > 5.0 * bad.critical_value_05);
    CHECK(good.comparison.find("theta 3") != std::string::npos);
  }

  config.resample_x_each_replicate = true;
  config.replicates = 10;
  const auto resampled = run_replicates(config);
  CHECK_THROWS_AS(ks_against_exact(resampled, law_for(design, 3.0, Coefficient::beta0, 7.0), Coefficient::beta0),
                  MismatchedDesign);
}

TEST_CASE("ks statistic on a hand-checkable sample") {
  // Uniform(0, 1) reference, sample {0.1, 0.5}: max(0.5 - 0.1, 1 - 0.5, 0.5 - 0.5) = 0.5.
  CHECK_THAT(ks_statistic({0.5, 0.1}, [](double t) { return t; }), WithinAbs(0.5, 1e-15));
  CHECK_THAT(ks_statistic({0.25, 0.75}, [](double t) { return t; }), WithinAbs(0.25, 1e-15));
}

TEST_CASE("coverage study reproduces exact coverage and the gaussian pitfall") {
  SimConfig config = random_design_config(100000);
  const std::vector<IntervalRule> rules{
      {IntervalMethod::exact_uniform, ParameterSource::known, std::nullopt},
      {IntervalMethod::gaussian_asymptotic, ParameterSource::known, std::nullopt},
      {IntervalMethod::gaussian_asymptotic, ParameterSource::known, 1.0},
      {IntervalMethod::exact_uniform, ParameterSource::plug_in, std::nullopt},
  };
  const std::vector<std::size_t> n_list{10};
  const auto report = coverage_study(config, n_list, 0.95, rules);
  REQUIRE(report.rows.size() == rules.size() * 2);
  for (const auto &row : report.rows) {
    CAPTURE(row.method, row.coefficient, row.coverage);
    CHECK(row.n == 10);
    CHECK(row.noise == "uniform");
    CHECK(row.replicates == 100000);
    CHECK(row.coverage >= 0.0);
    CHECK(row.coverage <= 1.0);
    if (row.method == "exact_uniform/known") {
      CHECK(row.coverage >= 0.945);
      CHECK(row.coverage <= 0.955);
    } else if (row.method == "gaussian_asymptotic/known") {
      CHECK(row.coverage >= 0.93);
      CHECK(row.coverage <= 0.97);
    } else if (row.method == "gaussian_asymptotic/sigma_sq=1") {
      CHECK(row.coverage < 0.80);
    }
  }

  // The exact rule's half-width equals the law's, scaled by theta.
  const auto design = summarize(shared_design(config));
  CHECK_THAT(report.rows[0].mean_half_width,
             WithinRel(law_for(design, 3.0, Coefficient::beta0, 0.0).half_width(0.95), 1e-12));

  // Same seed, different thread cap: identical rows.
  config.threads = 3;
  const auto again = coverage_study(config, n_list, 0.95, rules);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    CHECK(again.rows[i].coverage == report.rows[i].coverage);
    CHECK(again.rows[i].mean_half_width == report.rows[i].mean_half_width);
  }
}

TEST_CASE("exact coverage holds conditionally on several n and gaussian noise fails it gracefully") {
  SimConfig config = random_design_config(20000);
  const std::vector<IntervalRule> rules{{IntervalMethod::exact_uniform, ParameterSource::known, std::nullopt}};
  const std::vector<std::size_t> n_list{3, 5, 20};
  const auto report = coverage_study(config, n_list, 0.9, rules);
  REQUIRE(report.rows.size() == 6);
  for (const auto &row : report.rows) {
    CAPTURE(row.n, row.coefficient, row.coverage);
    // Binomial SE at 2e4 replicates is about 0.0021.
    CHECK(std::fabs(row.coverage - 0.9) < 0.009);
  }
  config.noise = GaussianNoise{3.0};
  const auto normal = coverage_study(config, n_list, 0.9, rules);
  for (const auto &row : normal.rows) {
    CHECK(row.noise == "gaussian");
  }
}

TEST_CASE("convergence study on equispaced designs") {
  const std::vector<std::size_t> n_list{5, 8, 12, 16, 20};
  const auto rows = convergence_study(Equispaced{-10.0, 10.0}, n_list, 3.0);
  REQUIRE(rows.size() == n_list.size());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CAPTURE(rows[i].n);
    CHECK(rows[i].sup_distance_beta1 < rows[i - 1].sup_distance_beta1);
    CHECK(rows[i].sup_distance_beta0 < rows[i - 1].sup_distance_beta0);
    CHECK(rows[i].diagnostics.cond_beta0 < rows[i - 1].diagnostics.cond_beta0);
    CHECK(rows[i].diagnostics.cond_beta1 < rows[i - 1].diagnostics.cond_beta1);
  }
  for (const auto &row : rows) {
    CHECK(std::fabs(row.diagnostics.cond_joint) < 1e-15);
    CHECK(row.sup_distance_beta1 > 0.0);
    CHECK(row.sup_distance_beta1 < 0.05);
  }
  // Frozen from one run: the n = 5 distance is more than twice the n = 20 one.
  CHECK(rows.front().sup_distance_beta1 > 2.0 * rows.back().sup_distance_beta1);
  // Odd n puts a covariate at 0, whose slope weight drops out.
  CHECK(rows[0].terms_beta1 == 4);
  CHECK(rows[0].terms_beta0 == 5);

  CHECK_THROWS_AS(convergence_study(FixedX{{1.0, 2.0, 3.0}}, n_list, 3.0), DomainError);
  const std::vector<std::size_t> too_big{30};
  CHECK_THROWS_AS(convergence_study(Equispaced{}, too_big, 3.0), ExactModeTooLarge);
}

TEST_CASE("sup distance of a single uniform against its normal limit") {
  // x = (0, 1, 2): slope weights (-3, 0, 3), so beta1_hat - beta1 is
  // triangular. Grid evaluation at 1001 points straddles z = 0.
  const auto design = summarize(std::vector<double>{0.0, 1.0, 2.0});
  const double sup = standardized_sup_distance(design, 1.0, Coefficient::beta1, 1001, {});
  CHECK(sup > 0.0);
  CHECK(sup < 0.05);
}
