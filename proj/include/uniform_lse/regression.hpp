#pragma once

// Simple linear regression y = beta0 + beta1 * x + eps with the design
// reduced to the scalar summaries that drive every estimator law:
//
//   S1 = sum x_k,  S2 = sum x_k^2,  d = det(X'X) = n*S2 - S1^2
//   p_k  = S2 - x_k*S1    (beta0_hat - beta0 = sum p_k  eps_k / d)
//   p'_k = n*x_k - S1     (beta1_hat - beta1 = sum p'_k eps_k / d)
//
// Note that d = (1/2) * sum_{i != j} (x_i - x_j)^2; the ordered-pair sum
// without the 1/2 counts every pair twice.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "uniform_lse/detail/summation.hpp"
#include "uniform_lse/errors.hpp"

namespace uniform_lse {

/// Designs with d <= collinearity_tolerance * n * S2 are treated as singular.
inline constexpr double collinearity_tolerance = 1e-14;

struct Dataset {
  std::vector<double> x;
  std::vector<double> y;

  std::size_t size() const noexcept { return x.size(); }

  /// Throws if the lengths differ, n < 3, or x has a single distinct value.
  void validate() const;
};

struct DesignSummary {
  std::size_t n = 0;
  double s1 = 0.0;
  double s2 = 0.0;
  double d = 0.0;
  std::vector<double> p;       // intercept weights, sum p = d
  std::vector<double> p_prime; // slope weights, sum p' = 0
};

struct FitResult {
  double beta0_hat = 0.0;
  double beta1_hat = 0.0;
  std::vector<double> residuals;
  double theta_sq_hat = 0.0; // 3 * ||r||^2 / (n - 2), unbiased for theta^2 under U(-theta, theta)
  double sigma_sq_hat = 0.0; // ||r||^2 / (n - 2), the Gaussian convention
};

/// Builds the design summary. `min_points` defaults to 3, the smallest n
/// for which the residual variance is defined; the design algebra itself
/// only needs two distinct points, so callers that never fit may pass 2.
inline DesignSummary summarize(std::span<const double> x, std::size_t min_points = 3) {
  const std::size_t n = x.size();
  if (n < std::max<std::size_t>(min_points, 2)) {
    throw TooFewPoints("design needs at least " + std::to_string(std::max<std::size_t>(min_points, 2)) +
                       " points, got " + std::to_string(n));
  }
  const double nd = static_cast<double>(n);

  detail::CompensatedSum s1;
  detail::CompensatedSum s2;
  for (double v : x) {
    s1.add(v);
    s2.add(v * v);
  }
  DesignSummary out;
  out.n = n;
  out.s1 = s1.value();
  out.s2 = s2.value();

  // n*S2 - S1^2 == n * sum (x - mean)^2; the centred form avoids subtracting
  // two large nearly equal numbers.
  const double mean = out.s1 / nd;
  detail::CompensatedSum centred;
  for (double v : x) {
    const double dv = v - mean;
    centred.add(dv * dv);
  }
  out.d = nd * centred.value();

  if (!(out.d > collinearity_tolerance * nd * out.s2)) {
    throw CollinearDesign("covariate values are all equal (det(X'X) = 0)");
  }

  out.p.reserve(n);
  out.p_prime.reserve(n);
  for (double v : x) {
    out.p.push_back(out.s2 - v * out.s1);
    out.p_prime.push_back(nd * v - out.s1);
  }
  return out;
}

inline void Dataset::validate() const {
  if (x.size() != y.size()) {
    throw DomainError("x and y differ in length (" + std::to_string(x.size()) + " vs " +
                      std::to_string(y.size()) + ")");
  }
  if (x.size() < 3) {
    throw TooFewPoints("regression needs at least 3 points, got " + std::to_string(x.size()));
  }
  if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); })) {
    throw CollinearDesign("covariate values are all equal (det(X'X) = 0)");
  }
}

/// 3 * ||r||^2 / (n - 2).
inline double estimate_theta_sq(std::span<const double> residuals, std::size_t n) {
  if (n <= 2) {
    throw TooFewPoints("theta^2 estimate needs n >= 3");
  }
  detail::CompensatedSum ss;
  for (double r : residuals) {
    ss.add(r * r);
  }
  return 3.0 * (ss.value() / static_cast<double>(n - 2));
}

inline FitResult fit(const Dataset &data) {
  data.validate();
  const std::size_t n = data.size();
  const double nd = static_cast<double>(n);
  // Throws CollinearDesign for numerically singular designs.
  (void)summarize(data.x);

  detail::CompensatedSum sx;
  detail::CompensatedSum sy;
  for (std::size_t i = 0; i < n; ++i) {
    sx.add(data.x[i]);
    sy.add(data.y[i]);
  }
  const double mx = sx.value() / nd;
  const double my = sy.value() / nd;

  detail::CompensatedSum sxx;
  detail::CompensatedSum sxy;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = data.x[i] - mx;
    sxx.add(dx * dx);
    sxy.add(dx * (data.y[i] - my));
  }

  FitResult out;
  out.beta1_hat = sxy.value() / sxx.value();
  out.beta0_hat = my - out.beta1_hat * mx;
  out.residuals.reserve(n);
  detail::CompensatedSum ss;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = data.y[i] - (out.beta0_hat + out.beta1_hat * data.x[i]);
    out.residuals.push_back(r);
    ss.add(r * r);
  }
  out.sigma_sq_hat = ss.value() / static_cast<double>(n - 2);
  out.theta_sq_hat = 3.0 * out.sigma_sq_hat;
  return out;
}

} // namespace uniform_lse
