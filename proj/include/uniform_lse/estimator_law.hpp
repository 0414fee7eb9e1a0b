#pragma once

// Finite-sample laws of the least-squares coefficients under U(-theta, theta)
// errors, and the inference built on them.
//
//   beta0_hat = beta0 + (1/d) * sum p_k  eps_k
//   beta1_hat = beta1 + (1/d) * sum p'_k eps_k
//
// so each law is a location-scale image (center + W / d) of a weighted
// uniform sum W. The Gaussian-theory counterparts are provided alongside for
// comparison.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "uniform_lse/errors.hpp"
#include "uniform_lse/normal.hpp"
#include "uniform_lse/regression.hpp"
#include "uniform_lse/uniform_sum.hpp"

namespace uniform_lse {

enum class Coefficient { beta0, beta1 };

enum class IntervalMethod { exact_uniform, gaussian_asymptotic };

/// Where the error scale came from: supplied by the caller, or estimated
/// from the residuals and substituted into the law (approximate).
enum class ParameterSource { known, plug_in };

constexpr std::string_view to_string(Coefficient c) { return c == Coefficient::beta0 ? "beta0" : "beta1"; }

constexpr std::string_view to_string(IntervalMethod m) {
  return m == IntervalMethod::exact_uniform ? "exact_uniform" : "gaussian_asymptotic";
}

constexpr std::string_view to_string(ParameterSource s) { return s == ParameterSource::known ? "known" : "plug_in"; }

inline std::span<const double> coefficient_weights(const DesignSummary &design, Coefficient c) {
  return c == Coefficient::beta0 ? std::span<const double>(design.p) : std::span<const double>(design.p_prime);
}

inline double coefficient_estimate(const FitResult &fit, Coefficient c) {
  return c == Coefficient::beta0 ? fit.beta0_hat : fit.beta1_hat;
}

/// Law of center + scale * W.
class EstimatorLaw {
public:
  EstimatorLaw(Coefficient coefficient, double center, double scale, WeightedUniformSum core)
      : coefficient_(coefficient), center_(center), scale_(scale), core_(std::move(core)) {}

  Coefficient coefficient() const noexcept { return coefficient_; }
  double center() const noexcept { return center_; }
  double scale() const noexcept { return scale_; }
  const WeightedUniformSum &core() const noexcept { return core_; }

  double density_at(double x) const { return core_.density((x - center_) / scale_) / scale_; }
  double cdf_at(double x) const { return core_.cdf((x - center_) / scale_); }
  double quantile_at(double q) const { return center_ + scale_ * core_.quantile(q); }
  double variance() const { return scale_ * scale_ * core_.variance(); }
  double lower_bound() const { return center_ - scale_ * core_.half_support(); }
  double upper_bound() const { return center_ + scale_ * core_.half_support(); }

  /// h with P(|estimate - center| <= h) = level.
  double half_width(double level) const {
    if (!(level > 0.0 && level < 1.0)) {
      throw DomainError("confidence level must lie in (0, 1)");
    }
    return scale_ * core_.quantile(0.5 * (1.0 + level));
  }

private:
  Coefficient coefficient_;
  double center_;
  double scale_;
  WeightedUniformSum core_;
};

/// Density d * f_W(d * (x - center)).
inline EstimatorLaw law_for(const DesignSummary &design, double theta, Coefficient coefficient, double center,
                            SumOptions options = {}) {
  auto core = make_sum(coefficient_weights(design, coefficient), theta, options);
  return EstimatorLaw(coefficient, center, 1.0 / design.d, std::move(core));
}

struct ConfidenceInterval {
  Coefficient coefficient = Coefficient::beta0;
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.0;
  IntervalMethod method = IntervalMethod::exact_uniform;
  ParameterSource source = ParameterSource::known;
  double scale_parameter = 0.0; // theta for exact_uniform, sigma^2 for gaussian

  double half_width() const noexcept { return 0.5 * (hi - lo); }
  bool contains(double value) const noexcept { return lo <= value && value <= hi; }
};

/// Two-sided test of H0: beta_j = 0.
struct TestResult {
  Coefficient coefficient = Coefficient::beta0;
  double statistic = 0.0; // |beta_j_hat|
  double critical_value = 0.0;
  double p_value = 1.0;
  bool reject = false;
  double alpha = 0.0;
  IntervalMethod method = IntervalMethod::exact_uniform;
  ParameterSource source = ParameterSource::known;
  double scale_parameter = 0.0;
};

namespace detail {

inline double resolve_theta(const FitResult &fit, std::optional<double> theta, ParameterSource &source) {
  if (theta) {
    if (!(*theta > 0.0)) {
      throw DomainError("theta must be positive");
    }
    source = ParameterSource::known;
    return *theta;
  }
  source = ParameterSource::plug_in;
  if (!(fit.theta_sq_hat > 0.0)) {
    throw DomainError("estimated theta is zero (residuals vanish); supply theta explicitly");
  }
  return std::sqrt(fit.theta_sq_hat);
}

inline double resolve_sigma_sq(const FitResult &fit, std::optional<double> sigma_sq, ParameterSource &source) {
  if (sigma_sq) {
    if (!(*sigma_sq >= 0.0)) {
      throw DomainError("sigma^2 must be non-negative");
    }
    source = ParameterSource::known;
    return *sigma_sq;
  }
  source = ParameterSource::plug_in;
  return fit.sigma_sq_hat;
}

inline void check_level(double level, const char *what) {
  if (!(level > 0.0 && level < 1.0)) {
    throw DomainError(std::string(what) + " must lie in (0, 1)");
  }
}

} // namespace detail

/// [beta_j_hat - h, beta_j_hat + h] with h the (1 + level)/2 quantile of the
/// centred exact law. Leaving `theta` empty substitutes sqrt(theta_sq_hat),
/// which makes the interval approximate (source = plug_in).
inline ConfidenceInterval exact_confidence_interval(const FitResult &fit, const DesignSummary &design,
                                                    std::optional<double> theta, Coefficient coefficient,
                                                    double level, SumOptions options = {}) {
  detail::check_level(level, "confidence level");
  ConfidenceInterval ci;
  const double th = detail::resolve_theta(fit, theta, ci.source);
  const EstimatorLaw law = law_for(design, th, coefficient, 0.0, options);
  const double h = law.half_width(level);
  ci.coefficient = coefficient;
  ci.estimate = coefficient_estimate(fit, coefficient);
  ci.lo = ci.estimate - h;
  ci.hi = ci.estimate + h;
  ci.level = level;
  ci.method = IntervalMethod::exact_uniform;
  ci.scale_parameter = th;
  return ci;
}

/// Rejects when |beta_j_hat| exceeds the 1 - alpha/2 quantile of the centred
/// law; p = 2 * P(W >= d |beta_j_hat|).
inline TestResult exact_test(const FitResult &fit, const DesignSummary &design, std::optional<double> theta,
                             Coefficient coefficient, double alpha, SumOptions options = {}) {
  detail::check_level(alpha, "significance level");
  TestResult out;
  const double th = detail::resolve_theta(fit, theta, out.source);
  const EstimatorLaw law = law_for(design, th, coefficient, 0.0, options);
  out.coefficient = coefficient;
  out.statistic = std::fabs(coefficient_estimate(fit, coefficient));
  out.critical_value = law.scale() * law.core().quantile(1.0 - 0.5 * alpha);
  out.p_value = std::clamp(2.0 * law.cdf_at(-out.statistic), 0.0, 1.0);
  out.reject = out.statistic > out.critical_value;
  out.alpha = alpha;
  out.method = IntervalMethod::exact_uniform;
  out.scale_parameter = th;
  return out;
}

struct NormalLaw {
  double mean = 0.0;
  double variance = 0.0;
};

/// Large-sample law: variance (theta^2/3) * S2/d for beta0, (theta^2/3) * n/d for beta1.
inline NormalLaw normal_approx_law(const DesignSummary &design, double theta, Coefficient coefficient,
                                   double center) {
  const double factor = coefficient == Coefficient::beta0 ? design.s2 : static_cast<double>(design.n);
  return {center, theta * theta / 3.0 * (factor / design.d)};
}

/// Standard error multiplier sqrt(S2/d) or sqrt(n/d), so sd = sigma * factor.
inline double gaussian_se_factor(const DesignSummary &design, Coefficient coefficient) {
  const double factor = coefficient == Coefficient::beta0 ? design.s2 : static_cast<double>(design.n);
  return std::sqrt(factor / design.d);
}

/// [beta_j_hat -/+ q_{1-alpha/2} sigma sqrt(S2/d or n/d)]. Leaving `sigma_sq`
/// empty uses the residual estimate ||r||^2 / (n - 2).
inline ConfidenceInterval gaussian_confidence_interval(const FitResult &fit, const DesignSummary &design,
                                                       std::optional<double> sigma_sq, Coefficient coefficient,
                                                       double level) {
  detail::check_level(level, "confidence level");
  ConfidenceInterval ci;
  const double s2 = detail::resolve_sigma_sq(fit, sigma_sq, ci.source);
  const double h = normal_quantile(0.5 * (1.0 + level)) * std::sqrt(s2) * gaussian_se_factor(design, coefficient);
  ci.coefficient = coefficient;
  ci.estimate = coefficient_estimate(fit, coefficient);
  ci.lo = ci.estimate - h;
  ci.hi = ci.estimate + h;
  ci.level = level;
  ci.method = IntervalMethod::gaussian_asymptotic;
  ci.scale_parameter = s2;
  return ci;
}

inline TestResult gaussian_test(const FitResult &fit, const DesignSummary &design, std::optional<double> sigma_sq,
                                Coefficient coefficient, double alpha) {
  detail::check_level(alpha, "significance level");
  TestResult out;
  const double s2 = detail::resolve_sigma_sq(fit, sigma_sq, out.source);
  const double se = std::sqrt(s2) * gaussian_se_factor(design, coefficient);
  out.coefficient = coefficient;
  out.statistic = std::fabs(coefficient_estimate(fit, coefficient));
  out.critical_value = normal_quantile(1.0 - 0.5 * alpha) * se;
  if (se > 0.0) {
    out.p_value = std::clamp(2.0 * normal_cdf(-out.statistic / se), 0.0, 1.0);
  } else {
    out.p_value = out.statistic > 0.0 ? 0.0 : 1.0;
  }
  out.reject = out.statistic > out.critical_value;
  out.alpha = alpha;
  out.method = IntervalMethod::gaussian_asymptotic;
  out.scale_parameter = s2;
  return out;
}

/// Asymptotic-normality condition quantities. The normal approximation is
/// trustworthy only when all three are small; each marginal one lies in (0, 1].
struct CltDiagnostics {
  double cond_beta0 = 0.0; // max|p_k|  / sqrt(d * S2)
  double cond_beta1 = 0.0; // max|p'_k| / sqrt(d * n)
  double cond_joint = 0.0; // S1 / (n * S2)
};

inline CltDiagnostics clt_diagnostics(const DesignSummary &design) {
  auto max_abs = [](std::span<const double> v) {
    double m = 0.0;
    for (double x : v) {
      m = std::max(m, std::fabs(x));
    }
    return m;
  };
  const double n = static_cast<double>(design.n);
  CltDiagnostics out;
  out.cond_beta0 = max_abs(design.p) / std::sqrt(design.d * design.s2);
  out.cond_beta1 = max_abs(design.p_prime) / std::sqrt(design.d * n);
  out.cond_joint = design.s1 / (n * design.s2);
  return out;
}

} // namespace uniform_lse
