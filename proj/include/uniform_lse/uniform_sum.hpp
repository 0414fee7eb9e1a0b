#pragma once

// Exact law of W = sum_k w_k * eps_k with eps_k iid U(-theta, theta).
//
// Each w_k * eps_k is U(-a_k, a_k) with a_k = theta * |w_k|, so the law only
// depends on the nonzero |w_k|. Writing W = 2U - A with U a sum of
// independent U(0, a_k) and A = sum a_k, the generalised Irwin-Hall formula
// gives
//
//   f_W(t) = 1 / (2 P theta^m (m-1)!) * sum_{k=0}^{m} (-1)^k
//            sum_{|S| = k} (t/2 + A/2 - theta * S)_+^{m-1}
//
// where S runs over the subset sums of the effective weights and P is their
// product. Evaluation works in normalised coordinates u = (t + A) / (2A), in
// which the widths b_k = |w_k| / sum|w| add up to one:
//
//   f_W(t) = g(u) / (2A),   g(u) = 1 / (prod b_k (m-1)!) * sum_S (-1)^|S| (u - S_b)_+^{m-1}
//   F_W(t) = G(u),          G(u) = 1 / (prod b_k m!)     * sum_S (-1)^|S| (u - S_b)_+^{m}
//
// Only u <= 1/2 is ever evaluated (the law is symmetric), which keeps the
// active subsets to those with S_b < 1/2 and bounds the cancellation in the
// alternating sum. Subset sums are enumerated meet-in-the-middle: two sorted
// tables of 2^ceil(m/2) and 2^floor(m/2) half-sums whose pairwise sums cover
// all 2^m subsets, so memory stays O(2^(m/2)) while each subset sum carries
// at most one extra rounding.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "uniform_lse/detail/summation.hpp"
#include "uniform_lse/errors.hpp"
#include "uniform_lse/normal.hpp"

namespace uniform_lse {

enum class Precision {
  standard, // double terms, TwoSum-compensated accumulation
  extended, // double-double terms and accumulation, roughly 10x slower
};

inline constexpr std::size_t default_exact_limit = 22;
/// Hard ceiling on the exact-mode term count, whatever the caller asks for.
inline constexpr std::size_t max_exact_limit = 30;

struct SumOptions {
  std::size_t exact_limit = default_exact_limit;
  Precision precision = Precision::standard;
};

namespace detail {

struct SignedSum {
  double hi;   // subset sum
  double lo;   // rounding error of hi (double-double tail)
  double sign; // (-1)^{subset size}
};

/// All 2^k subset sums of `widths` with parity signs, ascending.
inline std::vector<SignedSum> signed_subset_sums(std::span<const double> widths) {
  std::vector<SignedSum> out(std::size_t{1} << widths.size());
  out[0] = {0.0, 0.0, 1.0};
  std::size_t filled = 1;
  for (double w : widths) {
    for (std::size_t i = 0; i < filled; ++i) {
      const DoubleDouble s = DoubleDouble{out[i].hi, out[i].lo} + DoubleDouble{w};
      out[filled + i] = {s.hi, s.lo, -out[i].sign};
    }
    filled *= 2;
  }
  std::sort(out.begin(), out.end(), [](const SignedSum &a, const SignedSum &b) {
    return a.hi < b.hi || (a.hi == b.hi && a.lo < b.lo);
  });
  return out;
}

// Sum over subsets S with S < u of sign(S) * (u - S)^P, and optionally the
// same with exponent P + 1 (plus the sum of its magnitudes). `high` and `low`
// are the two ascending half tables. The inner loop alternates between two
// accumulators to break the serial dependency of compensated addition.
template <unsigned P, bool WithNext>
void power_sum_kernel(double u, std::span<const SignedSum> low, std::span<const SignedSum> high,
                      CompensatedSum &acc, CompensatedSum &acc_next, double &abs_next) {
  CompensatedSum acc_b;
  CompensatedSum acc_next_b;
  double abs_b = 0.0;
  auto term = [](double v, double sign, CompensatedSum &a, CompensatedSum &an, double &ab) {
    const double vp = ipow<P>(v);
    a.add(sign * vp);
    if constexpr (WithNext) {
      const double vn = vp * v;
      an.add(sign * vn);
      ab += vn;
    }
  };
  const std::size_t count = low.size();
  for (const SignedSum &h : high) {
    const double rest = u - h.hi;
    if (rest <= 0.0) {
      break;
    }
    std::size_t j = 0;
    for (; j + 1 < count; j += 2) {
      const double v0 = rest - low[j].hi;
      const double v1 = rest - low[j + 1].hi;
      if (v0 <= 0.0) {
        break;
      }
      term(v0, h.sign * low[j].sign, acc, acc_next, abs_next);
      if (v1 <= 0.0) {
        break;
      }
      term(v1, h.sign * low[j + 1].sign, acc_b, acc_next_b, abs_b);
    }
    if (j + 1 == count) {
      const double v = rest - low[j].hi;
      if (v > 0.0) {
        term(v, h.sign * low[j].sign, acc, acc_next, abs_next);
      }
    }
  }
  acc.merge(acc_b);
  if constexpr (WithNext) {
    acc_next.merge(acc_next_b);
    abs_next += abs_b;
  }
}

using PowerSumKernel = void (*)(double, std::span<const SignedSum>, std::span<const SignedSum>,
                                CompensatedSum &, CompensatedSum &, double &);

template <bool WithNext, std::size_t... P>
constexpr std::array<PowerSumKernel, sizeof...(P)> make_kernel_table(std::index_sequence<P...>) {
  return {&power_sum_kernel<static_cast<unsigned>(P), WithNext>...};
}

inline constexpr auto single_power_kernels =
    make_kernel_table<false>(std::make_index_sequence<max_exact_limit + 1>{});
inline constexpr auto paired_power_kernels =
    make_kernel_table<true>(std::make_index_sequence<max_exact_limit + 1>{});

inline void power_sum_extended(double u, unsigned power, bool with_next, std::span<const SignedSum> low,
                               std::span<const SignedSum> high, DoubleDouble &acc, DoubleDouble &acc_next,
                               double &abs_next) {
  for (const SignedSum &h : high) {
    const DoubleDouble rest = DoubleDouble{u} - DoubleDouble{h.hi, h.lo};
    if (rest.hi <= 0.0) {
      break;
    }
    for (const SignedSum &l : low) {
      const DoubleDouble v = rest - DoubleDouble{l.hi, l.lo};
      if (v.hi <= 0.0) {
        break;
      }
      const double sign = h.sign * l.sign;
      const DoubleDouble vp = pow_int(v, power);
      acc += DoubleDouble{sign * vp.hi, sign * vp.lo};
      if (with_next) {
        const DoubleDouble vn = vp * v;
        acc_next += DoubleDouble{sign * vn.hi, sign * vn.lo};
        abs_next += vn.hi;
      }
    }
  }
}

} // namespace detail

class WeightedUniformSum;
WeightedUniformSum make_sum(std::span<const double> weights, double theta, SumOptions options = {});

/// Law of sum_k w_k eps_k, eps_k iid U(-theta, theta). Immutable; all
/// evaluation methods are const and may be called concurrently.
class WeightedUniformSum {
public:
  const std::vector<double> &raw_weights() const noexcept { return raw_; }
  /// Nonzero |w_k|, ascending.
  const std::vector<double> &eff_weights() const noexcept { return eff_; }
  std::size_t m() const noexcept { return eff_.size(); }
  double theta() const noexcept { return theta_; }
  /// W is supported on [-half_support, half_support].
  double half_support() const noexcept { return half_support_; }
  double weight_product() const noexcept { return std::exp(log_weight_product_); }
  double log_weight_product() const noexcept { return log_weight_product_; }
  Precision precision() const noexcept { return precision_; }

  double density(double t) const {
    if (std::isnan(t)) {
      return t;
    }
    const double at = std::fabs(t);
    if (!(at < half_support_)) {
      return 0.0;
    }
    const double u = (half_support_ - at) / (2.0 * half_support_);
    return scaled(power_sum(u, m() - 1), density_scale_, log_density_scale_);
  }

  double cdf(double t) const {
    if (std::isnan(t)) {
      return t;
    }
    if (t == 0.0) {
      return 0.5;
    }
    if (t <= -half_support_) {
      return 0.0;
    }
    if (t >= half_support_) {
      return 1.0;
    }
    const double lower = lower_tail(std::fabs(t));
    return t < 0.0 ? lower : 1.0 - lower;
  }

  /// Point t with cdf(t) = q. Bracketed Newton iteration in the normalised
  /// coordinate, falling back to bisection whenever a Newton step leaves the
  /// bracket or converges too slowly. Accurate to the rounding noise of the
  /// CDF itself, or about 1e-12 * half_support, whichever is larger.
  double quantile(double q) const {
    if (!(q > 0.0 && q < 1.0)) {
      throw DomainError("quantile level must lie in (0, 1)");
    }
    if (q == 0.5) {
      return 0.0;
    }
    if (q > 0.5) {
      return -lower_quantile(1.0 - q);
    }
    return lower_quantile(q);
  }

  /// (theta^2 / 3) * sum w_k^2.
  double variance() const {
    detail::CompensatedSum acc;
    for (double w : eff_) {
      acc.add(w * w);
    }
    return theta_ * theta_ / 3.0 * acc.value();
  }

  /// Sorted distinct knot positions -half_support * (1 - 2 S_b), where the
  /// density changes polynomial piece. Enumerates all 2^m subsets.
  std::vector<double> knots() const {
    if (m() > 20) {
      throw ExactModeTooLarge(m(), 20);
    }
    std::vector<double> out;
    out.reserve((low_.size() * high_.size()));
    for (const auto &h : high_) {
      for (const auto &l : low_) {
        out.push_back(half_support_ * (2.0 * (h.hi + l.hi) - 1.0));
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

private:
  friend WeightedUniformSum make_sum(std::span<const double>, double, SumOptions);

  WeightedUniformSum() = default;

  // Lower tail F(-a) for 0 < a < half_support.
  double lower_tail(double a) const {
    const double u = (half_support_ - a) / (2.0 * half_support_);
    return std::clamp(scaled(power_sum(u, m()), cdf_scale_, log_cdf_scale_), 0.0, 0.5);
  }

  // sum * scale, through logarithms when the scale itself is not
  // representable (extremely disparate weights).
  static double scaled(detail::DoubleDouble sum, detail::DoubleDouble scale, double log_scale) {
    if (!(sum.hi > 0.0)) {
      return 0.0;
    }
    if (std::isfinite(scale.hi) && scale.hi > 0x1.0p-960) {
      return (sum * scale).to_double();
    }
    return std::exp(std::log(sum.to_double()) + log_scale);
  }

  detail::DoubleDouble power_sum(double u, std::size_t power) const {
    if (precision_ == Precision::extended) {
      detail::DoubleDouble acc;
      detail::DoubleDouble unused;
      double unused_abs = 0.0;
      detail::power_sum_extended(u, static_cast<unsigned>(power), false, low_, high_, acc, unused, unused_abs);
      return acc;
    }
    detail::CompensatedSum acc;
    detail::CompensatedSum unused;
    double unused_abs = 0.0;
    detail::single_power_kernels[power](u, low_, high_, acc, unused, unused_abs);
    return acc.value();
  }

  struct UnitEvaluation {
    double cdf;     // G(u)
    double density; // G'(u)
    double noise;   // rounding-error bound on cdf
  };

  // G(u) and G'(u) in normalised coordinates, one enumeration pass.
  UnitEvaluation evaluate_unit(double u) const {
    detail::DoubleDouble lower;
    detail::DoubleDouble upper;
    double abs_upper = 0.0;
    double unit_roundoff = 0.0;
    const auto power = static_cast<unsigned>(m() - 1);
    if (precision_ == Precision::extended) {
      detail::DoubleDouble acc;
      detail::DoubleDouble acc_next;
      detail::power_sum_extended(u, power, true, low_, high_, acc, acc_next, abs_upper);
      lower = acc;
      upper = acc_next;
      unit_roundoff = 0x1.0p-104;
    } else {
      detail::CompensatedSum acc;
      detail::CompensatedSum acc_next;
      detail::paired_power_kernels[power](u, low_, high_, acc, acc_next, abs_upper);
      lower = acc.value();
      upper = acc_next.value();
      unit_roundoff = 0x1.0p-53;
    }
    const double two_a = 2.0 * half_support_;
    const double noise = (static_cast<double>(m()) + 4.0) * unit_roundoff * scaled(abs_upper, cdf_scale_, log_cdf_scale_);
    return {scaled(upper, cdf_scale_, log_cdf_scale_), scaled(lower, density_scale_, log_density_scale_) * two_a,
            std::max(noise, 0x1.0p-53 * 0.5)};
  }

  // Solves G(u) = q on (0, 1/2) for 0 < q < 1/2. Stops when the bracket is
  // below 1e-12 * half_support (in t-units), when a Newton step becomes
  // negligible, or when |G(u) - q| is within the rounding-error bound of G,
  // after which no further iteration can be trusted to improve u.
  double lower_quantile(double q) const {
    constexpr double bracket_tol = 5e-13;
    double lo = 0.0;
    double hi = 0.5;
    double u = initial_guess(q);
    double best_u = u;
    double best_f = std::numeric_limits<double>::infinity();
    double dx_old = hi - lo;
    double dx = dx_old;
    for (int iter = 0; iter < 300; ++iter) {
      const UnitEvaluation e = evaluate_unit(u);
      const double f = e.cdf - q;
      if (std::fabs(f) < std::fabs(best_f)) {
        best_u = u;
        best_f = f;
      }
      if (f == 0.0) {
        break;
      }
      (f < 0.0 ? lo : hi) = u;
      const bool can_newton = e.density > 1e-12;
      const double candidate = can_newton ? u - f / e.density : lo - 1.0;
      // A step below the resolution of u means u is already the root.
      if (can_newton && std::fabs(candidate - u) <= 2.0 * std::numeric_limits<double>::epsilon() * u) {
        break;
      }
      const bool in_bracket = candidate > lo && candidate < hi;
      // Two ulps of q: below that, f = cdf - q carries no information.
      const double noise = std::max(e.noise, 2.0 * std::numeric_limits<double>::epsilon() * q);
      if (std::fabs(f) <= noise || hi - lo <= bracket_tol) {
        if (in_bracket) {
          best_u = candidate;
        }
        break;
      }
      const double previous = u;
      if (in_bracket && std::fabs(2.0 * f) <= std::fabs(dx_old * e.density)) {
        u = candidate;
      } else {
        u = 0.5 * (lo + hi);
      }
      dx_old = dx;
      dx = u - previous;
    }
    return half_support_ * (2.0 * best_u - 1.0);
  }

  double initial_guess(double q) const {
    // Below the narrowest width only the empty subset is active, so
    // G(u) = u^m / (prod b m!) is exact there.
    const double tail = std::exp((std::log(q) + log_cdf_norm_inverse_) / static_cast<double>(m()));
    if (tail < unit_widths_.front()) {
      return tail;
    }
    // Normal approximation with the Cornish-Fisher kurtosis term; each box
    // U(-b/2, b/2) has variance b^2 / 12 and fourth cumulant -b^4 / 120.
    detail::CompensatedSum b2;
    detail::CompensatedSum b4;
    for (double b : unit_widths_) {
      b2.add(b * b);
      b4.add(b * b * b * b);
    }
    const double var = b2.value() / 12.0;
    const double excess_kurtosis = -b4.value() / 120.0 / (var * var);
    const double z = normal_quantile(q);
    const double guess = 0.5 + std::sqrt(var) * (z + excess_kurtosis / 24.0 * (z * z * z - 3.0 * z));
    if (guess > 0.0 && guess < 0.5) {
      return guess;
    }
    return 0.25;
  }

  std::vector<double> raw_;
  std::vector<double> eff_;
  std::vector<double> unit_widths_; // eff / sum(eff), ascending
  std::vector<detail::SignedSum> low_;
  std::vector<detail::SignedSum> high_;
  double theta_ = 1.0;
  double half_support_ = 0.0;
  double log_weight_product_ = 0.0;
  // 1 / (prod b (m-1)! 2 half_support) and 1 / (prod b m!), with logs.
  detail::DoubleDouble density_scale_;
  double log_density_scale_ = 0.0;
  detail::DoubleDouble cdf_scale_;
  double log_cdf_scale_ = 0.0;
  double log_cdf_norm_inverse_ = 0.0; // log(prod b * m!)
  Precision precision_ = Precision::standard;
};

/// Canonicalises the weights (drops zeros, takes magnitudes, sorts) and
/// precomputes the half-sum tables. Throws DegenerateSum for an all-zero
/// vector and ExactModeTooLarge when more than `options.exact_limit`
/// weights are nonzero.
inline WeightedUniformSum make_sum(std::span<const double> weights, double theta, SumOptions options) {
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw DomainError("theta must be positive and finite");
  }
  WeightedUniformSum s;
  s.raw_.assign(weights.begin(), weights.end());
  for (double w : weights) {
    if (!std::isfinite(w)) {
      throw DomainError("weights must be finite");
    }
    if (w != 0.0) {
      s.eff_.push_back(std::fabs(w));
    }
  }
  if (s.eff_.empty()) {
    throw DegenerateSum("all weights are zero");
  }
  const std::size_t limit = std::min(options.exact_limit, max_exact_limit);
  if (s.eff_.size() > limit) {
    throw ExactModeTooLarge(s.eff_.size(), limit);
  }
  std::sort(s.eff_.begin(), s.eff_.end());
  s.theta_ = theta;
  s.precision_ = options.precision;

  const std::size_t m = s.eff_.size();
  const double total = detail::compensated_sum(s.eff_);
  s.half_support_ = theta * total;

  double log_prod_b = 0.0;
  s.log_weight_product_ = 0.0;
  for (double w : s.eff_) {
    const double b = w / total;
    s.unit_widths_.push_back(b);
    log_prod_b += std::log(b);
    s.log_weight_product_ += std::log(w);
  }

  const std::size_t low_count = (m + 1) / 2;
  s.low_ = detail::signed_subset_sums(std::span(s.unit_widths_).first(low_count));
  s.high_ = detail::signed_subset_sums(std::span(s.unit_widths_).subspan(low_count));

  const double md = static_cast<double>(m);
  s.log_density_scale_ = -log_prod_b - std::lgamma(md) - std::log(2.0 * s.half_support_);
  s.log_cdf_scale_ = -log_prod_b - std::lgamma(md + 1.0);
  // Direct products keep the constants at double-double accuracy; exp of
  // the log form would carry a relative error of |log scale| * eps.
  detail::DoubleDouble prod_b(1.0);
  for (double b : s.unit_widths_) {
    prod_b *= b;
  }
  detail::DoubleDouble fact_m1(1.0);
  for (std::size_t k = 2; k < m; ++k) {
    fact_m1 *= static_cast<double>(k);
  }
  const detail::DoubleDouble base = prod_b * fact_m1;
  if (base.hi > 0x1.0p-960) {
    s.density_scale_ = detail::reciprocal(base * detail::DoubleDouble(2.0 * s.half_support_));
    s.cdf_scale_ = detail::reciprocal(base * detail::DoubleDouble(md));
  } else {
    s.density_scale_ = std::numeric_limits<double>::infinity();
    s.cdf_scale_ = std::numeric_limits<double>::infinity();
  }
  s.log_cdf_norm_inverse_ = log_prod_b + std::lgamma(md + 1.0);
  return s;
}

inline WeightedUniformSum make_sum(std::initializer_list<double> weights, double theta, SumOptions options = {}) {
  return make_sum(std::span<const double>(weights.begin(), weights.size()), theta, options);
}

inline double density(const WeightedUniformSum &sum, double t) { return sum.density(t); }
inline double cdf(const WeightedUniformSum &sum, double t) { return sum.cdf(t); }
inline double quantile(const WeightedUniformSum &sum, double q) { return sum.quantile(q); }
inline double variance(const WeightedUniformSum &sum) { return sum.variance(); }

/// The subset sums of the generalised Irwin-Hall formula grouped by subset
/// size, in the original (unnormalised) weight units.
struct CombinationTermTable {
  std::size_t m = 0;
  std::vector<std::vector<double>> sums_by_size; // [k] holds binomial(m, k) sums
  /// log of 1 / (2 * prod(w) * theta^m * (m-1)!)
  double log_prefactor = 0.0;

  static double sign(std::size_t k) noexcept { return k % 2 == 0 ? 1.0 : -1.0; }

  std::size_t total_terms() const noexcept {
    std::size_t total = 0;
    for (const auto &level : sums_by_size) {
      total += level.size();
    }
    return total;
  }
};

/// Materialises every subset sum (2^m entries). Capped at `limit` terms.
inline CombinationTermTable build_term_table(const WeightedUniformSum &sum, std::size_t limit = 16) {
  const std::size_t m = sum.m();
  if (m > limit) {
    throw ExactModeTooLarge(m, limit);
  }
  CombinationTermTable table;
  table.m = m;
  table.sums_by_size.resize(m + 1);
  const auto &w = sum.eff_weights();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
    detail::CompensatedSum s;
    for (std::size_t k = 0; k < m; ++k) {
      if ((mask >> k) & 1U) {
        s.add(w[k]);
      }
    }
    table.sums_by_size[static_cast<std::size_t>(std::popcount(mask))].push_back(s.value());
  }
  for (auto &level : table.sums_by_size) {
    std::sort(level.begin(), level.end());
  }
  const double md = static_cast<double>(m);
  table.log_prefactor =
      -(std::log(2.0) + sum.log_weight_product() + md * std::log(sum.theta()) + std::lgamma(md));
  return table;
}

/// The generalised Irwin-Hall density evaluated literally from the term
/// table: prefactor * sum_k (-1)^k sum_l (t/2 + theta*sum(w)/2 - theta*S_kl)_+^(m-1).
/// Uncompensated and unreflected, so only suitable for small m.
inline double density_from_table(const CombinationTermTable &table, double theta, double weight_total, double t) {
  double acc = 0.0;
  const auto power = static_cast<unsigned>(table.m - 1);
  for (std::size_t k = 0; k <= table.m; ++k) {
    for (double s : table.sums_by_size[k]) {
      const double base = t / 2.0 + theta * weight_total / 2.0 - theta * s;
      if (base > 0.0) {
        acc += CombinationTermTable::sign(k) * detail::ipow(base, power);
      }
    }
  }
  return std::max(0.0, acc * std::exp(table.log_prefactor));
}

} // namespace uniform_lse
