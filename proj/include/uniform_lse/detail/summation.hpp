#pragma once

#include <cmath>
#include <iterator>
#include <ranges>

namespace uniform_lse::detail {

/// Compensated summation (Ogita-Rump-Oishi Sum2): the rounding error of
/// every addition is recovered exactly with Knuth's branch-free TwoSum and
/// accumulated separately. As accurate as Neumaier's variant without its
/// data-dependent branch.
class CompensatedSum {
public:
  constexpr CompensatedSum() = default;
  constexpr explicit CompensatedSum(double init) : sum_(init) {}

  void add(double value) noexcept {
    const double t = sum_ + value;
    const double bb = t - sum_;
    comp_ += (sum_ - (t - bb)) + (value - bb);
    sum_ = t;
  }

  CompensatedSum &operator+=(double value) noexcept {
    add(value);
    return *this;
  }

  double value() const noexcept { return sum_ + comp_; }

  void merge(const CompensatedSum &other) noexcept {
    add(other.sum_);
    comp_ += other.comp_;
  }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

template <std::ranges::input_range R>
double compensated_sum(R &&values) {
  CompensatedSum acc;
  for (double v : values) {
    acc.add(v);
  }
  return acc.value();
}

// Error-free transformations.

struct TwoTerm {
  double hi;
  double lo;
};

inline TwoTerm two_sum(double a, double b) noexcept {
  const double s = a + b;
  const double bb = s - a;
  const double err = (a - (s - bb)) + (b - bb);
  return {s, err};
}

inline TwoTerm quick_two_sum(double a, double b) noexcept {
  const double s = a + b;
  return {s, b - (s - a)};
}

inline TwoTerm two_prod(double a, double b) noexcept {
  const double p = a * b;
  return {p, std::fma(a, b, -p)};
}

/// Unevaluated sum hi + lo with |lo| <= ulp(hi)/2, about 106 bits of
/// significand. Only the handful of operations the exact sums need.
struct DoubleDouble {
  double hi = 0.0;
  double lo = 0.0;

  constexpr DoubleDouble() = default;
  constexpr DoubleDouble(double h) : hi(h) {} // NOLINT(google-explicit-constructor)
  constexpr DoubleDouble(double h, double l) : hi(h), lo(l) {}

  double to_double() const noexcept { return hi + lo; }

  friend DoubleDouble operator+(DoubleDouble a, DoubleDouble b) noexcept {
    TwoTerm s = two_sum(a.hi, b.hi);
    TwoTerm t = two_sum(a.lo, b.lo);
    s.lo += t.hi;
    s = quick_two_sum(s.hi, s.lo);
    s.lo += t.lo;
    s = quick_two_sum(s.hi, s.lo);
    return {s.hi, s.lo};
  }

  friend DoubleDouble operator-(DoubleDouble a) noexcept { return {-a.hi, -a.lo}; }

  friend DoubleDouble operator-(DoubleDouble a, DoubleDouble b) noexcept { return a + (-b); }

  friend DoubleDouble operator*(DoubleDouble a, DoubleDouble b) noexcept {
    TwoTerm p = two_prod(a.hi, b.hi);
    p.lo += a.hi * b.lo + a.lo * b.hi;
    p = quick_two_sum(p.hi, p.lo);
    return {p.hi, p.lo};
  }

  DoubleDouble &operator+=(DoubleDouble other) noexcept { return *this = *this + other; }
  DoubleDouble &operator*=(DoubleDouble other) noexcept { return *this = *this * other; }
};

/// 1 / x to double-double accuracy (one correction step).
inline DoubleDouble reciprocal(DoubleDouble x) noexcept {
  const double q1 = 1.0 / x.hi;
  const DoubleDouble r = DoubleDouble(1.0) - x * DoubleDouble(q1);
  const double q2 = r.hi / x.hi;
  const TwoTerm q = quick_two_sum(q1, q2);
  return {q.hi, q.lo};
}

inline DoubleDouble pow_int(DoubleDouble base, unsigned exponent) noexcept {
  DoubleDouble result{1.0};
  while (exponent != 0) {
    if ((exponent & 1U) != 0) {
      result *= base;
    }
    exponent >>= 1U;
    if (exponent != 0) {
      base *= base;
    }
  }
  return result;
}

/// x^P with the multiplication chain fixed at compile time.
template <unsigned P> constexpr double ipow(double x) noexcept {
  if constexpr (P == 0) {
    return 1.0;
  } else if constexpr (P == 1) {
    return x;
  } else {
    const double half = ipow<P / 2>(x);
    if constexpr (P % 2 == 0) {
      return half * half;
    } else {
      return half * half * x;
    }
  }
}

inline double ipow(double x, unsigned exponent) noexcept {
  double result = 1.0;
  while (exponent != 0) {
    if ((exponent & 1U) != 0) {
      result *= x;
    }
    exponent >>= 1U;
    if (exponent != 0) {
      x *= x;
    }
  }
  return result;
}

} // namespace uniform_lse::detail
