#pragma once

// Independent check of the closed-form uniform-sum density: iterated
// numerical convolution of box densities on a uniform grid. Only ever used
// to validate WeightedUniformSum; nothing in the inference path calls it.
//
// The two widest boxes are convolved analytically (a trapezoid, continuous
// and piecewise linear). Each further box of half-width a is applied as a
// moving average, g(t) = (Phi(t + a) - Phi(t - a)) / (2a), with Phi the
// exact antiderivative of the piecewise-linear interpolant of the current
// table. The error is O(step^2) per box.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "uniform_lse/errors.hpp"

namespace uniform_lse {

struct TabulatedDensity {
  double start = 0.0; // abscissa of values[0]
  double step = 0.0;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double x(std::size_t i) const noexcept { return start + step * static_cast<double>(i); }

  /// Trapezoid-rule integral of the table.
  double integral() const noexcept {
    double acc = 0.0;
    for (std::size_t i = 1; i < values.size(); ++i) {
      acc += 0.5 * (values[i - 1] + values[i]) * step;
    }
    return acc;
  }
};

/// Requires grid_step <= theta * min|w_k| / 8 over the nonzero weights.
inline TabulatedDensity grid_convolution_density(std::span<const double> weights, double theta, double grid_step) {
  if (!(theta > 0.0)) {
    throw DomainError("theta must be positive");
  }
  std::vector<double> half_widths;
  for (double w : weights) {
    if (w != 0.0) {
      half_widths.push_back(theta * std::fabs(w));
    }
  }
  if (half_widths.empty()) {
    throw DegenerateSum("all weights are zero");
  }
  std::sort(half_widths.begin(), half_widths.end(), std::greater<>());
  if (!(grid_step > 0.0) || grid_step > half_widths.back() / 8.0) {
    throw GridTooCoarse("grid step must be positive and at most theta * min|w| / 8");
  }

  double total = 0.0;
  for (double a : half_widths) {
    total += a;
  }
  const auto half_cells = static_cast<std::ptrdiff_t>(std::ceil(total / grid_step)) + 2;
  TabulatedDensity table;
  table.step = grid_step;
  table.start = -static_cast<double>(half_cells) * grid_step;
  table.values.assign(static_cast<std::size_t>(2 * half_cells + 1), 0.0);
  std::vector<double> &f = table.values;

  if (half_widths.size() == 1) {
    const double a = half_widths[0];
    for (std::size_t i = 0; i < f.size(); ++i) {
      f[i] = std::fabs(table.x(i)) < a ? 0.5 / a : 0.0;
    }
    return table;
  }

  const double a1 = half_widths[0];
  const double a2 = half_widths[1];
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double ramp = std::max(0.0, a1 + a2 - std::fabs(table.x(i)));
    f[i] = std::min(ramp, 2.0 * a2) / (4.0 * a1 * a2);
  }

  const std::size_t count = f.size();
  std::vector<double> cumulative(count);
  std::vector<double> next(count);
  for (std::size_t k = 2; k < half_widths.size(); ++k) {
    const double a = half_widths[k];
    cumulative[0] = 0.0;
    for (std::size_t i = 1; i < count; ++i) {
      cumulative[i] = cumulative[i - 1] + 0.5 * (f[i - 1] + f[i]) * grid_step;
    }
    // Antiderivative of the linear interpolant at an arbitrary abscissa.
    auto antiderivative = [&](double t) {
      const double pos = (t - table.start) / grid_step;
      if (pos <= 0.0) {
        return 0.0;
      }
      if (pos >= static_cast<double>(count - 1)) {
        return cumulative[count - 1];
      }
      const auto i = static_cast<std::size_t>(pos);
      const double r = pos - static_cast<double>(i);
      return cumulative[i] + grid_step * (f[i] * r + 0.5 * (f[i + 1] - f[i]) * r * r);
    };
    for (std::size_t i = 0; i < count; ++i) {
      const double t = table.x(i);
      next[i] = (antiderivative(t + a) - antiderivative(t - a)) / (2.0 * a);
    }
    f.swap(next);
  }
  return table;
}

} // namespace uniform_lse
