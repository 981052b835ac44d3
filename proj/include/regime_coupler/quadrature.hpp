#pragma once

#include "regime_coupler/common.hpp"

#include <cmath>
#include <utility>

namespace rcoup {

namespace detail {

template <class F>
double simpson_slice(F& f, double a, double fa, double b, double fb, double m, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <class F>
double adaptive_simpson_rec(F& f, double a, double fa, double b, double fb, double m,
                            double fm, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson_slice(f, a, fa, m, fm, lm, flm);
  const double right = simpson_slice(f, m, fm, b, fb, rm, frm);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

// Adaptive Simpson with a relative error target. The absolute budget comes
// from a 64-panel pilot pass, so the tolerance means "relative to the whole
// integral", not per panel.
template <class F>
double adaptive_simpson(F&& f, double a, double b, double rel_tol, int max_depth = 42) {
  if (!(b >= a)) throw ConfigError("quadrature: inverted interval");
  if (a == b) return 0.0;
  double pilot = 0.0;
  {
    const int n = 64;
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    pilot = acc * h / 3.0;
  }
  const double tol = rel_tol * std::max(std::abs(pilot), 1e-300);
  const double m = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fm = f(m);
  const double whole = detail::simpson_slice(f, a, fa, b, fb, m, fm);
  return detail::adaptive_simpson_rec(f, a, fa, b, fb, m, fm, whole, tol, max_depth);
}

}  // namespace rcoup
