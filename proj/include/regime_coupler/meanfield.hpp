#pragma once

// Interacting-particle drift with regime-dependent coefficients, the
// lambda-split of a diagonal diffusion into a common-noise part and an
// independent channel, the comparison function G built from the radial
// drift bound, and the coupled frozen-regime simulation that checks the
// mean meeting-time bound E[T] <= G(|x-y|) / (2 lambda).

#include "regime_coupler/batch.hpp"
#include "regime_coupler/common.hpp"
#include "regime_coupler/coupling.hpp"
#include "regime_coupler/model.hpp"
#include "regime_coupler/quadrature.hpp"
#include "regime_coupler/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rcoup {

// ---------------------------------------------------------------------------
// parameters and drift

struct MeanFieldParams {
  int n_bodies = 1;
  std::vector<double> alpha;  // per-regime linear growth
  std::vector<double> beta;   // per-regime attraction to the empirical mean
  // Diagonal diffusion matrix, n_bodies x n_bodies.
  std::function<Mat(const Vec&, RegimeId)> sigma;
  double lambda0 = 1.0;  // ellipticity floor: lambda0 <= sigma_i^2 <= 1/lambda0
  double lambda = 0.0;   // split weight; 0 means "use lambda0 / 2"
  std::function<RateRow(const HistorySegment&, RegimeId)> rates;
  double rate_bound = 0.0;

  int regime_count() const { return static_cast<int>(alpha.size()); }
  double effective_lambda() const { return lambda > 0.0 ? lambda : 0.5 * lambda0; }
};

// b_i = alpha(k) x_i - x_i^3 - beta(k) (x_i - xbar). Cubic self-limitation
// plus linear pull toward the empirical mean of the bodies.
inline Vec mf_drift(const Vec& x, RegimeId k, const MeanFieldParams& p) {
  if (x.size() != p.n_bodies)
    throw ConfigError("mf_drift: state has " + std::to_string(x.size()) + " bodies, expected " +
                      std::to_string(p.n_bodies));
  if (k < 0 || k >= p.regime_count())
    throw ConfigError("mf_drift: regime " + std::to_string(regime_label(k)) + " out of range");
  const double xbar = x.mean();
  const double a = p.alpha[static_cast<std::size_t>(k)];
  const double b = p.beta[static_cast<std::size_t>(k)];
  Vec out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    out[i] = a * x[i] - x[i] * x[i] * x[i] - b * (x[i] - xbar);
  return out;
}

// ---------------------------------------------------------------------------
// lambda split of the diagonal diffusion

struct LambdaSplit {
  std::function<Mat(const Vec&, RegimeId)> sigma_lambda;  // diagonal, sqrt(sigma_i^2 - lambda)
  double lambda = 0.0;
};

namespace detail {

inline void require_diagonal(const Mat& s, const Vec& x, RegimeId k) {
  if (s.rows() != s.cols() || s.rows() != x.size())
    throw NumericError("diffusion matrix is " + std::to_string(s.rows()) + "x" +
                       std::to_string(s.cols()) + " for a " + std::to_string(x.size()) +
                       "-body state (regime " + std::to_string(regime_label(k)) + ")");
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (i != j && s(i, j) != 0.0)
        throw NumericError("diffusion matrix must be diagonal; entry (" + std::to_string(i) +
                           "," + std::to_string(j) + ") = " + fmt_g17(s(i, j)) + " at regime " +
                           std::to_string(regime_label(k)));
}

inline Mat split_matrix(const Mat& s, const Vec& x, RegimeId k, double lambda) {
  require_diagonal(s, x, k);
  Mat out = Mat::Zero(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double s2 = s(i, i) * s(i, i);
    if (!(s2 > lambda))
      throw NumericError("lambda split needs sigma_i^2 > lambda; got sigma^2 = " + fmt_g17(s2) +
                         " <= lambda = " + fmt_g17(lambda) + " (body " + std::to_string(i) +
                         ", regime " + std::to_string(regime_label(k)) + ")");
    out(i, i) = std::sqrt(s2 - lambda);
  }
  return out;
}

}  // namespace detail

// Splits sigma into sigma_lambda with lambda I + sigma_lambda^2 = sigma sigma^T.
// The identity is re-verified at the supplied sample points; any sampled
// sigma_i^2 <= lambda rejects the split.
inline LambdaSplit lambda_split(const std::function<Mat(const Vec&, RegimeId)>& sigma_fn,
                                double lambda,
                                const std::vector<std::pair<Vec, RegimeId>>& samples) {
  if (!sigma_fn) throw ConfigError("lambda_split: missing diffusion callback");
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw ConfigError("lambda_split: lambda must be positive and finite, got " + fmt_g17(lambda));
  for (const auto& [x, k] : samples) {
    const Mat s = sigma_fn(x, k);
    const Mat sl = detail::split_matrix(s, x, k, lambda);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double lhs = lambda + sl(i, i) * sl(i, i);
      const double rhs = s(i, i) * s(i, i);
      if (std::abs(lhs - rhs) > 1e-12 * std::max(1.0, std::abs(rhs)))
        throw NumericError("lambda split identity off by " + fmt_g17(lhs - rhs) + " at body " +
                           std::to_string(i));
    }
  }
  LambdaSplit out;
  out.lambda = lambda;
  out.sigma_lambda = [sigma_fn, lambda](const Vec& x, RegimeId k) {
    return detail::split_matrix(sigma_fn(x, k), x, k, lambda);
  };
  return out;
}

// ---------------------------------------------------------------------------
// sampled constants for the radial drift bound

// theta bounds the per-body split variance sigma_i^2 - lambda; lip_K bounds
// the Lipschitz constant of sigma_lambda; kappa = lip_K^2 + 2 max_k alpha(k)
// feeds the comparison function. All sampled maxima are inflated by 10% so
// the certificate does not ride on the exact sample set.
struct SplitEstimates {
  double theta = 0.0;
  double lip_K = 0.0;
  double kappa = 0.0;
};

inline SplitEstimates estimate_split_constants(const MeanFieldParams& p, std::uint64_t seed = 11,
                                               int n_samples = 256, double box = 4.0) {
  if (!p.sigma) throw ConfigError("estimate_split_constants: missing diffusion callback");
  const double lambda = p.effective_lambda();
  PathRng rng(seed, 0);
  std::vector<std::pair<Vec, Mat>> pts;  // state, sigma_lambda (first regime scan covers all)
  SplitEstimates est;
  std::vector<Vec> xs;
  for (int s = 0; s < n_samples; ++s) {
    Vec x(p.n_bodies);
    for (int i = 0; i < p.n_bodies; ++i) x[i] = rng.uniform(-box, box);
    xs.push_back(std::move(x));
  }
  for (RegimeId k = 0; k < p.regime_count(); ++k) {
    std::vector<Mat> sls;
    sls.reserve(xs.size());
    for (const Vec& x : xs) {
      Mat sl = detail::split_matrix(p.sigma(x, k), x, k, lambda);
      for (Eigen::Index i = 0; i < sl.rows(); ++i)
        est.theta = std::max(est.theta, sl(i, i) * sl(i, i));
      sls.push_back(std::move(sl));
    }
    for (std::size_t a = 0; a < xs.size(); ++a)
      for (std::size_t b = a + 1; b < xs.size(); ++b) {
        const double dx = (xs[a] - xs[b]).norm();
        if (dx < 1e-9) continue;
        est.lip_K = std::max(est.lip_K, (sls[a] - sls[b]).norm() / dx);
      }
  }
  est.theta *= 1.1;
  est.lip_K *= 1.1;
  const double amax = *std::max_element(p.alpha.begin(), p.alpha.end());
  est.kappa = est.lip_K * est.lip_K + 2.0 * std::max(0.0, amax);
  return est;
}

// ---------------------------------------------------------------------------
// comparison function G

struct GFunctionParams {
  double kappa = 1.0;
  double lambda = 1.0;
  double n_bodies = 1.0;
  double theta = 0.0;
};

// Radial drift bound: g(r) = (kappa / 4 lambda) r - r^3 / (16 N (lambda + theta)).
inline double g_fn(double r, const GFunctionParams& gp) {
  return gp.kappa / (4.0 * gp.lambda) * r -
         r * r * r / (16.0 * gp.n_bodies * (gp.lambda + gp.theta));
}

// Phi(v) = integral of g from 0 to v (explicit antiderivative).
inline double phi_fn(double v, const GFunctionParams& gp) {
  return gp.kappa / (8.0 * gp.lambda) * v * v -
         v * v * v * v / (64.0 * gp.n_bodies * (gp.lambda + gp.theta));
}

namespace detail {

inline void check_g_params(const GFunctionParams& gp) {
  if (!(gp.lambda > 0.0) || !(gp.n_bodies >= 1.0) || !(gp.kappa > 0.0) || !(gp.theta >= 0.0) ||
      !std::isfinite(gp.kappa) || !std::isfinite(gp.theta))
    throw ConfigError("G function needs kappa > 0, lambda > 0, n_bodies >= 1, theta >= 0");
}

// First v past the maximum of Phi where the log-integrand has dropped 40
// units below the peak. Past that point e^Phi contributes below any relative
// tolerance we accept, so the improper upper limit is truncated there.
inline double g_cutoff(const GFunctionParams& gp) {
  const double v_star = 2.0 * std::sqrt(gp.kappa * gp.n_bodies * (gp.lambda + gp.theta) / gp.lambda);
  const double phi_max = phi_fn(v_star, gp);
  if (phi_max > 650.0)
    throw NumericError("comparison function overflows: peak log-integrand " + fmt_g17(phi_max) +
                       " at v = " + fmt_g17(v_star) +
                       "; the mean coupling-time bound is astronomically large for these "
                       "coefficients");
  const double step = std::max(v_star, 1.0) / 64.0;
  double v = v_star;
  const double v_cap = v_star + 4096.0 * step;
  while (v < v_cap) {
    v += step;
    if (phi_fn(v, gp) <= phi_max - 40.0) return v;
  }
  throw NumericError("could not truncate the improper integral: log-integrand at v = " +
                     fmt_g17(v) + " is " + fmt_g17(phi_fn(v, gp)) + ", peak " + fmt_g17(phi_max));
}

// f(s) = e^{-Phi(s)} * int_s^inf e^{Phi(v)} dv, evaluated with the shift
// Phi(v) - Phi(s) folded into the integrand so nothing overflows.
inline double f_of_s(double s, const GFunctionParams& gp, double v_cut, double tol) {
  const double phi_s = phi_fn(s, gp);
  const double hi = std::max(v_cut, s + 1e-6);
  return adaptive_simpson([&](double v) { return std::exp(phi_fn(v, gp) - phi_s); }, s, hi, tol);
}

}  // namespace detail

// G(rho) = int_0^rho f(s) ds with f as above. Returns (G(rho), f(rho)); f is
// G' and feeds the drift-condition check. tol is the relative quadrature
// tolerance, must sit in (0, 1e-4].
inline std::pair<double, double> G_fn(double rho, const GFunctionParams& gp, double tol = 1e-8) {
  detail::check_g_params(gp);
  if (!(rho >= 0.0) || !std::isfinite(rho))
    throw ConfigError("G_fn: rho must be finite and nonnegative, got " + fmt_g17(rho));
  if (!(tol > 0.0) || tol > 1e-4)
    throw ConfigError("G_fn: tolerance must lie in (0, 1e-4], got " + fmt_g17(tol));
  const double v_cut = detail::g_cutoff(gp);
  const double f_rho = detail::f_of_s(rho, gp, v_cut, tol);
  if (rho == 0.0) return {0.0, f_rho};
  const double g_val = adaptive_simpson(
      [&](double s) { return detail::f_of_s(s, gp, v_cut, tol); }, 0.0, rho, tol);
  return {g_val, f_rho};
}

struct GFunctionTable {
  GFunctionParams params;
  std::vector<double> rho;
  std::vector<double> G;
  std::vector<double> f;  // G' at the same abscissae
  double G_infinity = 0.0;
  double v_cut = 0.0;
  double tol = 0.0;
};

inline GFunctionTable g_function_table(const GFunctionParams& gp, const std::vector<double>& grid,
                                       double tol = 1e-8) {
  detail::check_g_params(gp);
  if (grid.empty()) throw ConfigError("g_function_table: empty rho grid");
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    if (!(grid[i] < grid[i + 1])) throw ConfigError("g_function_table: rho grid not increasing");
  if (!(grid.front() >= 0.0)) throw ConfigError("g_function_table: rho grid starts below 0");
  GFunctionTable t;
  t.params = gp;
  t.tol = tol;
  t.v_cut = detail::g_cutoff(gp);
  t.rho = grid;
  // G accumulates panel by panel instead of restarting the outer integral
  // from 0 for every grid point.
  double acc = 0.0, prev = 0.0;
  if (grid.front() > 0.0)
    acc = adaptive_simpson([&](double s) { return detail::f_of_s(s, gp, t.v_cut, tol); }, 0.0,
                           grid.front(), tol);
  prev = grid.front();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] > prev) {
      acc += adaptive_simpson([&](double s) { return detail::f_of_s(s, gp, t.v_cut, tol); }, prev,
                              grid[i], tol);
      prev = grid[i];
    }
    t.G.push_back(acc);
    t.f.push_back(detail::f_of_s(grid[i], gp, t.v_cut, tol));
  }
  // Tail: past s_big the integrand f(s) ~ 1/|g(s)| ~ 16 N (lambda+theta)/s^3,
  // so the remaining mass is about 8 N (lambda+theta) / s_big^2.
  const double s_big = std::max({3.0 * t.v_cut, grid.back(), 10.0});
  double g_big = acc;
  if (s_big > prev)
    g_big += adaptive_simpson([&](double s) { return detail::f_of_s(s, gp, t.v_cut, tol); }, prev,
                              s_big, tol);
  t.G_infinity = g_big + 8.0 * gp.n_bodies * (gp.lambda + gp.theta) / (s_big * s_big);
  return t;
}

// ---------------------------------------------------------------------------
// model assembly

struct MfModel {
  ModelSpec model;
  LyapunovSpec lyapunov;
  double dissipation_K = 0.0;  // sampled max of (generator V + V), inflated 10%
};

namespace detail {

inline void check_mf_params(const MeanFieldParams& p) {
  if (p.n_bodies < 1) throw ConfigError("mean-field model needs at least one body");
  if (p.alpha.empty() || p.alpha.size() != p.beta.size())
    throw ConfigError("mean-field model: alpha and beta must list the same nonzero number of "
                      "regimes");
  for (std::size_t k = 0; k < p.alpha.size(); ++k) {
    if (!std::isfinite(p.alpha[k]) || !std::isfinite(p.beta[k]))
      throw ConfigError("mean-field model: non-finite coefficient at regime " +
                        std::to_string(k + 1));
    if (!(p.beta[k] >= 0.0))
      throw ConfigError("mean-field model: beta must be nonnegative, got " + fmt_g17(p.beta[k]) +
                        " at regime " + std::to_string(k + 1));
  }
  if (!(p.lambda0 > 0.0) || p.lambda0 > 1.0)
    throw ConfigError("mean-field model: ellipticity floor lambda0 must lie in (0, 1]");
  if (p.lambda != 0.0 && !(p.lambda > 0.0 && p.lambda < p.lambda0))
    throw ConfigError("mean-field model: lambda must lie in (0, lambda0)");
  if (!p.sigma) throw ConfigError("mean-field model: missing diffusion callback");
  if (!p.rates) throw ConfigError("mean-field model: missing rate callback");
  if (!(p.rate_bound >= 0.0)) throw ConfigError("mean-field model: negative rate bound");
}

}  // namespace detail

// Builds the simulation-facing spec. Ellipticity of the diagonal diffusion
// (lambda0 <= sigma_i^2 <= 1/lambda0) is spot-checked on seeded sample
// points and a violation rejects the model with the witness point in the
// message. The attached quadratic certificate V = |x|^2 + 1 gets its
// dissipation constant from a sampled scan of generator(V) + V.
inline MfModel mf_model(const MeanFieldParams& p, std::uint64_t seed = 7, int n_samples = 256,
                        double box = 4.0) {
  detail::check_mf_params(p);
  PathRng rng(seed, 1);
  for (int s = 0; s < n_samples; ++s) {
    Vec x(p.n_bodies);
    for (int i = 0; i < p.n_bodies; ++i) x[i] = rng.uniform(-box, box);
    for (RegimeId k = 0; k < p.regime_count(); ++k) {
      const Mat sig = p.sigma(x, k);
      detail::require_diagonal(sig, x, k);
      for (Eigen::Index i = 0; i < sig.rows(); ++i) {
        const double s2 = sig(i, i) * sig(i, i);
        if (s2 < p.lambda0 * (1.0 - 1e-12) || s2 > (1.0 + 1e-12) / p.lambda0)
          throw NumericError("diffusion is not uniformly elliptic: sigma_i^2 = " + fmt_g17(s2) +
                             " outside [" + fmt_g17(p.lambda0) + ", " + fmt_g17(1.0 / p.lambda0) +
                             "] at body " + std::to_string(i) + ", regime " +
                             std::to_string(regime_label(k)) + ", x = " + fmt_g17(x[i]));
      }
    }
  }

  MfModel out;
  out.model.dim = p.n_bodies;
  out.model.regime_count = p.regime_count();
  out.model.rate_bound = p.rate_bound;
  MeanFieldParams pc = p;  // captured by value; callbacks stay self-contained
  out.model.drift = [pc](const Vec& x, RegimeId k) { return mf_drift(x, k, pc); };
  out.model.diffusion = pc.sigma;
  out.model.rates = pc.rates;

  // V = |x|^2 + 1; generator V = 2 <b, x> + sum sigma_i^2. The cubic term
  // makes this -> -infinity, so a sampled max exists and certifies
  // generator V <= -V + K on the sampled box.
  LyapunovSpec lyap;
  lyap.V = [](const Vec& x, RegimeId) { return x.squaredNorm() + 1.0; };
  lyap.grad = [](const Vec& x, RegimeId) { return Vec(2.0 * x); };
  lyap.hess = [](const Vec& x, RegimeId) { return Mat(2.0 * Mat::Identity(x.size(), x.size())); };
  lyap.gamma_k.assign(p.alpha.size(), -1.0);
  out.lyapunov = lyap;

  double worst = 0.0;
  PathRng rng2(seed, 2);
  for (int s = 0; s < n_samples * 4; ++s) {
    Vec x(p.n_bodies);
    for (int i = 0; i < p.n_bodies; ++i) x[i] = rng2.uniform(-box, box);
    for (RegimeId k = 0; k < p.regime_count(); ++k) {
      const Vec b = mf_drift(x, k, p);
      const Mat sig = p.sigma(x, k);
      double gen = 2.0 * b.dot(x);
      for (Eigen::Index i = 0; i < sig.rows(); ++i) gen += sig(i, i) * sig(i, i);
      worst = std::max(worst, gen + x.squaredNorm() + 1.0);
    }
  }
  out.dissipation_K = worst * 1.1;
  return out;
}

// ---------------------------------------------------------------------------
// drift condition check

struct DriftCheckRow {
  double rho = 0.0;
  RegimeId regime = 0;
  double omega_value = 0.0;  // coupled radial generator applied to G
  double margin = 0.0;       // -2 lambda - omega_value; negative means violated
  double A_bar = 0.0;
  bool sandwich_ok = true;  // 4 lambda <= A_bar <= 4 (lambda + theta)
  double B = 0.0;
  double B_bound = 0.0;
  bool B_ok = true;
  bool ok = true;
};

struct DriftCheckReport {
  GFunctionParams gparams;
  double lambda = 0.0;
  double tol = 0.0;
  std::vector<DriftCheckRow> rows;
  bool all_ok() const {
    for (const auto& r : rows)
      if (!r.ok) return false;
    return !rows.empty();
  }
};

// Verifies Omega_k G(|x-z|) <= -2 lambda on a grid of separations. Pairs
// (x, z) straddle seeded base points along seeded unit directions; for each
// pair the exact coupled radial generator is
//   1/2 G'' A_bar + G'/(2 rho) (tr A - A_bar + 2 B)
// with A = 4 lambda e e^T + (sigma_l(x) - sigma_l(z))^2 and
// B = <x - z, b(x) - b(z)>. G'' comes from the ODE G'' = -1 - g G'.
// Also re-checks the two ingredient bounds the inequality rests on.
inline DriftCheckReport drift_condition_check(const MeanFieldParams& p,
                                              const std::vector<double>& rho_grid,
                                              int n_directions = 4, std::uint64_t seed = 23,
                                              double tol = 1e-6, double quad_tol = 1e-8,
                                              const SplitEstimates* est_in = nullptr) {
  detail::check_mf_params(p);
  if (rho_grid.empty()) throw ConfigError("drift_condition_check: empty separation grid");
  if (n_directions < 1) throw ConfigError("drift_condition_check: need at least one direction");
  const SplitEstimates est = est_in ? *est_in : estimate_split_constants(p);
  const double lambda = p.effective_lambda();
  GFunctionParams gp;
  gp.kappa = est.kappa;
  gp.lambda = lambda;
  gp.n_bodies = static_cast<double>(p.n_bodies);
  gp.theta = est.theta;
  const double v_cut = detail::g_cutoff(gp);

  DriftCheckReport rep;
  rep.gparams = gp;
  rep.lambda = lambda;
  rep.tol = tol;

  PathRng rng(seed, 3);
  for (double rho : rho_grid) {
    if (!(rho > 0.0))
      continue;  // x = z has no direction; the radial generator is not defined there
    const double f_rho = detail::f_of_s(rho, gp, v_cut, quad_tol);
    const double gpp = -1.0 - g_fn(rho, gp) * f_rho;
    for (int d = 0; d < n_directions; ++d) {
      Vec base(p.n_bodies), dir(p.n_bodies);
      for (int i = 0; i < p.n_bodies; ++i) {
        base[i] = rng.uniform(-2.0, 2.0);
        dir[i] = rng.normal();
      }
      if (dir.norm() < 1e-12) dir[0] = 1.0;
      dir /= dir.norm();
      const Vec x = base + 0.5 * rho * dir;
      const Vec z = base - 0.5 * rho * dir;
      for (RegimeId k = 0; k < p.regime_count(); ++k) {
        const Mat sx = detail::split_matrix(p.sigma(x, k), x, k, lambda);
        const Mat sz = detail::split_matrix(p.sigma(z, k), z, k, lambda);
        const Mat ds = sx - sz;
        const Vec e = (x - z) / rho;
        const double a_bar = 4.0 * lambda + (ds * e).squaredNorm();
        const double tr_a = 4.0 * lambda + ds.squaredNorm();
        const double B = (x - z).dot(mf_drift(x, k, p) - mf_drift(z, k, p));

        DriftCheckRow row;
        row.rho = rho;
        row.regime = k;
        row.A_bar = a_bar;
        row.B = B;
        row.omega_value = 0.5 * gpp * a_bar + f_rho / (2.0 * rho) * (tr_a - a_bar + 2.0 * B);
        row.margin = -2.0 * lambda - row.omega_value;
        row.sandwich_ok = a_bar >= 4.0 * lambda * (1.0 - 1e-12) &&
                          a_bar <= 4.0 * (lambda + est.theta) * (1.0 + 1e-12);
        row.B_bound = p.alpha[static_cast<std::size_t>(k)] * rho * rho -
                      rho * rho * rho * rho / (4.0 * p.n_bodies);
        row.B_ok = B <= row.B_bound + 1e-9 * std::max(1.0, std::abs(row.B_bound));
        row.ok = row.margin >= -tol * std::max(1.0, 2.0 * lambda) && row.sandwich_ok && row.B_ok;
        rep.rows.push_back(row);
      }
    }
  }
  if (rep.rows.empty())
    throw ConfigError("drift_condition_check: no usable separations (grid must contain rho > 0)");
  return rep;
}

// ---------------------------------------------------------------------------
// coupled frozen-regime simulation

struct MfCoupleRow {
  double rho0 = 0.0;     // initial separation
  double mean_T = 0.0;   // censored paths counted at the horizon
  double se = 0.0;
  double bound = 0.0;    // G(rho0) / (2 lambda)
  std::int64_t n_paths = 0;
  std::int64_t censored = 0;
  bool ok = true;        // mean_T <= bound + 3 se
};

struct MfCoupleSummary {
  double lambda = 0.0;
  GFunctionParams gparams;
  std::vector<MfCoupleRow> rows;
  bool all_ok() const {
    for (const auto& r : rows)
      if (!r.ok) return false;
    return !rows.empty();
  }
};

// Runs the lambda-split coupling for a frozen regime k: both bodies share
// the Brownian path on the sigma_lambda channel while the sqrt(lambda)
// channel of the second copy is reflected across the separation vector.
// Meeting is declared when |x - y| <= meet_eps, after which the copies are
// glued. Returns per-initial-pair mean meeting times next to the
// theoretical bound G(|x0 - y0|) / (2 lambda).
inline MfCoupleSummary mf_coupled_simulate(const MeanFieldParams& p, RegimeId k,
                                           const std::vector<std::pair<Vec, Vec>>& inits,
                                           const SimConfig& cfg, double quad_tol = 1e-8,
                                           const SplitEstimates* est_in = nullptr) {
  detail::check_mf_params(p);
  if (k < 0 || k >= p.regime_count())
    throw ConfigError("mf_coupled_simulate: regime out of range");
  if (inits.empty()) throw ConfigError("mf_coupled_simulate: no initial pairs");
  if (!(cfg.dt > 0.0) || !(cfg.horizon > 0.0) || cfg.n_paths < 1)
    throw ConfigError("mf_coupled_simulate: dt, horizon, n_paths must be positive");
  for (const auto& [x0, y0] : inits)
    if (x0.size() != p.n_bodies || y0.size() != p.n_bodies)
      throw ConfigError("mf_coupled_simulate: initial state has the wrong number of bodies");

  const SplitEstimates est = est_in ? *est_in : estimate_split_constants(p);
  const double lambda = p.effective_lambda();
  GFunctionParams gp;
  gp.kappa = est.kappa;
  gp.lambda = lambda;
  gp.n_bodies = static_cast<double>(p.n_bodies);
  gp.theta = est.theta;

  const double eps = cfg.effective_meet_eps();
  const double sqrt_dt = std::sqrt(cfg.dt);
  const double sqrt_lam = std::sqrt(lambda);
  const std::int64_t n_steps = static_cast<std::int64_t>(std::llround(cfg.horizon / cfg.dt));

  MfCoupleSummary out;
  out.lambda = lambda;
  out.gparams = gp;

  const std::int64_t total = static_cast<std::int64_t>(inits.size()) * cfg.n_paths;
  std::vector<double> meet_time(static_cast<std::size_t>(total), -1.0);
  parallel_paths(total, cfg.workers, [&](std::int64_t idx) {
    const std::size_t which = static_cast<std::size_t>(idx % static_cast<std::int64_t>(inits.size()));
    PathRng rng(cfg.seed, static_cast<std::uint64_t>(idx));
    Vec x = inits[which].first;
    Vec y = inits[which].second;
    if ((x - y).norm() <= eps) {
      meet_time[static_cast<std::size_t>(idx)] = 0.0;
      return;
    }
    for (std::int64_t n = 0; n < n_steps; ++n) {
      const Mat sx = detail::split_matrix(p.sigma(x, k), x, k, lambda);
      const Mat sy = detail::split_matrix(p.sigma(y, k), y, k, lambda);
      const Vec xi_w = rng.normal_vec(p.n_bodies);
      const Vec xi_b = rng.normal_vec(p.n_bodies);
      const Mat refl = reflection_matrix(x, y);
      const Vec bx = mf_drift(x, k, p);
      const Vec by = mf_drift(y, k, p);
      x += bx * cfg.dt + sqrt_dt * (sx * xi_w + sqrt_lam * xi_b);
      y += by * cfg.dt + sqrt_dt * (sy * xi_w + sqrt_lam * (refl * xi_b));
      if (!x.allFinite() || !y.allFinite())
        throw NumericError("mf_coupled_simulate: state diverged on path " + std::to_string(idx));
      if ((x - y).norm() <= eps) {
        meet_time[static_cast<std::size_t>(idx)] = static_cast<double>(n + 1) * cfg.dt;
        return;
      }
    }
  });

  for (std::size_t which = 0; which < inits.size(); ++which) {
    const double rho0 = (inits[which].first - inits[which].second).norm();
    MfCoupleRow row;
    row.rho0 = rho0;
    row.bound = G_fn(rho0, gp, quad_tol).first / (2.0 * lambda);
    double sum = 0.0, sumsq = 0.0;
    for (std::int64_t idx = static_cast<std::int64_t>(which); idx < total;
         idx += static_cast<std::int64_t>(inits.size())) {
      double t = meet_time[static_cast<std::size_t>(idx)];
      if (t < 0.0) {
        t = cfg.horizon;  // censored: counted at the horizon, so the mean is a lower estimate
        ++row.censored;
      }
      sum += t;
      sumsq += t * t;
      ++row.n_paths;
    }
    row.mean_T = sum / static_cast<double>(row.n_paths);
    const double var =
        std::max(0.0, sumsq / static_cast<double>(row.n_paths) - row.mean_T * row.mean_T);
    row.se = std::sqrt(var / static_cast<double>(row.n_paths));
    row.ok = row.mean_T <= row.bound + 3.0 * row.se;
    out.rows.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// worked one-dimensional models

// dX = X (a(k) - b(k) X) dt + sigma(k) X dB, clamped at 0 from below. The
// clamp runs through the model-level constrain hook, so every consumer of
// the spec honours positivity the same way.
inline ModelSpec logistic_model(const std::vector<double>& a, const std::vector<double>& b,
                                const std::vector<double>& sigma,
                                const std::vector<RateRow>& q_rows) {
  const std::size_t n = a.size();
  if (n == 0 || b.size() != n || sigma.size() != n || q_rows.size() != n)
    throw ConfigError("logistic model: a, b, sigma, and the rate table must list the same "
                      "nonzero number of regimes");
  double bound = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!(a[k] > 0.0) || !(b[k] > 0.0) || !(sigma[k] >= 0.0))
      throw ConfigError("logistic model: needs a > 0, b > 0, sigma >= 0 at regime " +
                        std::to_string(k + 1));
    for (const auto& e : q_rows[k]) {
      if (e.to < 0 || e.to >= static_cast<RegimeId>(n) || e.to == static_cast<RegimeId>(k))
        throw ConfigError("logistic model: bad rate target at regime " + std::to_string(k + 1));
      if (!(e.rate >= 0.0))
        throw ConfigError("logistic model: negative rate at regime " + std::to_string(k + 1));
    }
    bound = std::max(bound, row_sum(q_rows[k]));
  }
  ModelSpec m;
  m.dim = 1;
  m.regime_count = static_cast<int>(n);
  m.rate_bound = bound;
  m.drift = [a, b](const Vec& x, RegimeId k) {
    Vec out(1);
    out[0] = x[0] * (a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)] * x[0]);
    return out;
  };
  m.diffusion = [sigma](const Vec& x, RegimeId k) {
    Mat out(1, 1);
    out(0, 0) = sigma[static_cast<std::size_t>(k)] * x[0];
    return out;
  };
  m.rates = [q_rows](const HistorySegment&, RegimeId k) {
    return q_rows[static_cast<std::size_t>(k)];
  };
  m.constrain = [](Vec& x) {
    if (x[0] < 0.0) x[0] = 0.0;
  };
  return m;
}

// ---------------------------------------------------------------------------
// Ornstein-Uhlenbeck benchmark with closed-form marginals

struct OuOracle {
  std::vector<double> theta;
  std::vector<double> sigma;

  double stationary_variance(RegimeId k) const {
    const auto i = static_cast<std::size_t>(k);
    return sigma[i] * sigma[i] / (2.0 * theta[i]);
  }
  double stationary_density(double x, RegimeId k) const {
    const double v = stationary_variance(k);
    return std::exp(-x * x / (2.0 * v)) / std::sqrt(2.0 * kPi * v);
  }
  // Frozen-regime transition law from x0 over time t.
  double mean_at(double x0, double t, RegimeId k) const {
    return x0 * std::exp(-theta[static_cast<std::size_t>(k)] * t);
  }
  double var_at(double t, RegimeId k) const {
    const auto i = static_cast<std::size_t>(k);
    return sigma[i] * sigma[i] / (2.0 * theta[i]) *
           (1.0 - std::exp(-2.0 * theta[i] * t));
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
};

struct OuBenchmark {
  ModelSpec model;
  OuOracle oracle;
};

// dX = -theta(k) X dt + sigma(k) dB with a constant rate table. The oracle
// carries the per-regime transition and stationary laws for tests.
inline OuBenchmark ou_benchmark(const std::vector<double>& theta,
                                const std::vector<double>& sigma,
                                const std::vector<RateRow>& q_rows) {
  const std::size_t n = theta.size();
  if (n == 0 || sigma.size() != n || q_rows.size() != n)
    throw ConfigError("OU benchmark: theta, sigma, and the rate table must list the same "
                      "nonzero number of regimes");
  double bound = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!(theta[k] > 0.0) || !(sigma[k] > 0.0))
      throw ConfigError("OU benchmark: needs theta > 0 and sigma > 0 at regime " +
                        std::to_string(k + 1));
    for (const auto& e : q_rows[k]) {
      if (e.to < 0 || e.to >= static_cast<RegimeId>(n) || e.to == static_cast<RegimeId>(k))
        throw ConfigError("OU benchmark: bad rate target at regime " + std::to_string(k + 1));
      if (!(e.rate >= 0.0))
        throw ConfigError("OU benchmark: negative rate at regime " + std::to_string(k + 1));
    }
    bound = std::max(bound, row_sum(q_rows[k]));
  }
  OuBenchmark out;
  out.model.dim = 1;
  out.model.regime_count = static_cast<int>(n);
  out.model.rate_bound = bound;
  out.model.drift = [theta](const Vec& x, RegimeId k) {
    Vec v(1);
    v[0] = -theta[static_cast<std::size_t>(k)] * x[0];
    return v;
  };
  out.model.diffusion = [sigma](const Vec&, RegimeId k) {
    Mat m(1, 1);
    m(0, 0) = sigma[static_cast<std::size_t>(k)];
    return m;
  };
  out.model.rates = [q_rows](const HistorySegment&, RegimeId k) {
    return q_rows[static_cast<std::size_t>(k)];
  };
  out.oracle.theta = theta;
  out.oracle.sigma = sigma;
  return out;
}

}  // namespace rcoup
