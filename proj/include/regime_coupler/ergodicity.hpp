#pragma once

#include "regime_coupler/batch.hpp"
#include "regime_coupler/common.hpp"
#include "regime_coupler/coupling.hpp"
#include "regime_coupler/model.hpp"
#include "regime_coupler/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <vector>

namespace rcoup {

// One starting configuration for a coupled pair.
struct CoupledInit {
  HistorySegment phi;
  HistorySegment psi;
  RegimeId k = 0;
  RegimeId l = 0;
};

// Pooled empirical survival of the coupling time. Censored paths (horizon
// reached first, or aborted) count as T > horizon throughout, which keeps
// every downstream bound on the safe side.
struct TailCurve {
  std::vector<double> times;
  std::vector<double> survival;
  std::vector<double> se;
  std::int64_t n_paths = 0;
  std::int64_t n_censored = 0;
  std::int64_t n_diverged = 0;
  double horizon = 0.0;
  bool all_censored_warning = false;
  std::vector<double> samples;  // observed coupling times, sorted ascending

  double survival_gt(double t) const {
    const auto it = std::upper_bound(samples.begin(), samples.end(), t);
    const auto above = static_cast<std::int64_t>(samples.end() - it) + n_censored;
    return static_cast<double>(above) / static_cast<double>(n_paths);
  }

  double survival_ge(double t) const {
    const auto it = std::lower_bound(samples.begin(), samples.end(), t);
    const auto above = static_cast<std::int64_t>(samples.end() - it) + n_censored;
    return static_cast<double>(above) / static_cast<double>(n_paths);
  }

  double binomial_se(double p) const {
    return std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(n_paths));
  }
};

// Pools raw coupling times (negative = censored at the horizon) into a
// survival curve on an even time grid.
inline TailCurve tail_from_times(const std::vector<double>& raw_times, double horizon,
                                 int grid_points = 201, std::int64_t n_diverged = 0) {
  if (grid_points < 2) throw ConfigError("tail curve: need at least two grid points");
  TailCurve tail;
  tail.n_paths = static_cast<std::int64_t>(raw_times.size());
  tail.horizon = horizon;
  tail.n_diverged = n_diverged;
  for (double t : raw_times) {
    if (t >= 0.0)
      tail.samples.push_back(t);
    else
      ++tail.n_censored;
  }
  std::sort(tail.samples.begin(), tail.samples.end());
  tail.all_censored_warning = tail.samples.empty();

  tail.times.resize(static_cast<std::size_t>(grid_points));
  tail.survival.resize(static_cast<std::size_t>(grid_points));
  tail.se.resize(static_cast<std::size_t>(grid_points));
  for (int j = 0; j < grid_points; ++j) {
    const double t = horizon * static_cast<double>(j) / static_cast<double>(grid_points - 1);
    const double p = tail.survival_gt(t);
    tail.times[static_cast<std::size_t>(j)] = t;
    tail.survival[static_cast<std::size_t>(j)] = p;
    tail.se[static_cast<std::size_t>(j)] = tail.binomial_se(p);
  }
  return tail;
}

// Runs cfg.n_paths coupled simulations (inits round-robin) and pools the
// coupling times into a survival curve on an even time grid.
inline TailCurve estimate_tail(const ModelSpec& m, const std::vector<CoupledInit>& inits,
                               const SimConfig& cfg, int grid_points = 201) {
  if (inits.empty()) throw ConfigError("estimate_tail: need at least one initial pair");
  if (cfg.n_paths < 100)
    throw ConfigError("estimate_tail: need at least 100 paths for a usable curve");

  const std::size_t total = static_cast<std::size_t>(cfg.n_paths);
  std::vector<double> times(total, -1.0);   // -1: censored
  std::vector<std::uint8_t> diverged(total, 0);
  parallel_paths(total, cfg.workers, [&](std::size_t i) {
    const CoupledInit& init = inits[i % inits.size()];
    PathRng rng(cfg.seed, i);
    SimConfig one = cfg;
    one.n_paths = 1;
    const CoupledPath p =
        simulate_coupled(m, init.phi, init.k, init.psi, init.l, one, rng, /*record=*/false);
    if (p.diverged() || p.hit_state_cap()) diverged[i] = 1;
    if (p.final.couple_time) times[i] = *p.final.couple_time;
  });

  std::int64_t n_div = 0;
  for (std::size_t i = 0; i < total; ++i) n_div += diverged[i];
  return tail_from_times(times, cfg.horizon, grid_points, n_div);
}

struct TvBound {
  double bound = 0.0;  // 2 P(T > t), capped nowhere: TV <= 2 is automatic
  double se = 0.0;
};

// Coupling inequality: the variation distance between the two time-t laws
// is at most twice the coupling-tail probability.
inline TvBound tv_upper_bound(const TailCurve& tail, double t) {
  if (!(t >= 0.0)) throw ConfigError("tv_upper_bound: time must be >= 0");
  const double p = tail.survival_gt(t);
  return {2.0 * p, 2.0 * tail.binomial_se(p)};
}

// ---------------------------------------------------------------------------
// exponential tail fit

struct BetaFit {
  bool available = false;
  double beta_hat = 0.0;
  double gamma_hat = 0.0;
  double beta_se = 0.0;
  double rmse = 0.0;  // residual of the log-linear fit
  int points_used = 0;
  double t_min_used = 0.0;
};

// Least squares of log(2 survival) against time on the tail region. Only
// grid points with survival strictly inside (0,1) enter; t_min < 0 picks
// the first grid time where survival has dropped to 1/2.
inline BetaFit fit_beta(const TailCurve& tail, double t_min = -1.0) {
  BetaFit fit;
  if (t_min < 0.0) {
    t_min = 0.0;
    for (std::size_t j = 0; j < tail.times.size(); ++j)
      if (tail.survival[j] <= 0.5) {
        t_min = tail.times[j];
        break;
      }
  }
  fit.t_min_used = t_min;

  std::vector<double> ts, ys;
  for (std::size_t j = 0; j < tail.times.size(); ++j) {
    const double s = tail.survival[j];
    if (tail.times[j] < t_min || s <= 0.0 || s >= 1.0) continue;
    ts.push_back(tail.times[j]);
    ys.push_back(std::log(2.0 * s));
  }
  fit.points_used = static_cast<int>(ts.size());
  if (ts.size() < 5) return fit;  // fit unavailable, reported as such

  const double n = static_cast<double>(ts.size());
  double st = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    st += ts[i];
    sy += ys[i];
  }
  const double tbar = st / n, ybar = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    sxx += (ts[i] - tbar) * (ts[i] - tbar);
    sxy += (ts[i] - tbar) * (ys[i] - ybar);
  }
  if (!(sxx > 0.0)) return fit;
  const double slope = sxy / sxx;
  const double intercept = ybar - slope * tbar;
  double rss = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double resid = ys[i] - (intercept + slope * ts[i]);
    rss += resid * resid;
  }
  fit.available = true;
  fit.beta_hat = -slope;
  fit.gamma_hat = std::exp(intercept);
  fit.rmse = std::sqrt(rss / n);
  fit.beta_se = ts.size() > 2 ? std::sqrt(rss / (n - 2.0) / sxx) : 0.0;
  return fit;
}

// ---------------------------------------------------------------------------
// closed-form constants

struct TheoryConstants {
  double H = 0.0, M = 0.0, r = 0.0, alpha = 0.0;
  double N = 0.0;        // 2/alpha
  double delta2 = 0.0;   // (1/2) exp(-H (M + r))
  double rho = 0.0;      // 1 - delta2/2
  double R = 0.0;        // M + r + N
  double R_hat = 0.0;    // 2R/delta2
  double beta_lb = 0.0;  // delta2/(2R)
};

inline TheoryConstants theory_constants(double H, double M, double r, double alpha) {
  if (!(H > 0.0) || !(M > 0.0) || !(r > 0.0) || !(alpha > 0.0) || !std::isfinite(H) ||
      !std::isfinite(M) || !std::isfinite(r) || !std::isfinite(alpha))
    throw ConfigError("theory_constants: all four inputs must be positive and finite");
  TheoryConstants c;
  c.H = H;
  c.M = M;
  c.r = r;
  c.alpha = alpha;
  c.N = 2.0 / alpha;
  c.delta2 = 0.5 * std::exp(-H * (M + r));
  if (!(c.delta2 > 0.0))
    throw NumericError("theory_constants: exp(-H(M+r)) underflowed, constants are void");
  c.rho = 1.0 - 0.5 * c.delta2;
  c.R = M + r + c.N;
  c.R_hat = 2.0 * c.R / c.delta2;
  c.beta_lb = c.delta2 / (2.0 * c.R);
  return c;
}

// finite-window decay rate lower bound, valid for gamma > 2
inline double beta_gamma_lower(const TheoryConstants& c, double gamma) {
  if (!(gamma > 2.0)) throw ConfigError("beta_gamma_lower: gamma must exceed 2");
  return (1.0 - 2.0 / gamma) / c.R_hat;
}

struct GeometricTailRow {
  int n = 0;
  double p_hat = 0.0;
  double bound = 0.0;  // rho^n
  double se = 0.0;
  bool ok = false;
};

struct GeometricTailReport {
  std::vector<GeometricTailRow> rows;
  bool all_ok() const {
    for (const auto& r : rows)
      if (!r.ok) return false;
    return !rows.empty();
  }
};

// P(T >= nR) <= rho^n for n = 1, 2, 3, tested with a 3-sigma allowance.
// A failure is an assumption diagnostic (the inputs to the constants were
// not certified), reported, never thrown.
inline GeometricTailReport geometric_tail_check(const TailCurve& tail,
                                                const TheoryConstants& c) {
  if (tail.horizon < 3.0 * c.R - 1e-9)
    throw ConfigError("geometric_tail_check: horizon shorter than 3R");
  GeometricTailReport rep;
  for (int n = 1; n <= 3; ++n) {
    GeometricTailRow row;
    row.n = n;
    row.p_hat = tail.survival_ge(static_cast<double>(n) * c.R);
    row.bound = std::pow(c.rho, n);
    row.se = tail.binomial_se(row.p_hat);
    row.ok = row.p_hat <= row.bound + 3.0 * row.se;
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// moment / MGF bound table

struct MomentBoundRow {
  int n = 0;
  double bound = 0.0;  // n! R_hat^n
  std::optional<double> empirical;  // censored-at-horizon sample moment (lower estimate)
};

struct MgfBoundRow {
  double lambda = 0.0;
  double bound = 0.0;  // 1/(1 - lambda R_hat)
  std::optional<double> empirical;
};

struct MomentMgfTable {
  std::vector<MomentBoundRow> moments;
  std::vector<MgfBoundRow> mgf;
};

inline MomentMgfTable moment_mgf_bounds(const TheoryConstants& c, int n_max,
                                        const std::vector<double>& lambda_grid,
                                        const TailCurve* tail = nullptr) {
  if (n_max < 1) throw ConfigError("moment_mgf_bounds: n_max must be >= 1");
  for (const double lam : lambda_grid)
    if (!(lam > 0.0) || !(lam < 1.0 / c.R_hat))
      throw ConfigError("moment_mgf_bounds: lambda grid must sit inside (0, 1/R_hat)");

  MomentMgfTable table;
  double fact = 1.0;
  double rn = 1.0;
  for (int n = 1; n <= n_max; ++n) {
    fact *= static_cast<double>(n);
    rn *= c.R_hat;
    MomentBoundRow row;
    row.n = n;
    row.bound = fact * rn;
    if (tail && tail->n_paths > 0) {
      double acc = 0.0;
      for (const double T : tail->samples) acc += std::pow(T, n);
      acc += static_cast<double>(tail->n_censored) * std::pow(tail->horizon, n);
      row.empirical = acc / static_cast<double>(tail->n_paths);
    }
    table.moments.push_back(row);
  }
  for (const double lam : lambda_grid) {
    MgfBoundRow row;
    row.lambda = lam;
    row.bound = 1.0 / (1.0 - lam * c.R_hat);
    if (tail && tail->n_paths > 0) {
      double acc = 0.0;
      for (const double T : tail->samples) acc += std::exp(lam * T);
      acc += static_cast<double>(tail->n_censored) * std::exp(lam * tail->horizon);
      row.empirical = acc / static_cast<double>(tail->n_paths);
    }
    table.mgf.push_back(row);
  }
  return table;
}

// ---------------------------------------------------------------------------
// polylogarithm inequality

// Series value of Li_{-(n-1)}(rho) = sum_{j>=1} j^{n-1} rho^j, summed to a
// relative 1e-12; geometric tail majorant once the power factor stabilizes.
inline double polylog_neg_series(double rho, int n) {
  if (!(rho > 0.0) || !(rho < 1.0)) throw ConfigError("polylog: rho must be in (0,1)");
  if (n < 1) throw ConfigError("polylog: n must be >= 1");
  double sum = 0.0;
  double pow_rho = 1.0;
  for (int j = 1;; ++j) {
    pow_rho *= rho;
    const double term = std::pow(static_cast<double>(j), n - 1) * pow_rho;
    sum += term;
    if (j > 4 * n) {
      // for j >= this point, term ratios are below q < 1, so the remaining
      // tail is at most term * q/(1-q)
      const double q = rho * std::pow(1.0 + 1.0 / j, n - 1);
      if (q < 1.0 && term * q / (1.0 - q) < 1e-13 * sum) break;
    }
    if (j > 100000000) throw NumericError("polylog: series did not settle");
  }
  return sum;
}

// closed forms for small orders, used as an independent cross-check
inline double polylog_neg_closed(double rho, int n) {
  const double om = 1.0 - rho;
  switch (n) {
    case 1: return rho / om;
    case 2: return rho / (om * om);
    case 3: return rho * (1.0 + rho) / (om * om * om);
    case 4: return rho * (1.0 + 4.0 * rho + rho * rho) / (om * om * om * om);
    default: throw ConfigError("polylog closed form: only n <= 4");
  }
}

struct PolylogCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool ok = false;
};

inline PolylogCheck polylog_bound_check(double rho, int n) {
  PolylogCheck out;
  out.lhs = n <= 4 ? polylog_neg_closed(rho, n) : polylog_neg_series(rho, n);
  double fact = 1.0;
  for (int j = 2; j < n; ++j) fact *= static_cast<double>(j);
  out.rhs = rho * fact / std::pow(1.0 - rho, n);
  out.ok = out.lhs <= out.rhs * (1.0 + 1e-12);
  return out;
}

// hitting-time upper bound on the decay rate: for a set of stationary mass
// pi_A and a sup estimate of the mean hitting time, the rate cannot beat
// [ (2/pi_A) log(gamma/pi_A) ] / mean_hitting
inline double beta_upper_bound(double pi_A, double gamma, double mean_hitting) {
  if (!(pi_A > 0.0) || !(pi_A <= 1.0)) throw ConfigError("beta_upper_bound: pi_A in (0,1]");
  if (!(gamma > pi_A)) throw ConfigError("beta_upper_bound: gamma must exceed pi_A");
  if (!(mean_hitting > 0.0)) throw ConfigError("beta_upper_bound: mean hitting time must be > 0");
  return (2.0 / pi_A) * std::log(gamma / pi_A) / mean_hitting;
}

}  // namespace rcoup
