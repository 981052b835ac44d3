#pragma once

#include "regime_coupler/common.hpp"
#include "regime_coupler/rng.hpp"
#include "regime_coupler/segment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rcoup {

// One off-diagonal switching intensity: jump to `to` at rate `rate`.
struct RateEntry {
  RegimeId to = 0;
  double rate = 0.0;
};

// Sparse intensity row of the current regime. Entries carry targets only;
// the diagonal is implied. Order does not matter on input, consumers sort.
using RateRow = std::vector<RateEntry>;

inline double row_sum(const RateRow& row) {
  double s = 0.0;
  for (const auto& e : row) s += e.rate;
  return s;
}

inline void sort_row_by_target(RateRow& row) {
  std::sort(row.begin(), row.end(),
            [](const RateEntry& a, const RateEntry& b) { return a.to < b.to; });
}

// Hybrid model: a diffusion in each regime plus switching intensities that
// read the trailing path segment. rate_bound is the uniform cap the rows
// must respect; the thinning clock runs at that cap.
struct ModelSpec {
  int dim = 1;
  std::function<Vec(const Vec&, RegimeId)> drift;
  std::function<Mat(const Vec&, RegimeId)> diffusion;
  std::function<RateRow(const HistorySegment&, RegimeId)> rates;
  double rate_bound = 0.0;

  // 0 means no declared truncation of the regime space; a positive value
  // restricts valid ids to [0, regime_count).
  int regime_count = 0;

  // Optional model-level projection applied after every Euler update
  // (e.g. the population model clamps at zero). Not part of the integrator.
  std::function<void(Vec&)> constrain;

  bool regime_valid(RegimeId k) const {
    return k >= 0 && (regime_count <= 0 || k < regime_count);
  }
};

// Simulation knobs shared by the single and the coupled runners.
struct SimConfig {
  double dt = 0.01;
  double horizon = 1.0;
  std::int64_t n_paths = 1;
  std::uint64_t seed = 0;
  int workers = 1;

  // meeting threshold for the coupled runner; 0 picks 0.01 * sqrt(dt)
  double meet_eps = 0.0;

  // abort a path once |x| exceeds this radius (disabled when absent)
  std::optional<double> state_cap;

  double effective_meet_eps() const {
    return meet_eps > 0.0 ? meet_eps : 0.01 * std::sqrt(dt);
  }

  void validate(double delay) const {
    if (!(dt > 0.0)) throw ConfigError("sim config: dt must be positive");
    if (!(horizon >= dt)) throw ConfigError("sim config: horizon shorter than one step");
    if (dt > delay * (1.0 + 1e-12))
      throw ConfigError("sim config: dt must not exceed the history window");
    if (n_paths < 1) throw ConfigError("sim config: n_paths must be >= 1");
    if (meet_eps < 0.0) throw ConfigError("sim config: meet_eps must be >= 0");
    if (state_cap && !(*state_cap > 0.0))
      throw ConfigError("sim config: state_cap must be positive when set");
  }
};

// ---------------------------------------------------------------------------
// model validation

enum class ViolationKind {
  negative_rate,
  diagonal_rate,
  rate_sum_exceeds_bound,
  non_finite_rate,
  non_finite_drift,
  non_finite_diffusion,
  bad_shape,
  callback_fault,
};

inline const char* violation_name(ViolationKind k) {
  switch (k) {
    case ViolationKind::negative_rate: return "negative rate";
    case ViolationKind::diagonal_rate: return "diagonal rate entry";
    case ViolationKind::rate_sum_exceeds_bound: return "rate row sum exceeds bound";
    case ViolationKind::non_finite_rate: return "non-finite rate";
    case ViolationKind::non_finite_drift: return "non-finite drift";
    case ViolationKind::non_finite_diffusion: return "non-finite diffusion";
    case ViolationKind::bad_shape: return "wrong callback shape";
    case ViolationKind::callback_fault: return "callback raised";
  }
  return "?";
}

struct Violation {
  ViolationKind kind;
  int sample_index = -1;
  RegimeId regime = 0;
  std::string detail;
};

struct ValidationReport {
  int n_samples = 0;
  std::uint64_t seed = 0;
  std::vector<Violation> violations;

  bool passed() const { return violations.empty(); }
};

// Shape of the randomly generated probe segments validate_model feeds to the
// callbacks. Rates must be well defined for any window, so the exact shape
// only affects coverage, not correctness.
struct SegmentProbe {
  double delay = 1.0;
  double dt = 0.125;
  double amplitude = 2.0;
  int regime_limit = 0;  // 0: use the model's regime_count, else 8
};

namespace detail {

inline HistorySegment random_probe_segment(const ModelSpec& m, const SegmentProbe& p,
                                           PathRng& rng, int which) {
  HistorySegment seg(m.dim, p.delay, p.dt, 0.0);
  Vec x(m.dim);
  for (int i = 0; i < m.dim; ++i) x[i] = p.amplitude * rng.normal();
  if (which % 7 == 0) x.setZero();                 // origin probe
  if (which % 11 == 0) x *= 50.0;                  // far-field probe
  seg = HistorySegment::constant(x, p.delay, p.dt, 0.0);
  const double sdt = std::sqrt(p.dt);
  for (int i = 0; i < seg.size(); ++i) {           // random-walk fill
    Vec step = x;
    for (int j = 0; j < m.dim; ++j) step[j] += sdt * p.amplitude * rng.normal();
    seg.push(step);
    x = step;
  }
  return seg;
}

}  // namespace detail

// Samples (segment, regime) probes and checks the callback contract:
// rates finite, nonnegative, off-diagonal, row sums within the declared
// bound (compared as evaluated, no slack); drift and diffusion finite and of
// the right shape at the segment head. A throwing callback becomes a
// violation with the probe recorded, never a crash.
inline ValidationReport validate_model(const ModelSpec& m, int n_samples,
                                       std::uint64_t rng_seed,
                                       const SegmentProbe& probe = {}) {
  if (m.dim < 1) throw ConfigError("validate_model: model dim must be >= 1");
  if (!m.drift || !m.diffusion || !m.rates)
    throw ConfigError("validate_model: drift, diffusion and rates must all be set");
  if (!(m.rate_bound >= 0.0) || !std::isfinite(m.rate_bound))
    throw ConfigError("validate_model: rate_bound must be finite and >= 0");

  ValidationReport rep;
  rep.n_samples = n_samples;
  rep.seed = rng_seed;
  PathRng rng(rng_seed, 0x5eedULL);

  const int regime_limit =
      probe.regime_limit > 0 ? probe.regime_limit : (m.regime_count > 0 ? m.regime_count : 8);

  auto add = [&](ViolationKind kind, int idx, RegimeId k, std::string detail) {
    rep.violations.push_back({kind, idx, k, std::move(detail)});
  };

  for (int s = 0; s < n_samples; ++s) {
    const HistorySegment seg = detail::random_probe_segment(m, probe, rng, s);
    const RegimeId k = static_cast<RegimeId>(rng.next_u64() % static_cast<std::uint64_t>(regime_limit));
    char buf[160];

    RateRow row;
    bool row_ok = true;
    try {
      row = m.rates(seg, k);
    } catch (const std::exception& e) {
      add(ViolationKind::callback_fault, s, k, std::string("rates: ") + e.what());
      row_ok = false;
    }
    if (row_ok) {
      double sum = 0.0;
      for (const auto& e : row) {
        if (!std::isfinite(e.rate)) {
          add(ViolationKind::non_finite_rate, s, k, "rate entry not finite");
          continue;
        }
        if (e.rate < 0.0) {
          std::snprintf(buf, sizeof(buf), "rate %.6g to regime %d", e.rate, regime_label(e.to));
          add(ViolationKind::negative_rate, s, k, buf);
        }
        if (e.to == k) {
          add(ViolationKind::diagonal_rate, s, k, "row contains its own regime");
        }
        if (e.to < 0 || (m.regime_count > 0 && e.to >= m.regime_count)) {
          std::snprintf(buf, sizeof(buf), "target regime %d outside the declared space",
                        regime_label(e.to));
          add(ViolationKind::bad_shape, s, k, buf);
        }
        sum += e.rate;
      }
      if (sum > m.rate_bound) {
        std::snprintf(buf, sizeof(buf), "row sum %.17g > bound %.17g at regime %d", sum,
                      m.rate_bound, regime_label(k));
        add(ViolationKind::rate_sum_exceeds_bound, s, k, buf);
      }
    }

    const Vec x = seg.head();
    try {
      const Vec b = m.drift(x, k);
      if (b.size() != m.dim)
        add(ViolationKind::bad_shape, s, k, "drift returned wrong dimension");
      else if (!b.allFinite())
        add(ViolationKind::non_finite_drift, s, k, "drift not finite at probe");
    } catch (const std::exception& e) {
      add(ViolationKind::callback_fault, s, k, std::string("drift: ") + e.what());
    }
    try {
      const Mat sig = m.diffusion(x, k);
      if (sig.rows() != m.dim)
        add(ViolationKind::bad_shape, s, k, "diffusion returned wrong row count");
      else if (!sig.allFinite())
        add(ViolationKind::non_finite_diffusion, s, k, "diffusion not finite at probe");
    } catch (const std::exception& e) {
      add(ViolationKind::callback_fault, s, k, std::string("diffusion: ") + e.what());
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Lyapunov drift condition

// User-supplied Lyapunov data: V per regime, the per-regime growth constants,
// and optionally analytic derivatives. Without derivatives the check falls
// back to central finite differences with step fd_step.
struct LyapunovSpec {
  std::function<double(const Vec&, RegimeId)> V;
  std::vector<double> gamma_k;
  std::function<Vec(const Vec&, RegimeId)> grad;    // optional
  std::function<Mat(const Vec&, RegimeId)> hess;    // optional
  double fd_step = 1e-4;
};

struct LyapunovRow {
  Vec x;
  RegimeId k = 0;
  double generator_value = 0.0;  // (1/2)tr(a D2V) + <b, DV>
  double bound = 0.0;            // gamma_k (1 + V)
  bool ok = false;
  bool evaluable = true;         // false: derivatives came out non-finite
};

struct LyapunovReport {
  std::vector<LyapunovRow> rows;
  bool passed() const {
    for (const auto& r : rows)
      if (!r.ok) return false;
    return !rows.empty();
  }
};

namespace detail {

inline Vec fd_gradient(const std::function<double(const Vec&, RegimeId)>& f, const Vec& x,
                       RegimeId k, double h) {
  Vec g(x.size());
  Vec xp = x, xm = x;
  for (int i = 0; i < x.size(); ++i) {
    const double hi = h * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + hi;
    xm[i] = x[i] - hi;
    g[i] = (f(xp, k) - f(xm, k)) / (2.0 * hi);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return g;
}

inline Mat fd_hessian(const std::function<double(const Vec&, RegimeId)>& f, const Vec& x,
                      RegimeId k, double h) {
  const int d = static_cast<int>(x.size());
  Mat H(d, d);
  const double f0 = f(x, k);
  Vec xs = x;
  for (int i = 0; i < d; ++i) {
    const double hi = h * std::max(1.0, std::abs(x[i]));
    for (int j = i; j < d; ++j) {
      const double hj = h * std::max(1.0, std::abs(x[j]));
      if (i == j) {
        xs[i] = x[i] + hi;
        const double fp = f(xs, k);
        xs[i] = x[i] - hi;
        const double fm = f(xs, k);
        xs[i] = x[i];
        H(i, i) = (fp - 2.0 * f0 + fm) / (hi * hi);
      } else {
        double v = 0.0;
        const double si[2] = {hi, -hi};
        const double sj[2] = {hj, -hj};
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            xs[i] = x[i] + si[a];
            xs[j] = x[j] + sj[b];
            v += ((a == b) ? 1.0 : -1.0) * f(xs, k);
          }
        xs[i] = x[i];
        xs[j] = x[j];
        H(i, j) = H(j, i) = v / (4.0 * hi * hj);
      }
    }
  }
  return H;
}

}  // namespace detail

// Evaluates the regime generator on V at the given sample points and flags
// where it exceeds gamma_k (1 + V). Non-finite derivative evaluations are
// flagged, not fatal.
inline LyapunovReport lyapunov_check(const ModelSpec& m, const LyapunovSpec& lyap,
                                     const std::vector<std::pair<Vec, RegimeId>>& samples) {
  if (!lyap.V) throw ConfigError("lyapunov_check: V must be set");
  if (lyap.gamma_k.empty()) throw ConfigError("lyapunov_check: gamma_k must be non-empty");
  LyapunovReport rep;
  rep.rows.reserve(samples.size());
  for (const auto& [x, k] : samples) {
    LyapunovRow row;
    row.x = x;
    row.k = k;
    if (k < 0 || static_cast<std::size_t>(k) >= lyap.gamma_k.size())
      throw ConfigError("lyapunov_check: sample regime has no gamma entry");
    const double gamma = lyap.gamma_k[static_cast<std::size_t>(k)];
    try {
      const Vec g = lyap.grad ? lyap.grad(x, k) : detail::fd_gradient(lyap.V, x, k, lyap.fd_step);
      const Mat H = lyap.hess ? lyap.hess(x, k) : detail::fd_hessian(lyap.V, x, k, lyap.fd_step);
      const Vec b = m.drift(x, k);
      const Mat sig = m.diffusion(x, k);
      const Mat a = sig * sig.transpose();
      const double lv = 0.5 * (a * H).trace() + b.dot(g);
      const double v = lyap.V(x, k);
      row.generator_value = lv;
      row.bound = gamma * (1.0 + v);
      row.evaluable = std::isfinite(lv) && std::isfinite(row.bound);
      row.ok = row.evaluable && lv <= row.bound;
    } catch (const std::exception&) {
      row.evaluable = false;
      row.ok = false;
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

}  // namespace rcoup
