#pragma once

#include "regime_coupler/common.hpp"
#include "regime_coupler/model.hpp"
#include "regime_coupler/rng.hpp"
#include "regime_coupler/segment.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <vector>

namespace rcoup {

// [lo, hi) block of the acceptance axis owned by one jump target.
struct Interval {
  RegimeId to = 0;
  double lo = 0.0;
  double hi = 0.0;
};

// Partition of [0, row_sum) into one block per positive-rate target,
// ascending target id, consecutive from 0. A uniform draw on [0, bound)
// either lands in a block (jump there) or beyond row_sum (no jump), which
// is exactly the thinning acceptance rule.
struct IntervalTable {
  RegimeId from = 0;
  std::vector<Interval> intervals;
  double total = 0.0;  // accumulated in ascending-target order, so bit-stable
};

inline IntervalTable build_intervals(const RateRow& row, RegimeId from) {
  IntervalTable table;
  table.from = from;
  RateRow sorted = row;
  sort_row_by_target(sorted);
  double cursor = 0.0;
  RegimeId prev = -1;
  for (const auto& e : sorted) {
    if (!std::isfinite(e.rate))
      throw NumericError("interval table: non-finite rate entry");
    if (e.rate < 0.0) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "interval table: negative rate %.6g to regime %d",
                    e.rate, regime_label(e.to));
      throw NumericError(buf);
    }
    if (e.to == from)
      throw NumericError("interval table: row contains its own regime");
    if (e.to == prev)
      throw NumericError("interval table: duplicate target in rate row");
    prev = e.to;
    if (e.rate == 0.0) continue;  // empty block, nothing can land in it
    table.intervals.push_back({e.to, cursor, cursor + e.rate});
    cursor += e.rate;
  }
  table.total = cursor;
  return table;
}

// Displacement j - i of the target whose block contains z, 0 if z lies
// beyond every block (rejected candidate).
inline int h_eval(const IntervalTable& table, RegimeId i, double z) {
  for (const auto& iv : table.intervals)
    if (z >= iv.lo && z < iv.hi) return static_cast<int>(iv.to) - static_cast<int>(i);
  return 0;
}

inline std::optional<RegimeId> interval_target(const IntervalTable& table, double z) {
  for (const auto& iv : table.intervals)
    if (z >= iv.lo && z < iv.hi) return iv.to;
  return std::nullopt;
}

struct SwitchEvent {
  double time = 0.0;
  RegimeId from = 0;
  RegimeId to = 0;
};

namespace detail {

// One thinning candidate: draw z uniform on [0, bound), look it up in the
// row's interval table. Exactly one uniform is consumed per candidate.
template <class Rng>
std::optional<RegimeId> thin_accept(const RateRow& row, RegimeId k, double bound, Rng& rng) {
  const double z = rng.uniform(0.0, bound);
  const IntervalTable table = build_intervals(row, k);
  if (table.total > bound) {
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "thinning: rate row sum %.17g exceeds the declared bound %.17g at regime %d",
                  table.total, bound, regime_label(k));
    throw NumericError(buf);
  }
  return interval_target(table, z);
}

}  // namespace detail

// Exact next-switch sampler in continuous time: candidates arrive at rate H
// after t0, each is accepted with probability q_k(segment)/H and the target
// is drawn proportionally to the row. Returns the first accepted candidate
// in (t0, t_max], or nothing. The grid policy of simulate_hybrid is NOT
// applied here; this is the reference law.
template <class Rng>
std::optional<SwitchEvent> next_switch_thinning(
    const std::function<RateRow(const HistorySegment&, RegimeId)>& rates,
    const std::function<HistorySegment(double)>& segment_at, RegimeId k, double H,
    double t0, double t_max, Rng& rng) {
  if (!(H >= 0.0) || !std::isfinite(H))
    throw ConfigError("thinning: rate bound must be finite and >= 0");
  if (H == 0.0) return std::nullopt;
  double t = t0;
  while (true) {
    t += rng.exponential(H);
    if (t > t_max) return std::nullopt;
    const HistorySegment seg = segment_at(t);
    const RateRow row = rates(seg, k);
    if (auto to = detail::thin_accept(row, k, H, rng)) return SwitchEvent{t, k, *to};
  }
}

// ---------------------------------------------------------------------------
// hybrid path simulation

struct HybridPath {
  int dim = 0;
  std::vector<double> times;       // t0 + n*dt
  std::vector<double> states;     // flattened, dim doubles per grid point
  std::vector<RegimeId> regimes;  // regime in effect at each grid point
  std::vector<SwitchEvent> events;

  bool diverged = false;       // a step produced a non-finite state
  bool hit_state_cap = false;  // |X| left the configured ball
  double abort_time = 0.0;     // valid when either flag is set

  std::size_t grid_size() const { return times.size(); }

  Eigen::Map<const Vec> state(std::size_t n) const {
    return Eigen::Map<const Vec>(states.data() + n * static_cast<std::size_t>(dim), dim);
  }

  Eigen::Map<const Vec> final_state() const { return state(grid_size() - 1); }
};

// Euler-Maruyama between switches, thinning on a shared Poisson(H) clock.
// Grid policy: a candidate in (t_n, t_{n+1}) reads the segment frozen at
// t_n and, if accepted, the regime changes at t_{n+1}; the diffusion step
// over [t_n, t_{n+1}) always uses the regime that was current at t_n. So
// every event time is a grid multiple and the regime is constant between
// events.
template <class Rng>
HybridPath simulate_hybrid(const ModelSpec& m, const HistorySegment& init, RegimeId k0,
                           const SimConfig& cfg, Rng& rng) {
  if (!m.drift || !m.diffusion || !m.rates)
    throw ConfigError("simulate_hybrid: model callbacks not set");
  if (init.dim() != m.dim)
    throw ConfigError("simulate_hybrid: init segment dimension does not match the model");
  cfg.validate(init.delay());
  if (std::abs(init.dt() - cfg.dt) > 1e-12 * cfg.dt)
    throw ConfigError("simulate_hybrid: init segment grid spacing differs from cfg.dt");
  if (!m.regime_valid(k0)) throw ConfigError("simulate_hybrid: initial regime out of range");
  const double H = m.rate_bound;
  if (!(H >= 0.0) || !std::isfinite(H))
    throw ConfigError("simulate_hybrid: rate bound must be finite and >= 0");

  const auto n_steps = static_cast<std::int64_t>(std::floor(cfg.horizon / cfg.dt + 1e-9));
  const double t0 = init.head_time();
  const double sdt = std::sqrt(cfg.dt);

  HybridPath path;
  path.dim = m.dim;
  path.times.reserve(static_cast<std::size_t>(n_steps) + 1);
  path.states.reserve((static_cast<std::size_t>(n_steps) + 1) * m.dim);
  path.regimes.reserve(static_cast<std::size_t>(n_steps) + 1);

  HistorySegment seg = init;
  RegimeId k = k0;
  auto record = [&](double t, const Vec& x, RegimeId kk) {
    path.times.push_back(t);
    path.states.insert(path.states.end(), x.data(), x.data() + x.size());
    path.regimes.push_back(kk);
  };
  record(t0, seg.head(), k);

  double cand = H > 0.0 ? t0 + rng.exponential(H) : 0.0;
  for (std::int64_t n = 0; n < n_steps; ++n) {
    const double t_next = t0 + static_cast<double>(n + 1) * cfg.dt;
    const RegimeId k_step = k;  // frozen regime for this diffusion step

    if (H > 0.0) {
      while (cand < t_next) {
        const RateRow row = m.rates(seg, k);
        if (auto to = detail::thin_accept(row, k, H, rng)) {
          // effective at t_next; a second accepted candidate in the same
          // step chains off the new regime and lands at the same grid time
          path.events.push_back({t_next, k, *to});
          k = *to;
          if (!m.regime_valid(k))
            throw NumericError("simulate_hybrid: switch target outside the declared regime space");
        }
        cand += rng.exponential(H);
      }
    }

    const Vec x = seg.head();
    Vec x_new = x + cfg.dt * m.drift(x, k_step);
    const Mat sig = m.diffusion(x, k_step);
    if (sig.cols() > 0) x_new += sig * (sdt * rng.normal_vec(static_cast<int>(sig.cols())));
    if (m.constrain) m.constrain(x_new);

    if (!x_new.allFinite()) {
      path.diverged = true;
      path.abort_time = t_next;
      break;
    }
    seg.push(x_new);
    record(t_next, x_new, k);
    if (cfg.state_cap && x_new.norm() > *cfg.state_cap) {
      path.hit_state_cap = true;
      path.abort_time = t_next;
      break;
    }
  }
  return path;
}

}  // namespace rcoup
