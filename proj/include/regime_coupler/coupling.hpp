#pragma once

#include "regime_coupler/batch.hpp"
#include "regime_coupler/common.hpp"
#include "regime_coupler/model.hpp"
#include "regime_coupler/rng.hpp"
#include "regime_coupler/segment.hpp"
#include "regime_coupler/switching.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rcoup {

// I - 2 uuT with u the unit vector along x - y: symmetric, orthogonal,
// flips x - y and fixes its orthogonal complement.
inline Mat reflection_matrix(const Vec& x, const Vec& y) {
  if (x.size() != y.size())
    throw ConfigError("reflection matrix: dimension mismatch");
  const Vec diff = x - y;
  const double n2 = diff.squaredNorm();
  if (!(n2 > 1e-300))
    throw NumericError("reflection matrix: direction degenerate, points (numerically) equal");
  const int d = static_cast<int>(x.size());
  return Mat::Identity(d, d) - (2.0 / n2) * (diff * diff.transpose());
}

struct CoupledDiffusion {
  Mat tau;    // 2d x 2d noise loading, right half zero unless regimes differ
  Vec drift;  // (b(x,k), b(y,l)) stacked
};

// Noise structure of the coupled pair. Same regime and distinct points:
// reflection (one shared d-dim noise, the second component sees it through
// the mirror). Same regime and equal points: march (identical loadings, the
// pair moves in lockstep). Distinct regimes: independent coupling.
inline CoupledDiffusion coupled_diffusion(const Vec& x, RegimeId k, const Vec& y, RegimeId l,
                                          const ModelSpec& m) {
  const int d = m.dim;
  if (x.size() != d || y.size() != d)
    throw ConfigError("coupled diffusion: state dimension does not match the model");
  const Mat sx = m.diffusion(x, k);
  const Mat sy = m.diffusion(y, l);
  if (sx.rows() != d || sx.cols() != d || sy.rows() != d || sy.cols() != d)
    throw ConfigError("coupled diffusion: coupling needs a square d x d diffusion");

  CoupledDiffusion out;
  out.tau = Mat::Zero(2 * d, 2 * d);
  out.tau.topLeftCorner(d, d) = sx;
  if (k == l) {
    if (x == y) {
      out.tau.bottomLeftCorner(d, d) = sy;  // march
    } else {
      out.tau.bottomLeftCorner(d, d) = sy * reflection_matrix(x, y);
    }
  } else {
    out.tau.bottomRightCorner(d, d) = sy;  // independent
  }
  out.drift = Vec(2 * d);
  out.drift.head(d) = m.drift(x, k);
  out.drift.tail(d) = m.drift(y, l);
  return out;
}

// ---------------------------------------------------------------------------
// basic coupling of two intensity rows

struct CoupledJumpEntry {
  RegimeId to_first = 0;
  RegimeId to_second = 0;
  double rate = 0.0;
};

struct CoupledJumpLaw {
  RegimeId from_first = 0;
  RegimeId from_second = 0;
  std::vector<CoupledJumpEntry> entries;  // fixed emission order, zero rates omitted
  double total_rate = 0.0;
};

namespace detail {

inline void check_row(const RateRow& row, RegimeId self, const char* which) {
  for (const auto& e : row) {
    if (!std::isfinite(e.rate))
      throw NumericError(std::string("coupled jump law: non-finite rate in ") + which);
    if (e.rate < 0.0)
      throw NumericError(std::string("coupled jump law: negative rate in ") + which);
    if (e.to == self)
      throw NumericError(std::string("coupled jump law: self-entry in ") + which);
  }
}

inline std::map<RegimeId, double> row_map(const RateRow& row) {
  std::map<RegimeId, double> m;
  for (const auto& e : row) {
    auto [it, fresh] = m.emplace(e.to, e.rate);
    if (!fresh) throw NumericError("coupled jump law: duplicate target in rate row");
  }
  return m;
}

}  // namespace detail

// Basic coupling of the two rows. Off-diagonal source (k,l): for every
// target m outside {k,l} the pair jumps to (m,l) at (q_km - q_lm)+, to
// (k,m) at (q_lm - q_km)+ and together to (m,m) at q_km ^ q_lm; in
// addition (l,l) at q_kl and (k,k) at q_lk, which are the two ways the
// pair can coalesce directly. Diagonal source (k,k): same plus/minus/min
// split of the two rows of the same regime, targets (m,k), (k,m), (m,m).
inline CoupledJumpLaw coupled_jump_law(const RateRow& row_first, const RateRow& row_second,
                                       RegimeId k, RegimeId l) {
  detail::check_row(row_first, k, "first row");
  detail::check_row(row_second, l, "second row");
  const auto a = detail::row_map(row_first);   // intensities of the first component
  const auto b = detail::row_map(row_second);  // intensities of the second component
  auto rate_of = [](const std::map<RegimeId, double>& m, RegimeId to) {
    const auto it = m.find(to);
    return it == m.end() ? 0.0 : it->second;
  };

  CoupledJumpLaw law;
  law.from_first = k;
  law.from_second = l;
  auto emit = [&law](RegimeId m1, RegimeId n1, double rate) {
    if (rate <= 0.0) return;
    law.entries.push_back({m1, n1, rate});
    law.total_rate += rate;
  };

  // sorted union of targets (std::map iterates in key order)
  std::map<RegimeId, char> targets;
  for (const auto& [to, _] : a) targets.emplace(to, 0);
  for (const auto& [to, _] : b) targets.emplace(to, 0);

  if (k != l) {
    for (const auto& [m1, _] : targets) {
      if (m1 == k || m1 == l) continue;
      const double qa = rate_of(a, m1);
      const double qb = rate_of(b, m1);
      emit(m1, l, std::max(qa - qb, 0.0));
      emit(k, m1, std::max(qb - qa, 0.0));
      emit(m1, m1, std::min(qa, qb));
    }
    emit(l, l, rate_of(a, l));
    emit(k, k, rate_of(b, k));
  } else {
    for (const auto& [m1, _] : targets) {
      if (m1 == k) continue;
      const double qa = rate_of(a, m1);
      const double qb = rate_of(b, m1);
      emit(m1, k, std::max(qa - qb, 0.0));
      emit(k, m1, std::max(qb - qa, 0.0));
      emit(m1, m1, std::min(qa, qb));
    }
  }
  return law;
}

// The coupled law must move each marginal exactly like its own row:
// for every target m != k, the law rates whose first coordinate becomes m
// sum to q_km, and symmetrically for the second coordinate. This is the
// identity (a-b)+ + a^b = a and the detector for any construction bug.
inline bool marginal_consistency_check(const CoupledJumpLaw& law, const RateRow& row_first,
                                       const RateRow& row_second, double tol = 1e-12) {
  const auto a = detail::row_map(row_first);
  const auto b = detail::row_map(row_second);
  std::map<RegimeId, double> first_moves, second_moves;
  for (const auto& e : law.entries) {
    if (e.rate < 0.0) return false;
    if (e.to_first != law.from_first) first_moves[e.to_first] += e.rate;
    if (e.to_second != law.from_second) second_moves[e.to_second] += e.rate;
  }
  auto matches = [tol](const std::map<RegimeId, double>& moved,
                       const std::map<RegimeId, double>& row, RegimeId self) {
    std::map<RegimeId, double> want;
    for (const auto& [to, q] : row)
      if (to != self && q != 0.0) want[to] = q;
    for (const auto& [to, q] : moved)
      if (std::abs(q - (want.count(to) ? want.at(to) : 0.0)) > tol) return false;
    for (const auto& [to, q] : want)
      if (std::abs(q - (moved.count(to) ? moved.at(to) : 0.0)) > tol) return false;
    return true;
  };
  return matches(first_moves, a, law.from_first) && matches(second_moves, b, law.from_second);
}

// ---------------------------------------------------------------------------
// coupled simulation

struct ZetaEvent {
  double time = 0.0;
  bool enter = false;  // true: (k,l) entered the diagonal, false: left it
};

struct CoupledState {
  Vec x, y;
  RegimeId k = 0, l = 0;
  bool glued = false;
  std::optional<double> meet_time;    // first time regimes agree and points touch
  std::optional<double> couple_time;  // meet plus a full window of uninterrupted gluing
  std::optional<double> glue_start;
  std::vector<ZetaEvent> zeta;
};

struct CoupledPath {
  HybridPath first, second;              // shared time grid when recorded
  std::vector<std::uint8_t> glued_flags; // per grid point, parallel to times
  CoupledState final;
  double delay = 0.0;

  bool diverged() const { return first.diverged; }
  bool hit_state_cap() const { return first.hit_state_cap; }
};

// Coupled Euler-Maruyama with a shared thinning clock at envelope 2H.
// Grid policy matches simulate_hybrid: candidates in (t_n, t_{n+1}) read
// the segments frozen at t_n and regime-pair changes land at t_{n+1}.
//
// Gluing: when the regimes agree and |x - y| <= meet_eps the pair is glued
// (y := x) and evolves by march coupling; a jump that separates the regimes
// breaks the glue and the coupling falls back per case. The couple time is
// declared after one full history window of uninterrupted glued, equal-
// regime evolution, because only then the trailing segments agree. Once it
// is declared the law must stay diagonal; that is asserted on every
// candidate, not assumed.
template <class Rng>
CoupledPath simulate_coupled(const ModelSpec& m, const HistorySegment& phi, RegimeId k0,
                             const HistorySegment& psi, RegimeId l0, const SimConfig& cfg,
                             Rng& rng, bool record = true) {
  if (!m.drift || !m.diffusion || !m.rates)
    throw ConfigError("simulate_coupled: model callbacks not set");
  if (!phi.same_grid(psi))
    throw ConfigError("simulate_coupled: the two init segments live on different grids");
  if (std::abs(phi.head_time() - psi.head_time()) > 1e-12)
    throw ConfigError("simulate_coupled: init segments disagree on the current time");
  if (phi.dim() != m.dim)
    throw ConfigError("simulate_coupled: init segment dimension does not match the model");
  cfg.validate(phi.delay());
  if (std::abs(phi.dt() - cfg.dt) > 1e-12 * cfg.dt)
    throw ConfigError("simulate_coupled: init segment grid spacing differs from cfg.dt");
  if (!m.regime_valid(k0) || !m.regime_valid(l0))
    throw ConfigError("simulate_coupled: initial regime out of range");
  const double H = m.rate_bound;
  if (!(H >= 0.0) || !std::isfinite(H))
    throw ConfigError("simulate_coupled: rate bound must be finite and >= 0");

  const int d = m.dim;
  const double r = phi.delay();
  const double eps = cfg.effective_meet_eps();
  const double envelope = 2.0 * H;
  const auto n_steps = static_cast<std::int64_t>(std::floor(cfg.horizon / cfg.dt + 1e-9));
  const double t0 = phi.head_time();
  const double sdt = std::sqrt(cfg.dt);

  CoupledPath out;
  out.delay = r;
  out.first.dim = d;
  out.second.dim = d;

  HistorySegment sx = phi, sy = psi;
  Vec x = sx.head(), y = sy.head();
  RegimeId k = k0, l = l0;
  CoupledState& st = out.final;

  bool in_diag = (k == l);
  if (in_diag) st.zeta.push_back({t0, true});

  // glue check at the starting point
  if (k == l && (x - y).norm() <= eps) {
    st.glued = true;
    y = x;
    st.meet_time = t0;
    st.glue_start = t0;
  }

  auto record_point = [&](double t) {
    if (!record) return;
    out.first.times.push_back(t);
    out.second.times.push_back(t);
    out.first.states.insert(out.first.states.end(), x.data(), x.data() + d);
    out.second.states.insert(out.second.states.end(), y.data(), y.data() + d);
    out.first.regimes.push_back(k);
    out.second.regimes.push_back(l);
    out.glued_flags.push_back(st.glued ? 1 : 0);
  };
  record_point(t0);

  double cand = envelope > 0.0 ? t0 + rng.exponential(envelope) : 0.0;
  for (std::int64_t n = 0; n < n_steps; ++n) {
    const double t_next = t0 + static_cast<double>(n + 1) * cfg.dt;
    const RegimeId k_step = k, l_step = l;

    if (envelope > 0.0) {
      while (cand < t_next) {
        const RateRow row_x = m.rates(sx, k);
        const RateRow row_y = m.rates(sy, l);
        const CoupledJumpLaw law = coupled_jump_law(row_x, row_y, k, l);
        if (law.total_rate > envelope) {
          char buf[160];
          std::snprintf(buf, sizeof(buf),
                        "simulate_coupled: coupled rate %.17g exceeds the envelope %.17g "
                        "(two rows each bounded by %.17g)",
                        law.total_rate, envelope, H);
          throw NumericError(buf);
        }
        if (st.couple_time) {
          // post-coupling the segments agree, so the law must be diagonal
          for (const auto& e : law.entries)
            if (e.to_first != e.to_second)
              throw std::logic_error(
                  "simulate_coupled: off-diagonal jump mass after the coupling time");
        }
        const double z = rng.uniform(0.0, envelope);
        double cum = 0.0;
        const CoupledJumpEntry* hit = nullptr;
        for (const auto& e : law.entries) {
          cum += e.rate;
          if (z < cum) {
            hit = &e;
            break;
          }
        }
        if (hit) {
          if (hit->to_first != k) out.first.events.push_back({t_next, k, hit->to_first});
          if (hit->to_second != l) out.second.events.push_back({t_next, l, hit->to_second});
          k = hit->to_first;
          l = hit->to_second;
          if (!m.regime_valid(k) || !m.regime_valid(l))
            throw NumericError("simulate_coupled: switch target outside the declared space");
          const bool now_diag = (k == l);
          if (now_diag != in_diag) {
            st.zeta.push_back({t_next, now_diag});
            in_diag = now_diag;
          }
        }
        cand += rng.exponential(envelope);
      }
    }

    // diffusion over [t_n, t_next) with the regimes frozen at t_n
    const CoupledDiffusion cd = coupled_diffusion(x, k_step, y, l_step, m);
    Vec noise = rng.normal_vec(2 * d);
    Vec z2 = Vec(2 * d);
    z2.head(d) = x;
    z2.tail(d) = y;
    z2 += cfg.dt * cd.drift + sdt * (cd.tau * noise);
    Vec xn = z2.head(d);
    Vec yn = z2.tail(d);
    if (m.constrain) {
      m.constrain(xn);
      m.constrain(yn);
    }

    if (!xn.allFinite() || !yn.allFinite()) {
      out.first.diverged = out.second.diverged = true;
      out.first.abort_time = out.second.abort_time = t_next;
      break;
    }

    // glue bookkeeping at t_next, with the post-switch regimes
    if (st.glued && k != l) {
      st.glued = false;  // a jump separated the regimes, coupling resumes
      st.glue_start.reset();
    }
    if (st.glued) {
      yn = xn;  // march keeps the pair identical, enforced bitwise
    } else if (k == l && (xn - yn).norm() <= eps) {
      st.glued = true;
      yn = xn;
      if (!st.meet_time) st.meet_time = t_next;
      st.glue_start = t_next;
    }

    sx.push(xn);
    sy.push(yn);
    x = xn;
    y = yn;
    record_point(t_next);

    if (cfg.state_cap && std::max(x.norm(), y.norm()) > *cfg.state_cap) {
      out.first.hit_state_cap = out.second.hit_state_cap = true;
      out.first.abort_time = out.second.abort_time = t_next;
      break;
    }

    if (!st.couple_time && st.glued && st.glue_start &&
        t_next - *st.glue_start >= r - 1e-9 * cfg.dt) {
      st.couple_time = *st.glue_start + r;
      if (!record) break;  // tail estimation only needs the coupling time
    }
  }

  st.x = x;
  st.y = y;
  st.k = k;
  st.l = l;
  return out;
}

// ---------------------------------------------------------------------------
// coupling generator

// Smooth test function on (point, regime, point, regime) with caller-supplied
// derivatives; grad and hess are taken jointly over the stacked 2d variables.
struct CoupledTestFunction {
  std::function<double(const Vec&, RegimeId, const Vec&, RegimeId)> value;
  std::function<Vec(const Vec&, RegimeId, const Vec&, RegimeId)> grad;
  std::function<Mat(const Vec&, RegimeId, const Vec&, RegimeId)> hess;
};

// Full coupled generator at (phi, k, psi, l): second-order part from the
// coupled diffusion (tau tauT), first-order part from the stacked drift,
// jump part summed over the basic-coupling law with f evaluated at the
// segment heads.
inline double coupling_generator_apply(const CoupledTestFunction& f, const HistorySegment& phi,
                                       RegimeId k, const HistorySegment& psi, RegimeId l,
                                       const ModelSpec& m) {
  if (!f.value || !f.grad || !f.hess)
    throw ConfigError("coupling generator: value, grad and hess must all be supplied");
  const Vec x = phi.head();
  const Vec y = psi.head();
  const CoupledDiffusion cd = coupled_diffusion(x, k, y, l, m);
  const Mat a_hat = cd.tau * cd.tau.transpose();
  const Mat H2 = f.hess(x, k, y, l);
  const Vec g2 = f.grad(x, k, y, l);
  if (H2.rows() != 2 * m.dim || H2.cols() != 2 * m.dim || g2.size() != 2 * m.dim)
    throw ConfigError("coupling generator: derivative shapes must be 2d");
  double val = 0.5 * (a_hat * H2).trace() + cd.drift.dot(g2);

  const double f0 = f.value(x, k, y, l);
  const CoupledJumpLaw law = coupled_jump_law(m.rates(phi, k), m.rates(psi, l), k, l);
  for (const auto& e : law.entries)
    val += e.rate * (f.value(x, e.to_first, y, e.to_second) - f0);
  return val;
}

// Generator of the same-regime coupling applied to a radial function
// F(|x - y|), all through the 2d chain rule. Needs |x - y| > 0.
inline double radial_coupling_generator(const std::function<double(double)>& F1,
                                        const std::function<double(double)>& F2,
                                        const Vec& x, const Vec& y, RegimeId k,
                                        const ModelSpec& m) {
  const int d = m.dim;
  const Vec diff = x - y;
  const double rho = diff.norm();
  if (!(rho > 0.0))
    throw NumericError("radial generator: needs distinct points");
  const Vec e = diff / rho;
  const Mat ee = e * e.transpose();
  const Mat P = Mat::Identity(d, d) - ee;
  const double dF = F1(rho);
  const double ddF = F2(rho);

  Mat D2 = Mat::Zero(2 * d, 2 * d);
  const Mat blk = ddF * ee + (dF / rho) * P;
  D2.topLeftCorner(d, d) = blk;
  D2.bottomRightCorner(d, d) = blk;
  D2.topRightCorner(d, d) = -blk;
  D2.bottomLeftCorner(d, d) = -blk;

  const CoupledDiffusion cd = coupled_diffusion(x, k, y, k, m);
  const Mat a_hat = cd.tau * cd.tau.transpose();
  const double drift_part = dF * (cd.drift.head(d) - cd.drift.tail(d)).dot(e);
  return 0.5 * (a_hat * D2).trace() + drift_part;
}

// ---------------------------------------------------------------------------
// frozen-regime coupling-time certificate

inline ModelSpec frozen_regime(const ModelSpec& m) {
  ModelSpec f = m;
  f.rates = [](const HistorySegment&, RegimeId) { return RateRow{}; };
  f.rate_bound = 0.0;
  return f;
}

// Optional analytic certificate: a bounded radial F with derivatives and a
// margin K; the check evaluates the frozen-regime generator on F over the
// init grid and compares against -K.
struct RadialBoundSpec {
  std::function<double(double)> F;
  std::function<double(double)> dF;
  std::function<double(double)> ddF;
  double K = 0.0;
  double F_sup = 0.0;
};

struct TkCertificate {
  bool verified = false;
  double M_hat = 0.0;
  std::vector<double> tested_M;
  std::vector<std::vector<double>> success_prob;  // [init][level]
  int n_paths_per_init = 0;

  // filled when a RadialBoundSpec was given
  bool radial_checked = false;
  bool radial_ok = false;
  double radial_worst_margin = 0.0;  // max over grid of L F + K, want <= 0
  double mean_bound = 0.0;           // F_sup / K
};

// Estimates, per initial pair, the probability that the frozen-regime
// coupling finishes before M for a ladder of M values, and reports the
// smallest M at which every init clears 1/2 with a 3-sigma margin. No such
// M in the tested range leaves the certificate unverified, which is a
// report, not an error.
inline TkCertificate empirical_Tk_certificate(const ModelSpec& model, RegimeId k,
                                              const SimConfig& cfg, double delay,
                                              const std::vector<std::pair<Vec, Vec>>& inits,
                                              int n_levels = 48,
                                              const RadialBoundSpec* radial = nullptr) {
  if (inits.empty()) throw ConfigError("Tk certificate: need at least one initial pair");
  const ModelSpec m = frozen_regime(model);
  if (!m.regime_valid(k)) throw ConfigError("Tk certificate: regime out of range");

  TkCertificate cert;
  cert.n_paths_per_init = static_cast<int>(cfg.n_paths);
  cert.tested_M.resize(static_cast<std::size_t>(n_levels));
  for (int j = 0; j < n_levels; ++j)
    cert.tested_M[static_cast<std::size_t>(j)] =
        cfg.horizon * static_cast<double>(j + 1) / static_cast<double>(n_levels);

  const std::size_t total = inits.size() * static_cast<std::size_t>(cfg.n_paths);
  std::vector<double> couple_times(total, -1.0);  // -1: censored
  parallel_paths(total, cfg.workers, [&](std::size_t i) {
    const std::size_t init_idx = i % inits.size();
    PathRng rng(cfg.seed, i);
    const auto& [xa, xb] = inits[init_idx];
    const HistorySegment phi = HistorySegment::constant(xa, delay, cfg.dt);
    const HistorySegment psi = HistorySegment::constant(xb, delay, cfg.dt);
    SimConfig one = cfg;
    one.n_paths = 1;
    const CoupledPath p = simulate_coupled(m, phi, k, psi, k, one, rng, /*record=*/false);
    if (p.final.couple_time) couple_times[i] = *p.final.couple_time;
  });

  cert.success_prob.assign(inits.size(),
                           std::vector<double>(static_cast<std::size_t>(n_levels), 0.0));
  const double n = static_cast<double>(cfg.n_paths);
  for (std::size_t ii = 0; ii < inits.size(); ++ii) {
    for (std::size_t i = ii; i < total; i += inits.size()) {
      const double T = couple_times[i];
      if (T < 0.0) continue;
      for (int j = 0; j < n_levels; ++j)
        if (T < cert.tested_M[static_cast<std::size_t>(j)])
          cert.success_prob[ii][static_cast<std::size_t>(j)] += 1.0;
    }
    for (auto& v : cert.success_prob[ii]) v /= n;
  }

  for (int j = 0; j < n_levels && !cert.verified; ++j) {
    bool all = true;
    for (std::size_t ii = 0; ii < inits.size(); ++ii) {
      const double p = cert.success_prob[ii][static_cast<std::size_t>(j)];
      const double se = std::sqrt(std::max(p * (1.0 - p), 1e-12) / n);
      if (!(p >= 0.5 + 3.0 * se)) {
        all = false;
        break;
      }
    }
    if (all) {
      cert.verified = true;
      cert.M_hat = cert.tested_M[static_cast<std::size_t>(j)];
    }
  }

  if (radial) {
    if (!radial->F || !radial->dF || !radial->ddF || !(radial->K > 0.0))
      throw ConfigError("Tk certificate: radial bound spec incomplete");
    cert.radial_checked = true;
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& [xa, xb] : inits) {
      if ((xa - xb).norm() <= 0.0) continue;
      const double lv = radial_coupling_generator(radial->dF, radial->ddF, xa, xb, k, m);
      worst = std::max(worst, lv + radial->K);
    }
    cert.radial_worst_margin = worst;
    cert.radial_ok = worst <= 0.0;
    cert.mean_bound = radial->F_sup / radial->K;
  }
  return cert;
}

}  // namespace rcoup
