#pragma once

// Self-contained invariant suites behind the `validate` command. Each suite
// re-derives a property from scratch with seeded randomness and reports
// failures as text, so a broken build fails loudly and reproducibly.

#include "regime_coupler/common.hpp"
#include "regime_coupler/coupling.hpp"
#include "regime_coupler/ergodicity.hpp"
#include "regime_coupler/meanfield.hpp"
#include "regime_coupler/rng.hpp"
#include "regime_coupler/segment.hpp"
#include "regime_coupler/switching.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace rcoup {

struct SuiteResult {
  std::string name;
  int n_checks = 0;
  std::vector<std::string> failures;
  bool passed() const { return failures.empty() && n_checks > 0; }
};

struct ValidateOptions {
  int n_samples = 200;
  std::uint64_t seed = 0;
  bool corrupt_rates = false;  // inject a 1e-6 error into one coupled law entry
};

namespace detail {

inline RateRow random_rate_row(PathRng& rng, int n_regimes, RegimeId self, double scale) {
  RateRow row;
  for (RegimeId to = 0; to < n_regimes; ++to) {
    if (to == self) continue;
    const double u = rng.uniform01();
    if (u < 0.4) continue;  // keep rows sparse
    row.push_back({to, rng.uniform(0.0, scale)});
  }
  return row;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// individual suites

inline SuiteResult suite_rng(const ValidateOptions& opt) {
  SuiteResult s{"rng", 0, {}};
  PathRng a(opt.seed, 1), b(opt.seed, 1), c(opt.seed, 2);
  bool same = true, differs = false;
  for (int i = 0; i < 64; ++i) {
    const auto va = a.next_u64();
    same = same && va == b.next_u64();
    differs = differs || va != c.next_u64();
  }
  ++s.n_checks;
  if (!same) s.failures.push_back("same (seed, path) produced different streams");
  ++s.n_checks;
  if (!differs) s.failures.push_back("different path indices produced identical streams");

  PathRng r(opt.seed, 3);
  const int n = 10000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += r.uniform01();
  const double mean = sum / n;
  ++s.n_checks;
  if (std::abs(mean - 0.5) > 5.0 / std::sqrt(12.0 * n))
    s.failures.push_back("uniform01 mean " + fmt_g17(mean) + " off by more than 5 sigma");
  return s;
}

inline SuiteResult suite_segment(const ValidateOptions& opt) {
  SuiteResult s{"segment", 0, {}};
  PathRng rng(opt.seed, 4);
  Vec x0(2);
  x0 << 1.5, -0.5;
  HistorySegment seg = HistorySegment::constant(x0, 1.0, 0.125);
  ++s.n_checks;
  if ((seg.at_time(-0.4) - x0).norm() > 1e-15)
    s.failures.push_back("constant segment did not interpolate to its value");
  for (int i = 0; i < 32; ++i) {
    Vec x(2);
    x << rng.normal(), rng.normal();
    seg.push(x);
  }
  ++s.n_checks;
  if (std::abs(seg.head_time() - 32 * 0.125) > 1e-12)
    s.failures.push_back("head time did not advance by pushes");
  HistorySegment other = seg;
  ++s.n_checks;
  if (segment_distance(seg, other) != 0.0)
    s.failures.push_back("segment distance to a copy is nonzero");
  Vec bump = other.head();
  bump[0] += 0.25;
  other.push(bump);
  seg.push(other.head() - Vec::Unit(2, 0) * 0.25);
  ++s.n_checks;
  if (std::abs(segment_distance(seg, other) - 0.25) > 1e-12)
    s.failures.push_back("segment distance missed a head perturbation");
  return s;
}

inline SuiteResult suite_intervals(const ValidateOptions& opt) {
  SuiteResult s{"intervals", 0, {}};
  PathRng rng(opt.seed, 5);
  for (int rep = 0; rep < opt.n_samples; ++rep) {
    const int n = 2 + static_cast<int>(rng.uniform01() * 20);
    const RegimeId self = static_cast<RegimeId>(rng.uniform01() * n);
    const RateRow row = detail::random_rate_row(rng, n, self, 2.0);
    const IntervalTable table = build_intervals(row, self);
    ++s.n_checks;
    if (std::abs(table.total - row_sum(row)) > 1e-12 * std::max(1.0, row_sum(row))) {
      s.failures.push_back("interval lengths do not add up to the row sum");
      continue;
    }
    // every interval maps to its own target, just past the table to nothing
    bool ok = true;
    for (const auto& iv : table.intervals) {
      const double z = 0.5 * (iv.lo + iv.hi);
      ok = ok && h_eval(table, self, z) == iv.to - self;
    }
    ok = ok && h_eval(table, self, table.total + 0.1) == 0;
    ++s.n_checks;
    if (!ok) s.failures.push_back("interval membership did not map to its target");
  }
  return s;
}

inline SuiteResult suite_basic_coupling(const ValidateOptions& opt) {
  SuiteResult s{"basic-coupling", 0, {}};
  PathRng rng(opt.seed, 6);
  for (int rep = 0; rep < opt.n_samples; ++rep) {
    const int n = 2 + static_cast<int>(rng.uniform01() * 30);
    const RegimeId k = static_cast<RegimeId>(rng.uniform01() * n);
    RegimeId l = static_cast<RegimeId>(rng.uniform01() * n);
    const RateRow row_k = detail::random_rate_row(rng, n, k, 1.5);
    const RateRow row_l = detail::random_rate_row(rng, n, l, 1.5);
    CoupledJumpLaw law = coupled_jump_law(row_k, row_l, k, l);
    if (opt.corrupt_rates && rep == 0 && !law.entries.empty())
      law.entries.front().rate += 1e-6;  // deliberate: the check below must catch this
    ++s.n_checks;
    if (!marginal_consistency_check(law, row_k, row_l))
      s.failures.push_back("marginal consistency violated (sample " + std::to_string(rep) + ")");
  }
  return s;
}

inline SuiteResult suite_reflection(const ValidateOptions& opt) {
  SuiteResult s{"reflection", 0, {}};
  PathRng rng(opt.seed, 7);
  for (int rep = 0; rep < opt.n_samples; ++rep) {
    const int d = 1 + static_cast<int>(rng.uniform01() * 16);
    Vec x = rng.normal_vec(d), y = rng.normal_vec(d);
    if ((x - y).norm() < 1e-8) continue;
    const Mat h = reflection_matrix(x, y);
    ++s.n_checks;
    if ((h * h.transpose() - Mat::Identity(d, d)).norm() > 1e-12)
      s.failures.push_back("reflection is not orthogonal");
    ++s.n_checks;
    if ((h - h.transpose()).norm() > 1e-12) s.failures.push_back("reflection is not symmetric");
    ++s.n_checks;
    if ((h * (x - y) + (x - y)).norm() > 1e-12 * (x - y).norm())
      s.failures.push_back("reflection does not negate the separation vector");
  }
  return s;
}

inline SuiteResult suite_constants(const ValidateOptions& opt) {
  SuiteResult s{"theory-constants", 0, {}};
  PathRng rng(opt.seed, 8);
  for (int rep = 0; rep < opt.n_samples; ++rep) {
    const double H = rng.uniform(0.01, 2.0);
    const double M = rng.uniform(0.1, 5.0);
    const double r = rng.uniform(0.05, 2.0);
    const double alpha = rng.uniform(0.05, std::min(2.0, H + 0.05));
    const TheoryConstants c = theory_constants(H, M, r, alpha);
    bool ok = c.delta2 > 0.0 && c.delta2 <= 0.5;
    ok = ok && c.rho > 0.5 && c.rho < 1.0;
    ok = ok && c.R > 0.0 && c.R_hat > 0.0 && c.beta_lb > 0.0;
    ok = ok && std::abs(c.N - 2.0 / alpha) <= 1e-12 * c.N;
    ok = ok && std::abs(c.rho - (1.0 - 0.5 * c.delta2)) <= 1e-15;
    // doubling alpha shrinks the waiting budget and every derived bound
    const TheoryConstants c2 = theory_constants(H, M, r, 2.0 * alpha);
    ok = ok && c2.N < c.N && c2.R < c.R && c2.R_hat < c.R_hat && c2.beta_lb > c.beta_lb;
    ++s.n_checks;
    if (!ok) s.failures.push_back("constants invariants failed at H=" + fmt_g17(H));
  }
  return s;
}

inline SuiteResult suite_polylog(const ValidateOptions&) {
  SuiteResult s{"polylog", 0, {}};
  for (int n = 1; n <= 4; ++n)
    for (int i = 1; i <= 9; ++i) {
      const double rho = 0.1 * i;
      const double a = polylog_neg_closed(rho, n);
      const double b = polylog_neg_series(rho, n);
      ++s.n_checks;
      if (std::abs(a - b) > 1e-9 * std::max(1.0, std::abs(a)))
        s.failures.push_back("closed form and series disagree at n=" + std::to_string(n) +
                             ", rho=" + fmt_g17(rho));
    }
  for (int n = 1; n <= 8; ++n)
    for (int i = 1; i <= 9; ++i) {
      const PolylogCheck chk = polylog_bound_check(0.1 * i, n);
      ++s.n_checks;
      if (!chk.ok)
        s.failures.push_back("series bound violated at n=" + std::to_string(n) +
                             ", rho=" + fmt_g17(0.1 * i));
      if (n == 1) {
        ++s.n_checks;
        if (std::abs(chk.lhs - chk.rhs) > 1e-12 * chk.rhs)
          s.failures.push_back("n=1 should be exact equality, rho=" + fmt_g17(0.1 * i));
      }
    }
  return s;
}

inline SuiteResult suite_g_function(const ValidateOptions&) {
  SuiteResult s{"g-function", 0, {}};
  GFunctionParams gp;
  gp.kappa = 4.0;
  gp.lambda = 1.0;
  gp.n_bodies = 1.0;
  gp.theta = 0.5;
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(0.2 * i);
  const GFunctionTable t = g_function_table(gp, grid, 1e-8);
  ++s.n_checks;
  if (t.G.front() != 0.0) s.failures.push_back("G(0) must be exactly 0");
  for (std::size_t i = 0; i + 1 < t.G.size(); ++i) {
    ++s.n_checks;
    if (!(t.G[i] <= t.G[i + 1]))
      s.failures.push_back("G is not nondecreasing at rho=" + fmt_g17(t.rho[i + 1]));
  }
  for (std::size_t i = 0; i < t.f.size(); ++i) {
    ++s.n_checks;
    if (!(t.f[i] >= 0.0)) s.failures.push_back("f went negative at rho=" + fmt_g17(t.rho[i]));
  }
  ++s.n_checks;
  if (!(t.G.back() <= t.G_infinity))
    s.failures.push_back("G exceeded its computed limit");
  // G'' = -1 - g G' checked against a centered difference of f = G'
  const double h = 1e-5;
  for (double rho : {0.5, 1.0, 2.0}) {
    const double fp = (G_fn(rho + h, gp).second - G_fn(rho - h, gp).second) / (2.0 * h);
    const double expected = -1.0 - g_fn(rho, gp) * G_fn(rho, gp).second;
    ++s.n_checks;
    if (std::abs(fp - expected) > 1e-4 * std::max(1.0, std::abs(expected)))
      s.failures.push_back("G'' identity failed at rho=" + fmt_g17(rho) + ": fd " + fmt_g17(fp) +
                           " vs " + fmt_g17(expected));
  }
  return s;
}

inline SuiteResult suite_glued_start(const ValidateOptions& opt) {
  SuiteResult s{"glued-start", 0, {}};
  // Identical segments, equal regimes, zero noise: the pair is born glued
  // and the coupling completes after exactly one history window.
  ModelSpec m;
  m.dim = 1;
  m.regime_count = 2;
  m.rate_bound = 0.0;
  m.drift = [](const Vec& x, RegimeId) { return Vec(-x); };
  m.diffusion = [](const Vec&, RegimeId) { return Mat(Mat::Zero(1, 1)); };
  m.rates = [](const HistorySegment&, RegimeId) { return RateRow{}; };
  Vec x0(1);
  x0 << 1.0;
  const double r = 0.5;
  const HistorySegment phi = HistorySegment::constant(x0, r, 0.01);
  SimConfig cfg;
  cfg.dt = 0.01;
  cfg.horizon = 2.0;
  cfg.seed = opt.seed;
  PathRng rng(opt.seed, 9);
  const CoupledPath p = simulate_coupled(m, phi, 0, phi, 0, cfg, rng);
  ++s.n_checks;
  if (!p.final.couple_time || std::abs(*p.final.couple_time - r) > 1e-9)
    s.failures.push_back("glued start did not couple at exactly one window");
  ++s.n_checks;
  if (!p.final.meet_time || *p.final.meet_time != 0.0)
    s.failures.push_back("glued start did not meet at time zero");
  return s;
}

// ---------------------------------------------------------------------------
// orchestration

inline std::vector<SuiteResult> run_validation_suites(const ValidateOptions& opt) {
  std::vector<SuiteResult> out;
  out.push_back(suite_rng(opt));
  out.push_back(suite_segment(opt));
  out.push_back(suite_intervals(opt));
  out.push_back(suite_basic_coupling(opt));
  out.push_back(suite_reflection(opt));
  out.push_back(suite_constants(opt));
  out.push_back(suite_polylog(opt));
  out.push_back(suite_g_function(opt));
  out.push_back(suite_glued_start(opt));
  return out;
}

inline std::string validation_report_text(const std::vector<SuiteResult>& suites) {
  std::ostringstream o;
  bool all = true;
  for (const auto& s : suites) {
    o << (s.passed() ? "PASS" : "FAIL") << "  " << s.name << "  (" << s.n_checks << " checks";
    if (!s.failures.empty()) o << ", " << s.failures.size() << " failures";
    o << ")\n";
    for (const auto& f : s.failures) o << "      " << f << "\n";
    all = all && s.passed();
  }
  o << (all ? "ALL SUITES PASSED" : "SUITE FAILURES PRESENT") << "\n";
  return o.str();
}

inline std::uint64_t report_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace rcoup
