#pragma once

#include "regime_coupler/common.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

namespace rcoup {

// Trailing path segment on a uniform grid: the last delay/dt + 1 states of a
// path, newest last. The switching intensities are functionals of this
// window, so it is the data a rate callback receives.
//
// Storage is a flat ring buffer; push overwrites the oldest point, so the
// per-step cost is O(d) regardless of window length.
class HistorySegment {
 public:
  HistorySegment(int dim, double delay, double dt, double head_time = 0.0)
      : dim_(dim), delay_(delay), dt_(dt), head_time_(head_time) {
    if (dim < 1) throw ConfigError("history segment: dim must be >= 1");
    if (!(dt > 0.0) || !(delay > 0.0))
      throw ConfigError("history segment: delay and dt must be positive");
    if (dt > delay * (1.0 + 1e-12))
      throw ConfigError("history segment: dt must not exceed the window length");
    const double steps = delay / dt;
    const double rounded = std::round(steps);
    if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps)) {
      char buf[128];
      std::snprintf(buf, sizeof(buf),
                    "history segment: dt=%g does not divide the window length %g", dt, delay);
      throw ConfigError(buf);
    }
    count_ = static_cast<int>(rounded) + 1;
    data_.assign(static_cast<std::size_t>(count_) * dim_, 0.0);
  }

  static HistorySegment constant(const Vec& x, double delay, double dt,
                                 double head_time = 0.0) {
    HistorySegment s(static_cast<int>(x.size()), delay, dt, head_time);
    for (int i = 0; i < s.count_; ++i) s.write_point(i, x);
    return s;
  }

  int dim() const { return dim_; }
  double delay() const { return delay_; }
  double dt() const { return dt_; }
  double head_time() const { return head_time_; }
  int size() const { return count_; }

  // i = 0 is the oldest grid point, size()-1 the newest
  Eigen::Map<const Vec> point(int i) const {
    return Eigen::Map<const Vec>(data_.data() + slot(i) * dim_, dim_);
  }

  Eigen::Map<const Vec> head() const { return point(count_ - 1); }

  // value at lag s in [-delay, 0], linear interpolation between grid points
  Vec at_time(double s) const {
    const double u = (s + delay_) / dt_;
    if (u < -1e-9 || u > count_ - 1 + 1e-9)
      throw ConfigError("history segment: lag outside the stored window");
    const double uc = std::min(std::max(u, 0.0), static_cast<double>(count_ - 1));
    const int lo = std::min(static_cast<int>(std::floor(uc)), count_ - 2 < 0 ? 0 : count_ - 2);
    const double w = uc - lo;
    if (count_ == 1 || w <= 0.0) return point(lo);
    return (1.0 - w) * point(lo) + w * point(lo + 1);
  }

  // sup over the window of the Euclidean norm of the state
  double sup_norm() const {
    double m = 0.0;
    for (int i = 0; i < count_; ++i) m = std::max(m, point(i).norm());
    return m;
  }

  // mean state over the window, handy for rate functionals
  Vec window_mean() const {
    Vec m = Vec::Zero(dim_);
    for (int i = 0; i < count_; ++i) m += point(i);
    return m / static_cast<double>(count_);
  }

  void push(const Vec& x) {
    if (x.size() != dim_) throw ConfigError("history segment: push with wrong dimension");
    if (!x.allFinite()) throw NumericError("history segment: push of a non-finite state");
    write_point_raw(start_, x);  // overwrite the oldest slot, it becomes the newest
    start_ = (start_ + 1) % count_;
    head_time_ += dt_;
  }

  bool same_grid(const HistorySegment& o) const {
    return dim_ == o.dim_ && count_ == o.count_ && dt_ == o.dt_ && delay_ == o.delay_;
  }

  bool identical_values(const HistorySegment& o) const {
    if (!same_grid(o)) return false;
    for (int i = 0; i < count_; ++i)
      if (point(i) != o.point(i)) return false;
    return true;
  }

 private:
  int slot(int i) const { return (start_ + i) % count_; }

  void write_point(int i, const Vec& x) { write_point_raw(slot(i), x); }

  void write_point_raw(int s, const Vec& x) {
    Eigen::Map<Vec>(data_.data() + static_cast<std::size_t>(s) * dim_, dim_) = x;
  }

  int dim_;
  double delay_;
  double dt_;
  double head_time_;
  int count_ = 0;
  int start_ = 0;  // ring index of the oldest point
  std::vector<double> data_;
};

inline void segment_push(HistorySegment& seg, const Vec& x) { seg.push(x); }

// sup-distance between two segments on the same grid:
// max over grid points of the pointwise Euclidean distance
inline double segment_distance(const HistorySegment& a, const HistorySegment& b) {
  if (!a.same_grid(b))
    throw ConfigError("segment distance: segments live on different grids");
  double m = 0.0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, (a.point(i) - b.point(i)).norm());
  return m;
}

}  // namespace rcoup
