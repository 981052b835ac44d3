#pragma once

#include "regime_coupler/common.hpp"

#include <cmath>
#include <cstdint>

namespace rcoup {

// splitmix64 output function: the generator is a pure hash of a counter, so
// streams can be split by jumping the counter, never by sharing state.
inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// One stream per simulated path, derived from (master seed, path index).
// Path i always sees the same draws no matter how paths are scheduled over
// workers, which is what makes batch output byte-stable.
class PathRng {
 public:
  PathRng(std::uint64_t master_seed, std::uint64_t path_index)
      : ctr_(seed_for(master_seed, path_index)) {}

  std::uint64_t next_u64() { return splitmix64_mix(ctr_++); }

  // [0, 1), 53 random bits
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller, a fresh pair of uniforms per call. No cached spare: the
  // draw count per call is fixed, which keeps replay / stream-splitting sane.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double exponential(double rate) {
    const double u = 1.0 - uniform01();
    return -std::log(u) / rate;
  }

  Vec normal_vec(int d) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = normal();
    return v;
  }

 private:
  static std::uint64_t seed_for(std::uint64_t master, std::uint64_t path) {
    // two mixing rounds so (seed, path) and (seed, path+1) land far apart
    return splitmix64_mix(splitmix64_mix(master) ^ splitmix64_mix(path * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL));
  }

  std::uint64_t ctr_;
};

}  // namespace rcoup
