#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace rcoup {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Regime ids are 0-based everywhere inside the library. All user-facing
// output (CSV, reports, error text) renders them 1-based.
using RegimeId = std::int32_t;

inline int regime_label(RegimeId k) { return static_cast<int>(k) + 1; }

// Full-precision rendering for error text; same precision the CSV layer uses.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

// Error taxonomy, mirrored one-to-one by the CLI exit codes:
//   ConfigError  -> 1 (bad config / bad arguments)
//   NumericError -> 2 (numeric trouble or a violated model assumption)
//   anything else-> 3 (internal fault)
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A user callback returned garbage or threw; carries enough text to find
// the offending input again.
struct ModelFault : NumericError {
  using NumericError::NumericError;
};

}  // namespace rcoup
