#pragma once

// Model registry for the CLI: a few built-in demos addressable by name, plus
// a loader for small key = value parameter files (type = ou | logistic).

#include "regime_coupler/common.hpp"
#include "regime_coupler/config.hpp"
#include "regime_coupler/meanfield.hpp"
#include "regime_coupler/model.hpp"
#include "regime_coupler/segment.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace rcoup {

struct NamedModel {
  std::string name;
  ModelSpec spec;
};

namespace detail {

inline std::vector<RateRow> rate_rows_from_matrix(const std::vector<std::vector<double>>& q) {
  const std::size_t n = q.size();
  std::vector<RateRow> rows(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (q[k].size() != n)
      throw ConfigError("model file: rate matrix row " + std::to_string(k + 1) + " has " +
                        std::to_string(q[k].size()) + " entries, expected " + std::to_string(n));
    for (std::size_t l = 0; l < n; ++l) {
      if (l == k) {
        if (q[k][l] != 0.0)
          throw ConfigError("model file: rate matrix diagonal must be 0 (row " +
                            std::to_string(k + 1) + ")");
        continue;
      }
      if (!(q[k][l] >= 0.0))
        throw ConfigError("model file: negative rate in row " + std::to_string(k + 1));
      if (q[k][l] > 0.0)
        rows[k].push_back({static_cast<RegimeId>(l), q[k][l]});
    }
  }
  return rows;
}

}  // namespace detail

// Two-regime OU with constant switching: the workhorse benchmark. Slow
// wide regime 1, fast narrow regime 2, symmetric 0.25 switching.
inline NamedModel demo_ou2() {
  NamedModel m;
  m.name = "ou2";
  m.spec = ou_benchmark({1.0, 2.0}, {std::sqrt(2.0), 1.0},
                        {{{1, 0.25}}, {{0, 0.25}}})
               .model;
  return m;
}

// Two-regime logistic growth, clamped at zero.
inline NamedModel demo_logistic2() {
  NamedModel m;
  m.name = "logistic2";
  m.spec = logistic_model({1.0, 2.0}, {1.0, 1.0}, {0.3, 0.5}, {{{1, 0.5}}, {{0, 0.5}}});
  return m;
}

// Past-dependent demo: switching rates read the running window average, so
// the regime process genuinely depends on the trailing segment, not just on
// the current point.
inline NamedModel demo_segavg2() {
  NamedModel m;
  m.name = "segavg2";
  ModelSpec& s = m.spec;
  s.dim = 1;
  s.regime_count = 2;
  s.rate_bound = 0.4;
  const std::vector<double> theta = {1.0, 2.0};
  s.drift = [theta](const Vec& x, RegimeId k) {
    Vec v(1);
    v[0] = -theta[static_cast<std::size_t>(k)] * x[0];
    return v;
  };
  s.diffusion = [](const Vec&, RegimeId) {
    Mat m1(1, 1);
    m1(0, 0) = 1.0;
    return m1;
  };
  s.rates = [](const HistorySegment& seg, RegimeId k) {
    const double avg = seg.window_mean().mean();
    RateRow row;
    if (k == 0)
      row.push_back({1, 0.2 + 0.1 * std::tanh(avg)});
    else
      row.push_back({0, 0.3 - 0.1 * std::tanh(avg)});
    return row;
  };
  return m;
}

// ---------------------------------------------------------------------------
// parameter files

// Small flat files: `type = ou` with theta / sigma / rates, or
// `type = logistic` with a / b / sigma / rates. The rate matrix is written
// as semicolon-separated rows of comma-separated reals with a zero diagonal.
inline NamedModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("model file: cannot open '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("model file line " + std::to_string(lineno) + ": expected key = value");
    kv[detail::trim(s.substr(0, eq))] = detail::trim(s.substr(eq + 1));
  }
  const auto need = [&](const std::string& key) -> std::string {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("model file: missing key '" + key + "'");
    return it->second;
  };
  const auto parse_matrix = [&](const std::string& text) {
    std::vector<std::vector<double>> rows;
    std::istringstream ss(text);
    std::string row;
    while (std::getline(ss, row, ';')) rows.push_back(detail::cfg_vec("rates", row));
    return detail::rate_rows_from_matrix(rows);
  };

  const std::string type = need("type");
  NamedModel m;
  m.name = path;
  std::map<std::string, std::string> known;
  if (type == "ou") {
    m.spec = ou_benchmark(detail::cfg_vec("theta", need("theta")),
                          detail::cfg_vec("sigma", need("sigma")), parse_matrix(need("rates")))
                 .model;
    for (const char* k : {"type", "theta", "sigma", "rates"}) known[k] = "";
  } else if (type == "logistic") {
    m.spec = logistic_model(detail::cfg_vec("a", need("a")), detail::cfg_vec("b", need("b")),
                            detail::cfg_vec("sigma", need("sigma")), parse_matrix(need("rates")));
    for (const char* k : {"type", "a", "b", "sigma", "rates"}) known[k] = "";
  } else {
    throw ConfigError("model file: unknown type '" + type + "' (expected ou or logistic)");
  }
  for (const auto& [k, v] : kv)
    if (!known.count(k)) throw ConfigError("model file: unknown key '" + k + "'");
  return m;
}

// Name lookup first, file path second.
inline NamedModel resolve_model(const std::string& name_or_path) {
  if (name_or_path == "ou2") return demo_ou2();
  if (name_or_path == "logistic2") return demo_logistic2();
  if (name_or_path == "segavg2") return demo_segavg2();
  if (std::ifstream probe(name_or_path); probe) return load_model_file(name_or_path);
  throw ConfigError("model '" + name_or_path +
                    "' is neither a registered demo (ou2, logistic2, segavg2) nor a readable "
                    "parameter file");
}

// ---------------------------------------------------------------------------
// mean-field assembly from the config section

// The shipped demo switching for the mean-field runs: two regimes whose
// rates track the running window average across bodies.
inline MeanFieldParams meanfield_from_config(const MeanfieldSection& s) {
  MeanFieldParams p;
  p.n_bodies = s.n_bodies;
  p.alpha = s.alpha;
  p.beta = s.beta;
  p.lambda0 = s.lambda0;
  p.lambda = s.lambda;
  if (s.alpha.size() != 2)
    throw ConfigError("meanfield: the shipped demo switching needs exactly 2 regimes (alpha "
                      "lists " +
                      std::to_string(s.alpha.size()) + ")");
  p.rates = [](const HistorySegment& seg, RegimeId k) {
    const double avg = seg.window_mean().mean();
    RateRow row;
    if (k == 0)
      row.push_back({1, 0.15 + 0.1 * std::tanh(avg)});
    else
      row.push_back({0, 0.25 - 0.1 * std::tanh(avg)});
    return row;
  };
  p.rate_bound = 0.35;

  if (s.sigma == "identity") {
    p.sigma = [n = s.n_bodies](const Vec&, RegimeId) { return Mat(Mat::Identity(n, n)); };
  } else if (s.sigma.rfind("const:", 0) == 0) {
    const double v = detail::cfg_double("meanfield.sigma", s.sigma.substr(6));
    p.sigma = [n = s.n_bodies, v](const Vec&, RegimeId) { return Mat(v * Mat::Identity(n, n)); };
  } else if (s.sigma == "statedep") {
    // Grows with |x_i|; violates the ellipticity ceiling away from 0 and is
    // shipped exactly to demonstrate the rejection path.
    p.sigma = [n = s.n_bodies](const Vec& x, RegimeId) {
      Mat m1 = Mat::Zero(n, n);
      for (int i = 0; i < n; ++i) m1(i, i) = std::sqrt(1.0 + x[i] * x[i]);
      return m1;
    };
  } else {
    throw ConfigError("meanfield: unknown sigma spec '" + s.sigma +
                      "' (expected identity, const:<v>, statedep)");
  }
  return p;
}

}  // namespace rcoup
