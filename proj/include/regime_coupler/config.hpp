#pragma once

// Run configuration: a flat sectioned text format (key = value under
// [section] headers) plus a JSON tree as an accepted alternative. Unknown
// sections or keys are hard errors so a typo cannot silently fall back to a
// default. parse -> serialize -> parse is the identity.

#include "regime_coupler/common.hpp"
#include "regime_coupler/csv.hpp"

#include <json.hpp>

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace rcoup {

struct SimulateSection {
  double dt = 0.01;
  double horizon = 1.0;
  double delay = 0.5;
  std::int64_t n_paths = 1;
  std::vector<double> x0 = {1.0};
  int regime0 = 1;  // 1-based, as all user-facing regime labels
  double state_cap = 0.0;  // 0: no cap
};

struct CoupleSection {
  double dt = 0.01;
  double horizon = 10.0;
  double delay = 0.5;
  std::int64_t n_paths = 1000;
  std::vector<double> x0 = {1.0};
  std::vector<double> y0 = {-1.0};
  int regime0 = 1;
  int regime0_second = 2;
  double meet_eps = 0.0;  // 0: default 0.01 sqrt(dt)
};

struct TailSection {
  int grid_points = 201;
  bool fit = true;
  double t_min = -1.0;  // -1: automatic knee (first point with survival <= 1/2)
};

struct BoundsSection {
  double H = 1.0;
  double M = 2.0;
  double r = 1.0;
  double alpha = 1.0;
  double gamma = 0.0;  // > 2: also report the gamma-indexed rate bound
  int moments_n = 4;
  double mgf_lambda_frac = 0.5;  // MGF evaluated at frac / R_hat
};

struct MeanfieldSection {
  int n_bodies = 2;
  std::vector<double> alpha = {1.0, 0.5};
  std::vector<double> beta = {0.5, 1.0};
  std::string sigma = "identity";  // identity | const:<v> | statedep
  double lambda0 = 1.0;
  double lambda = 0.0;  // 0: lambda0 / 2
  double rho_max = 3.0;
  int rho_points = 31;
  bool drift_check = true;
  int check_directions = 4;
  std::int64_t couple_paths = 0;  // > 0: run the coupled bound comparison
  double dt = 0.005;
  double horizon = 50.0;
  double meet_eps = 0.0;  // 0: integrator default of 0.01 sqrt(dt)
  std::vector<double> rho_inits = {0.5, 1.0, 2.0};
};

struct ValidateSection {
  int n_samples = 200;
  bool corrupt = false;  // fault-injection fixture; makes the coupling suite fail on purpose
};

struct RunConfig {
  std::string model = "ou2";  // registered demo name or a model-parameter file path
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;  // true when the file provided one (env fallback looks at this)
  int workers = 1;

  SimulateSection simulate;
  CoupleSection couple;
  TailSection tail;
  BoundsSection bounds;
  MeanfieldSection meanfield;
  ValidateSection validate;
};

// ---------------------------------------------------------------------------
// scalar parsing

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline double cfg_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing junk");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a real number, got '" + v + "'");
  }
}

inline std::int64_t cfg_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing junk");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline std::uint64_t cfg_u64(const std::string& key, const std::string& v) {
  try {
    // stoull accepts a minus sign and wraps; refuse any sign outright
    if (v.empty() || v[0] == '-' || v[0] == '+') throw std::invalid_argument("signed");
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing junk");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

inline bool cfg_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

inline std::vector<double> cfg_vec(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) out.push_back(cfg_double(key, trim(cur)));
  if (out.empty()) throw ConfigError("config: '" + key + "' expects a comma-separated list");
  return out;
}

inline std::string join_vec(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += csv_real(v[i]);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// key dispatch (one path for both input syntaxes)

namespace detail {

inline void apply_config_key(RunConfig& c, const std::string& section, const std::string& key,
                             const std::string& value) {
  const std::string full = section.empty() ? key : section + "." + key;
  if (section.empty()) {
    if (key == "model") c.model = value;
    else if (key == "out") c.out_dir = value;
    else if (key == "seed") { c.seed = cfg_u64(full, value); c.seed_set = true; }
    else if (key == "workers") c.workers = static_cast<int>(cfg_int(full, value));
    else throw ConfigError("config: unknown key '" + full + "'");
    return;
  }
  if (section == "simulate") {
    auto& s = c.simulate;
    if (key == "dt") s.dt = cfg_double(full, value);
    else if (key == "horizon") s.horizon = cfg_double(full, value);
    else if (key == "delay") s.delay = cfg_double(full, value);
    else if (key == "n_paths") s.n_paths = cfg_int(full, value);
    else if (key == "x0") s.x0 = cfg_vec(full, value);
    else if (key == "regime0") s.regime0 = static_cast<int>(cfg_int(full, value));
    else if (key == "state_cap") s.state_cap = cfg_double(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "couple") {
    auto& s = c.couple;
    if (key == "dt") s.dt = cfg_double(full, value);
    else if (key == "horizon") s.horizon = cfg_double(full, value);
    else if (key == "delay") s.delay = cfg_double(full, value);
    else if (key == "n_paths") s.n_paths = cfg_int(full, value);
    else if (key == "x0") s.x0 = cfg_vec(full, value);
    else if (key == "y0") s.y0 = cfg_vec(full, value);
    else if (key == "regime0") s.regime0 = static_cast<int>(cfg_int(full, value));
    else if (key == "regime0_second") s.regime0_second = static_cast<int>(cfg_int(full, value));
    else if (key == "meet_eps") s.meet_eps = cfg_double(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "tail") {
    auto& s = c.tail;
    if (key == "grid_points") s.grid_points = static_cast<int>(cfg_int(full, value));
    else if (key == "fit") s.fit = cfg_bool(full, value);
    else if (key == "t_min") s.t_min = cfg_double(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "bounds") {
    auto& s = c.bounds;
    if (key == "H") s.H = cfg_double(full, value);
    else if (key == "M") s.M = cfg_double(full, value);
    else if (key == "r") s.r = cfg_double(full, value);
    else if (key == "alpha") s.alpha = cfg_double(full, value);
    else if (key == "gamma") s.gamma = cfg_double(full, value);
    else if (key == "moments_n") s.moments_n = static_cast<int>(cfg_int(full, value));
    else if (key == "mgf_lambda_frac") s.mgf_lambda_frac = cfg_double(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "meanfield") {
    auto& s = c.meanfield;
    if (key == "n_bodies") s.n_bodies = static_cast<int>(cfg_int(full, value));
    else if (key == "alpha") s.alpha = cfg_vec(full, value);
    else if (key == "beta") s.beta = cfg_vec(full, value);
    else if (key == "sigma") s.sigma = value;
    else if (key == "lambda0") s.lambda0 = cfg_double(full, value);
    else if (key == "lambda") s.lambda = cfg_double(full, value);
    else if (key == "rho_max") s.rho_max = cfg_double(full, value);
    else if (key == "rho_points") s.rho_points = static_cast<int>(cfg_int(full, value));
    else if (key == "drift_check") s.drift_check = cfg_bool(full, value);
    else if (key == "check_directions") s.check_directions = static_cast<int>(cfg_int(full, value));
    else if (key == "couple_paths") s.couple_paths = cfg_int(full, value);
    else if (key == "dt") s.dt = cfg_double(full, value);
    else if (key == "horizon") s.horizon = cfg_double(full, value);
    else if (key == "meet_eps") s.meet_eps = cfg_double(full, value);
    else if (key == "rho_inits") s.rho_inits = cfg_vec(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "validate") {
    auto& s = c.validate;
    if (key == "n_samples") s.n_samples = static_cast<int>(cfg_int(full, value));
    else if (key == "corrupt") s.corrupt = cfg_bool(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else {
    throw ConfigError("config: unknown section '" + section + "'");
  }
}

inline void apply_json_value(RunConfig& c, const std::string& section, const std::string& key,
                             const nlohmann::json& v) {
  const std::string full = section.empty() ? key : section + "." + key;
  if (v.is_string()) {
    apply_config_key(c, section, key, v.get<std::string>());
  } else if (v.is_boolean()) {
    apply_config_key(c, section, key, v.get<bool>() ? "true" : "false");
  } else if (v.is_number_unsigned()) {
    apply_config_key(c, section, key, std::to_string(v.get<std::uint64_t>()));
  } else if (v.is_number_integer()) {
    apply_config_key(c, section, key, std::to_string(v.get<std::int64_t>()));
  } else if (v.is_number_float()) {
    apply_config_key(c, section, key, csv_real(v.get<double>()));
  } else if (v.is_array()) {
    std::string joined;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number())
        throw ConfigError("config: '" + full + "' array entries must be numbers");
      if (i) joined += ", ";
      joined += csv_real(v[i].get<double>());
    }
    apply_config_key(c, section, key, joined);
  } else {
    throw ConfigError("config: '" + full + "' has an unsupported value type");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// parse / serialize

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  const std::string t = detail::trim(text);
  if (!t.empty() && t[0] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(t);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: JSON parse failure: ") + e.what());
    }
    for (const auto& [key, val] : j.items()) {
      if (val.is_object()) {
        for (const auto& [k2, v2] : val.items()) detail::apply_json_value(c, key, k2, v2);
      } else {
        detail::apply_json_value(c, "", key, val);
      }
    }
    return c;
  }

  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = detail::trim(s.substr(1, s.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    detail::apply_config_key(c, section, key, value);
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

// Canonical text form: every key, fixed order. parse(serialize(c)) == c.
inline std::string serialize_run_config(const RunConfig& c) {
  std::ostringstream o;
  o << "model = " << c.model << "\n";
  o << "out = " << c.out_dir << "\n";
  if (c.seed_set) o << "seed = " << c.seed << "\n";
  o << "workers = " << c.workers << "\n";

  o << "\n[simulate]\n";
  o << "dt = " << csv_real(c.simulate.dt) << "\n";
  o << "horizon = " << csv_real(c.simulate.horizon) << "\n";
  o << "delay = " << csv_real(c.simulate.delay) << "\n";
  o << "n_paths = " << c.simulate.n_paths << "\n";
  o << "x0 = " << detail::join_vec(c.simulate.x0) << "\n";
  o << "regime0 = " << c.simulate.regime0 << "\n";
  o << "state_cap = " << csv_real(c.simulate.state_cap) << "\n";

  o << "\n[couple]\n";
  o << "dt = " << csv_real(c.couple.dt) << "\n";
  o << "horizon = " << csv_real(c.couple.horizon) << "\n";
  o << "delay = " << csv_real(c.couple.delay) << "\n";
  o << "n_paths = " << c.couple.n_paths << "\n";
  o << "x0 = " << detail::join_vec(c.couple.x0) << "\n";
  o << "y0 = " << detail::join_vec(c.couple.y0) << "\n";
  o << "regime0 = " << c.couple.regime0 << "\n";
  o << "regime0_second = " << c.couple.regime0_second << "\n";
  o << "meet_eps = " << csv_real(c.couple.meet_eps) << "\n";

  o << "\n[tail]\n";
  o << "grid_points = " << c.tail.grid_points << "\n";
  o << "fit = " << (c.tail.fit ? "true" : "false") << "\n";
  o << "t_min = " << csv_real(c.tail.t_min) << "\n";

  o << "\n[bounds]\n";
  o << "H = " << csv_real(c.bounds.H) << "\n";
  o << "M = " << csv_real(c.bounds.M) << "\n";
  o << "r = " << csv_real(c.bounds.r) << "\n";
  o << "alpha = " << csv_real(c.bounds.alpha) << "\n";
  o << "gamma = " << csv_real(c.bounds.gamma) << "\n";
  o << "moments_n = " << c.bounds.moments_n << "\n";
  o << "mgf_lambda_frac = " << csv_real(c.bounds.mgf_lambda_frac) << "\n";

  o << "\n[meanfield]\n";
  o << "n_bodies = " << c.meanfield.n_bodies << "\n";
  o << "alpha = " << detail::join_vec(c.meanfield.alpha) << "\n";
  o << "beta = " << detail::join_vec(c.meanfield.beta) << "\n";
  o << "sigma = " << c.meanfield.sigma << "\n";
  o << "lambda0 = " << csv_real(c.meanfield.lambda0) << "\n";
  o << "lambda = " << csv_real(c.meanfield.lambda) << "\n";
  o << "rho_max = " << csv_real(c.meanfield.rho_max) << "\n";
  o << "rho_points = " << c.meanfield.rho_points << "\n";
  o << "drift_check = " << (c.meanfield.drift_check ? "true" : "false") << "\n";
  o << "check_directions = " << c.meanfield.check_directions << "\n";
  o << "couple_paths = " << c.meanfield.couple_paths << "\n";
  o << "dt = " << csv_real(c.meanfield.dt) << "\n";
  o << "horizon = " << csv_real(c.meanfield.horizon) << "\n";
  o << "meet_eps = " << csv_real(c.meanfield.meet_eps) << "\n";
  o << "rho_inits = " << detail::join_vec(c.meanfield.rho_inits) << "\n";

  o << "\n[validate]\n";
  o << "n_samples = " << c.validate.n_samples << "\n";
  o << "corrupt = " << (c.validate.corrupt ? "true" : "false") << "\n";
  return o.str();
}

}  // namespace rcoup
