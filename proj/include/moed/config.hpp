#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace moed {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // grids
  int nx = 24, ny = 24, n_m = 65;
  double t0 = 0.0, t_final = 1.0;
  // PDE
  double kappa = 0.001;
  std::string velocity_field = "vortex";
  double velocity_scale = 1.0;
  double source_x = 0.5, source_y = 0.35;
  double source_width = 0.05;
  // priors
  double matern_sigma = 80.0, matern_ell = 0.17, m_prior_mean = 65.0;
  double laplace_eps = 4.5e-3, laplace_alpha = 2.2e-1, b_prior_mean = 50.0;
  double robin_coeff = -1.0;  // negative: use sqrt(eps*alpha)
  // observation
  std::vector<std::pair<double, double>> sensors;
  double window_a = 0.95, window_b = 0.99;
  double noise_std = 0.25;
  // optimizer
  double gamma = 0.1;
  int target_sensors = 10;
  std::vector<double> epsilon_schedule = {1.0, 0.1, 0.01, 0.001};
  double box_tol = 1e-8;
  long box_max_iters = 5000;
  // study
  int study_b_samples = 20;
  int study_noise_samples = 50;
  // truth for studies (substitute curve, overridable)
  double truth_bump1_amp = 40.0, truth_bump1_center = 0.3, truth_bump1_width = 0.1;
  double truth_bump2_amp = -30.0, truth_bump2_center = 0.7, truth_bump2_width = 0.08;
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";

  double effective_robin() const {
    return robin_coeff >= 0.0 ? robin_coeff : std::sqrt(laplace_eps * laplace_alpha);
  }

  /// Stand-in truth source amplitude m(t) for MAP-error studies.
  double truth_m(double t) const {
    auto bump = [](double a, double c, double w, double t) {
      const double z = (t - c) / w;
      return a * std::exp(-z * z);
    };
    return m_prior_mean + bump(truth_bump1_amp, truth_bump1_center, truth_bump1_width, t) +
           bump(truth_bump2_amp, truth_bump2_center, truth_bump2_width, t);
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (nx < 2 || ny < 2) fail("nx and ny must be at least 2");
    if (n_m < 2) fail("n_m must be at least 2");
    if (!(t_final > t0)) fail("t_final must exceed t0");
    if (!(kappa > 0.0)) fail("kappa must be positive");
    if (source_x < 0.0 || source_x > 1.0 || source_y < 0.0 || source_y > 1.0)
      fail("source center must lie inside the unit square");
    if (!(source_width > 0.0)) fail("source_width must be positive");
    if (!(matern_sigma > 0.0) || !(matern_ell > 0.0)) fail("matern parameters must be positive");
    if (laplace_eps < 0.0 || !(laplace_alpha > 0.0)) fail("laplace parameters invalid");
    if (sensors.empty()) fail("at least one sensor is required");
    if (window_a > window_b || window_a < t0 || window_b > t_final)
      fail("observation window must lie inside the time grid");
    if (!(noise_std > 0.0)) fail("noise_std must be positive");
    if (gamma < 0.0) fail("gamma must be nonnegative");
  }

  /// Canonical serialization: the basis for the cache fingerprint.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "nx=" << nx << ";ny=" << ny << ";n_m=" << n_m << ";t0=" << t0 << ";tf=" << t_final
       << ";kappa=" << kappa << ";vel=" << velocity_field << ";v0=" << velocity_scale
       << ";sx=" << source_x << ";sy=" << source_y << ";L=" << source_width
       << ";msigma=" << matern_sigma << ";mell=" << matern_ell << ";mpr=" << m_prior_mean
       << ";eps=" << laplace_eps << ";alpha=" << laplace_alpha << ";bpr=" << b_prior_mean
       << ";robin=" << effective_robin() << ";wa=" << window_a << ";wb=" << window_b
       << ";noise=" << noise_std << ";sensors=";
    for (const auto& [x, y] : sensors) os << "(" << x << "," << y << ")";
    return os.str();
  }

  std::uint64_t fingerprint() const {
    // FNV-1a
    std::uint64_t h = 14695981039346656037ULL;
    for (const char c : canonical()) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    return h;
  }
};

/// 5x5 sensor lattice on {0.1,0.3,0.5,0.7,0.9}^2.
inline std::vector<std::pair<double, double>> lattice_sensors(int per_axis) {
  std::vector<std::pair<double, double>> s;
  for (int j = 0; j < per_axis; ++j)
    for (int i = 0; i < per_axis; ++i)
      s.emplace_back(0.1 + 0.8 * i / (per_axis - 1.0), 0.1 + 0.8 * j / (per_axis - 1.0));
  return s;
}

/// Named presets: `desk` (fast, acceptance scale) and `paper5` (full scale).
inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  if (name == "desk") {
    c.nx = c.ny = 24;
    c.n_m = 65;
    c.sensors = lattice_sensors(5);
    c.study_b_samples = 20;
    c.study_noise_samples = 50;
  } else if (name == "paper5") {
    c.nx = c.ny = 40;
    c.n_m = 257;
    c.sensors = lattice_sensors(10);
    c.study_b_samples = 200;
    c.study_noise_samples = 500;
  } else {
    throw ConfigError("unknown preset: " + name);
  }
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline double parse_double(const std::string& v, int line) {
  size_t pos = 0;
  double d;
  try {
    d = std::stod(v, &pos);
  } catch (...) {
    throw ConfigError("line " + std::to_string(line) + ": expected a number, got '" + v + "'");
  }
  if (pos != v.size())
    throw ConfigError("line " + std::to_string(line) + ": trailing characters in number '" + v + "'");
  return d;
}

inline std::vector<double> parse_list(const std::string& v, int line) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(trim(item), line));
  return out;
}

}  // namespace detail

/// Parse a sectioned key-value config file. Unknown keys are errors with the
/// offending line number. Starts from the `preset` named in [problem] (default
/// `desk`), then overrides field by field.
inline ExperimentConfig parse_config(std::istream& in) {
  using detail::parse_double;
  using detail::parse_list;
  using detail::trim;

  // first pass: find the preset
  std::vector<std::pair<int, std::string>> lines;
  std::string raw;
  int lineno = 0;
  std::string preset = "desk";
  while (std::getline(in, raw)) {
    ++lineno;
    std::string s = trim(raw);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    lines.emplace_back(lineno, s);
    if (s.rfind("preset", 0) == 0) {
      const size_t eq = s.find('=');
      if (eq != std::string::npos) preset = trim(s.substr(eq + 1));
    }
  }
  ExperimentConfig c = preset_config(preset);
  c.sensors.clear();
  bool sensors_given = false;

  std::string section = "problem";
  for (const auto& [ln, s] : lines) {
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ConfigError("line " + std::to_string(ln) + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(ln) + ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    const std::string qk = section + "." + key;

    if (qk == "problem.preset") continue;
    else if (qk == "problem.nx") c.nx = static_cast<int>(parse_double(val, ln));
    else if (qk == "problem.ny") c.ny = static_cast<int>(parse_double(val, ln));
    else if (qk == "problem.n_m") c.n_m = static_cast<int>(parse_double(val, ln));
    else if (qk == "problem.t0") c.t0 = parse_double(val, ln);
    else if (qk == "problem.t_final") c.t_final = parse_double(val, ln);
    else if (qk == "problem.seed") c.seed = static_cast<std::uint64_t>(parse_double(val, ln));
    else if (qk == "problem.out_dir") c.out_dir = val;
    else if (qk == "pde.kappa") c.kappa = parse_double(val, ln);
    else if (qk == "pde.velocity_field") c.velocity_field = val;
    else if (qk == "pde.velocity_scale") c.velocity_scale = parse_double(val, ln);
    else if (qk == "pde.source_x") c.source_x = parse_double(val, ln);
    else if (qk == "pde.source_y") c.source_y = parse_double(val, ln);
    else if (qk == "pde.source_width") c.source_width = parse_double(val, ln);
    else if (qk == "prior.matern_sigma") c.matern_sigma = parse_double(val, ln);
    else if (qk == "prior.matern_ell") c.matern_ell = parse_double(val, ln);
    else if (qk == "prior.m_mean") c.m_prior_mean = parse_double(val, ln);
    else if (qk == "prior.laplace_eps") c.laplace_eps = parse_double(val, ln);
    else if (qk == "prior.laplace_alpha") c.laplace_alpha = parse_double(val, ln);
    else if (qk == "prior.b_mean") c.b_prior_mean = parse_double(val, ln);
    else if (qk == "prior.robin_coeff") c.robin_coeff = parse_double(val, ln);
    else if (qk == "observation.window_a") c.window_a = parse_double(val, ln);
    else if (qk == "observation.window_b") c.window_b = parse_double(val, ln);
    else if (qk == "observation.noise_std") c.noise_std = parse_double(val, ln);
    else if (qk == "observation.sensor") {
      const auto xy = parse_list(val, ln);
      if (xy.size() != 2)
        throw ConfigError("line " + std::to_string(ln) + ": sensor needs exactly x, y");
      c.sensors.emplace_back(xy[0], xy[1]);
      sensors_given = true;
    }
    else if (qk == "observation.sensor_lattice") {
      c.sensors = lattice_sensors(static_cast<int>(parse_double(val, ln)));
      sensors_given = true;
    }
    else if (qk == "optimizer.gamma") c.gamma = parse_double(val, ln);
    else if (qk == "optimizer.target_sensors")
      c.target_sensors = static_cast<int>(parse_double(val, ln));
    else if (qk == "optimizer.epsilon_schedule") c.epsilon_schedule = parse_list(val, ln);
    else if (qk == "optimizer.box_tol") c.box_tol = parse_double(val, ln);
    else if (qk == "optimizer.box_max_iters")
      c.box_max_iters = static_cast<long>(parse_double(val, ln));
    else if (qk == "study.b_samples") c.study_b_samples = static_cast<int>(parse_double(val, ln));
    else if (qk == "study.noise_samples")
      c.study_noise_samples = static_cast<int>(parse_double(val, ln));
    else if (qk == "study.truth_bump1_amp") c.truth_bump1_amp = parse_double(val, ln);
    else if (qk == "study.truth_bump1_center") c.truth_bump1_center = parse_double(val, ln);
    else if (qk == "study.truth_bump1_width") c.truth_bump1_width = parse_double(val, ln);
    else if (qk == "study.truth_bump2_amp") c.truth_bump2_amp = parse_double(val, ln);
    else if (qk == "study.truth_bump2_center") c.truth_bump2_center = parse_double(val, ln);
    else if (qk == "study.truth_bump2_width") c.truth_bump2_width = parse_double(val, ln);
    else
      throw ConfigError("line " + std::to_string(ln) + ": unknown key '" + qk + "'");
  }
  if (!sensors_given) c.sensors = preset_config(preset).sensors;
  c.validate();
  return c;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_config(in);
}

}  // namespace moed
