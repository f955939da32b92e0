#include "lidec/run_config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "lidec/errors.hpp"
#include "lidec/format.hpp"
#include "lidec/units.hpp"

namespace lidec {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError(0, "invalid value '" + std::string(value) + "' for key '" + std::string(key) + "' (expected " +
                           std::string(expected) + ")");
}

Field real(std::string key, double RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return format_double(c.*member); },
          [key, member](RunConfig& c, std::string_view v) {
            const auto d = parse_double(v);
            if (!d || !std::isfinite(*d)) bad_value(key, v, "a finite number");
            c.*member = *d;
          }};
}

Field optional_real(std::string key, std::optional<double> RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return (c.*member) ? format_double(*(c.*member)) : std::string(); },
          [key, member](RunConfig& c, std::string_view v) {
            if (trim(v) == "none") {
              (c.*member).reset();
              return;
            }
            const auto d = parse_double(v);
            if (!d || !std::isfinite(*d)) bad_value(key, v, "a finite number or 'none'");
            c.*member = *d;
          }};
}

template <typename Int>
Field integer(std::string key, Int RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.*member); },
          [key, member](RunConfig& c, std::string_view v) {
            const auto i = parse_integer<Int>(v);
            if (!i) bad_value(key, v, "an integer");
            c.*member = *i;
          }};
}

Field text(std::string key, std::string RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return c.*member; },
          [member](RunConfig& c, std::string_view v) { c.*member = std::string(trim(v)); }};
}

Field boolean(std::string key, bool RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [key, member](RunConfig& c, std::string_view v) {
            v = trim(v);
            if (v == "true") {
              c.*member = true;
            } else if (v == "false") {
              c.*member = false;
            } else {
              bad_value(key, v, "true or false");
            }
          }};
}

template <typename Enum>
Field choice(std::string key, Enum RunConfig::*member, std::vector<std::pair<std::string, Enum>> names) {
  return {key,
          [member, names](const RunConfig& c) {
            for (const auto& [name, value] : names) {
              if (value == c.*member) return name;
            }
            return std::string("?");
          },
          [key, member, names](RunConfig& c, std::string_view v) {
            v = trim(v);
            std::string expected;
            for (const auto& [name, value] : names) {
              if (v == name) {
                c.*member = value;
                return;
              }
              expected += (expected.empty() ? "" : " | ") + name;
            }
            bad_value(key, v, expected);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      real("omega_mw_2pikhz", &RunConfig::omega_mw_2pikhz),
      real("delta_mw_2pikhz", &RunConfig::delta_mw_2pikhz),
      real("i0", &RunConfig::i0),
      real("alpha_deg", &RunConfig::alpha_deg),
      real("detuning_2pikhz", &RunConfig::detuning_2pikhz),
      real("zeeman_2pikhz", &RunConfig::zeeman_2pikhz),
      real("gamma3_2pikhz", &RunConfig::gamma3_2pikhz),
      real("gamma_lph_2pikhz", &RunConfig::gamma_lph_2pikhz),
      real("gamma_ph_2pikhz", &RunConfig::gamma_ph_2pikhz),
      real("beta1", &RunConfig::beta1),
      real("beta2", &RunConfig::beta2),
      optional_real("pump_rabi_pi_2pikhz", &RunConfig::pump_rabi_pi_2pikhz),
      optional_real("pump_rabi_sigma_2pikhz", &RunConfig::pump_rabi_sigma_2pikhz),
      real("init_n0", &RunConfig::init_n0),
      real("init_n1", &RunConfig::init_n1),
      real("init_n2", &RunConfig::init_n2),
      choice("model", &RunConfig::model,
             {{"four_level", DynamicsModel::kFourLevel}, {"adiabatic", DynamicsModel::kAdiabatic}}),
      choice("dephasing", &RunConfig::dephasing,
             {{"full", DephasingModel::kFull}, {"half_weight_rayleigh", DephasingModel::kHalfWeightRayleigh}}),
      choice("integrator", &RunConfig::integrator,
             {{"rk45", IntegrationMethod::kRk45},
              {"rk4", IntegrationMethod::kRk4},
              {"propagator", IntegrationMethod::kPropagator}}),
      real("rk4_dt_ns", &RunConfig::rk4_dt_ns),
      real("rtol", &RunConfig::rtol),
      real("atol", &RunConfig::atol),
      integer("max_steps", &RunConfig::max_steps),
      real("dt_us", &RunConfig::dt_us),
      integer("n_max", &RunConfig::n_max),
      integer("n_trajectories", &RunConfig::n_trajectories),
      real("probe_ms", &RunConfig::probe_ms),
      choice("detection", &RunConfig::detection,
             {{"ideal", DetectionModel::Mode::kIdeal}, {"thresholded", DetectionModel::Mode::kThresholdedCounts}}),
      real("eps_on", &RunConfig::eps_on),
      real("eps_off", &RunConfig::eps_off),
      real("bright_rate_khz", &RunConfig::bright_rate_khz),
      real("dark_rate_khz", &RunConfig::dark_rate_khz),
      integer("threshold", &RunConfig::threshold),
      real("prep_error", &RunConfig::prep_error),
      integer("seed", &RunConfig::seed),
      real("ci_z", &RunConfig::ci_z),
      real("i0_min", &RunConfig::i0_min),
      real("i0_max", &RunConfig::i0_max),
      real("alpha_min_deg", &RunConfig::alpha_min_deg),
      real("alpha_max_deg", &RunConfig::alpha_max_deg),
      real("zeeman_min_2pikhz", &RunConfig::zeeman_min_2pikhz),
      real("zeeman_max_2pikhz", &RunConfig::zeeman_max_2pikhz),
      boolean("free_zeeman", &RunConfig::free_zeeman),
      text("out", &RunConfig::out),
      text("trajectory_out", &RunConfig::trajectory_out),
  };
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError(0, "unknown key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, value); }

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return names;
}

PhysicalParams RunConfig::physical() const {
  PhysicalParams p;
  p.omega_mw = from_2pi_khz(omega_mw_2pikhz);
  p.delta_mw = from_2pi_khz(delta_mw_2pikhz);
  p.i0 = i0;
  p.alpha = deg_to_rad(alpha_deg);
  p.delta_laser = from_2pi_khz(detuning_2pikhz);
  p.zeeman_delta = from_2pi_khz(zeeman_2pikhz);
  p.gamma3 = from_2pi_khz(gamma3_2pikhz);
  p.gamma_lph = from_2pi_khz(gamma_lph_2pikhz);
  p.gamma_ph_extra = from_2pi_khz(gamma_ph_2pikhz);
  p.beta1 = beta1;
  p.beta2 = beta2;
  try {
    return validated(p);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, e.what());
  }
}

ScatteringRates RunConfig::rates() const {
  const PhysicalParams p = physical();
  if (pump_rabi_pi_2pikhz.has_value() != pump_rabi_sigma_2pikhz.has_value()) {
    throw ConfigError(0, "pump_rabi_pi_2pikhz and pump_rabi_sigma_2pikhz must be given together");
  }
  if (!pump_rabi_pi_2pikhz) return scattering_rates(p);
  const double gl = p.optical_dephasing();
  const double om_pi = from_2pi_khz(*pump_rabi_pi_2pikhz);
  const double om_sigma = from_2pi_khz(*pump_rabi_sigma_2pikhz);
  try {
    return rates_from_values(om_pi * om_pi / (2.0 * gl), om_sigma * om_sigma / gl, p.gamma3);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, e.what());
  }
}

IntegratorConfig RunConfig::integrator_config() const {
  IntegratorConfig c;
  c.method = integrator;
  c.dt = rk4_dt_ns * 1e-9;
  c.rtol = rtol;
  c.atol = atol;
  c.max_steps = static_cast<long>(max_steps);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, e.what());
  }
  return c;
}

ProtocolConfig RunConfig::protocol_config() const {
  ProtocolConfig c;
  c.dt_unit = dt_us * 1e-6;
  c.n_max = n_max;
  c.n_trajectories = n_trajectories;
  c.probe_duration = probe_ms * 1e-3;
  c.detection.mode = detection;
  c.detection.eps_on = eps_on;
  c.detection.eps_off = eps_off;
  c.detection.bright_rate = bright_rate_khz * 1e3;
  c.detection.dark_rate = dark_rate_khz * 1e3;
  c.detection.threshold = threshold;
  c.seed = seed;
  c.prep_error = prep_error;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, e.what());
  }
  return c;
}

ExperimentSnapshot RunConfig::snapshot() const {
  ExperimentSnapshot s;
  s.params = physical();
  s.rates = rates();
  s.integrator = integrator_config();
  s.dephasing = dephasing;
  s.protocol = protocol_config();
  return s;
}

SystemState RunConfig::initial_state() const {
  const double sum = init_n0 + init_n1 + init_n2;
  if (init_n0 < 0.0 || init_n1 < 0.0 || init_n2 < 0.0 || std::abs(sum - 1.0) > 1e-12) {
    throw ConfigError(0, "initial populations must be non-negative and sum to 1");
  }
  return SystemState::populations(init_n0, init_n1, init_n2);
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (seen.contains(key)) throw ConfigError(line_no, "duplicate key '" + std::string(key) + "'");
    try {
      config.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(line_no, e.what());
    }
    seen.emplace(key);
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string serialize(const RunConfig& config) {
  std::string doc;
  for (const auto& f : fields()) {
    const std::string value = f.get(config);
    if (value.empty() && (f.key == "pump_rabi_pi_2pikhz" || f.key == "pump_rabi_sigma_2pikhz")) continue;
    doc += f.key + " = " + value + "\n";
  }
  return doc;
}

std::string config_hash(const RunConfig& config) {
  // Output destinations do not change results, so they stay out of the hash.
  RunConfig content = config;
  content.out.clear();
  content.trajectory_out.clear();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : serialize(content)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace lidec
