#include "lidec/io.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "lidec/errors.hpp"
#include "lidec/format.hpp"

namespace lidec {

namespace {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

std::string method_name(IntegrationMethod m) {
  switch (m) {
    case IntegrationMethod::kRk4:
      return "rk4";
    case IntegrationMethod::kRk45:
      return "rk45";
    case IntegrationMethod::kPropagator:
      return "propagator";
  }
  return "?";
}

IntegrationMethod method_from(const std::string& s) {
  if (s == "rk4") return IntegrationMethod::kRk4;
  if (s == "rk45") return IntegrationMethod::kRk45;
  if (s == "propagator") return IntegrationMethod::kPropagator;
  throw ConfigError(0, "unknown integrator '" + s + "'");
}

KeyValues snapshot_fields(const ExperimentSnapshot& s) {
  const auto f = format_double;
  const auto& p = s.params;
  const auto& d = s.protocol.detection;
  return {
      {"omega_mw_rad_s", f(p.omega_mw)},
      {"delta_mw_rad_s", f(p.delta_mw)},
      {"i0", f(p.i0)},
      {"alpha_rad", f(p.alpha)},
      {"delta_laser_rad_s", f(p.delta_laser)},
      {"zeeman_delta_rad_s", f(p.zeeman_delta)},
      {"gamma3_rad_s", f(p.gamma3)},
      {"gamma_lph_rad_s", f(p.gamma_lph)},
      {"gamma_ph_extra_rad_s", f(p.gamma_ph_extra)},
      {"beta1", f(p.beta1)},
      {"beta2", f(p.beta2)},
      {"r1_rad_s", f(s.rates.r1)},
      {"r2_rad_s", f(s.rates.r2)},
      {"p3_m-1", f(s.rates.p3_mean[0])},
      {"p3_m0", f(s.rates.p3_mean[1])},
      {"p3_m+1", f(s.rates.p3_mean[2])},
      {"integrator", method_name(s.integrator.method)},
      {"integrator_dt_s", f(s.integrator.dt)},
      {"rtol", f(s.integrator.rtol)},
      {"atol", f(s.integrator.atol)},
      {"max_steps", std::to_string(s.integrator.max_steps)},
      {"dephasing", s.dephasing == DephasingModel::kFull ? "full" : "half_weight_rayleigh"},
      {"dt_unit_s", f(s.protocol.dt_unit)},
      {"n_max", std::to_string(s.protocol.n_max)},
      {"n_trajectories", std::to_string(s.protocol.n_trajectories)},
      {"probe_duration_s", f(s.protocol.probe_duration)},
      {"detection", d.mode == DetectionModel::Mode::kIdeal ? "ideal" : "thresholded"},
      {"eps_on", f(d.eps_on)},
      {"eps_off", f(d.eps_off)},
      {"bright_rate_per_s", f(d.bright_rate)},
      {"dark_rate_per_s", f(d.dark_rate)},
      {"threshold", std::to_string(d.threshold)},
      {"prep_error", f(s.protocol.prep_error)},
      {"seed", std::to_string(s.protocol.seed)},
  };
}

double number(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError(0, "trajectory header lacks '" + key + "'");
  const auto v = parse_double(it->second);
  if (!v) throw ConfigError(0, "trajectory header '" + key + "' is not a number");
  return *v;
}

template <typename Int>
Int whole(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError(0, "trajectory header lacks '" + key + "'");
  const auto v = parse_integer<Int>(it->second);
  if (!v) throw ConfigError(0, "trajectory header '" + key + "' is not an integer");
  return *v;
}

ExperimentSnapshot snapshot_from(const std::map<std::string, std::string>& kv) {
  ExperimentSnapshot s;
  auto& p = s.params;
  p.omega_mw = number(kv, "omega_mw_rad_s");
  p.delta_mw = number(kv, "delta_mw_rad_s");
  p.i0 = number(kv, "i0");
  p.alpha = number(kv, "alpha_rad");
  p.delta_laser = number(kv, "delta_laser_rad_s");
  p.zeeman_delta = number(kv, "zeeman_delta_rad_s");
  p.gamma3 = number(kv, "gamma3_rad_s");
  p.gamma_lph = number(kv, "gamma_lph_rad_s");
  p.gamma_ph_extra = number(kv, "gamma_ph_extra_rad_s");
  p.beta1 = number(kv, "beta1");
  p.beta2 = number(kv, "beta2");
  s.rates.r1 = number(kv, "r1_rad_s");
  s.rates.r2 = number(kv, "r2_rad_s");
  s.rates.p3_mean = {number(kv, "p3_m-1"), number(kv, "p3_m0"), number(kv, "p3_m+1")};
  s.integrator.method = method_from(kv.at("integrator"));
  s.integrator.dt = number(kv, "integrator_dt_s");
  s.integrator.rtol = number(kv, "rtol");
  s.integrator.atol = number(kv, "atol");
  s.integrator.max_steps = whole<long>(kv, "max_steps");
  s.dephasing = kv.at("dephasing") == "full" ? DephasingModel::kFull : DephasingModel::kHalfWeightRayleigh;
  s.protocol.dt_unit = number(kv, "dt_unit_s");
  s.protocol.n_max = whole<int>(kv, "n_max");
  s.protocol.n_trajectories = whole<int>(kv, "n_trajectories");
  s.protocol.probe_duration = number(kv, "probe_duration_s");
  s.protocol.detection.mode =
      kv.at("detection") == "ideal" ? DetectionModel::Mode::kIdeal : DetectionModel::Mode::kThresholdedCounts;
  s.protocol.detection.eps_on = number(kv, "eps_on");
  s.protocol.detection.eps_off = number(kv, "eps_off");
  s.protocol.detection.bright_rate = number(kv, "bright_rate_per_s");
  s.protocol.detection.dark_rate = number(kv, "dark_rate_per_s");
  s.protocol.detection.threshold = whole<int>(kv, "threshold");
  s.protocol.prep_error = number(kv, "prep_error");
  s.protocol.seed = whole<std::uint64_t>(kv, "seed");
  return s;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.emplace_back(trim(cur));
  return out;
}

}  // namespace

void write_provenance(std::ostream& os, const Provenance& prov) {
  os << "# tool=" << kToolName << " version=" << kToolVersion << "\n";
  os << "# config_hash=" << prov.config_hash << "\n";
  os << "# seed=" << prov.seed << "\n";
}

void write_trajectories(std::ostream& os, std::span<const TrajectoryRecord> records, const Provenance& prov) {
  write_provenance(os, prov);
  if (records.empty()) return;
  for (const auto& [key, value] : snapshot_fields(records.front().snapshot)) os << key << "=" << value << "\n";
  os << "first_index=" << records.front().index << "\n";
  os << "count=" << records.size() << "\n";
  for (std::size_t k = 0; k < records.size(); ++k) {
    if (records[k].index != records.front().index + k || records[k].seed != records.front().seed) {
      throw ConfigMismatch("trajectory records must be consecutive and share one seed");
    }
    std::string bits(records[k].outcomes.size(), '0');
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = records[k].outcomes[i] ? '1' : '0';
    os << bits << "\n";
  }
}

std::vector<TrajectoryRecord> read_trajectories(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::vector<std::string> rows;
  std::string line;
  while (std::getline(is, line)) {
    const std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq != std::string_view::npos) {
      kv.emplace(std::string(trim(t.substr(0, eq))), std::string(trim(t.substr(eq + 1))));
    } else {
      rows.emplace_back(t);
    }
  }
  if (rows.empty()) return {};
  const ExperimentSnapshot snap = snapshot_from(kv);
  const auto first = whole<std::uint64_t>(kv, "first_index");
  std::vector<TrajectoryRecord> records;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    TrajectoryRecord r;
    r.seed = snap.protocol.seed;
    r.index = first + k;
    r.snapshot = snap;
    for (const char ch : rows[k]) {
      if (ch != '0' && ch != '1') throw ConfigError(0, "trajectory rows may contain only 0 and 1");
      r.outcomes.push_back(ch == '1' ? 1 : 0);
    }
    if (r.outcomes.size() != static_cast<std::size_t>(snap.protocol.n_max)) {
      throw ConfigMismatch("trajectory row length differs from n_max");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_curve_csv(std::ostream& os, const AccumulatedCurve& curve, const ExperimentSnapshot& snapshot,
                     const Provenance& prov) {
  write_provenance(os, prov);
  os << "# dt_unit_s=" << format_double(snapshot.protocol.dt_unit) << "\n";
  os << "# omega_mw_rad_s=" << format_double(snapshot.params.omega_mw) << "\n";
  os << "# ci_z=" << format_double(curve.z) << "\n";
  os << "N,theta_rad,p1_mean,ci_low,ci_high,n_samples\n";
  for (std::size_t i = 0; i < curve.n.size(); ++i) {
    os << curve.n[i] << "," << format_double(curve.theta[i]) << "," << format_double(curve.p1_mean[i]) << ","
       << format_double(curve.ci_low[i]) << "," << format_double(curve.ci_high[i]) << "," << curve.n_samples[i]
       << "\n";
  }
}

CurveFile read_curve_csv(std::istream& is, double dt_unit_override) {
  CurveFile file;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string_view t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      // Metadata comments look like "# key=value" (possibly several per line).
      for (const auto& token : split(std::string(t.substr(1)), ' ')) {
        const auto eq = token.find('=');
        if (eq != std::string::npos) file.meta[token.substr(0, eq)] = token.substr(eq + 1);
      }
      continue;
    }
    if (header.empty()) {
      header = split(std::string(t), ',');
      continue;
    }
    std::vector<double> row;
    for (const auto& cell : split(std::string(t), ',')) {
      const auto v = parse_double(cell);
      if (!v) throw ConfigError(line_no, "non-numeric CSV cell '" + cell + "'");
      row.push_back(*v);
    }
    if (row.size() != header.size()) throw ConfigError(line_no, "CSV row has the wrong number of columns");
    rows.push_back(std::move(row));
  }
  const auto column = [&header](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  };

  auto& s = file.samples;
  if (const int c_mean = column("p1_mean"); c_mean >= 0) {
    const int c_n = column("N"), c_lo = column("ci_low"), c_hi = column("ci_high");
    if (c_n < 0 || c_lo < 0 || c_hi < 0) throw ConfigError(0, "accumulated CSV needs N, ci_low and ci_high columns");
    double dt = dt_unit_override;
    if (!(dt > 0.0)) {
      const auto it = file.meta.find("dt_unit_s");
      const auto v = it == file.meta.end() ? std::nullopt : parse_double(it->second);
      if (!v || !(*v > 0.0)) throw ConfigError(0, "curve lacks dt_unit_s metadata; pass the unit drive length");
      dt = *v;
    }
    double z = 1.96;
    if (const auto it = file.meta.find("ci_z"); it != file.meta.end()) z = parse_double(it->second).value_or(1.96);
    for (const auto& r : rows) {
      s.tau.push_back(r[static_cast<std::size_t>(c_n)] * dt);
      s.p1.push_back(r[static_cast<std::size_t>(c_mean)]);
      s.sigma.push_back((r[static_cast<std::size_t>(c_hi)] - r[static_cast<std::size_t>(c_lo)]) / (2.0 * z));
    }
  } else if (const int c_p1 = column("p1"), c_tau = column("tau_s"); c_p1 >= 0 && c_tau >= 0) {
    for (const auto& r : rows) {
      s.tau.push_back(r[static_cast<std::size_t>(c_tau)]);
      s.p1.push_back(r[static_cast<std::size_t>(c_p1)]);
    }
  } else {
    throw ConfigError(0, "CSV has neither (N, p1_mean, ci_low, ci_high) nor (tau_s, p1) columns");
  }
  return file;
}

}  // namespace lidec
