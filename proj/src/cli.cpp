#include "lidec/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lidec/dynamics.hpp"
#include "lidec/errors.hpp"
#include "lidec/estimation.hpp"
#include "lidec/format.hpp"
#include "lidec/io.hpp"
#include "lidec/protocol.hpp"
#include "lidec/run_config.hpp"
#include "lidec/units.hpp"

namespace lidec {

namespace {

using nlohmann::ordered_json;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;  // key=value
  std::map<std::string, std::string> overrides;
  std::string format = "csv";
};

/// Registers the options every subcommand accepts. Knob flags are kept as text
/// and handed to RunConfig::set, so they are validated exactly like file entries.
void add_common(CLI::App& cmd, CommonOptions& o, const std::string& default_format) {
  o.format = default_format;
  cmd.add_option("--config", o.config_path, "Run configuration document");
  cmd.add_option("--set", o.sets, "Override any config key: key=value (repeatable)");
  cmd.add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  const std::vector<std::pair<std::string, std::string>> knobs = {
      {"--seed", "seed"},
      {"--out", "out"},
      {"--i0", "i0"},
      {"--alpha-deg", "alpha_deg"},
      {"--b-field-2pikhz", "zeeman_2pikhz"},
      {"--omega-2pikhz", "omega_mw_2pikhz"},
      {"--detuning-2pikhz", "detuning_2pikhz"},
      {"--dt-us", "dt_us"},
      {"--nmax", "n_max"},
      {"--ntraj", "n_trajectories"},
  };
  for (const auto& [flag, key] : knobs) {
    cmd.add_option_function<std::string>(
        flag, [&o, key = key](const std::string& v) { o.overrides[key] = v; }, "Overrides config key " + key);
  }
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(0, "--set expects key=value, got '" + kv + "'");
    c.set(trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
  }
  for (const auto& [key, value] : o.overrides) c.set(key, value);
  return c;
}

Provenance provenance(const RunConfig& c) { return {config_hash(c), c.seed}; }

ordered_json provenance_json(const Provenance& p) {
  ordered_json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["config_hash"] = p.config_hash;
  j["seed"] = p.seed;
  return j;
}

ordered_json optional_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

/// Writes to the configured file, or to `out` when no path is set.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) {
    if (path.empty() || path == "-") {
      os_ = &fallback;
    } else {
      file_.open(path, std::ios::binary);
      if (!file_) throw ConfigError(0, "cannot open output file '" + path + "'");
      os_ = &file_;
    }
  }
  std::ostream& stream() { return *os_; }

 private:
  std::ofstream file_;
  std::ostream* os_ = nullptr;
};

std::vector<double> drive_times(const RunConfig& c) {
  if (c.n_max < 0) throw ConfigError(0, "n_max must be non-negative");
  return uniform_grid(c.dt_us * 1e-6, c.n_max, true);
}

Trajectory simulate(const RunConfig& c, std::span<const double> times) {
  const auto snap = c.snapshot();
  const auto init = c.initial_state();
  if (c.model == DynamicsModel::kAdiabatic) {
    return integrate_adiabatic(init, snap.params, snap.rates, snap.integrator, times, snap.dephasing);
  }
  return integrate(init, snap.params, snap.rates, snap.integrator, times, snap.dephasing);
}

// --- rates ---------------------------------------------------------------

ordered_json rates_json(const RunConfig& c) {
  const auto p = c.physical();
  const auto r = c.rates();
  const auto eff = effective_rates(p, r);
  ordered_json j;
  j["provenance"] = provenance_json(provenance(c));
  j["units"] = "rates in 2pi*kHz; populations dimensionless";
  j["r1"] = to_2pi_khz(r.r1);
  j["r2"] = to_2pi_khz(r.r2);
  j["r2_over_r1"] = r.r1 > 0 ? ordered_json(r.r2 / r.r1) : ordered_json(nullptr);
  j["p3"] = {{"m-1", r.p3_mean[0]}, {"m0", r.p3_mean[1]}, {"m+1", r.p3_mean[2]}};
  // No decoherence at all means an infinite T2: reported absent like Gamma_eff.
  j["gamma_eff"] = eff.gamma_eff > 0 ? ordered_json(to_2pi_khz(eff.gamma_eff)) : ordered_json(nullptr);
  j["Gamma_eff"] = eff.Gamma_eff ? ordered_json(to_2pi_khz(*eff.Gamma_eff)) : ordered_json(nullptr);
  j["p1_inf"] = optional_json(eff.p1_inf);
  return j;
}

void cmd_rates(const RunConfig& c, const std::string& format, std::ostream& os) {
  const ordered_json j = rates_json(c);
  if (format == "json") {
    os << j.dump(2) << "\n";
    return;
  }
  write_provenance(os, provenance(c));
  os << "quantity,value,unit\n";
  const auto row = [&os](const std::string& name, const ordered_json& v, const char* unit) {
    os << name << "," << (v.is_null() ? std::string("absent") : format_double(v.get<double>())) << "," << unit
       << "\n";
  };
  row("r1", j["r1"], "2pi_kHz");
  row("r2", j["r2"], "2pi_kHz");
  row("r2_over_r1", j["r2_over_r1"], "1");
  row("p3_m-1", j["p3"]["m-1"], "1");
  row("p3_m0", j["p3"]["m0"], "1");
  row("p3_m+1", j["p3"]["m+1"], "1");
  row("gamma_eff", j["gamma_eff"], "2pi_kHz");
  row("Gamma_eff", j["Gamma_eff"], "2pi_kHz");
  row("p1_inf", j["p1_inf"], "1");
}

// --- simulate ------------------------------------------------------------

void cmd_simulate(const RunConfig& c, const std::string& format, std::ostream& os) {
  const auto times = drive_times(c);
  const Trajectory tr = simulate(c, times);
  const double omega = c.physical().omega_mw;
  if (format == "json") {
    ordered_json j;
    j["provenance"] = provenance_json(provenance(c));
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < times.size(); ++i) {
      const auto& s = tr.states[i];
      rows.push_back({{"theta_rad", omega * times[i]},
                      {"tau_s", times[i]},
                      {"p1", s.p1()},
                      {"n0", s.n0()},
                      {"n1", s.n1()},
                      {"n2", s.n2()},
                      {"n3", s.n3()}});
    }
    j["rows"] = std::move(rows);
    os << j.dump(2) << "\n";
    return;
  }
  write_provenance(os, provenance(c));
  os << "theta_rad,tau_s,p1,n0,n1,n2,n3\n";
  for (std::size_t i = 0; i < times.size(); ++i) {
    const auto& s = tr.states[i];
    os << format_double(omega * times[i]) << "," << format_double(times[i]) << "," << format_double(s.p1()) << ","
       << format_double(s.n0()) << "," << format_double(s.n1()) << "," << format_double(s.n2()) << ","
       << format_double(s.n3()) << "\n";
  }
}

// --- trajectories --------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(0, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_curve(const std::vector<TrajectoryRecord>& records, const Provenance& prov, double z,
                 const std::string& format, std::ostream& os) {
  const AccumulatedCurve curve = accumulate(records, z);
  const ExperimentSnapshot& snap = records.front().snapshot;
  if (format == "json") {
    ordered_json j;
    j["provenance"] = provenance_json(prov);
    j["dt_unit_s"] = snap.protocol.dt_unit;
    j["ci_z"] = z;
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < curve.n.size(); ++i) {
      rows.push_back({{"N", curve.n[i]},
                      {"theta_rad", curve.theta[i]},
                      {"p1_mean", curve.p1_mean[i]},
                      {"ci_low", curve.ci_low[i]},
                      {"ci_high", curve.ci_high[i]},
                      {"n_samples", curve.n_samples[i]}});
    }
    j["rows"] = std::move(rows);
    os << j.dump(2) << "\n";
    return;
  }
  write_curve_csv(os, curve, snap, prov);
}

void cmd_trajectories(const RunConfig& c, const std::string& replay_path, const std::string& format,
                      std::ostream& out) {
  std::vector<TrajectoryRecord> records;
  Provenance prov = provenance(c);
  if (!replay_path.empty()) {
    const std::string text = read_file(replay_path);
    std::istringstream in(text);
    const auto stored = read_trajectories(in);
    if (stored.empty()) throw ConfigError(0, "trajectory file '" + replay_path + "' holds no trajectories");
    // Keep the original provenance so the regenerated file matches byte for byte.
    if (const auto pos = text.find("# config_hash="); pos != std::string::npos) {
      const auto end = text.find('\n', pos);
      prov.config_hash = text.substr(pos + 14, end - pos - 14);
    }
    prov.seed = stored.front().seed;
    for (const auto& r : stored) {
      records.push_back(replay(r));
      if (records.back().outcomes != r.outcomes) {
        throw ConfigMismatch("replay of trajectory " + std::to_string(r.index) + " differs from the stored record");
      }
    }
  } else {
    records = ProtocolSimulator(c.snapshot()).run_all();
  }
  if (records.empty()) throw ConfigError(0, "n_trajectories must be positive");
  if (!c.trajectory_out.empty()) {
    Sink sink(c.trajectory_out, out);
    write_trajectories(sink.stream(), records, prov);
  }
  Sink sink(c.out, out);
  write_curve(records, prov, c.ci_z, format, sink.stream());
}

// --- fit -----------------------------------------------------------------

void cmd_fit(const RunConfig& c, bool config_given, const std::string& curve_path, double dt_us_override,
             std::ostream& os) {
  const std::string text = read_file(curve_path);
  std::istringstream in(text);
  const CurveFile file = read_curve_csv(in, dt_us_override > 0 ? dt_us_override * 1e-6 : 0.0);
  const NutationFit fit = fit_nutation(file.samples);

  // The microwave Rabi frequency comes from the config when given, else from
  // the curve metadata, else from the fitted oscillation itself.
  double omega_mw = fit.omega;
  if (config_given) {
    omega_mw = c.physical().omega_mw;
  } else if (const auto it = file.meta.find("omega_mw_rad_s"); it != file.meta.end()) {
    if (const auto v = parse_double(it->second)) omega_mw = *v;
  }

  ordered_json j;
  j["provenance"] = provenance_json(provenance(c));
  j["units"] = "omega, lambda and derived rates in 2pi*kHz; phase in rad";
  j["omega"] = to_2pi_khz(fit.omega);
  j["lambda"] = to_2pi_khz(fit.lambda);
  j["p_inf"] = fit.p_inf;
  j["amplitude"] = fit.amplitude;
  j["phase"] = fit.phase;
  j["residual_rms"] = fit.residual_rms;
  j["converged"] = fit.converged;
  j["low_confidence"] = fit.low_confidence;
  j["iterations"] = fit.iterations;
  ordered_json derived = nullptr;
  if (fit.converged && fit.lambda > 0 && fit.p_inf > 0.5 && fit.p_inf <= 1.0) {
    const EffectiveRates eff = effective_from_fit(fit, omega_mw);
    derived = ordered_json::object();
    derived["gamma"] = to_2pi_khz(eff.gamma_eff);
    derived["Gamma"] = eff.Gamma_eff ? ordered_json(to_2pi_khz(*eff.Gamma_eff)) : ordered_json(nullptr);
    derived["r2_over_r1"] = invert_saturation(fit.p_inf);
  }
  j["derived"] = std::move(derived);
  os << j.dump(2) << "\n";
}

// --- design --------------------------------------------------------------

struct DesignFlags {
  double gamma_2pikhz = 0.0;
  double Gamma_2pikhz = 0.0;
  bool free_b = false;
};

void cmd_design(const RunConfig& c, const DesignFlags& f, std::ostream& os, std::ostream& err) {
  const PhysicalParams tmpl = c.physical();
  DesignTarget t;
  t.gamma_target = from_2pi_khz(f.gamma_2pikhz);
  t.Gamma_target = from_2pi_khz(f.Gamma_2pikhz);
  t.omega_mw = tmpl.omega_mw;
  t.delta_laser = tmpl.delta_laser;
  t.i0_min = c.i0_min;
  t.i0_max = c.i0_max;
  t.alpha_min = deg_to_rad(c.alpha_min_deg);
  t.alpha_max = deg_to_rad(c.alpha_max_deg);
  t.zeeman_min = from_2pi_khz(c.zeeman_min_2pikhz);
  t.zeeman_max = from_2pi_khz(c.zeeman_max_2pikhz);
  t.free_zeeman = f.free_b || c.free_zeeman;

  ordered_json j;
  j["provenance"] = provenance_json(provenance(c));
  j["target"] = {{"gamma", f.gamma_2pikhz}, {"Gamma", f.Gamma_2pikhz}};
  try {
    const DesignResult r = design_decoherence(t, tmpl);
    j["feasible"] = true;
    j["i0"] = r.i0;
    j["alpha_deg"] = rad_to_deg(r.alpha);
    j["b_field_2pikhz"] = to_2pi_khz(r.zeeman_delta);
    j["achieved"] = {{"gamma", to_2pi_khz(r.achieved.gamma_eff)},
                     {"Gamma", r.achieved.Gamma_eff ? ordered_json(to_2pi_khz(*r.achieved.Gamma_eff))
                                                    : ordered_json(nullptr)},
                     {"p1_inf", optional_json(r.achieved.p1_inf)}};
    j["newton_steps"] = r.newton_steps;
    os << j.dump(2) << "\n";
  } catch (const Infeasible& e) {
    j["feasible"] = false;
    j["binding"] = e.binding();
    j["reason"] = e.what();
    os << j.dump(2) << "\n";
    throw;
  }
  (void)err;
}

// --- sweep ---------------------------------------------------------------

struct Axis {
  std::string key;
  std::vector<std::string> values;  // canonical text, sorted and unique
};

Axis parse_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError(0, "--axis expects key=v1,v2,..., got '" + spec + "'");
  Axis axis;
  axis.key = std::string(trim(std::string_view(spec).substr(0, eq)));
  RunConfig probe;
  std::vector<std::pair<std::optional<double>, std::string>> items;
  std::istringstream list(spec.substr(eq + 1));
  std::string item;
  while (std::getline(list, item, ',')) {
    if (trim(item).empty()) continue;
    probe.set(axis.key, trim(item));  // validates key and value
    const std::string canonical = probe.get(axis.key);
    items.emplace_back(parse_double(canonical), canonical);
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.first && b.first && *a.first != *b.first) return *a.first < *b.first;
    return a.second < b.second;
  });
  items.erase(std::unique(items.begin(), items.end(),
                          [](const auto& a, const auto& b) { return a.second == b.second; }),
              items.end());
  for (auto& it : items) axis.values.push_back(std::move(it.second));
  return axis;
}

void cmd_sweep(const RunConfig& base, const std::vector<std::string>& axis_specs, std::ostream& os) {
  std::vector<Axis> axes;
  for (const auto& s : axis_specs) axes.push_back(parse_axis(s));
  std::sort(axes.begin(), axes.end(), [](const Axis& a, const Axis& b) { return a.key < b.key; });
  for (std::size_t i = 1; i < axes.size(); ++i) {
    if (axes[i].key == axes[i - 1].key) throw ConfigError(0, "axis '" + axes[i].key + "' given twice");
  }

  write_provenance(os, provenance(base));
  for (const auto& a : axes) {
    os << "# axis " << a.key << "=";
    for (std::size_t i = 0; i < a.values.size(); ++i) os << (i ? "," : "") << a.values[i];
    os << "\n";
  }
  const bool empty = axes.empty() || std::any_of(axes.begin(), axes.end(), [](const Axis& a) {
                       return a.values.empty();
                     });
  if (empty) {
    std::istringstream doc(serialize(base));
    std::string line;
    while (std::getline(doc, line)) os << "# " << line << "\n";
    return;
  }

  for (const auto& a : axes) os << a.key << ",";
  os << "N,theta_rad,tau_s,p1\n";
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    RunConfig c = base;
    for (std::size_t k = 0; k < axes.size(); ++k) c.set(axes[k].key, axes[k].values[idx[k]]);
    const auto times = drive_times(c);
    const Trajectory tr = simulate(c, times);
    const double omega = c.physical().omega_mw;
    for (std::size_t i = 0; i < times.size(); ++i) {
      for (std::size_t k = 0; k < axes.size(); ++k) os << axes[k].values[idx[k]] << ",";
      os << i << "," << format_double(omega * times[i]) << "," << format_double(times[i]) << ","
         << format_double(tr.states[i].p1()) << "\n";
    }
    // Odometer over the axes, last axis fastest.
    std::size_t k = axes.size();
    while (k > 0) {
      --k;
      if (++idx[k] < axes[k].values.size()) break;
      idx[k] = 0;
      if (k == 0) return;
    }
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Designed decoherence of a driven hyperfine qubit: rates, dynamics, protocol, fitting"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolName) + " " + std::string(kToolVersion));

  CommonOptions o_rates, o_sim, o_traj, o_fit, o_design, o_sweep;
  auto* rates = app.add_subcommand("rates", "Scattering and effective relaxation rates");
  add_common(*rates, o_rates, "json");

  auto* sim = app.add_subcommand("simulate", "Deterministic P1 versus pulse area");
  add_common(*sim, o_sim, "csv");

  auto* traj = app.add_subcommand("trajectories", "Monte Carlo quantum-jump records and accumulated curve");
  add_common(*traj, o_traj, "csv");
  std::string replay_path, trajectory_out;
  traj->add_option("--replay", replay_path, "Regenerate the records of an existing trajectory file");
  traj->add_option("--trajectory-out", trajectory_out, "Write the per-trajectory records here");

  auto* fit = app.add_subcommand("fit", "Fit a damped nutation curve and derive (gamma, Gamma)");
  add_common(*fit, o_fit, "json");
  std::string curve_path;
  fit->add_option("curve", curve_path, "Accumulated or simulated curve CSV")->required();

  auto* design = app.add_subcommand("design", "Choose light intensity, polarization and B for target rates");
  add_common(*design, o_design, "json");
  DesignFlags dflags;
  design->add_option("--gamma-2pikhz", dflags.gamma_2pikhz, "Target transverse rate")->required();
  design->add_option("--Gamma-2pikhz", dflags.Gamma_2pikhz, "Target longitudinal rate")->required();
  design->add_flag("--free-b", dflags.free_b, "Also choose the magnetic field");

  auto* sweep = app.add_subcommand("sweep", "Deterministic curves over a grid of config values");
  add_common(*sweep, o_sweep, "csv");
  std::vector<std::string> axis_specs;
  sweep->add_option("--axis", axis_specs, "key=v1,v2,... (repeatable; grid is the product)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (rates->parsed()) {
      const RunConfig c = resolve_config(o_rates);
      Sink sink(c.out, out);
      cmd_rates(c, o_rates.format, sink.stream());
    } else if (sim->parsed()) {
      const RunConfig c = resolve_config(o_sim);
      std::ostringstream buf;
      try {
        cmd_simulate(c, o_sim.format, buf);
      } catch (const StiffnessFailure& e) {
        err << "integration failed: " << e.what() << "\nparameters:\n" << serialize(c);
        return kExitNumerical;
      }
      Sink sink(c.out, out);
      sink.stream() << buf.str();
    } else if (traj->parsed()) {
      RunConfig c = resolve_config(o_traj);
      if (!trajectory_out.empty()) c.trajectory_out = trajectory_out;
      cmd_trajectories(c, replay_path, o_traj.format, out);
    } else if (fit->parsed()) {
      const RunConfig c = resolve_config(o_fit);
      const bool config_given = !o_fit.config_path.empty() || !o_fit.sets.empty() ||
                                o_fit.overrides.contains("omega_mw_2pikhz");
      const double dt_override = o_fit.overrides.contains("dt_us") ? c.dt_us : 0.0;
      Sink sink(c.out, out);
      cmd_fit(c, config_given, curve_path, dt_override, sink.stream());
    } else if (design->parsed()) {
      const RunConfig c = resolve_config(o_design);
      Sink sink(c.out, out);
      cmd_design(c, dflags, sink.stream(), err);
    } else if (sweep->parsed()) {
      const RunConfig c = resolve_config(o_sweep);
      std::ostringstream buf;
      cmd_sweep(c, axis_specs, buf);
      Sink sink(c.out, out);
      sink.stream() << buf.str();
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigMismatch& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Infeasible& e) {
    err << "infeasible (" << e.binding() << "): " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const Error& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back(kToolName.data());
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace lidec
