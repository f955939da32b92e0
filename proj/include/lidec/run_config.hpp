#pragma once

// One human-editable document describing a run. Frequencies are given in
// 2π×kHz, angles in degrees, times in the unit named by the key suffix; the
// values are kept in those units here and converted when the library
// structures are built, so parse/serialize round-trips exactly.
//
// Syntax: one `key = value` per line, `#` starts a comment.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lidec/core_model.hpp"
#include "lidec/dynamics.hpp"
#include "lidec/estimation.hpp"
#include "lidec/protocol.hpp"

namespace lidec {

enum class DynamicsModel { kFourLevel, kAdiabatic };

struct RunConfig {
  // Physics.
  double omega_mw_2pikhz = 4.2;
  double delta_mw_2pikhz = 0.0;
  double i0 = 0.0;
  double alpha_deg = 0.0;
  double detuning_2pikhz = -3000.0;  // ω − ω₀
  double zeeman_2pikhz = -0.28;      // δ = μ_B B/ħ
  double gamma3_2pikhz = 18000.0;
  double gamma_lph_2pikhz = 0.0;
  double gamma_ph_2pikhz = 0.0;
  double beta1 = 1.0 / 3.0;
  double beta2 = 2.0 / 3.0;
  // Optional direct rate specification through effective optical Rabi
  // frequencies: r₁ = Ω_π²/(2γ_l), r₂ = Ω_σ²/γ_l. Both or neither.
  std::optional<double> pump_rabi_pi_2pikhz;
  std::optional<double> pump_rabi_sigma_2pikhz;

  // Initial state of the deterministic simulation (protocol runs always start in 0).
  double init_n0 = 1.0;
  double init_n1 = 0.0;
  double init_n2 = 0.0;

  DynamicsModel model = DynamicsModel::kFourLevel;
  DephasingModel dephasing = DephasingModel::kFull;
  IntegrationMethod integrator = IntegrationMethod::kRk45;
  double rk4_dt_ns = 1.0;
  double rtol = 1e-8;
  double atol = 1e-10;
  std::int64_t max_steps = 50'000'000;

  // Protocol.
  double dt_us = 100.0;
  int n_max = 300;
  int n_trajectories = 50;
  double probe_ms = 5.0;
  DetectionModel::Mode detection = DetectionModel::Mode::kIdeal;
  double eps_on = 0.0;
  double eps_off = 0.0;
  double bright_rate_khz = 10.0;
  double dark_rate_khz = 0.1;
  int threshold = 2;
  double prep_error = 0.0;
  std::uint64_t seed = 1;
  double ci_z = 1.96;

  // Inverse-design bounds.
  double i0_min = 0.0;
  double i0_max = 1.0;
  double alpha_min_deg = 0.0;
  double alpha_max_deg = 90.0;
  double zeeman_min_2pikhz = -5000.0;
  double zeeman_max_2pikhz = 5000.0;
  bool free_zeeman = false;

  // Outputs; empty means stdout / not written.
  std::string out;
  std::string trajectory_out;

  bool operator==(const RunConfig&) const = default;

  PhysicalParams physical() const;
  ScatteringRates rates() const;
  IntegratorConfig integrator_config() const;
  ProtocolConfig protocol_config() const;
  ExperimentSnapshot snapshot() const;
  SystemState initial_state() const;

  /// Assigns one key from its textual value; throws ConfigError (line 0).
  void set(std::string_view key, std::string_view value);
  /// Textual value of a key as it would be serialized; empty for absent optionals.
  std::string get(std::string_view key) const;

  static const std::vector<std::string>& keys();
};

/// Parses a document; errors carry the 1-based line number.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

/// Canonical document: every key in fixed order, shortest round-trip numbers.
std::string serialize(const RunConfig& config);

/// FNV-1a 64-bit hash of the canonical document without output paths, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace lidec
