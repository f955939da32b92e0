#pragma once

// Monte Carlo model of the prepare / drive / probe measurement sequence.
// Each trajectory steps the drive length through N = 1..n_max, restarting
// from preparation every time, and records one binary probe outcome per N.

#include <cstdint>
#include <span>
#include <vector>

#include "lidec/core_model.hpp"
#include "lidec/dynamics.hpp"

namespace lidec {

struct DetectionModel {
  enum class Mode { kIdeal, kThresholdedCounts };

  Mode mode = Mode::kIdeal;
  double eps_on = 0.0;   // P(record "off" | ion in F=1)
  double eps_off = 0.0;  // P(record "on"  | ion in F=0)
  // Thresholded-counts mode: Poisson photon counts over the probe window.
  double bright_rate = 0.0;  // counts/s while in F=1
  double dark_rate = 0.0;    // counts/s while in F=0
  int threshold = 1;         // "on" when counts >= threshold

  void validate() const;

  /// Probability of an "on" record for the given F=1 population.
  double probability_on(double p1, double probe_duration) const;

  bool operator==(const DetectionModel&) const = default;
};

struct ProtocolConfig {
  double dt_unit = 100e-6;  // δt, seconds
  int n_max = 300;
  int n_trajectories = 50;
  double probe_duration = 5e-3;
  DetectionModel detection;
  std::uint64_t seed = 1;
  double prep_error = 0.0;  // probability that preparation leaves the ion in state 1

  void validate() const;

  bool operator==(const ProtocolConfig&) const = default;
};

/// Everything needed to regenerate a trajectory bit for bit.
struct ExperimentSnapshot {
  PhysicalParams params;
  ScatteringRates rates;
  IntegratorConfig integrator;
  DephasingModel dephasing = DephasingModel::kFull;
  ProtocolConfig protocol;

  bool operator==(const ExperimentSnapshot&) const = default;
};

struct TrajectoryRecord {
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  std::vector<std::uint8_t> outcomes;  // outcomes[N-1] is 1 for "on"
  ExperimentSnapshot snapshot;
};

/// Counter-based uniform variate in [0, 1) keyed by (seed, trajectory, N, draw).
double counter_uniform(std::uint64_t seed, std::uint64_t trajectory, std::uint64_t n, std::uint64_t draw);

/// Deterministic Poisson variate by CDF inversion of a uniform.
int poisson_from_uniform(double u, double mean);

/// Precomputes the drive-end F=1 probabilities once per experiment; since each
/// measurement restarts from preparation, trajectories only sample them.
class ProtocolSimulator {
 public:
  explicit ProtocolSimulator(ExperimentSnapshot snapshot);

  TrajectoryRecord run(std::uint64_t trajectory_index) const;
  std::vector<TrajectoryRecord> run_all() const;

  /// P₁ at the end of the drive for N = 1..n_max, preparation errors included.
  std::span<const double> drive_end_p1() const { return p1_; }
  /// Expected fraction of "on" records at each N.
  std::span<const double> expected_on() const { return on_; }
  const ExperimentSnapshot& snapshot() const { return snapshot_; }

 private:
  ExperimentSnapshot snapshot_;
  std::vector<double> p1_;
  std::vector<double> on_;
};

TrajectoryRecord run_trajectory(const PhysicalParams& params, const ScatteringRates& rates,
                                const ProtocolConfig& config, std::uint64_t trajectory_index,
                                const IntegratorConfig& integrator = {});

/// Regenerates the outcome sequence from the record's seed and snapshot.
TrajectoryRecord replay(const TrajectoryRecord& record);

struct AccumulatedCurve {
  std::vector<int> n;
  std::vector<double> theta;  // Ω·N·δt
  std::vector<double> tau;    // N·δt
  std::vector<double> p1_mean;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  std::vector<int> n_samples;
  double z = 1.96;  // Wilson interval width in standard deviations
};

struct WilsonInterval {
  double low;
  double high;
};

WilsonInterval wilson_interval(int successes, int trials, double z);

/// Pointwise mean and Wilson interval across records sharing one snapshot.
AccumulatedCurve accumulate(std::span<const TrajectoryRecord> records, double z = 1.96);

}  // namespace lidec
