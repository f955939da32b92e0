#include "lidec/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "lidec/errors.hpp"

namespace lidec {

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// P(counts >= threshold) for Poisson(mean).
double poisson_tail(double mean, int threshold) {
  if (threshold <= 0) return 1.0;
  double term = std::exp(-mean);
  double cdf = term;
  for (int k = 1; k < threshold; ++k) {
    term *= mean / k;
    cdf += term;
  }
  return std::max(0.0, 1.0 - cdf);
}

}  // namespace

void DetectionModel::validate() const {
  if (!(eps_on >= 0.0 && eps_on < 0.5) || !(eps_off >= 0.0 && eps_off < 0.5)) {
    throw std::invalid_argument("detection error rates must lie in [0, 1/2)");
  }
  if (mode == Mode::kThresholdedCounts) {
    if (!(bright_rate >= 0.0) || !(dark_rate >= 0.0)) throw std::invalid_argument("count rates must be non-negative");
    if (threshold < 0) throw std::invalid_argument("count threshold must be non-negative");
  }
}

double DetectionModel::probability_on(double p1, double probe_duration) const {
  if (mode == Mode::kIdeal) return p1 * (1.0 - eps_on) + (1.0 - p1) * eps_off;
  const double on_bright = poisson_tail(bright_rate * probe_duration, threshold);
  const double on_dark = poisson_tail(dark_rate * probe_duration, threshold);
  return p1 * on_bright + (1.0 - p1) * on_dark;
}

void ProtocolConfig::validate() const {
  if (!(dt_unit > 0.0)) throw std::invalid_argument("dt_unit must be positive");
  if (n_max < 1) throw std::invalid_argument("n_max must be at least 1");
  if (n_trajectories < 1) throw std::invalid_argument("n_trajectories must be at least 1");
  if (!(probe_duration >= 0.0)) throw std::invalid_argument("probe_duration must be non-negative");
  if (!(prep_error >= 0.0 && prep_error <= 1.0)) throw std::invalid_argument("prep_error must lie in [0, 1]");
  detection.validate();
}

double counter_uniform(std::uint64_t seed, std::uint64_t trajectory, std::uint64_t n, std::uint64_t draw) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ trajectory);
  h = splitmix64(h ^ n);
  h = splitmix64(h ^ draw);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

int poisson_from_uniform(double u, double mean) {
  if (!(mean >= 0.0)) throw std::invalid_argument("Poisson mean must be non-negative");
  double term = std::exp(-mean);
  double cdf = term;
  int k = 0;
  // Past ~mean + 40σ the remaining mass is below double resolution.
  const int cap = static_cast<int>(mean + 40.0 * std::sqrt(mean) + 40.0);
  while (u >= cdf && k < cap) {
    ++k;
    term *= mean / k;
    cdf += term;
  }
  return k;
}

ProtocolSimulator::ProtocolSimulator(ExperimentSnapshot snapshot) : snapshot_(std::move(snapshot)) {
  const auto& proto = snapshot_.protocol;
  proto.validate();
  snapshot_.integrator.validate();
  snapshot_.params = validated(snapshot_.params);

  const std::vector<double> times = uniform_grid(proto.dt_unit, proto.n_max, false);
  const auto from_ground =
      integrate(SystemState::ground(), snapshot_.params, snapshot_.rates, snapshot_.integrator,
                std::span<const double>(times), snapshot_.dephasing)
          .p1();
  p1_ = from_ground;
  if (proto.prep_error > 0.0) {
    const auto from_excited =
        integrate(SystemState::populations(0.0, 1.0), snapshot_.params, snapshot_.rates, snapshot_.integrator,
                  std::span<const double>(times), snapshot_.dephasing)
            .p1();
    for (std::size_t i = 0; i < p1_.size(); ++i) {
      p1_[i] = (1.0 - proto.prep_error) * from_ground[i] + proto.prep_error * from_excited[i];
    }
  }
  on_.resize(p1_.size());
  for (std::size_t i = 0; i < p1_.size(); ++i) on_[i] = proto.detection.probability_on(p1_[i], proto.probe_duration);
}

TrajectoryRecord ProtocolSimulator::run(std::uint64_t trajectory_index) const {
  const auto& proto = snapshot_.protocol;
  TrajectoryRecord rec;
  rec.seed = proto.seed;
  rec.index = trajectory_index;
  rec.snapshot = snapshot_;
  rec.outcomes.resize(p1_.size());
  for (std::size_t i = 0; i < p1_.size(); ++i) {
    const std::uint64_t n = i + 1;
    const double u_state = counter_uniform(proto.seed, trajectory_index, n, 0);
    bool on = false;
    if (proto.detection.mode == DetectionModel::Mode::kIdeal) {
      on = u_state < on_[i];
    } else {
      // Project onto F=1 / F=0 first, then draw the photon count.
      const bool bright = u_state < p1_[i];
      const double rate = bright ? proto.detection.bright_rate : proto.detection.dark_rate;
      const int counts = poisson_from_uniform(counter_uniform(proto.seed, trajectory_index, n, 1),
                                              rate * proto.probe_duration);
      on = counts >= proto.detection.threshold;
    }
    rec.outcomes[i] = on ? 1 : 0;
  }
  return rec;
}

std::vector<TrajectoryRecord> ProtocolSimulator::run_all() const {
  std::vector<TrajectoryRecord> out;
  out.reserve(static_cast<std::size_t>(snapshot_.protocol.n_trajectories));
  for (int k = 0; k < snapshot_.protocol.n_trajectories; ++k) out.push_back(run(static_cast<std::uint64_t>(k)));
  return out;
}

TrajectoryRecord run_trajectory(const PhysicalParams& params, const ScatteringRates& rates,
                                const ProtocolConfig& config, std::uint64_t trajectory_index,
                                const IntegratorConfig& integrator) {
  ExperimentSnapshot snap;
  snap.params = params;
  snap.rates = rates;
  snap.integrator = integrator;
  snap.protocol = config;
  return ProtocolSimulator(std::move(snap)).run(trajectory_index);
}

TrajectoryRecord replay(const TrajectoryRecord& record) {
  ExperimentSnapshot snap = record.snapshot;
  snap.protocol.seed = record.seed;
  return ProtocolSimulator(std::move(snap)).run(record.index);
}

WilsonInterval wilson_interval(int successes, int trials, double z) {
  if (trials <= 0) throw std::invalid_argument("Wilson interval needs at least one trial");
  const double n = trials;
  const double p = successes / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  WilsonInterval ci{std::max(0.0, center - half), std::min(1.0, center + half)};
  if (successes == trials) ci.high = 1.0;
  if (successes == 0) ci.low = 0.0;
  return ci;
}

AccumulatedCurve accumulate(std::span<const TrajectoryRecord> records, double z) {
  if (records.empty()) throw std::invalid_argument("nothing to accumulate");
  const ExperimentSnapshot& ref = records.front().snapshot;
  const std::size_t len = records.front().outcomes.size();
  for (const auto& r : records) {
    if (!(r.snapshot == ref) || r.seed != records.front().seed || r.outcomes.size() != len) {
      throw ConfigMismatch("trajectory " + std::to_string(r.index) + " was recorded under a different configuration");
    }
  }

  AccumulatedCurve curve;
  curve.z = z;
  const int trials = static_cast<int>(records.size());
  for (std::size_t i = 0; i < len; ++i) {
    int on = 0;
    for (const auto& r : records) on += r.outcomes[i];
    const int n = static_cast<int>(i) + 1;
    const double tau = n * ref.protocol.dt_unit;
    const auto ci = wilson_interval(on, trials, z);
    curve.n.push_back(n);
    curve.tau.push_back(tau);
    curve.theta.push_back(ref.params.omega_mw * tau);
    curve.p1_mean.push_back(static_cast<double>(on) / trials);
    curve.ci_low.push_back(ci.low);
    curve.ci_high.push_back(ci.high);
    curve.n_samples.push_back(trials);
  }
  return curve;
}

}  // namespace lidec
