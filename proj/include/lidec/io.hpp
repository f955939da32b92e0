#pragma once

// Text formats shared by the command-line tool and its consumers.
//
// Trajectory file: `# ...` provenance comments, then `key=value` header lines
// holding the full experiment snapshot in SI units, then one line of '0'/'1'
// characters per trajectory (character k is the outcome for N = k + 1).
//
// Accumulated curve CSV: provenance comments, then the columns
//   N,theta_rad,p1_mean,ci_low,ci_high,n_samples

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lidec/estimation.hpp"
#include "lidec/protocol.hpp"

namespace lidec {

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// `# tool=... version=...`, `# config_hash=...`, `# seed=...` lines.
void write_provenance(std::ostream& os, const Provenance& prov);

void write_trajectories(std::ostream& os, std::span<const TrajectoryRecord> records, const Provenance& prov);
std::vector<TrajectoryRecord> read_trajectories(std::istream& is);

void write_curve_csv(std::ostream& os, const AccumulatedCurve& curve, const ExperimentSnapshot& snapshot,
                     const Provenance& prov);

/// A curve read back from CSV together with its `# key=value` metadata.
struct CurveFile {
  CurveSamples samples;
  std::map<std::string, std::string> meta;
};

/// Reads either an accumulated-curve CSV (tau from N·dt_unit_s metadata,
/// sigma from the Wilson bounds) or a simulate CSV (tau_s, p1 columns).
/// `dt_unit_override` > 0 replaces the dt_unit_s metadata.
CurveFile read_curve_csv(std::istream& is, double dt_unit_override = 0.0);

}  // namespace lidec
