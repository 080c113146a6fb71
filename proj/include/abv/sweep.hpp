#pragma once

#include <functional>
#include <string>
#include <vector>

#include "abv/scenario.hpp"
#include "abv/simulation.hpp"

namespace abv {

inline constexpr int kReportSchemaVersion = 1;

struct Stat {
  double mean = 0.0;
  double stddev = 0.0;   // sample standard deviation; 0 for a single run
};

Stat summarize(const std::vector<double>& values);

struct SweepPoint {
  double penetration = 0.0;
  std::vector<Metrics> runs;
  std::vector<std::string> errors;   // runs that aborted
  bool tainted = false;              // any collision, invariant violation or abort

  Stat throughput_vph;
  Stat mean_speed;
  Stat fuel_g_per_km;
  Stat total_fuel_g;
  Stat collisions;
  Stat ttc_lt_2s_exposure;
  Stat full_system_s;
  Stat tor_issued;
};

struct SweepReport {
  std::vector<SweepPoint> points;
};

/// Cross product of penetrations and seeds (scenario.seed + i for
/// i < seeds_per_point). Runs with collisions taint their point instead of
/// aborting the sweep.
SweepReport sweep(const Scenario& scenario, const std::vector<double>& penetrations, int seeds_per_point,
                  const std::function<void(double penetration, std::uint64_t seed)>& progress = {});

std::string sweep_csv(const SweepReport& report);
std::string sweep_summary(const SweepReport& report);

}  // namespace abv
