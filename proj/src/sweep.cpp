#include "abv/sweep.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace abv {

Stat summarize(const std::vector<double>& values) {
  Stat out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return out;
}

SweepReport sweep(const Scenario& scenario, const std::vector<double>& penetrations, int seeds_per_point,
                  const std::function<void(double, std::uint64_t)>& progress) {
  if (!scenario.traffic) throw std::invalid_argument("sweep needs a scenario with traffic");
  if (seeds_per_point < 1) throw std::invalid_argument("seeds per point must be >= 1");
  for (double p : penetrations)
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("penetration " + std::to_string(p) + " outside [0, 1]");

  SweepReport report;
  for (double p : penetrations) {
    SweepPoint point;
    point.penetration = p;
    Scenario sc = scenario;
    sc.traffic->penetration = p;
    for (int i = 0; i < seeds_per_point; ++i) {
      const std::uint64_t seed = scenario.seed + static_cast<std::uint64_t>(i);
      if (progress) progress(p, seed);
      try {
        auto m = run(sc, RunOptions{seed, std::nullopt, nullptr});
        if (m.collisions > 0 || m.invariant_violations > 0) point.tainted = true;
        point.runs.push_back(std::move(m));
      } catch (const std::exception& e) {
        point.tainted = true;
        point.errors.push_back("seed " + std::to_string(seed) + ": " + e.what());
      }
    }
    auto collect = [&](auto field) {
      std::vector<double> xs;
      for (const auto& m : point.runs) xs.push_back(field(m));
      return summarize(xs);
    };
    point.throughput_vph = collect([](const Metrics& m) { return m.throughput_vph; });
    point.mean_speed = collect([](const Metrics& m) { return m.mean_speed; });
    point.fuel_g_per_km = collect([](const Metrics& m) { return m.fuel_g_per_km; });
    point.total_fuel_g = collect([](const Metrics& m) { return m.total_fuel_g; });
    point.collisions = collect([](const Metrics& m) { return static_cast<double>(m.collisions); });
    point.ttc_lt_2s_exposure = collect([](const Metrics& m) { return m.ttc_lt_2s_exposure; });
    point.full_system_s = collect([](const Metrics& m) { return m.mode_occupancy.at(Mode::FullSystem); });
    point.tor_issued = collect([](const Metrics& m) { return static_cast<double>(m.tor.issued); });
    report.points.push_back(std::move(point));
  }
  return report;
}

namespace {

void field(std::string& out, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, ",%.6f", value);
  out += buf;
}

}  // namespace

std::string sweep_csv(const SweepReport& report) {
  std::string out = "schema_version,penetration,runs,failed_runs,tainted";
  for (const char* name : {"throughput_vph", "mean_speed", "fuel_g_per_km", "total_fuel_g", "collisions",
                           "ttc_lt_2s_exposure", "full_system_s", "tor_issued"}) {
    out += std::string(",") + name + "_mean," + name + "_std";
  }
  out += '\n';
  for (const auto& p : report.points) {
    out += std::to_string(kReportSchemaVersion);
    field(out, p.penetration);
    out += "," + std::to_string(p.runs.size()) + "," + std::to_string(p.errors.size()) + "," +
           (p.tainted ? "1" : "0");
    for (const Stat* s : {&p.throughput_vph, &p.mean_speed, &p.fuel_g_per_km, &p.total_fuel_g, &p.collisions,
                          &p.ttc_lt_2s_exposure, &p.full_system_s, &p.tor_issued}) {
      field(out, s->mean);
      field(out, s->stddev);
    }
    out += '\n';
  }
  return out;
}

std::string sweep_summary(const SweepReport& report) {
  std::string out;
  char buf[256];
  for (const auto& p : report.points) {
    std::snprintf(buf, sizeof buf,
                  "p=%.2f  runs=%zu  throughput %.0f +- %.0f veh/h  speed %.2f +- %.2f m/s  fuel %.1f +- %.1f g/km"
                  "  FullSystem %.0f s  collisions %.1f%s\n",
                  p.penetration, p.runs.size(), p.throughput_vph.mean, p.throughput_vph.stddev, p.mean_speed.mean,
                  p.mean_speed.stddev, p.fuel_g_per_km.mean, p.fuel_g_per_km.stddev, p.full_system_s.mean,
                  p.collisions.mean, p.tainted ? "  TAINTED" : "");
    out += buf;
    for (const auto& e : p.errors) out += "    " + e + "\n";
  }
  return out;
}

}  // namespace abv
