#include <doctest.h>

#include <cmath>

#include "abv/traffic.hpp"

using namespace abv;

TEST_CASE("IDM: free flow, standstill and direct evaluation") {
  IdmParams p;
  CHECK(std::abs(idm_accel(12.0, 0.0, INFINITY, 12.0).accel) < 1e-3);
  CHECK(idm_accel(0.0, 0.0, p.s0, 12.0).accel == doctest::Approx(0.0).scale(1.0));

  // v = 10, v_lead = 10, gap = 25, desired 13.89.
  const double s_star = 2.0 + 10.0 * 1.5;
  const double expected = 1.0 * (1.0 - std::pow(10.0 / 13.89, 4.0) - (s_star / 25.0) * (s_star / 25.0));
  CHECK(idm_accel(10.0, 10.0, 25.0, 13.89).accel == doctest::Approx(expected).epsilon(1e-12));

  auto crash = idm_accel(5.0, 0.0, -0.1, 13.89);
  CHECK(crash.collision);
  CHECK(crash.accel == -8.0);
  CHECK(idm_accel(13.0, 0.0, 1.0, 13.89).accel == -8.0);
}

TEST_CASE("IDM equilibrium speed balances the law") {
  const double v = idm_equilibrium_speed(25.0, 13.89);
  CHECK(std::abs(idm_accel(v, v, 25.0, 13.89).accel) < 1e-9);
}

TEST_CASE("IDM platoon of 20 on a ring behind a braking leader stays collision free") {
  IdmParams p;
  const int n = 20;
  const double ring = 600.0;
  const double length = 4.5;
  std::vector<double> s(n), v(n);
  const double gap0 = ring / n - length;
  const double v0 = idm_equilibrium_speed(gap0, 13.89, p);
  for (int i = 0; i < n; ++i) {
    s[i] = i * ring / n;
    v[i] = v0;
  }
  int collisions = 0;
  const double dt = 0.02;
  for (int k = 0; k < static_cast<int>(300.0 / dt); ++k) {
    const double t = k * dt;
    std::vector<double> a(n);
    for (int i = 0; i < n; ++i) {
      const int lead = (i + 1) % n;
      double gap = s[lead] - s[i] - length;
      if (gap < -ring / 2) gap += ring;
      const double desired = (i == n - 1 && t > 20.0 && t < 30.0) ? 2.0 : 13.89;
      auto r = idm_accel(v[i], v[lead], gap, desired, p);
      a[i] = r.accel;
      if (r.collision) ++collisions;
    }
    for (int i = 0; i < n; ++i) {
      const double vn = std::max(0.0, v[i] + a[i] * dt);
      s[i] += 0.5 * (v[i] + vn) * dt;
      v[i] = vn;
      if (s[i] >= ring) s[i] -= ring;
    }
  }
  CHECK(collisions == 0);
}

TEST_CASE("supervisor thresholds and counting rules") {
  RoadSegment a;
  a.id = 1;
  a.length = 1000.0;
  a.lane_count = 1;
  a.instrumented = true;
  RoadSegment b = a;
  b.id = 2;
  b.instrumented = false;
  RoadMap map({a, b}, true);
  CHECK(supervisor_step({}, map, 0.0).empty());

  std::vector<VehicleReport> reports;
  for (int i = 0; i < 50; ++i) reports.push_back({i, 1, 5.0, false});
  auto recs = supervisor_step(reports, map, 3.0);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].segment_id == 1);
  CHECK(recs[0].advised_limit == doctest::Approx(8.33));
  CHECK(recs[0].ttl == 10.0);

  // Conventional cars on an uninstrumented segment are invisible; ABVs report.
  reports.clear();
  for (int i = 0; i < 30; ++i) reports.push_back({i, 2, 5.0, false});
  CHECK(supervisor_step(reports, map, 0.0).empty());
  for (auto& r : reports) r.abv = true;
  recs = supervisor_step(reports, map, 0.0);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].advised_limit == doctest::Approx(11.11));

  RoadSegment slow = a;
  slow.speed_limit = 6.0;
  RoadMap slow_map({slow}, false);
  reports.assign(50, VehicleReport{0, 1, 3.0, true});
  CHECK(supervisor_step(reports, slow_map, 0.0)[0].advised_limit == 6.0);
}

TEST_CASE("recommendation persists until its ttl runs out, then lifts") {
  RoadSegment a;
  a.id = 7;
  a.length = 1000.0;
  a.lane_count = 1;
  a.instrumented = true;
  RoadMap map({a}, true);
  Supervisor sup;
  // Scripted density: 30 veh/km for t < 5 s, then 10.
  double last_dense = -1.0;
  for (int k = 0; k <= 30; ++k) {
    const double t = k * 1.0;
    const int n = t < 5.0 ? 30 : 10;
    std::vector<VehicleReport> reports(n, VehicleReport{0, 7, 5.0, false});
    if (n == 30) last_dense = t;
    sup.step(reports, map, t);
    const auto adv = sup.advised(t);
    // Timeline oracle: live while t < last issue + ttl.
    const bool expected = t < last_dense + 10.0;
    CHECK(adv.count(7) == (expected ? 1u : 0u));
    if (expected) CHECK(adv.at(7) <= a.speed_limit);
  }
}

TEST_CASE("spawn: penetration extremes, binomial count and determinism") {
  RoadSegment seg;
  seg.length = 5000.0;
  seg.lane_count = 2;
  RoadMap map({seg}, true);
  TrafficSpec spec;
  spec.count = 200;

  Rng r0(1);
  spec.penetration = 0.0;
  for (const auto& v : spawn_traffic(spec, map, r0)) CHECK_FALSE(v.abv);
  spec.penetration = 1.0;
  for (const auto& v : spawn_traffic(spec, map, r0)) CHECK(v.abv);

  spec.penetration = 0.5;
  Rng r1(2024);
  auto fleet = spawn_traffic(spec, map, r1);
  REQUIRE(fleet.size() == 200);
  int abv = 0;
  for (const auto& v : fleet) abv += v.abv ? 1 : 0;
  // Normal approximation to Binomial(200, 0.5): 99 % interval 100 +- 2.576 * sqrt(50).
  const double half = 2.576 * std::sqrt(200 * 0.25);
  CHECK(abv >= 100 - half);
  CHECK(abv <= 100 + half);

  Rng r2(2024);
  auto again = spawn_traffic(spec, map, r2);
  REQUIRE(again.size() == fleet.size());
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    CHECK(again[i].state == fleet[i].state);
    CHECK(again[i].abv == fleet[i].abv);
  }
}

TEST_CASE("spawn: IDM-stable gaps, reserved space and infeasible density") {
  RoadSegment seg;
  seg.length = 1000.0;
  seg.lane_count = 2;
  RoadMap map({seg}, true);
  TrafficSpec spec;
  spec.density = 35.0;
  Rng rng(3);
  auto fleet = spawn_traffic(spec, map, rng, {Reserved{500.0, 0, 20.0, 40.0}});
  CHECK(fleet.size() < 70);
  CHECK(fleet.size() >= 67);
  for (const auto& a : fleet) {
    if (a.state.lane == 0) CHECK_FALSE((map.delta(500.0, a.state.s) > -20.0 && map.delta(500.0, a.state.s) < 40.0));
    for (const auto& b : fleet) {
      if (a.id == b.id || a.state.lane != b.state.lane) continue;
      const double gap = std::abs(map.delta(a.state.s, b.state.s)) - 4.5;
      CHECK(gap > 2.0);
      CHECK(idm_accel(a.state.v, b.state.v, gap, a.desired_speed).accel >= -1e-6 - 1.0);
    }
  }
  spec.density = 200.0;
  CHECK_THROWS_AS(spawn_traffic(spec, map, rng), std::invalid_argument);
}
