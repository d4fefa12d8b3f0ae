#include "doctest.h"

#include <cmath>
#include <numeric>
#include <variant>

#include "tritier/plant.hpp"
#include "tritier/rng.hpp"

using namespace tritier;

namespace {

PlantParams small_params(int n_cells = 20, double length = 100.0) {
  PlantParams p;
  p.n_cells = n_cells;
  p.domain_length = length;
  p.cfl_number = 0.9;
  p.h_min = 0.05;
  return p;
}

double total_mass(const PlantState& s, const PlantParams& p) {
  return std::accumulate(s.h.begin(), s.h.end(), 0.0) * p.dx();
}

double max_wave_speed(const PlantState& s, const PlantParams& p) {
  double smax = 0.0;
  for (int i = 0; i < s.n_cells(); ++i) {
    const double h = s.h[static_cast<std::size_t>(i)];
    const double u = s.hu[static_cast<std::size_t>(i)] / h;
    smax = std::max(smax, std::abs(u) + std::sqrt(p.gravity * h));
  }
  return smax;
}

ScenarioParams basic_scenario(double horizon, double inflow = 0.0,
                              double u_max = 5.0) {
  ScenarioParams s;
  s.inflow_series = {inflow};
  s.price_series = {50.0};
  s.u_max = u_max;
  s.h_lo = 0.5;
  s.h_hi = 3.0;
  s.horizon = horizon;
  s.initial_depth = 1.0;
  return s;
}

}  // namespace

TEST_CASE("still water is a fixed point of step") {
  const PlantParams p = small_params();
  PlantState s = PlantState::flat(p.n_cells, 1.0);
  const StepResult r = step(s, ControlInput{0.0}, 0.0, 0.5, p);
  REQUIRE(std::holds_alternative<PlantState>(r));
  const PlantState& next = std::get<PlantState>(r);
  for (int i = 0; i < p.n_cells; ++i) {
    CHECK(std::abs(next.h[static_cast<std::size_t>(i)] - 1.0) <= 1e-12);
    CHECK(std::abs(next.hu[static_cast<std::size_t>(i)]) <= 1e-12);
  }
}

TEST_CASE("uniform flow with balanced in/out is a fixed point") {
  const PlantParams p = small_params();
  const double q = 0.8;
  PlantState s = PlantState::flat(p.n_cells, 1.2);
  for (auto& hu : s.hu) hu = q;
  const StepResult r = step(s, ControlInput{q}, q, 0.5, p);
  REQUIRE(std::holds_alternative<PlantState>(r));
  const PlantState& next = std::get<PlantState>(r);
  for (int i = 0; i < p.n_cells; ++i) {
    CHECK(std::abs(next.h[static_cast<std::size_t>(i)] - 1.2) <= 1e-12);
    CHECK(std::abs(next.hu[static_cast<std::size_t>(i)] - q) <= 1e-12);
  }
}

TEST_CASE("mass conserved to 1e-12 relative per step with closed boundaries") {
  const PlantParams p = small_params(31, 62.0);
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    PlantState s = PlantState::flat(p.n_cells, 1.0);
    for (int i = 0; i < p.n_cells; ++i) {
      s.h[static_cast<std::size_t>(i)] = rng.uniform(0.5, 2.0);
      s.hu[static_cast<std::size_t>(i)] = rng.uniform(-0.5, 0.5);
    }
    for (int k = 0; k < 50; ++k) {
      const double mass_before = total_mass(s, p);
      const StepResult r = step(s, ControlInput{0.0}, 0.0, 0.4, p);
      if (!std::holds_alternative<PlantState>(r)) break;  // random state went dry
      s = std::get<PlantState>(r);
      const double mass_after = total_mass(s, p);
      CHECK(std::abs(mass_after - mass_before) <= 1e-12 * std::abs(mass_before));
    }
  }
}

TEST_CASE("CFL safety: chosen dt respects the bound") {
  const PlantParams p = small_params();
  Rng rng(3);
  PlantState s = PlantState::flat(p.n_cells, 1.0);
  for (int i = 0; i < p.n_cells; ++i) {
    s.h[static_cast<std::size_t>(i)] = rng.uniform(0.3, 2.5);
    s.hu[static_cast<std::size_t>(i)] = rng.uniform(-1.0, 1.0);
  }
  for (int k = 0; k < 20; ++k) {
    const double smax = max_wave_speed(s, p);
    const StepResult r = step(s, ControlInput{0.2}, 0.1, 1e9, p);
    if (!std::holds_alternative<PlantState>(r)) break;
    const PlantState& next = std::get<PlantState>(r);
    const double dt = next.t - s.t;
    CHECK(dt * smax / p.dx() <= p.cfl_number * (1.0 + 1e-12));
    s = next;
  }
}

TEST_CASE("dam break self-converges against a 10x finer grid") {
  // reach-scale domain: the bore stays inside one coarse cell group, where
  // conservation pins the cell averages that the comparison checks
  auto dam_break = [](int n_cells) {
    PlantParams p = small_params(n_cells, 5000.0);
    PlantState s = PlantState::flat(n_cells, 1.0);
    for (int i = 0; i < n_cells / 2; ++i) s.h[static_cast<std::size_t>(i)] = 2.0;
    while (s.t < 5.0 - 1e-12) {
      const StepResult r = step(s, ControlInput{0.0}, 0.0, 5.0 - s.t, p);
      REQUIRE(std::holds_alternative<PlantState>(r));
      s = std::get<PlantState>(r);
    }
    return s;
  };
  const PlantState coarse = dam_break(100);
  const PlantState fine = dam_break(1000);
  for (int i = 0; i < 100; ++i) {
    double mean_fine = 0.0;
    for (int j = 0; j < 10; ++j)
      mean_fine += fine.h[static_cast<std::size_t>(10 * i + j)];
    mean_fine /= 10.0;
    CHECK(std::abs(coarse.h[static_cast<std::size_t>(i)] - mean_fine) <= 5e-2);
  }
}

TEST_CASE("simulate: zero-length horizon returns only the initial state") {
  const PlantParams p = small_params();
  const PlantState s0 = PlantState::flat(p.n_cells, 1.0);
  ControlTrajectory u;
  u.horizon = 0.0;
  const SimResult r = simulate(s0, u, basic_scenario(0.0), p, 1.0);
  REQUIRE(std::holds_alternative<Trajectory>(r));
  const Trajectory& traj = std::get<Trajectory>(r);
  CHECK(traj.snapshots.size() == 1);
  CHECK(traj.cost == 0.0);
}

TEST_CASE("simulate: still equilibrium stays put over the horizon") {
  const PlantParams p = small_params();
  const PlantState s0 = PlantState::flat(p.n_cells, 1.0);
  ControlTrajectory u;
  u.horizon = 20.0;
  u.outflows = {0.0, 0.0};
  const SimResult r = simulate(s0, u, basic_scenario(20.0, 0.0), p, 5.0);
  REQUIRE(std::holds_alternative<Trajectory>(r));
  for (const PlantState& s : std::get<Trajectory>(r).snapshots) {
    for (int i = 0; i < p.n_cells; ++i) {
      CHECK(std::abs(s.h[static_cast<std::size_t>(i)] - 1.0) <= 1e-10);
      CHECK(std::abs(s.hu[static_cast<std::size_t>(i)]) <= 1e-10);
    }
  }
}

TEST_CASE("simulate: hard drain from a shallow state reports DRY_STATE") {
  PlantParams p = small_params();
  ScenarioParams scenario = basic_scenario(200.0, 0.0, 6.0);
  scenario.initial_depth = 0.4;
  const PlantState s0 = PlantState::flat(p.n_cells, 0.4);
  ControlTrajectory u;
  u.horizon = scenario.horizon;
  u.outflows = {6.0};
  const SimResult r = simulate(s0, u, scenario, p, 10.0);
  REQUIRE(std::holds_alternative<FailureReport>(r));
  const FailureReport& f = std::get<FailureReport>(r);
  CHECK(f.kind == FailureKind::DryState);
  // drainable volume over the draw rate bounds the failure time loosely
  const double drainable = (0.4 - p.h_min) * p.domain_length;
  CHECK(f.t_fail > 0.0);
  CHECK(f.t_fail <= drainable / 6.0 * 10.0 + 5.0);
}

TEST_CASE("stage_cost closed forms") {
  const PlantParams p = small_params();
  const ScenarioParams scenario = basic_scenario(10.0);
  PlantState s = PlantState::flat(p.n_cells, 1.0);
  CHECK(stage_cost(s, ControlInput{0.0}, 50.0, scenario) == 0.0);

  s.h[3] = scenario.h_lo - 0.1;
  CHECK(stage_cost(s, ControlInput{0.0}, 50.0, scenario) ==
        doctest::Approx(kLevelPenalty * 0.01).epsilon(1e-12));

  s = PlantState::flat(p.n_cells, 1.0);
  const double expected = -50.0 * kTurbineEfficiency * 2.0 * 1.0;
  CHECK(stage_cost(s, ControlInput{2.0}, 50.0, scenario) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("simulate cost equals re-accumulation over the logged trajectory") {
  const PlantParams p = small_params();
  ScenarioParams scenario = basic_scenario(60.0, 1.0);
  const PlantState s0 = PlantState::flat(p.n_cells, 1.0);
  ControlTrajectory u;
  u.horizon = scenario.horizon;
  u.outflows = {0.5, 1.5, 1.0};
  const double dt_out = 5.0;
  const SimResult r = simulate(s0, u, scenario, p, dt_out);
  REQUIRE(std::holds_alternative<Trajectory>(r));
  const Trajectory& traj = std::get<Trajectory>(r);
  double recomputed = 0.0;
  for (std::size_t k = 0; k + 1 < traj.snapshots.size(); ++k) {
    const double t = traj.times[k];
    recomputed += stage_cost(traj.snapshots[k], ControlInput{u.at(t)},
                             scenario.price_at(t), scenario) *
                  (traj.times[k + 1] - traj.times[k]);
  }
  CHECK(traj.cost == doctest::Approx(recomputed).epsilon(1e-12));
}

TEST_CASE("simulate is deterministic bit-for-bit") {
  const PlantParams p = small_params();
  ScenarioParams scenario = basic_scenario(40.0, 0.8);
  const PlantState s0 = PlantState::flat(p.n_cells, 1.0);
  ControlTrajectory u;
  u.horizon = scenario.horizon;
  u.outflows = {0.4, 1.1};
  const SimResult a = simulate(s0, u, scenario, p, 4.0);
  const SimResult b = simulate(s0, u, scenario, p, 4.0);
  REQUIRE(std::holds_alternative<Trajectory>(a));
  REQUIRE(std::holds_alternative<Trajectory>(b));
  const Trajectory& ta = std::get<Trajectory>(a);
  const Trajectory& tb = std::get<Trajectory>(b);
  REQUIRE(ta.snapshots.size() == tb.snapshots.size());
  CHECK(ta.cost == tb.cost);
  for (std::size_t k = 0; k < ta.snapshots.size(); ++k) {
    for (int i = 0; i < p.n_cells; ++i) {
      CHECK(ta.snapshots[k].h[static_cast<std::size_t>(i)] ==
            tb.snapshots[k].h[static_cast<std::size_t>(i)]);
      CHECK(ta.snapshots[k].hu[static_cast<std::size_t>(i)] ==
            tb.snapshots[k].hu[static_cast<std::size_t>(i)]);
    }
  }
}

TEST_CASE("observe: exact at zero noise, deterministic per seed, noisy std") {
  const PlantParams p = small_params();
  PlantState s = PlantState::flat(p.n_cells, 1.0);
  s.h[4] = 1.7;
  const std::vector<int> cells = {0, 4, 9};

  Rng rng(5);
  const Observation exact = observe(s, cells, 0.0, rng);
  CHECK(exact.values[0] == 1.0);
  CHECK(exact.values[1] == 1.7);

  Rng r1(42), r2(42);
  const Observation a = observe(s, cells, 0.02, r1);
  const Observation b = observe(s, cells, 0.02, r2);
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);

  Rng r3(11);
  const int n_samples = 10000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const Observation o = observe(s, {0}, 0.01, r3);
    sum += o.values[0];
    sum_sq += o.values[0] * o.values[0];
  }
  const double mean = sum / n_samples;
  const double std_dev = std::sqrt(sum_sq / n_samples - mean * mean);
  CHECK(std::abs(std_dev - 0.01) <= 0.001);

  Rng r4(1);
  CHECK_THROWS_AS(observe(s, {99}, 0.0, r4), std::out_of_range);
}

TEST_CASE("observation payload round-trips") {
  Observation obs;
  obs.t = 12.25;
  obs.cells = {1, 5, 7};
  obs.values = {1.0 / 3.0, -2.5e-7, 1.75};
  const Observation back = parse_observation(serialize_observation(obs));
  CHECK(back.t == obs.t);
  REQUIRE(back.cells == obs.cells);
  for (std::size_t i = 0; i < obs.values.size(); ++i)
    CHECK(back.values[i] == obs.values[i]);
}

TEST_CASE("toy plant: equilibrium, linear fill, first-order convergence") {
  const double c = 0.3;
  const double u = 2.0;
  const double v0 = 1.44;
  const double balanced_inflow = c * u * std::sqrt(v0);
  CHECK(toy_step(v0, ControlInput{u}, balanced_inflow, 0.5, c) ==
        doctest::Approx(v0).epsilon(1e-14));

  CHECK(toy_step(5.0, ControlInput{0.0}, 1.0, 1.0, c) == doctest::Approx(6.0));

  // self-convergence: integrate to T with halved steps, slope vs dt=1e-5 ref
  auto integrate = [&](double dt) {
    double v = 2.0;
    const double t_end = 1.0;
    for (double t = 0.0; t < t_end - 1e-12; t += dt)
      v = toy_step(v, ControlInput{u}, 0.4, std::min(dt, t_end - t), c);
    return v;
  };
  const double ref = integrate(1e-5);
  std::vector<double> dts = {0.2, 0.1, 0.05, 0.025, 0.0125};
  std::vector<double> errs;
  for (double dt : dts) errs.push_back(std::abs(integrate(dt) - ref));
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int n = static_cast<int>(dts.size());
  for (int i = 0; i < n; ++i) {
    const double x = std::log(dts[static_cast<std::size_t>(i)]);
    const double y = std::log(errs[static_cast<std::size_t>(i)]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("failure report serializes to a single JSON object") {
  FailureReport f{FailureKind::DryState, 12.5, 3};
  CHECK(f.to_json() == "{\"kind\":\"DRY_STATE\",\"t_fail\":12.5,\"cell\":3}");
  FailureReport g{FailureKind::DtCollapse, 0.0, std::nullopt};
  CHECK(g.to_json() == "{\"kind\":\"DT_COLLAPSE\",\"t_fail\":0}");
}
