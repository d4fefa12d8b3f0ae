#include "tritier/plant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "tritier/kernels.hpp"
#include "tritier/text_format.hpp"

namespace tritier {

namespace {
constexpr double kDtFloor = 1e-9;

thread_local kernels::SweepWorkspace tl_sweep_ws;
thread_local std::vector<double> tl_h_work, tl_hu_work;

double series_at(const std::vector<double>& series, double t, double horizon) {
  if (series.empty()) return 0.0;
  if (horizon <= 0.0) return series.front();
  const double frac = std::clamp(t / horizon, 0.0, 1.0);
  int idx = static_cast<int>(frac * static_cast<double>(series.size()));
  idx = std::min(idx, static_cast<int>(series.size()) - 1);
  return series[static_cast<std::size_t>(idx)];
}
}  // namespace

bool PlantParams::valid(std::string* why) const {
  auto fail = [&](const char* msg) {
    if (why) *why = msg;
    return false;
  };
  if (n_cells < 2) return fail("n_cells must be >= 2");
  if (!(domain_length > 0.0)) return fail("domain_length must be > 0");
  if (!(cfl_number > 0.0 && cfl_number <= 1.0)) return fail("cfl_number must be in (0,1]");
  if (!(h_min > 0.0)) return fail("h_min must be > 0");
  if (friction_coeff < 0.0) return fail("friction_coeff must be >= 0");
  return true;
}

PlantState PlantState::flat(int n_cells, double depth, double t0) {
  PlantState s;
  s.h.assign(static_cast<std::size_t>(n_cells), depth);
  s.hu.assign(static_cast<std::size_t>(n_cells), 0.0);
  s.t = t0;
  return s;
}

double ControlTrajectory::at(double t) const {
  return series_at(outflows, t, horizon);
}

double ControlTrajectory::next_breakpoint(double t) const {
  if (outflows.empty() || horizon <= 0.0) return horizon;
  const double width = horizon / static_cast<double>(outflows.size());
  const double k = std::floor(t / width + 1e-12) + 1.0;
  return std::min(k * width, horizon);
}

double ScenarioParams::inflow_at(double t) const {
  return series_at(inflow_series, t, horizon);
}

double ScenarioParams::price_at(double t) const {
  return series_at(price_series, t, horizon);
}

bool ScenarioParams::valid(std::string* why) const {
  auto fail = [&](const char* msg) {
    if (why) *why = msg;
    return false;
  };
  if (inflow_series.size() != price_series.size())
    return fail("inflow_series and price_series must have equal length");
  if (!(h_lo < h_hi)) return fail("level_bounds must satisfy h_lo < h_hi");
  if (!(u_max > 0.0)) return fail("u_max must be > 0");
  if (horizon < 0.0) return fail("horizon must be >= 0");
  if (!(initial_depth > 0.0)) return fail("initial_depth must be > 0");
  return true;
}

const char* failure_kind_name(FailureKind k) {
  switch (k) {
    case FailureKind::NonFinite: return "NON_FINITE";
    case FailureKind::DryState: return "DRY_STATE";
    case FailureKind::DtCollapse: return "DT_COLLAPSE";
  }
  return "UNKNOWN";
}

std::string FailureReport::to_json() const {
  std::ostringstream os;
  os << "{\"kind\":\"" << failure_kind_name(kind) << "\",\"t_fail\":"
     << fmt_g17(t_fail);
  if (cell) os << ",\"cell\":" << *cell;
  os << "}";
  return os.str();
}

std::optional<FailureReport> step_in_place(PlantState& state,
                                           const ControlInput& control,
                                           double inflow, double dt_max,
                                           const PlantParams& params) {
  const int n = params.n_cells;
  const double dx = params.dx();

  // wave speed of the pre-step state fixes dt
  double smax = 0.0;
  for (int i = 0; i < n; ++i) {
    const double h = state.h[static_cast<std::size_t>(i)];
    const double u = state.hu[static_cast<std::size_t>(i)] / h;
    smax = std::max(smax, std::abs(u) + std::sqrt(params.gravity * h));
  }
  double dt = dt_max;
  if (smax > 0.0) dt = std::min(dt, params.cfl_number * dx / smax);
  if (!(dt >= kDtFloor)) {
    return FailureReport{FailureKind::DtCollapse, state.t, std::nullopt};
  }

  // boundary fluxes imposed directly, so closed boundaries are exactly
  // closed: mass = the prescribed discharge; momentum = the incoming jet's
  // advection on the left, the interior cell's own advection on the right
  const double h_first = state.h.front();
  const double h_last = state.h.back();
  const double u_last = state.hu.back() / h_last;
  const double q_in = std::max(inflow, 0.0);
  const double q_available = std::max(0.0, (h_last - params.h_min) * dx / dt);
  const double q_out = std::min(std::max(control.outflow, 0.0), q_available);
  const kernels::BoundaryFlux left{
      q_in, q_in * q_in / h_first + 0.5 * params.gravity * h_first * h_first};
  const kernels::BoundaryFlux right{
      q_out, state.hu.back() * u_last + 0.5 * params.gravity * h_last * h_last};

  tl_h_work.resize(static_cast<std::size_t>(n));
  tl_hu_work.resize(static_cast<std::size_t>(n));
  std::copy(state.h.begin(), state.h.end(), tl_h_work.begin());
  std::copy(state.hu.begin(), state.hu.end(), tl_hu_work.begin());

  kernels::rusanov_sweep(tl_h_work.data(), tl_hu_work.data(), n, params.gravity,
                         dt / dx, params.friction_coeff, dt, left, right,
                         tl_sweep_ws, state.h.data(), state.hu.data());
  state.t += dt;

  for (int i = 0; i < n; ++i) {
    const double h = state.h[static_cast<std::size_t>(i)];
    const double q = state.hu[static_cast<std::size_t>(i)];
    if (!std::isfinite(h) || !std::isfinite(q)) {
      return FailureReport{FailureKind::NonFinite, state.t, i};
    }
    if (h < params.h_min) {
      return FailureReport{FailureKind::DryState, state.t, i};
    }
  }
  return std::nullopt;
}

StepResult step(const PlantState& state, const ControlInput& control,
                double inflow, double dt_max, const PlantParams& params) {
  PlantState next = state;
  if (auto failure = step_in_place(next, control, inflow, dt_max, params)) {
    return *failure;
  }
  return next;
}

double stage_cost(const PlantState& state, const ControlInput& control,
                  double price, const ScenarioParams& scenario) {
  const double h_tail = state.h.back();
  double penalty = 0.0;
  for (double h : state.h) {
    const double below = std::max(0.0, scenario.h_lo - h);
    const double above = std::max(0.0, h - scenario.h_hi);
    penalty += below * below + above * above;
  }
  return -price * kTurbineEfficiency * control.outflow * h_tail +
         kLevelPenalty * penalty;
}

SimResult simulate(const PlantState& state0, const ControlTrajectory& controls,
                   const ScenarioParams& scenario, const PlantParams& params,
                   double dt_out) {
  Trajectory traj;
  PlantState state = state0;
  const double t0 = state0.t;
  const double t_end = t0 + scenario.horizon;
  if (!(dt_out > 0.0)) dt_out = std::max(scenario.horizon, 1.0);

  traj.times.push_back(state.t);
  traj.snapshots.push_back(state);

  double t_snap = t0;
  while (t_snap < t_end - 1e-12) {
    const double t_next = std::min(t_snap + dt_out, t_end);
    // accumulate cost with the left-endpoint rule on the output cadence, so
    // re-summation over the logged snapshots reproduces it exactly
    const double t_local = t_snap - t0;
    const ControlInput u{controls.at(t_local)};
    traj.cost +=
        stage_cost(state, u, scenario.price_at(t_local), scenario) * (t_next - t_snap);

    // march to the next snapshot, stopping at control breakpoints
    while (state.t < t_next - 1e-12) {
      const double tl = state.t - t0;
      const ControlInput u_now{controls.at(tl)};
      const double inflow = scenario.inflow_at(tl);
      double dt_cap = t_next - state.t;
      const double bp = controls.next_breakpoint(tl);
      if (bp > tl + 1e-12) dt_cap = std::min(dt_cap, bp - tl);
      if (auto failure = step_in_place(state, u_now, inflow, dt_cap, params)) {
        return *failure;
      }
    }
    state.t = t_next;  // absorb roundoff from the substeps
    t_snap = t_next;
    traj.times.push_back(state.t);
    traj.snapshots.push_back(state);
  }
  return traj;
}

void Trajectory::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "t,cell,h,hu\n";
  for (std::size_t k = 0; k < snapshots.size(); ++k) {
    const PlantState& s = snapshots[k];
    for (int i = 0; i < s.n_cells(); ++i) {
      out << fmt_g17(times[k]) << ',' << i << ','
          << fmt_g17(s.h[static_cast<std::size_t>(i)]) << ','
          << fmt_g17(s.hu[static_cast<std::size_t>(i)]) << '\n';
    }
  }
}

Observation observe(const PlantState& state, const std::vector<int>& sensor_cells,
                    double noise_std, Rng& rng) {
  Observation obs;
  obs.t = state.t;
  obs.cells = sensor_cells;
  obs.values.reserve(sensor_cells.size());
  for (int c : sensor_cells) {
    if (c < 0 || c >= state.n_cells()) {
      throw std::out_of_range("observe: sensor cell " + std::to_string(c) +
                              " outside [0, " + std::to_string(state.n_cells()) + ")");
    }
    double v = state.h[static_cast<std::size_t>(c)];
    if (noise_std > 0.0) v += rng.normal(0.0, noise_std);
    obs.values.push_back(v);
  }
  return obs;
}

std::string serialize_observation(const Observation& obs) {
  std::ostringstream os;
  os << fmt_g17(obs.t) << ' ' << obs.cells.size();
  for (int c : obs.cells) os << ' ' << c;
  for (double v : obs.values) os << ' ' << fmt_g17(v);
  return os.str();
}

Observation parse_observation(const std::string& payload) {
  const std::vector<std::string> tok = tokenize(payload);
  bool ok = true;
  auto bad = []() -> Observation {
    throw std::runtime_error("malformed observation payload");
  };
  if (tok.size() < 2) return bad();
  Observation obs;
  obs.t = parse_double(tok[0], ok);
  if (!ok) return bad();
  const long n = parse_long(tok[1], ok);
  if (!ok || n < 0 || tok.size() != 2 + 2 * static_cast<std::size_t>(n)) return bad();
  for (long i = 0; i < n; ++i) {
    obs.cells.push_back(static_cast<int>(parse_long(tok[2 + static_cast<std::size_t>(i)], ok)));
    if (!ok) return bad();
  }
  for (long i = 0; i < n; ++i) {
    obs.values.push_back(parse_double(tok[2 + static_cast<std::size_t>(n + i)], ok));
    if (!ok) return bad();
  }
  return obs;
}

double toy_step(double volume, const ControlInput& control, double inflow,
                double dt, double discharge_coeff) {
  const double rate =
      inflow - discharge_coeff * control.outflow * std::sqrt(std::max(volume, 0.0));
  return std::max(0.0, volume + dt * rate);
}

}  // namespace tritier
