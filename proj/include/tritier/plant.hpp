#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tritier/rng.hpp"

namespace tritier {

// ---------------------------------------------------------------------------
// 1D shallow-water reference plant (Saint-Venant, flat bed, first-order
// finite volume with Rusanov flux). Conserved variables per cell: depth h [m]
// and discharge hu [m^2/s] (unit channel width, so boundary discharges in
// m^3/s map one-to-one). The scalar control is the outflow drawn at the right
// boundary; the inflow at the left boundary is exogenous scenario data.
// ---------------------------------------------------------------------------

struct PlantParams {
  int n_cells = 50;
  double domain_length = 500.0;  // m
  double gravity = 9.81;         // m/s^2
  double cfl_number = 0.9;       // in (0, 1]
  double h_min = 0.05;           // m, dry-state floor
  double friction_coeff = 0.0;   // quadratic momentum drag, >= 0

  double dx() const { return domain_length / n_cells; }
  bool valid(std::string* why = nullptr) const;
};

struct PlantState {
  std::vector<double> h;   // depth per cell [m]
  std::vector<double> hu;  // discharge per cell [m^2/s]
  double t = 0.0;          // s

  static PlantState flat(int n_cells, double depth, double t0 = 0.0);
  int n_cells() const { return static_cast<int>(h.size()); }
};

struct ControlInput {
  double outflow = 0.0;  // m^3/s at the right boundary (turbine draw)
};

/// Piecewise-constant control over [0, horizon] on uniform intervals.
struct ControlTrajectory {
  std::vector<double> outflows;
  double horizon = 0.0;

  int intervals() const { return static_cast<int>(outflows.size()); }
  double at(double t) const;
  /// Time at which the active interval changes next after t (or horizon).
  double next_breakpoint(double t) const;
};

struct ScenarioParams {
  std::vector<double> inflow_series;  // m^3/s, piecewise constant
  std::vector<double> price_series;   // currency/MWh, same length
  double u_max = 10.0;                // m^3/s
  double h_lo = 0.5;                  // m
  double h_hi = 3.0;                  // m
  double horizon = 600.0;             // s
  double initial_depth = 1.5;         // m, flat initial condition

  double inflow_at(double t) const;
  double price_at(double t) const;
  bool valid(std::string* why = nullptr) const;
};

enum class FailureKind { NonFinite, DryState, DtCollapse };

const char* failure_kind_name(FailureKind k);

/// Failures are data for the regularity classifier, not exceptions.
struct FailureReport {
  FailureKind kind;
  double t_fail = 0.0;
  std::optional<int> cell;

  std::string to_json() const;
};

using StepResult = std::variant<PlantState, FailureReport>;

struct Trajectory {
  std::vector<double> times;
  std::vector<PlantState> snapshots;
  double cost = 0.0;

  void write_csv(const std::string& path) const;  // header: t,cell,h,hu
};

using SimResult = std::variant<Trajectory, FailureReport>;

struct Observation {
  double t = 0.0;
  std::vector<int> cells;
  std::vector<double> values;  // observed depths [m]
};

// Fixed cost-model constants: cost = -price * eta * outflow * h_tail
// + penalty * sum_cells(level-bound excess squared).
constexpr double kTurbineEfficiency = 0.9;
constexpr double kLevelPenalty = 1e3;

/// One CFL-limited step. dt = min(dt_max, cfl*dx/max wave speed); left ghost
/// carries the prescribed inflow discharge, right ghost the outflow clipped
/// to the volume available above h_min in the last cell.
StepResult step(const PlantState& state, const ControlInput& control,
                double inflow, double dt_max, const PlantParams& params);

/// In-place variant used by the hot simulation loop.
std::optional<FailureReport> step_in_place(PlantState& state,
                                           const ControlInput& control,
                                           double inflow, double dt_max,
                                           const PlantParams& params);

/// Instantaneous cost rate at a state (see constants above).
double stage_cost(const PlantState& state, const ControlInput& control,
                  double price, const ScenarioParams& scenario);

/// Closed-loop-free rollout over the scenario horizon. Snapshots at cadence
/// dt_out (t = 0, dt_out, ...); cost accumulated with the left-endpoint rule
/// on the same cadence so it can be re-derived from the logged trajectory.
SimResult simulate(const PlantState& state0, const ControlTrajectory& controls,
                   const ScenarioParams& scenario, const PlantParams& params,
                   double dt_out);

/// Depths at sensor cells plus i.i.d. Gaussian noise. Throws
/// std::out_of_range on a bad cell index.
Observation observe(const PlantState& state, const std::vector<int>& sensor_cells,
                    double noise_std, Rng& rng);

std::string serialize_observation(const Observation& obs);
Observation parse_observation(const std::string& payload);

/// Scalar reservoir oracle plant: explicit Euler on
/// V' = inflow - c * u * sqrt(max(V, 0)), clamped at zero.
double toy_step(double volume, const ControlInput& control, double inflow,
                double dt, double discharge_coeff);

}  // namespace tritier
