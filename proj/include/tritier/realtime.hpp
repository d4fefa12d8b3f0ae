#pragma once

#include <Eigen/Core>
#include <deque>
#include <optional>
#include <vector>

#include "tritier/meso.hpp"
#include "tritier/plant.hpp"
#include "tritier/solvers.hpp"

namespace tritier {

// ---------------------------------------------------------------------------
// Real-time layer: a windowed least-squares estimator fits the reduced state
// from streaming sensor data, and a condensed tracking QP around the current
// reference plan is solved each tick with a shift warm start. All failure
// paths collapse to bounded fallback controls; the layer never throws out of
// rt_step.
// ---------------------------------------------------------------------------

/// Ring buffer of recent observations; timestamps strictly increasing.
struct EstimatorWindow {
  std::deque<Observation> observations;
  int capacity = 10;

  void push(Observation obs);
  bool empty() const { return observations.empty(); }
  int size() const { return static_cast<int>(observations.size()); }
};

struct TrackingConfig {
  int horizon_steps = 10;          // N_rt
  double q_weight = 1.0;
  double r_weight = 1.0;
  double u_min = 0.0;
  double u_max = 10.0;
  double deadline = 1.0;           // seconds of modeled solve time
  double cost_per_qp_iter = 1e-3;  // modeled seconds per QP iteration
  double estimator_lambda = 0.9;   // exponential observation weight
  int estimator_window = 10;       // W
  double qp_tol = 1e-9;
  double jacobian_eps = 1e-4;      // reduced-space FD step for the LTV model
};

/// Reduced LTV dynamics along the reference: z_{k+1} = A_k z_k + B_k du_k,
/// from central differences of project . advance(dt) . lift. Cached per plan.
struct LtvModel {
  std::vector<Eigen::MatrixXd> a;  // r x r per step
  std::vector<Eigen::VectorXd> b;  // r per step
  double dt = 0.0;
  double t0 = 0.0;  // time of reference index 0
};

enum class RtMode { Tracked, FallbackReference, FallbackHold };

const char* rt_mode_name(RtMode mode);

struct RtDecision {
  ControlInput control;
  int qp_iterations = 0;
  double solve_time = 0.0;  // modeled: iterations * cost_per_qp_iter
  RtMode mode = RtMode::FallbackHold;
  long plan_id = -1;
  double est_err = 0.0;  // estimator residual RMS at the latest observation
};

/// Weighted least-squares fit of (z, z_dot) over the window; weight
/// lambda^(t_now - t_j). Below 3 observations, falls back to projecting the
/// latest observation alone. Normal equations are 1e-8-regularized, so the
/// estimate always exists.
Eigen::VectorXd estimate_reduced_state(const EstimatorWindow& window,
                                       const ReferencePlan& plan,
                                       const std::vector<int>& sensor_cells,
                                       double t_now, double lambda,
                                       double* est_err = nullptr);

/// Central-difference Jacobians of one reduced step along the plan reference.
/// Lifted states are floored at h_min before stepping; a failed plant step
/// degrades that entry to (A, B) = (I, 0).
LtvModel linearize_reduced_dynamics(const ReferencePlan& plan,
                                    const PlantParams& params,
                                    const ScenarioParams& scenario,
                                    double step_dt, double eps);

struct TrackingQp {
  BoxQp qp;          // decision: control deviations du over the horizon
  int start_index;   // reference index aligned with t_now
  int steps;         // actual horizon (may be clipped at plan end)
  Eigen::VectorXd u_ref;  // reference control per step
};

/// Condensed tracking QP; empty when the plan has expired at t_now.
std::optional<TrackingQp> build_tracking_qp(const ReferencePlan& plan,
                                            const Eigen::VectorXd& z_now,
                                            double t_now,
                                            const TrackingConfig& cfg,
                                            const LtvModel& ltv);

struct RtStepResult {
  RtDecision decision;
  std::optional<QpSolution> qp_solution;  // next tick's warm start
};

/// One real-time tick: estimate, build, solve with the shifted warm start,
/// apply the first control move. Falls back to the reference control (or to
/// holding the last applied control when no plan exists); total by design.
RtStepResult rt_step(const ReferencePlan* plan, const LtvModel* ltv,
                     const EstimatorWindow& window,
                     const std::vector<int>& sensor_cells,
                     const QpSolution* warm, const TrackingConfig& cfg,
                     double t_now, double last_control);

/// Shift a QP solution one step forward (last block repeated) and resize to
/// n; the standard RTI warm start.
QpSolution shift_warm_start(const QpSolution& prev, int n);

}  // namespace tritier
