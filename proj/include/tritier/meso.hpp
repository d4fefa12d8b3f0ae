#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "tritier/catalog.hpp"
#include "tritier/mor.hpp"
#include "tritier/plant.hpp"
#include "tritier/rng.hpp"
#include "tritier/solvers.hpp"
#include "tritier/transcription.hpp"

namespace tritier {

// ---------------------------------------------------------------------------
// Time-embedded meso layer: a pool of candidate control vectors is refined by
// budgeted SQP each cycle, pruned on predicted performance/violation, and
// replenished from catalog queries and mutations of the best particle. The
// winning particle becomes a POD-reduced reference plan for the real-time
// tier; sensor-vs-plan discrepancies are mined for the offline tier.
// ---------------------------------------------------------------------------

enum class ParticleOrigin { Catalog, Mutation, Survivor };

struct Particle {
  Eigen::VectorXd control_params;  // M meso intervals
  double objective_pred = 0.0;
  double violation = 0.0;  // worst level-bound excess over the prediction [m]
  int age = 0;
  ParticleOrigin origin = ParticleOrigin::Catalog;
};

struct ParticlePool {
  std::vector<Particle> particles;
  std::uint64_t rng_seed = 0;
  int cycle = 0;
  // the window the particle control vectors are parameterized over; when a
  // cycle starts on a new window the vectors are resampled in absolute time,
  // so a survivor is the superseded plan's tail, not a reinterpreted vector
  double window_start = 0.0;
  double window_horizon = 0.0;  // 0 until first anchored
};

struct ReferencePlan {
  long plan_id = 0;
  PodBasis basis;
  Eigen::MatrixXd reduced_traj;    // r x K, columns at the output cadence
  std::vector<double> traj_times;  // K absolute times
  ControlTrajectory control_traj;  // M intervals over [created_at, created_at+horizon]
  double created_at = 0.0;
  double valid_until = 0.0;
  double predicted_cost = 0.0;
  bool infeasible = false;  // built from a bound-violating particle

  /// Reference reduced state at absolute time t (linear interpolation,
  /// clamped at the ends).
  Eigen::VectorXd reduced_at(double t) const;
  /// Reference control at absolute time t.
  double control_at(double t) const;
};

struct DiscrepancyRecord {
  Eigen::VectorXd features;
  double pred_err = 0.0;  // RMS depth mismatch over the window [m]
  bool ok = true;         // pred_err <= delta_ok
  double t = 0.0;         // window end
};

struct MesoConfig {
  int pool_size = 8;        // P
  int intervals = 12;       // M
  int sqp_budget = 5;       // SQP iterations per particle per cycle
  double energy_target = 0.99;
  double sigma_mut = 0.1;   // mutation std as a fraction of u_max
  double v_tol = 1e-3;      // tolerated level-bound excess [m]
  double dt_out = 10.0;     // plan snapshot cadence
  double plan_horizon = 600.0;     // lookahead per plan
  double plan_valid_margin = 60.0; // validity beyond creation + T2
  double t2 = 120.0;
  double delta_ok = 0.05;   // discrepancy acceptance threshold [m]
  int disc_window = 5;      // observations per mined window
  SqpSettings sqp;
};

struct MesoCycleResult {
  ParticlePool pool;
  std::optional<ReferencePlan> plan;  // empty when plan assembly failed
  std::string note;                   // e.g. PLAN_SIM_FAILED
};

/// Lower-biased quartiles (index floor((n-1)*q)); the pruning rule drops
/// particles above median + 3*(q75 - q25).
double lower_quantile(std::vector<double> sorted_values, double q);

/// One meso cycle: refine, prune, replenish, select, assemble.
MesoCycleResult meso_cycle(const ParticlePool& pool, const Catalog& catalog,
                           const PlantState& state_estimate,
                           const ScenarioParams& scenario_estimate,
                           const MesoConfig& cfg, const PlantParams& params,
                           double t_now, long plan_id, Rng& rng);

/// Simulate the particle's control, compress snapshots with POD, project the
/// reference trajectory. Returns nullopt on simulation failure.
std::optional<ReferencePlan> assemble_plan(const Particle& best,
                                           const PlantParams& params,
                                           const PlantState& state_estimate,
                                           const ScenarioParams& scenario_estimate,
                                           const MesoConfig& cfg, double t_now,
                                           long plan_id);

/// Non-overlapping windows of `window` observations are compared against the
/// sensor-subsampled lifted reference; pred_err is the RMS depth residual
/// over the window's (time x sensor) entries.
std::vector<DiscrepancyRecord> mine_discrepancies(
    const ReferencePlan& plan, const std::vector<Observation>& sensor_buffer,
    int window, double delta_ok, const Eigen::VectorXd& features);

std::string serialize_plan(const ReferencePlan& plan);
ReferencePlan parse_plan(const std::string& payload);

}  // namespace tritier
