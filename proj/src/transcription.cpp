#include "tritier/transcription.hpp"

#include <algorithm>

namespace tritier {

ControlTrajectory controls_from_vector(const Eigen::VectorXd& u, double horizon) {
  ControlTrajectory traj;
  traj.horizon = horizon;
  traj.outflows.assign(u.data(), u.data() + u.size());
  return traj;
}

NlpProblem transcribe(const ScenarioParams& scenario_estimate, double horizon,
                      int intervals, const PlantParams& params,
                      const PlantState& state0, double dt_out) {
  NlpProblem problem;
  problem.dim = intervals;
  problem.lower = Eigen::VectorXd::Zero(intervals);
  problem.upper = Eigen::VectorXd::Constant(intervals, scenario_estimate.u_max);
  problem.is_failure_infinite = true;

  ScenarioParams scenario = scenario_estimate;
  scenario.horizon = horizon;
  const double u_max = scenario.u_max;

  problem.objective = [scenario, params, state0, dt_out,
                       u_max](const Eigen::VectorXd& u) -> ObjEval {
    // FD probes may poke just past the box; clip instead of failing
    Eigen::VectorXd u_clipped = u.cwiseMax(0.0).cwiseMin(u_max);
    const ControlTrajectory controls =
        controls_from_vector(u_clipped, scenario.horizon);
    const SimResult result = simulate(state0, controls, scenario, params, dt_out);
    if (std::holds_alternative<FailureReport>(result)) {
      return ObjEval{1e18, true};
    }
    return ObjEval{std::get<Trajectory>(result).cost, false};
  };
  return problem;
}

}  // namespace tritier
