#pragma once

#include <Eigen/Core>

#include "tritier/plant.hpp"
#include "tritier/solvers.hpp"

namespace tritier {

/// Direct transcription of the control problem: the decision vector is M
/// piecewise-constant outflows in [0, u_max] over the horizon, the objective
/// the simulated trajectory cost from state0. Simulation failures surface as
/// failed evaluations (treated as +inf by the SQP line search).
NlpProblem transcribe(const ScenarioParams& scenario_estimate, double horizon,
                      int intervals, const PlantParams& params,
                      const PlantState& state0, double dt_out);

ControlTrajectory controls_from_vector(const Eigen::VectorXd& u, double horizon);

}  // namespace tritier
