#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace tritier {

// ---------------------------------------------------------------------------
// Shared optimization kernel for the meso and real-time tiers: a primal
// active-set solver for strictly convex box-constrained QPs (warm-startable
// from a previous active set) and a damped-BFGS SQP driver with
// finite-difference gradients over black-box simulation objectives.
// ---------------------------------------------------------------------------

struct BoxQp {
  Eigen::MatrixXd hessian;      // symmetric positive definite
  Eigen::VectorXd linear_term;
  Eigen::VectorXd lower;        // entries may be -inf
  Eigen::VectorXd upper;        // entries may be +inf

  int dim() const { return static_cast<int>(linear_term.size()); }
};

enum class BoundState : std::uint8_t { Free, AtLower, AtUpper };

enum class QpStatus { Converged, SingularHessian, MaxIters };

struct QpSolution {
  Eigen::VectorXd x;
  std::vector<BoundState> active_set;
  int iterations = 0;
  double kkt_residual = std::numeric_limits<double>::infinity();
  QpStatus status = QpStatus::Converged;

  bool ok() const { return status == QpStatus::Converged; }
};

/// Primal active-set method. Starting from the warm active set (all-Free when
/// warm is null), repeatedly solves the equality-reduced system on the free
/// coordinates by Cholesky, clips the step at the first bound hit (adding it
/// to the active set), and releases the most negative multiplier when the
/// reduced solution is interior. Terminates when the projected-gradient KKT
/// residual ||x - clip(x - (Hx+g))||_inf drops to tol. Iteration cap: 10*n.
QpSolution solve_box_qp(const BoxQp& qp, const QpSolution* warm, double tol);

/// KKT residual used throughout: ||x - clip(x - (Hx+g), lo, hi)||_inf.
double qp_kkt_residual(const BoxQp& qp, const Eigen::VectorXd& x);

struct ObjEval {
  double value = 0.0;
  bool failed = false;
};

using ObjectiveFn = std::function<ObjEval(const Eigen::VectorXd&)>;

struct NlpProblem {
  int dim = 0;
  ObjectiveFn objective;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  bool is_failure_infinite = true;  // failed evals behave as +inf in line search
};

struct GradientResult {
  Eigen::VectorXd grad;
  std::optional<int> failed_coordinate;  // probe that hit an objective failure

  bool ok() const { return !failed_coordinate.has_value(); }
};

/// Central differences with per-coordinate step rel_step * max(1, |x_i|).
GradientResult fd_gradient(const ObjectiveFn& f, const Eigen::VectorXd& x,
                           double rel_step);

enum class HessianMode { Bfgs, GaussNewtonDiag };

struct SqpSettings {
  int max_iters = 30;
  double grad_step = 1e-6;      // relative FD step
  double armijo_c = 1e-4;       // in (0, 0.5)
  double tol_stationarity = 1e-8;
  HessianMode hessian_mode = HessianMode::Bfgs;
};

enum class NlpStatus {
  Converged,
  BudgetExhausted,
  LineSearchStall,
  RoughRegion,      // two consecutive gradient probe failures
  InfeasibleStart,  // objective failed at x0
};

struct NlpSolution {
  Eigen::VectorXd x;
  double cost = std::numeric_limits<double>::infinity();
  double stationarity = std::numeric_limits<double>::infinity();
  NlpStatus status = NlpStatus::BudgetExhausted;
  int iterations = 0;
};

/// SQP/quasi-Newton driver: FD gradient, damped BFGS (or diagonal
/// Gauss-Newton surrogate), box-QP subproblem on the shifted bounds, Armijo
/// backtracking (factor 1/2, at most 20 halvings). Accepted iterate costs are
/// non-increasing. iter_budget caps the iteration count below
/// settings.max_iters; meso uses it to slice work across cycles.
NlpSolution solve_nlp_sqp(const NlpProblem& problem, const Eigen::VectorXd& x0,
                          const SqpSettings& settings, int iter_budget);

}  // namespace tritier
