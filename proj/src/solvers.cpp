#include "tritier/solvers.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

namespace tritier {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd clip(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                     const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}
}  // namespace

double qp_kkt_residual(const BoxQp& qp, const Eigen::VectorXd& x) {
  const Eigen::VectorXd grad = qp.hessian * x + qp.linear_term;
  return (x - clip(x - grad, qp.lower, qp.upper)).cwiseAbs().maxCoeff();
}

QpSolution solve_box_qp(const BoxQp& qp, const QpSolution* warm, double tol) {
  const int n = qp.dim();
  QpSolution sol;
  sol.active_set.assign(static_cast<std::size_t>(n), BoundState::Free);
  sol.x = Eigen::VectorXd::Zero(n);

  if (warm && warm->x.size() == n &&
      warm->active_set.size() == static_cast<std::size_t>(n)) {
    sol.active_set = warm->active_set;
    sol.x = warm->x;
  }
  // make the start consistent with the active set and the bounds
  for (int i = 0; i < n; ++i) {
    switch (sol.active_set[static_cast<std::size_t>(i)]) {
      case BoundState::AtLower:
        if (std::isfinite(qp.lower[i])) {
          sol.x[i] = qp.lower[i];
        } else {
          sol.active_set[static_cast<std::size_t>(i)] = BoundState::Free;
        }
        break;
      case BoundState::AtUpper:
        if (std::isfinite(qp.upper[i])) {
          sol.x[i] = qp.upper[i];
        } else {
          sol.active_set[static_cast<std::size_t>(i)] = BoundState::Free;
        }
        break;
      case BoundState::Free:
        sol.x[i] = std::clamp(sol.x[i], qp.lower[i], qp.upper[i]);
        break;
    }
  }

  const int max_iters = 10 * n;
  while (sol.iterations < max_iters) {
    ++sol.iterations;

    std::vector<int> free_idx;
    free_idx.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      if (sol.active_set[static_cast<std::size_t>(i)] == BoundState::Free)
        free_idx.push_back(i);
    }

    const Eigen::VectorXd grad = qp.hessian * sol.x + qp.linear_term;

    bool at_face_minimum = true;
    if (!free_idx.empty()) {
      const int nf = static_cast<int>(free_idx.size());
      Eigen::MatrixXd hff(nf, nf);
      Eigen::VectorXd rf(nf);
      for (int a = 0; a < nf; ++a) {
        rf[a] = -grad[free_idx[static_cast<std::size_t>(a)]];
        for (int b = 0; b < nf; ++b) {
          hff(a, b) = qp.hessian(free_idx[static_cast<std::size_t>(a)],
                                 free_idx[static_cast<std::size_t>(b)]);
        }
      }
      Eigen::LLT<Eigen::MatrixXd> llt(hff);
      if (llt.info() != Eigen::Success) {
        sol.status = QpStatus::SingularHessian;
        sol.kkt_residual = qp_kkt_residual(qp, sol.x);
        return sol;
      }
      const Eigen::VectorXd d = llt.solve(rf);

      if (d.cwiseAbs().maxCoeff() > 1e-14 * std::max(1.0, sol.x.norm())) {
        // longest feasible fraction of the step
        double alpha = 1.0;
        int blocking = -1;
        BoundState block_side = BoundState::Free;
        for (int a = 0; a < nf; ++a) {
          const int i = free_idx[static_cast<std::size_t>(a)];
          if (d[a] > 0.0 && std::isfinite(qp.upper[i])) {
            const double room = (qp.upper[i] - sol.x[i]) / d[a];
            if (room < alpha) {
              alpha = room;
              blocking = i;
              block_side = BoundState::AtUpper;
            }
          } else if (d[a] < 0.0 && std::isfinite(qp.lower[i])) {
            const double room = (qp.lower[i] - sol.x[i]) / d[a];
            if (room < alpha) {
              alpha = room;
              blocking = i;
              block_side = BoundState::AtLower;
            }
          }
        }
        alpha = std::max(alpha, 0.0);
        for (int a = 0; a < nf; ++a) {
          sol.x[free_idx[static_cast<std::size_t>(a)]] += alpha * d[a];
        }
        if (blocking >= 0 && alpha < 1.0) {
          sol.active_set[static_cast<std::size_t>(blocking)] = block_side;
          sol.x[blocking] = block_side == BoundState::AtUpper
                                ? qp.upper[blocking]
                                : qp.lower[blocking];
          at_face_minimum = false;
        }
      }
    }

    if (!at_face_minimum) continue;

    // at the minimum of the current face: examine bound multipliers
    const Eigen::VectorXd grad_now = qp.hessian * sol.x + qp.linear_term;
    int release = -1;
    double most_negative = -1e-12;
    for (int i = 0; i < n; ++i) {
      const BoundState s = sol.active_set[static_cast<std::size_t>(i)];
      if (s == BoundState::Free) continue;
      // KKT multiplier: grad_i at a lower bound, -grad_i at an upper bound
      const double mult = s == BoundState::AtLower ? grad_now[i] : -grad_now[i];
      if (mult < most_negative) {
        most_negative = mult;
        release = i;
      }
    }
    if (release >= 0) {
      sol.active_set[static_cast<std::size_t>(release)] = BoundState::Free;
      continue;
    }

    sol.kkt_residual = qp_kkt_residual(qp, sol.x);
    sol.status = sol.kkt_residual <= tol ? QpStatus::Converged : QpStatus::MaxIters;
    return sol;
  }

  sol.status = QpStatus::MaxIters;
  sol.kkt_residual = qp_kkt_residual(qp, sol.x);
  return sol;
}

GradientResult fd_gradient(const ObjectiveFn& f, const Eigen::VectorXd& x,
                           double rel_step) {
  const int n = static_cast<int>(x.size());
  GradientResult res;
  res.grad = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd probe = x;
  for (int i = 0; i < n; ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const ObjEval up = f(probe);
    if (up.failed) {
      res.failed_coordinate = i;
      return res;
    }
    probe[i] = x[i] - h;
    const ObjEval dn = f(probe);
    if (dn.failed) {
      res.failed_coordinate = i;
      return res;
    }
    probe[i] = x[i];
    res.grad[i] = (up.value - dn.value) / (2.0 * h);
  }
  return res;
}

namespace {

Eigen::MatrixXd initial_hessian(int n) { return Eigen::MatrixXd::Identity(n, n); }

/// Powell-damped BFGS update; resets to a scaled identity when the curvature
/// information is unusable.
void bfgs_update(Eigen::MatrixXd& b, const Eigen::VectorXd& s,
                 const Eigen::VectorXd& y) {
  const double sts = s.squaredNorm();
  if (sts < 1e-24) return;
  const Eigen::VectorXd bs = b * s;
  const double sbs = s.dot(bs);
  double sy = s.dot(y);
  if (!(sbs > 0.0) || !std::isfinite(sbs) || !std::isfinite(sy)) {
    const double gamma = sy > 1e-12 ? std::clamp(y.squaredNorm() / sy, 1e-4, 1e4) : 1.0;
    b = gamma * Eigen::MatrixXd::Identity(b.rows(), b.cols());
    return;
  }
  Eigen::VectorXd y_used = y;
  if (sy < 0.2 * sbs) {
    const double theta = 0.8 * sbs / (sbs - sy);
    y_used = theta * y + (1.0 - theta) * bs;
    sy = s.dot(y_used);
  }
  if (sy <= 1e-16 * sts) {
    b = Eigen::MatrixXd::Identity(b.rows(), b.cols());
    return;
  }
  b -= (bs * bs.transpose()) / sbs;
  b += (y_used * y_used.transpose()) / sy;
}

Eigen::MatrixXd gauss_newton_diag(const Eigen::VectorXd& grad, double cost) {
  // scalar-residual Gauss-Newton surrogate: f ~ r^2/2 gives H ~ g g^T / (2f);
  // keep only the diagonal and floor it so the QP stays positive definite
  const int n = static_cast<int>(grad.size());
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
  const double denom = 2.0 * std::max(std::abs(cost), 1e-6);
  for (int i = 0; i < n; ++i) {
    b(i, i) = std::max(1e-4, grad[i] * grad[i] / denom);
  }
  return b;
}

}  // namespace

NlpSolution solve_nlp_sqp(const NlpProblem& problem, const Eigen::VectorXd& x0,
                          const SqpSettings& settings, int iter_budget) {
  NlpSolution sol;
  sol.x = clip(x0, problem.lower, problem.upper);

  const ObjEval f0 = problem.objective(sol.x);
  if (f0.failed) {
    sol.status = NlpStatus::InfeasibleStart;
    return sol;
  }
  sol.cost = f0.value;

  const int n = problem.dim;
  Eigen::MatrixXd b = initial_hessian(n);
  QpSolution qp_warm;
  bool have_warm = false;
  int consecutive_probe_failures = 0;
  const int budget = std::min(settings.max_iters, iter_budget);

  for (int iter = 0; iter < budget; ++iter) {
    sol.iterations = iter + 1;

    double step = settings.grad_step;
    GradientResult gr = fd_gradient(problem.objective, sol.x, step);
    if (!gr.ok()) {
      // shrink the probe stencil once before giving up on this region
      gr = fd_gradient(problem.objective, sol.x, step / 16.0);
    }
    if (!gr.ok()) {
      if (++consecutive_probe_failures >= 2) {
        sol.status = NlpStatus::RoughRegion;
        return sol;
      }
      continue;
    }
    consecutive_probe_failures = 0;
    const Eigen::VectorXd grad = gr.grad;

    sol.stationarity =
        (sol.x - clip(sol.x - grad, problem.lower, problem.upper)).cwiseAbs().maxCoeff();
    if (sol.stationarity <= settings.tol_stationarity) {
      sol.status = NlpStatus::Converged;
      return sol;
    }

    if (settings.hessian_mode == HessianMode::GaussNewtonDiag) {
      b = gauss_newton_diag(grad, sol.cost);
    }

    BoxQp sub;
    sub.hessian = b + 1e-8 * Eigen::MatrixXd::Identity(n, n);
    sub.linear_term = grad;
    sub.lower = problem.lower - sol.x;
    sub.upper = problem.upper - sol.x;
    QpSolution qp = solve_box_qp(sub, have_warm ? &qp_warm : nullptr, 1e-10);
    if (qp.status == QpStatus::SingularHessian) {
      b = initial_hessian(n);
      sub.hessian = b + 1e-8 * Eigen::MatrixXd::Identity(n, n);
      qp = solve_box_qp(sub, nullptr, 1e-10);
    }
    qp_warm = qp;
    have_warm = true;
    const Eigen::VectorXd d = qp.x;
    const double directional = grad.dot(d);
    if (!(directional < 0.0)) {
      // no descent available within the bounds
      sol.status = NlpStatus::Converged;
      return sol;
    }

    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    for (int halving = 0; halving <= 20; ++halving) {
      x_new = clip(sol.x + alpha * d, problem.lower, problem.upper);
      const ObjEval fe = problem.objective(x_new);
      // failed evaluations act as +inf: never acceptable, keep backtracking
      if (!fe.failed && fe.value <= sol.cost + settings.armijo_c * alpha * directional) {
        accepted = true;
        f_new = fe.value;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      sol.status = NlpStatus::LineSearchStall;
      return sol;
    }

    if (settings.hessian_mode == HessianMode::Bfgs) {
      GradientResult gr_new = fd_gradient(problem.objective, x_new, settings.grad_step);
      if (gr_new.ok()) {
        bfgs_update(b, x_new - sol.x, gr_new.grad - grad);
      } else {
        b = initial_hessian(n);
      }
    }
    sol.x = x_new;
    sol.cost = f_new;
  }

  sol.status = NlpStatus::BudgetExhausted;
  return sol;
}

}  // namespace tritier
