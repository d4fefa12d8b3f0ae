#include "tritier/realtime.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tritier {

const char* rt_mode_name(RtMode mode) {
  switch (mode) {
    case RtMode::Tracked: return "TRACKED";
    case RtMode::FallbackReference: return "FALLBACK_REFERENCE";
    case RtMode::FallbackHold: return "FALLBACK_HOLD";
  }
  return "UNKNOWN";
}

void EstimatorWindow::push(Observation obs) {
  if (!observations.empty() && obs.t <= observations.back().t) {
    throw std::invalid_argument("EstimatorWindow: timestamps must increase");
  }
  observations.push_back(std::move(obs));
  while (static_cast<int>(observations.size()) > capacity) observations.pop_front();
}

namespace {
/// Rows of the basis (h block) selected by the sensor cells.
Eigen::MatrixXd sensor_selector(const PodBasis& basis,
                                const std::vector<int>& cells) {
  Eigen::MatrixXd s(static_cast<long>(cells.size()), basis.rank());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    s.row(static_cast<long>(i)) = basis.modes.row(cells[i]);
  }
  return s;
}

Eigen::VectorXd sensor_mean(const PodBasis& basis, const std::vector<int>& cells) {
  Eigen::VectorXd m(static_cast<long>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    m[static_cast<long>(i)] = basis.mean_state[cells[i]];
  }
  return m;
}
}  // namespace

Eigen::VectorXd estimate_reduced_state(const EstimatorWindow& window,
                                       const ReferencePlan& plan,
                                       const std::vector<int>& sensor_cells,
                                       double t_now, double lambda,
                                       double* est_err) {
  const int r = plan.basis.rank();
  // the reference is the prior: coordinates the sensors cannot see stay on
  // the plan instead of being dragged to zero
  const Eigen::VectorXd z_prior = plan.reduced_at(t_now);
  if (window.empty()) {
    if (est_err) *est_err = 0.0;
    return z_prior;
  }
  const Eigen::MatrixXd p = sensor_selector(plan.basis, sensor_cells);
  const Eigen::VectorXd m = sensor_mean(plan.basis, sensor_cells);

  auto residual_rms = [&](const Eigen::VectorXd& z) {
    const Observation& last = window.observations.back();
    Eigen::VectorXd y(static_cast<long>(last.values.size()));
    for (std::size_t i = 0; i < last.values.size(); ++i)
      y[static_cast<long>(i)] = last.values[i];
    const Eigen::VectorXd res = p * z + m - y;
    return std::sqrt(res.squaredNorm() / std::max<long>(1, res.size()));
  };

  if (window.size() < 3) {
    // single-shot projection of the latest observation around the prior
    const Observation& last = window.observations.back();
    Eigen::VectorXd y(static_cast<long>(last.values.size()));
    for (std::size_t i = 0; i < last.values.size(); ++i)
      y[static_cast<long>(i)] = last.values[i];
    Eigen::MatrixXd normal = p.transpose() * p +
                             1e-8 * Eigen::MatrixXd::Identity(r, r);
    const Eigen::VectorXd dz = Eigen::LLT<Eigen::MatrixXd>(normal).solve(
        p.transpose() * (y - m - p * z_prior));
    const Eigen::VectorXd z = z_prior + dz;
    if (est_err) *est_err = residual_rms(z);
    return z;
  }

  // fit the deviation and a drift term over the window with exponential
  // weights; the regularizer pins both to the reference
  const int dim = 2 * r;
  Eigen::MatrixXd normal = 1e-8 * Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
  for (const Observation& obs : window.observations) {
    const double dt = obs.t - t_now;
    const double w = std::pow(std::max(lambda, 1e-12), t_now - obs.t);
    Eigen::VectorXd y(static_cast<long>(obs.values.size()));
    for (std::size_t i = 0; i < obs.values.size(); ++i)
      y[static_cast<long>(i)] = obs.values[i];
    Eigen::MatrixXd a(p.rows(), dim);
    a.leftCols(r) = p;
    a.rightCols(r) = dt * p;
    normal.noalias() += w * a.transpose() * a;
    rhs.noalias() += w * a.transpose() * (y - m - p * z_prior);
  }
  const Eigen::VectorXd sol = Eigen::LLT<Eigen::MatrixXd>(normal).solve(rhs);
  const Eigen::VectorXd z = z_prior + sol.head(r);
  if (est_err) *est_err = residual_rms(z);
  return z;
}

LtvModel linearize_reduced_dynamics(const ReferencePlan& plan,
                                    const PlantParams& params,
                                    const ScenarioParams& scenario,
                                    double step_dt, double eps) {
  LtvModel ltv;
  ltv.dt = step_dt;
  ltv.t0 = plan.created_at;
  const int r = plan.basis.rank();
  const int n = params.n_cells;

  // advance the lifted state by step_dt under the plan's reference control
  auto advance = [&](const Eigen::VectorXd& z, double t_abs,
                     double du) -> std::optional<Eigen::VectorXd> {
    const Eigen::VectorXd full = lift(plan.basis, z);
    PlantState state;
    state.h.resize(static_cast<std::size_t>(n));
    state.hu.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      state.h[static_cast<std::size_t>(i)] = std::max(full[i], params.h_min);
      state.hu[static_cast<std::size_t>(i)] = full[n + i];
    }
    state.t = t_abs;
    const double u =
        std::clamp(plan.control_at(t_abs) + du, 0.0, scenario.u_max);
    const double t_rel = t_abs - plan.created_at;
    const double inflow = scenario.inflow_at(t_rel);
    const double t_end = t_abs + step_dt;
    while (state.t < t_end - 1e-12) {
      if (auto failure = step_in_place(state, ControlInput{u}, inflow,
                                       t_end - state.t, params)) {
        return std::nullopt;
      }
    }
    Eigen::VectorXd out(2 * n);
    for (int i = 0; i < n; ++i) {
      out[i] = state.h[static_cast<std::size_t>(i)];
      out[n + i] = state.hu[static_cast<std::size_t>(i)];
    }
    return project(plan.basis, out);
  };

  const int steps = std::max(1, static_cast<int>(plan.traj_times.size()) - 1);
  ltv.a.reserve(static_cast<std::size_t>(steps));
  ltv.b.reserve(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    const double t_abs = plan.created_at + k * step_dt;
    const Eigen::VectorXd z_ref = plan.reduced_at(t_abs);
    Eigen::MatrixXd a(r, r);
    Eigen::VectorXd b(r);
    bool degraded = false;
    const double dz = eps * std::max(1.0, z_ref.norm());
    for (int j = 0; j < r && !degraded; ++j) {
      Eigen::VectorXd zp = z_ref;
      Eigen::VectorXd zm = z_ref;
      zp[j] += dz;
      zm[j] -= dz;
      const auto fp = advance(zp, t_abs, 0.0);
      const auto fm = advance(zm, t_abs, 0.0);
      if (!fp || !fm) {
        degraded = true;
        break;
      }
      a.col(j) = (*fp - *fm) / (2.0 * dz);
    }
    const double du = eps * std::max(1.0, scenario.u_max);
    const auto gp = advance(z_ref, t_abs, du);
    const auto gm = advance(z_ref, t_abs, -du);
    if (!degraded && gp && gm) {
      b = (*gp - *gm) / (2.0 * du);
    } else {
      degraded = true;
    }
    if (degraded) {
      a = Eigen::MatrixXd::Identity(r, r);
      b = Eigen::VectorXd::Zero(r);
    }
    ltv.a.push_back(std::move(a));
    ltv.b.push_back(std::move(b));
  }
  return ltv;
}

std::optional<TrackingQp> build_tracking_qp(const ReferencePlan& plan,
                                            const Eigen::VectorXd& z_now,
                                            double t_now,
                                            const TrackingConfig& cfg,
                                            const LtvModel& ltv) {
  if (!(t_now < plan.valid_until)) return std::nullopt;
  if (ltv.a.empty() || ltv.dt <= 0.0) return std::nullopt;

  const int r = plan.basis.rank();
  const int total_steps = static_cast<int>(ltv.a.size());
  int k0 = static_cast<int>(std::floor((t_now - ltv.t0) / ltv.dt + 0.5));
  k0 = std::clamp(k0, 0, total_steps - 1);
  const int n = std::min(cfg.horizon_steps, total_steps - k0);
  if (n < 1) return std::nullopt;

  // condensed prediction: z_k - z_ref_k = Phi_k dz0 + sum_j G_kj du_j
  Eigen::VectorXd dz = z_now - plan.reduced_at(t_now);
  std::vector<Eigen::VectorXd> free_resp(static_cast<std::size_t>(n + 1));
  free_resp[0] = dz;
  for (int k = 0; k < n; ++k) {
    free_resp[static_cast<std::size_t>(k + 1)] =
        ltv.a[static_cast<std::size_t>(k0 + k)] * free_resp[static_cast<std::size_t>(k)];
  }
  // g.col(j) stacked over k=1..n gives the response of z_k to du_j
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(static_cast<long>(n) * r, n);
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(r);
    for (int k = j; k < n; ++k) {
      if (k == j) {
        v = ltv.b[static_cast<std::size_t>(k0 + k)];
      } else {
        v = ltv.a[static_cast<std::size_t>(k0 + k)] * v;
      }
      g.block(static_cast<long>(k) * r, j, r, 1) = v;
    }
  }
  Eigen::VectorXd f(static_cast<long>(n) * r);
  for (int k = 1; k <= n; ++k) {
    f.segment(static_cast<long>(k - 1) * r, r) = free_resp[static_cast<std::size_t>(k)];
  }

  TrackingQp out;
  out.start_index = k0;
  out.steps = n;
  out.u_ref.resize(n);
  for (int k = 0; k < n; ++k) {
    out.u_ref[k] = plan.control_at(ltv.t0 + (k0 + k) * ltv.dt);
  }
  out.qp.hessian = 2.0 * (cfg.q_weight * (g.transpose() * g).eval() +
                          cfg.r_weight * Eigen::MatrixXd::Identity(n, n));
  out.qp.hessian += 1e-8 * Eigen::MatrixXd::Identity(n, n);
  out.qp.linear_term = 2.0 * cfg.q_weight * (g.transpose() * f).eval();
  out.qp.lower.resize(n);
  out.qp.upper.resize(n);
  for (int k = 0; k < n; ++k) {
    out.qp.lower[k] = cfg.u_min - out.u_ref[k];
    out.qp.upper[k] = cfg.u_max - out.u_ref[k];
  }
  return out;
}

QpSolution shift_warm_start(const QpSolution& prev, int n) {
  QpSolution shifted;
  shifted.x = Eigen::VectorXd::Zero(n);
  shifted.active_set.assign(static_cast<std::size_t>(n), BoundState::Free);
  const int prev_n = static_cast<int>(prev.x.size());
  for (int i = 0; i < n; ++i) {
    const int src = std::min(i + 1, prev_n - 1);
    if (src >= 0 && src < prev_n) {
      shifted.x[i] = prev.x[src];
      shifted.active_set[static_cast<std::size_t>(i)] =
          prev.active_set[static_cast<std::size_t>(src)];
    }
  }
  return shifted;
}

RtStepResult rt_step(const ReferencePlan* plan, const LtvModel* ltv,
                     const EstimatorWindow& window,
                     const std::vector<int>& sensor_cells,
                     const QpSolution* warm, const TrackingConfig& cfg,
                     double t_now, double last_control) {
  RtStepResult out;
  RtDecision& d = out.decision;

  if (!plan || !ltv) {
    d.mode = RtMode::FallbackHold;
    d.control.outflow = std::clamp(last_control, cfg.u_min, cfg.u_max);
    return out;
  }
  d.plan_id = plan->plan_id;

  const Eigen::VectorXd z_now = estimate_reduced_state(
      window, *plan, sensor_cells, t_now, cfg.estimator_lambda, &d.est_err);

  const std::optional<TrackingQp> tqp =
      build_tracking_qp(*plan, z_now, t_now, cfg, *ltv);
  if (!tqp) {
    // plan expired (or degenerate model): track its control open loop
    d.mode = RtMode::FallbackReference;
    d.control.outflow = std::clamp(plan->control_at(t_now), cfg.u_min, cfg.u_max);
    return out;
  }

  QpSolution warm_shifted;
  const QpSolution* warm_ptr = nullptr;
  if (warm && warm->x.size() > 0) {
    warm_shifted = shift_warm_start(*warm, tqp->steps);
    warm_ptr = &warm_shifted;
  }
  QpSolution qp = solve_box_qp(tqp->qp, warm_ptr, cfg.qp_tol);
  d.qp_iterations = qp.iterations;
  d.solve_time = qp.iterations * cfg.cost_per_qp_iter;

  if (!qp.ok()) {
    d.mode = RtMode::FallbackReference;
    d.control.outflow = std::clamp(plan->control_at(t_now), cfg.u_min, cfg.u_max);
    return out;
  }
  out.qp_solution = qp;
  if (d.solve_time > cfg.deadline) {
    // the modeled compute budget was blown: the step's result is unusable
    d.mode = RtMode::FallbackReference;
    d.control.outflow = std::clamp(plan->control_at(t_now), cfg.u_min, cfg.u_max);
    return out;
  }

  d.mode = RtMode::Tracked;
  d.control.outflow =
      std::clamp(tqp->u_ref[0] + qp.x[0], cfg.u_min, cfg.u_max);
  return out;
}

}  // namespace tritier
