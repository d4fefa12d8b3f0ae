#include "tritier/meso.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tritier/text_format.hpp"

namespace tritier {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

/// Resample a scenario's piecewise-constant series onto a shorter horizon.
ScenarioParams truncate_scenario(const ScenarioParams& s, double new_horizon) {
  if (new_horizon >= s.horizon || s.horizon <= 0.0) return s;
  ScenarioParams out = s;
  const int k_old = static_cast<int>(s.inflow_series.size());
  const int k_new = std::max(
      1, static_cast<int>(std::ceil(k_old * new_horizon / s.horizon)));
  out.inflow_series.resize(static_cast<std::size_t>(k_new));
  out.price_series.resize(static_cast<std::size_t>(k_new));
  for (int k = 0; k < k_new; ++k) {
    const double t_mid = (k + 0.5) * new_horizon / k_new;
    out.inflow_series[static_cast<std::size_t>(k)] = s.inflow_at(t_mid);
    out.price_series[static_cast<std::size_t>(k)] = s.price_at(t_mid);
  }
  out.horizon = new_horizon;
  return out;
}

struct Prediction {
  double objective = kInf;
  double violation = kInf;
  bool simulated = false;
};

Prediction predict(const Eigen::VectorXd& u, const ScenarioParams& scenario,
                   const PlantState& state0, const PlantParams& params,
                   double dt_out) {
  const SimResult result =
      simulate(state0, controls_from_vector(u, scenario.horizon), scenario,
               params, dt_out);
  if (std::holds_alternative<FailureReport>(result)) return {};
  const Trajectory& traj = std::get<Trajectory>(result);
  double worst = 0.0;
  for (const PlantState& s : traj.snapshots) {
    for (double h : s.h) {
      worst = std::max(worst, std::max(scenario.h_lo - h, h - scenario.h_hi));
    }
  }
  return {traj.cost, std::max(worst, 0.0), true};
}

bool params_close(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) return false;
  return (a - b).cwiseAbs().maxCoeff() <= 1e-9;
}
}  // namespace

double lower_quantile(std::vector<double> sorted_values, double q) {
  if (sorted_values.empty()) return 0.0;
  std::sort(sorted_values.begin(), sorted_values.end());
  const auto idx = static_cast<std::size_t>(
      std::floor(q * static_cast<double>(sorted_values.size() - 1)));
  return sorted_values[idx];
}

Eigen::VectorXd ReferencePlan::reduced_at(double t) const {
  const int k_count = static_cast<int>(traj_times.size());
  if (k_count == 0) return Eigen::VectorXd::Zero(basis.rank());
  if (t <= traj_times.front()) return reduced_traj.col(0);
  if (t >= traj_times.back()) return reduced_traj.col(k_count - 1);
  int k = 1;
  while (k < k_count && traj_times[static_cast<std::size_t>(k)] < t) ++k;
  const double t0 = traj_times[static_cast<std::size_t>(k - 1)];
  const double t1 = traj_times[static_cast<std::size_t>(k)];
  const double w = t1 > t0 ? (t - t0) / (t1 - t0) : 0.0;
  return (1.0 - w) * reduced_traj.col(k - 1) + w * reduced_traj.col(k);
}

double ReferencePlan::control_at(double t) const {
  return control_traj.at(t - created_at);
}

std::optional<ReferencePlan> assemble_plan(const Particle& best,
                                           const PlantParams& params,
                                           const PlantState& state_estimate,
                                           const ScenarioParams& scenario_estimate,
                                           const MesoConfig& cfg, double t_now,
                                           long plan_id) {
  const ScenarioParams scenario =
      truncate_scenario(scenario_estimate,
                        std::min(cfg.plan_horizon, scenario_estimate.horizon));
  const ControlTrajectory controls =
      controls_from_vector(best.control_params, scenario.horizon);
  const SimResult result =
      simulate(state_estimate, controls, scenario, params, cfg.dt_out);
  if (std::holds_alternative<FailureReport>(result)) return std::nullopt;
  const Trajectory& traj = std::get<Trajectory>(result);

  const int n = params.n_cells;
  const int k_count = static_cast<int>(traj.snapshots.size());
  SnapshotMatrix snaps;
  snaps.columns.resize(2 * n, k_count);
  snaps.times.resize(static_cast<std::size_t>(k_count));
  for (int k = 0; k < k_count; ++k) {
    const PlantState& s = traj.snapshots[static_cast<std::size_t>(k)];
    for (int i = 0; i < n; ++i) {
      snaps.columns(i, k) = s.h[static_cast<std::size_t>(i)];
      snaps.columns(n + i, k) = s.hu[static_cast<std::size_t>(i)];
    }
    snaps.times[static_cast<std::size_t>(k)] = traj.times[static_cast<std::size_t>(k)];
  }

  ReferencePlan plan;
  plan.plan_id = plan_id;
  plan.basis = compute_pod(snaps, cfg.energy_target);
  plan.reduced_traj.resize(plan.basis.rank(), k_count);
  for (int k = 0; k < k_count; ++k) {
    plan.reduced_traj.col(k) = project(plan.basis, snaps.columns.col(k));
  }
  plan.traj_times = snaps.times;
  plan.control_traj = controls;
  plan.created_at = t_now;
  plan.valid_until = t_now + cfg.t2 + cfg.plan_valid_margin + scenario.horizon;
  plan.predicted_cost = traj.cost;
  return plan;
}

MesoCycleResult meso_cycle(const ParticlePool& pool, const Catalog& catalog,
                           const PlantState& state_estimate,
                           const ScenarioParams& scenario_estimate,
                           const MesoConfig& cfg, const PlantParams& params,
                           double t_now, long plan_id, Rng& rng) {
  if (pool.particles.empty() && catalog.entries.empty()) {
    throw std::runtime_error("NO_CANDIDATES: particle pool and catalog both empty");
  }

  const ScenarioParams scenario =
      truncate_scenario(scenario_estimate,
                        std::min(cfg.plan_horizon, scenario_estimate.horizon));
  const NlpProblem problem = transcribe(scenario, scenario.horizon,
                                        cfg.intervals, params, state_estimate,
                                        cfg.dt_out);

  // re-anchor the pool onto the current window: resample each particle's
  // piecewise control at the same absolute times
  const bool window_moved =
      pool.window_horizon > 0.0 &&
      (pool.window_start != t_now || pool.window_horizon != scenario.horizon);
  auto reanchor = [&](const Eigen::VectorXd& u) {
    if (!window_moved || u.size() == 0) return u;
    ControlTrajectory old = controls_from_vector(u, pool.window_horizon);
    Eigen::VectorXd fresh(cfg.intervals);
    for (int j = 0; j < cfg.intervals; ++j) {
      const double t_abs =
          t_now + (j + 0.5) * scenario.horizon / cfg.intervals;
      fresh[j] = old.at(t_abs - pool.window_start);
    }
    return fresh;
  };

  struct Refined {
    Particle particle;
    bool drop_rough = false;
  };
  const int n_in = static_cast<int>(pool.particles.size());
  std::vector<Refined> refined(static_cast<std::size_t>(n_in));

  // particles are independent: refine them in parallel, one slot each
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n_in; ++i) {
    Particle p = pool.particles[static_cast<std::size_t>(i)];
    p.control_params = reanchor(p.control_params);
    if (static_cast<int>(p.control_params.size()) != cfg.intervals) {
      p.control_params = Eigen::VectorXd::Zero(cfg.intervals);
    }
    const NlpSolution nlp =
        solve_nlp_sqp(problem, p.control_params, cfg.sqp, cfg.sqp_budget);
    Refined r;
    if (nlp.status == NlpStatus::RoughRegion ||
        nlp.status == NlpStatus::InfeasibleStart) {
      r.drop_rough = true;
      r.particle = p;
    } else {
      p.control_params = nlp.x;
      const Prediction pred =
          predict(nlp.x, scenario, state_estimate, params, cfg.dt_out);
      p.objective_pred = pred.simulated ? pred.objective : kInf;
      p.violation = pred.violation;
      r.particle = p;
    }
    refined[static_cast<std::size_t>(i)] = std::move(r);
  }

  // prune: rough regions, violations, and objective outliers beyond
  // median + 3*IQR (lower-biased quartiles)
  std::vector<double> finite_objectives;
  for (const Refined& r : refined) {
    if (!r.drop_rough && std::isfinite(r.particle.objective_pred)) {
      finite_objectives.push_back(r.particle.objective_pred);
    }
  }
  double outlier_cut = kInf;
  if (!finite_objectives.empty()) {
    const double median = lower_quantile(finite_objectives, 0.5);
    const double iqr = lower_quantile(finite_objectives, 0.75) -
                       lower_quantile(finite_objectives, 0.25);
    outlier_cut = median + 3.0 * iqr;
  }

  ParticlePool next;
  next.rng_seed = pool.rng_seed;
  next.cycle = pool.cycle + 1;
  next.window_start = t_now;
  next.window_horizon = scenario.horizon;
  for (const Refined& r : refined) {
    if (r.drop_rough) continue;
    if (!std::isfinite(r.particle.objective_pred)) continue;
    if (r.particle.violation > cfg.v_tol) continue;
    if (r.particle.objective_pred > outlier_cut) continue;
    Particle survivor = r.particle;
    survivor.age += 1;
    survivor.origin = ParticleOrigin::Survivor;
    next.particles.push_back(std::move(survivor));
  }
  // the pool must never empty out: keep the least-bad refined particle
  if (next.particles.empty() && n_in > 0) {
    const Refined* least_bad = nullptr;
    for (const Refined& r : refined) {
      if (!least_bad ||
          std::make_pair(r.particle.violation, r.particle.objective_pred) <
              std::make_pair(least_bad->particle.violation,
                             least_bad->particle.objective_pred)) {
        least_bad = &r;
      }
    }
    Particle survivor = least_bad->particle;
    survivor.age += 1;
    survivor.origin = ParticleOrigin::Survivor;
    next.particles.push_back(std::move(survivor));
  }

  // replenish to P, alternating catalog candidates and mutations of the best
  const Eigen::VectorXd features = scenario_features(scenario_estimate);
  std::vector<CatalogEntry> nearest;
  if (!catalog.entries.empty()) {
    nearest = query_nearest(catalog, features,
                            std::min<int>(cfg.pool_size + n_in,
                                          static_cast<int>(catalog.entries.size())));
  }
  std::size_t catalog_cursor = 0;
  bool try_catalog = true;
  while (static_cast<int>(next.particles.size()) < cfg.pool_size) {
    const Particle* best_existing = nullptr;
    for (const Particle& p : next.particles) {
      if (!best_existing || p.objective_pred < best_existing->objective_pred)
        best_existing = &p;
    }

    Particle fresh;
    bool made = false;
    if (try_catalog) {
      while (catalog_cursor < nearest.size()) {
        const CatalogEntry& e = nearest[catalog_cursor++];
        if (e.label == RegularityLabel::Failed) continue;
        Eigen::VectorXd u = e.control_params;
        if (static_cast<int>(u.size()) != cfg.intervals) {
          // catalog built at a different M: resample piecewise-constant
          Eigen::VectorXd v(cfg.intervals);
          const ControlTrajectory tmp = controls_from_vector(u, 1.0);
          for (int j = 0; j < cfg.intervals; ++j)
            v[j] = tmp.at((j + 0.5) / cfg.intervals);
          u = v;
        }
        const bool duplicate = std::any_of(
            next.particles.begin(), next.particles.end(),
            [&](const Particle& p) { return params_close(p.control_params, u); });
        if (duplicate) continue;
        fresh.control_params = u;
        fresh.origin = ParticleOrigin::Catalog;
        made = true;
        break;
      }
    }
    if (!made) {
      if (!best_existing) {
        if (next.particles.empty() && nearest.empty()) {
          throw std::runtime_error("NO_CANDIDATES: nothing to replenish from");
        }
        // no scored particle yet: mutate around zero
        fresh.control_params = Eigen::VectorXd::Zero(cfg.intervals);
      } else {
        fresh.control_params = best_existing->control_params;
      }
      for (int j = 0; j < cfg.intervals; ++j) {
        fresh.control_params[j] =
            std::clamp(fresh.control_params[j] +
                           rng.normal(0.0, cfg.sigma_mut * scenario.u_max),
                       0.0, scenario.u_max);
      }
      fresh.origin = ParticleOrigin::Mutation;
    }
    try_catalog = !try_catalog;

    const Prediction pred = predict(fresh.control_params, scenario,
                                    state_estimate, params, cfg.dt_out);
    fresh.objective_pred = pred.simulated ? pred.objective : kInf;
    fresh.violation = pred.violation;
    fresh.age = 0;
    next.particles.push_back(std::move(fresh));
  }

  // best particle: lowest predicted objective among the tolerably feasible,
  // falling back to the least-violating particle
  int best_idx = -1;
  for (int i = 0; i < static_cast<int>(next.particles.size()); ++i) {
    const Particle& p = next.particles[static_cast<std::size_t>(i)];
    if (p.violation > cfg.v_tol || !std::isfinite(p.objective_pred)) continue;
    if (best_idx < 0 ||
        p.objective_pred <
            next.particles[static_cast<std::size_t>(best_idx)].objective_pred) {
      best_idx = i;
    }
  }
  bool infeasible = false;
  if (best_idx < 0) {
    infeasible = true;
    for (int i = 0; i < static_cast<int>(next.particles.size()); ++i) {
      const Particle& p = next.particles[static_cast<std::size_t>(i)];
      if (best_idx < 0 ||
          p.violation <
              next.particles[static_cast<std::size_t>(best_idx)].violation) {
        best_idx = i;
      }
    }
  }

  MesoCycleResult result;
  result.pool = std::move(next);
  if (best_idx >= 0) {
    result.plan = assemble_plan(
        result.pool.particles[static_cast<std::size_t>(best_idx)], params,
        state_estimate, scenario_estimate, cfg, t_now, plan_id);
    if (result.plan) {
      result.plan->infeasible = infeasible;
      if (infeasible) result.note = "INFEASIBLE_PLAN";
    } else {
      result.note = "PLAN_SIM_FAILED";
    }
  } else {
    result.note = "PLAN_SIM_FAILED";
  }
  return result;
}

std::vector<DiscrepancyRecord> mine_discrepancies(
    const ReferencePlan& plan, const std::vector<Observation>& sensor_buffer,
    int window, double delta_ok, const Eigen::VectorXd& features) {
  std::vector<DiscrepancyRecord> records;
  if (sensor_buffer.empty() || window < 1) return records;
  const std::size_t w = static_cast<std::size_t>(window);
  for (std::size_t start = 0; start + w <= sensor_buffer.size(); start += w) {
    double sum_sq = 0.0;
    long count = 0;
    for (std::size_t j = start; j < start + w; ++j) {
      const Observation& obs = sensor_buffer[j];
      const Eigen::VectorXd full = lift(plan.basis, plan.reduced_at(obs.t));
      for (std::size_t s = 0; s < obs.cells.size(); ++s) {
        const double predicted = full[obs.cells[s]];
        const double r = obs.values[s] - predicted;
        sum_sq += r * r;
        ++count;
      }
    }
    DiscrepancyRecord rec;
    rec.features = features;
    rec.pred_err = count > 0 ? std::sqrt(sum_sq / static_cast<double>(count)) : 0.0;
    rec.ok = rec.pred_err <= delta_ok;
    rec.t = sensor_buffer[start + w - 1].t;
    records.push_back(std::move(rec));
  }
  return records;
}

namespace {
void write_vector(std::ostringstream& os, const double* data, long n) {
  for (long i = 0; i < n; ++i) {
    if (i) os << ' ';
    os << fmt_g17(data[i]);
  }
  os << '\n';
}

Eigen::VectorXd read_vector(const std::string& line, long n, const char* what) {
  const std::vector<std::string> tok = tokenize(line);
  if (static_cast<long>(tok.size()) != n) {
    throw std::runtime_error(std::string("plan payload: bad ") + what);
  }
  Eigen::VectorXd v(n);
  bool ok = true;
  for (long i = 0; i < n; ++i) {
    v[i] = parse_double(tok[static_cast<std::size_t>(i)], ok);
    if (!ok) throw std::runtime_error(std::string("plan payload: bad ") + what);
  }
  return v;
}
}  // namespace

std::string serialize_plan(const ReferencePlan& plan) {
  const int r = plan.basis.rank();
  const int dim = plan.basis.state_dim();
  const int k_count = static_cast<int>(plan.traj_times.size());
  const int m = plan.control_traj.intervals();

  nlohmann::json header;
  header["plan_id"] = plan.plan_id;
  header["created_at"] = plan.created_at;
  header["valid_until"] = plan.valid_until;
  header["r"] = r;
  header["M"] = m;
  header["predicted_cost"] = plan.predicted_cost;
  header["dim"] = dim;
  header["K"] = k_count;
  header["control_horizon"] = plan.control_traj.horizon;
  header["energy_fraction"] = plan.basis.energy_fraction;
  header["degenerate"] = plan.basis.degenerate;
  header["infeasible"] = plan.infeasible;

  std::ostringstream os;
  os << header.dump() << '\n';
  write_vector(os, plan.basis.mean_state.data(), dim);
  // modes row-major
  {
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < r; ++j) {
        if (i || j) os << ' ';
        os << fmt_g17(plan.basis.modes(i, j));
      }
    }
    os << '\n';
  }
  write_vector(os, plan.basis.singular_values.data(), r);
  {
    std::vector<double> times(plan.traj_times.begin(), plan.traj_times.end());
    write_vector(os, times.data(), k_count);
  }
  {
    // reduced trajectory column-major (one column per snapshot)
    std::ostringstream tmp;
    for (int k = 0; k < k_count; ++k) {
      for (int i = 0; i < r; ++i) {
        if (k || i) tmp << ' ';
        tmp << fmt_g17(plan.reduced_traj(i, k));
      }
    }
    os << tmp.str() << '\n';
  }
  write_vector(os, plan.control_traj.outflows.data(), m);
  return os.str();
}

ReferencePlan parse_plan(const std::string& payload) {
  std::istringstream in(payload);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("plan payload: empty");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded()) throw std::runtime_error("plan payload: bad header");

  ReferencePlan plan;
  int r = 0;
  int dim = 0;
  int k_count = 0;
  int m = 0;
  try {
    plan.plan_id = header.at("plan_id").get<long>();
    plan.created_at = header.at("created_at").get<double>();
    plan.valid_until = header.at("valid_until").get<double>();
    r = header.at("r").get<int>();
    m = header.at("M").get<int>();
    plan.predicted_cost = header.at("predicted_cost").get<double>();
    dim = header.at("dim").get<int>();
    k_count = header.at("K").get<int>();
    plan.control_traj.horizon = header.at("control_horizon").get<double>();
    plan.basis.energy_fraction = header.at("energy_fraction").get<double>();
    plan.basis.degenerate = header.at("degenerate").get<bool>();
    plan.infeasible = header.at("infeasible").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("plan payload: ") + e.what());
  }
  if (r < 1 || dim < 1 || k_count < 1 || m < 0) {
    throw std::runtime_error("plan payload: bad dimensions");
  }

  auto next_line = [&]() -> std::string {
    std::string l;
    if (!std::getline(in, l)) throw std::runtime_error("plan payload: truncated");
    return l;
  };

  plan.basis.mean_state = read_vector(next_line(), dim, "mean");
  const Eigen::VectorXd modes_flat =
      read_vector(next_line(), static_cast<long>(dim) * r, "modes");
  plan.basis.modes.resize(dim, r);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < r; ++j)
      plan.basis.modes(i, j) = modes_flat[static_cast<long>(i) * r + j];
  plan.basis.singular_values = read_vector(next_line(), r, "singular values");
  const Eigen::VectorXd times = read_vector(next_line(), k_count, "times");
  plan.traj_times.assign(times.data(), times.data() + k_count);
  const Eigen::VectorXd reduced_flat =
      read_vector(next_line(), static_cast<long>(r) * k_count, "reduced trajectory");
  plan.reduced_traj.resize(r, k_count);
  for (int k = 0; k < k_count; ++k)
    for (int i = 0; i < r; ++i)
      plan.reduced_traj(i, k) = reduced_flat[static_cast<long>(k) * r + i];
  const Eigen::VectorXd controls = read_vector(next_line(), m, "controls");
  plan.control_traj.outflows.assign(controls.data(), controls.data() + m);
  return plan;
}

}  // namespace tritier
