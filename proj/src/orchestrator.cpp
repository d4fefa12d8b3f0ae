#include "tritier/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tritier/text_format.hpp"

namespace tritier {

LatencyVerdict validate_latency(const LatencyConfig& cfg) {
  if (!(cfg.t1 > 0.0) || !(cfg.t2 > 0.0) || cfg.t1 >= cfg.t2) {
    return LatencyVerdict::Error;
  }
  const double ratio = cfg.t2 / cfg.t1;
  if (ratio < 10.0 || ratio > 100.0) return LatencyVerdict::Warning;
  return LatencyVerdict::Ok;
}

const char* topic_name(Topic t) {
  switch (t) {
    case Topic::Plan: return "PLAN";
    case Topic::Sensor: return "SENSOR";
    case Topic::Discrepancy: return "DISCREPANCY";
    case Topic::CatalogUpdate: return "CATALOG_UPDATE";
  }
  return "UNKNOWN";
}

const char* closed_loop_mode_name(ClosedLoopMode mode) {
  switch (mode) {
    case ClosedLoopMode::FullThreeTier: return "three_tier";
    case ClosedLoopMode::RtOnly: return "rt_only";
    case ClosedLoopMode::MesoOpenLoop: return "meso_open_loop";
    case ClosedLoopMode::ConstantControl: return "constant";
  }
  return "unknown";
}

long MessageBus::publish(Topic topic, double publish_time,
                         double available_time, std::string payload) {
  if (available_time < publish_time) available_time = publish_time;
  const long seq = next_seq_[topic]++;
  queues_[topic].push_back(
      Message{topic, publish_time, available_time, std::move(payload), seq});
  return seq;
}

const Message* MessageBus::latest(Topic topic, double now) const {
  const auto it = queues_.find(topic);
  if (it == queues_.end()) return nullptr;
  const Message* best = nullptr;
  for (const Message& m : it->second) {
    if (m.available_time <= now) {
      if (!best || m.seq > best->seq) best = &m;
    }
  }
  if (best && best->available_time > now) ++violations_;  // unreachable guard
  return best;
}

std::vector<const Message*> MessageBus::published_up_to(Topic topic, double now,
                                                        long after_seq) const {
  std::vector<const Message*> out;
  const auto it = queues_.find(topic);
  if (it == queues_.end()) return out;
  for (const Message& m : it->second) {
    if (m.seq > after_seq && m.publish_time <= now) {
      if (m.available_time > now) {
        ++violations_;
        continue;
      }
      out.push_back(&m);
    }
  }
  return out;
}

ScenarioParams re_anchor_scenario(const ScenarioParams& scenario, double t0) {
  if (t0 <= 0.0 || scenario.horizon <= 0.0) return scenario;
  ScenarioParams out = scenario;
  const double remaining = std::max(0.0, scenario.horizon - t0);
  const int k_old = static_cast<int>(scenario.inflow_series.size());
  const int k_new = std::max(
      1, static_cast<int>(std::ceil(k_old * remaining / scenario.horizon)));
  out.inflow_series.resize(static_cast<std::size_t>(k_new));
  out.price_series.resize(static_cast<std::size_t>(k_new));
  for (int k = 0; k < k_new; ++k) {
    const double t_mid = t0 + (k + 0.5) * remaining / k_new;
    out.inflow_series[static_cast<std::size_t>(k)] = scenario.inflow_at(t_mid);
    out.price_series[static_cast<std::size_t>(k)] = scenario.price_at(t_mid);
  }
  out.horizon = remaining;
  return out;
}

namespace {

PlantState unstack_state(const Eigen::VectorXd& v, const PlantParams& params,
                         double t) {
  const int n = params.n_cells;
  PlantState s;
  s.h.resize(static_cast<std::size_t>(n));
  s.hu.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    s.h[static_cast<std::size_t>(i)] = std::max(v[i], params.h_min);
    s.hu[static_cast<std::size_t>(i)] = v[n + i];
  }
  s.t = t;
  return s;
}

std::string serialize_discrepancy(const DiscrepancyRecord& rec) {
  std::ostringstream os;
  os << fmt_g17(rec.t) << ' ' << fmt_g17(rec.pred_err) << ' ' << (rec.ok ? 1 : 0);
  for (int i = 0; i < rec.features.size(); ++i) os << ' ' << fmt_g17(rec.features[i]);
  return os.str();
}

struct EngineEvent {
  double t;
  int kind;  // 0 = rt tick, 1 = meso cycle (rt runs first at equal times)
  long index;
  bool operator<(const EngineEvent& other) const {
    if (t != other.t) return t < other.t;
    if (kind != other.kind) return kind < other.kind;
    return index < other.index;
  }
};

}  // namespace

RunLog run_closed_loop(const LatencyConfig& latency, const PlantParams& params,
                       const ScenarioParams& scenario_truth,
                       const Catalog& catalog_in, std::uint64_t seed,
                       const ClosedLoopOptions& options) {
  RunLog log;
  log.seed = seed;

  Rng master(seed);
  Rng sensor_rng = master.fork(1);
  Rng meso_rng = master.fork(2);

  Catalog catalog = catalog_in;  // feedback mutates the local copy
  MessageBus bus;

  ScenarioParams forecast = options.scenario_estimate;
  if (forecast.inflow_series.empty()) forecast = scenario_truth;

  std::vector<int> sensor_cells = options.sensor_cells;
  if (sensor_cells.empty()) {
    // default: every fourth cell
    for (int c = 0; c < params.n_cells; c += 4) sensor_cells.push_back(c);
  }

  const double t1 = latency.t1;
  const long n_ticks = static_cast<long>(std::floor(scenario_truth.horizon / t1 + 1e-9));
  const double t_end = static_cast<double>(n_ticks) * t1;

  // --- layer state ---------------------------------------------------------
  PlantState truth = PlantState::flat(params.n_cells, scenario_truth.initial_depth);

  EstimatorWindow rt_window;
  rt_window.capacity = options.tracking.estimator_window;
  TrackingConfig tracking = options.tracking;
  tracking.cost_per_qp_iter = latency.rt_cost_per_qp_iter;
  tracking.u_max = std::min(tracking.u_max, forecast.u_max);
  QpSolution rt_warm;
  bool rt_have_warm = false;
  double last_control = 0.0;
  std::optional<ReferencePlan> rt_plan;
  std::optional<LtvModel> rt_ltv;
  long rt_adopted_seq = -1;

  ParticlePool pool;
  pool.rng_seed = seed;
  std::optional<ReferencePlan> meso_prev_plan;
  EstimatorWindow meso_window;
  meso_window.capacity = options.tracking.estimator_window;
  long meso_sensor_cursor = -1;
  long meso_mined_cursor = -1;  // index into meso_obs_buffer already mined
  std::vector<Observation> meso_obs_buffer;
  long next_plan_id = 1;

  double constant_control = 0.0;

  const bool has_meso = options.mode == ClosedLoopMode::FullThreeTier ||
                        options.mode == ClosedLoopMode::MesoOpenLoop;
  const bool has_rt_qp = options.mode == ClosedLoopMode::FullThreeTier ||
                         options.mode == ClosedLoopMode::RtOnly;

  // --- offline pre-time: initial plan / constant from the catalog ----------
  if (!catalog.entries.empty()) {
    const Eigen::VectorXd f = scenario_features(forecast);
    const std::vector<CatalogEntry> nn = query_nearest(catalog, f, 1);
    const CatalogEntry& entry = nn.front();
    if (options.mode == ClosedLoopMode::ConstantControl) {
      constant_control = entry.control_params.size() > 0
                             ? entry.control_params.mean()
                             : 0.0;
      constant_control = std::clamp(constant_control, 0.0, forecast.u_max);
    } else if (latency.offline_pretime &&
               entry.label != RegularityLabel::Failed) {
      Particle p;
      p.control_params = entry.control_params;
      p.origin = ParticleOrigin::Catalog;
      const PlantState s0 =
          PlantState::flat(params.n_cells, forecast.initial_depth);
      // the offline plan is the whole-horizon reference; sliding windows are
      // the meso layer's business
      MesoConfig pretime_cfg = options.meso;
      pretime_cfg.plan_horizon = forecast.horizon;
      pretime_cfg.plan_valid_margin += forecast.horizon;
      const std::optional<ReferencePlan> plan =
          assemble_plan(p, params, s0, forecast, pretime_cfg, 0.0, 0);
      if (plan) {
        bus.publish(Topic::Plan, 0.0, 0.0, serialize_plan(*plan));
        log.plans.push_back(PlanLogRecord{0.0, plan->plan_id, plan->predicted_cost});
        log.events.emplace_back(0.0, "PLAN_PUBLISHED id=0 (offline)");
        meso_prev_plan = plan;
        // seed the pool so the first cycle refines this plan's tail
        pool.particles.push_back(p);
        pool.window_start = 0.0;
        pool.window_horizon = forecast.horizon;
      } else {
        log.events.emplace_back(0.0, "OFFLINE_PLAN_FAILED");
      }
    }
  }

  // --- event list -----------------------------------------------------------
  std::vector<EngineEvent> events;
  for (long k = 0; k < n_ticks; ++k) {
    events.push_back(EngineEvent{static_cast<double>(k) * t1, 0, k});
  }
  if (has_meso) {
    // the offline tier covers t = 0 (pretime plan); the first meso cycle
    // completes one period in
    for (long c = 1; static_cast<double>(c) * latency.t2 < t_end; ++c) {
      events.push_back(EngineEvent{static_cast<double>(c) * latency.t2, 1, c});
    }
  }
  std::sort(events.begin(), events.end());

  bool failed = false;
  for (const EngineEvent& ev : events) {
    if (failed) break;
    const double now = ev.t;

    if (ev.kind == 0) {
      // ----------------------------- real-time tick -----------------------
      // adopt the newest available plan
      if (options.mode != ClosedLoopMode::ConstantControl) {
        const Message* newest = bus.latest(Topic::Plan, now);
        if (newest && newest->seq != rt_adopted_seq) {
          try {
            ReferencePlan plan = parse_plan(newest->payload);
            const ScenarioParams plan_scenario =
                re_anchor_scenario(forecast, plan.created_at);
            rt_ltv = has_rt_qp
                         ? linearize_reduced_dynamics(plan, params, plan_scenario,
                                                      t1, tracking.jacobian_eps)
                         : LtvModel{};
            rt_plan = std::move(plan);
            rt_adopted_seq = newest->seq;
            log.events.emplace_back(
                now, "PLAN_ADOPTED id=" + std::to_string(rt_plan->plan_id));
          } catch (const std::exception& e) {
            log.events.emplace_back(now, std::string("PLAN_PARSE_ERROR ") + e.what());
          }
        }
      }

      // observe and publish
      Observation obs = observe(truth, sensor_cells, options.noise_std, sensor_rng);
      rt_window.push(obs);
      bus.publish(Topic::Sensor, now, now, serialize_observation(obs));

      // decide
      RtDecision decision;
      if (options.mode == ClosedLoopMode::ConstantControl) {
        decision.mode = RtMode::FallbackHold;
        decision.control.outflow = constant_control;
      } else if (options.mode == ClosedLoopMode::MesoOpenLoop) {
        if (rt_plan) {
          decision.mode = RtMode::FallbackReference;
          decision.plan_id = rt_plan->plan_id;
          decision.control.outflow =
              std::clamp(rt_plan->control_at(now), 0.0, forecast.u_max);
        } else {
          decision.mode = RtMode::FallbackHold;
          decision.control.outflow = last_control;
        }
      } else {
        const RtStepResult rt = rt_step(
            rt_plan ? &*rt_plan : nullptr, rt_ltv ? &*rt_ltv : nullptr,
            rt_window, sensor_cells, rt_have_warm ? &rt_warm : nullptr,
            tracking, now, last_control);
        decision = rt.decision;
        if (rt.qp_solution) {
          rt_warm = *rt.qp_solution;
          rt_have_warm = true;
        }
      }
      last_control = decision.control.outflow;
      log.decisions.emplace_back(now, decision);

      // plant truth advances one tick under the applied control
      log.true_cost += stage_cost(truth, decision.control,
                                  scenario_truth.price_at(now), scenario_truth) * t1;
      const double tick_end = now + t1;
      while (truth.t < tick_end - 1e-12) {
        const double inflow = scenario_truth.inflow_at(truth.t);
        if (auto failure = step_in_place(truth, decision.control, inflow,
                                         tick_end - truth.t, params)) {
          log.events.emplace_back(truth.t,
                                  std::string("PLANT_FAILURE ") + failure->to_json());
          failed = true;
          break;
        }
      }
      if (!failed) truth.t = tick_end;
    } else {
      // ----------------------------- meso cycle ---------------------------
      // consume sensor messages published up to the cycle start
      for (const Message* m :
           bus.published_up_to(Topic::Sensor, now, meso_sensor_cursor)) {
        meso_sensor_cursor = std::max(meso_sensor_cursor, m->seq);
        try {
          Observation obs = parse_observation(m->payload);
          meso_obs_buffer.push_back(obs);
          meso_window.push(std::move(obs));
        } catch (const std::exception& e) {
          log.events.emplace_back(now, std::string("SENSOR_PARSE_ERROR ") + e.what());
        }
      }

      // state estimate: lift the reduced LS fit against the previous plan,
      // then shift all depths by the mean sensor residual (smooth mass
      // correction; per-cell insertion would put kinks into the estimate)
      PlantState state_estimate =
          PlantState::flat(params.n_cells, forecast.initial_depth);
      state_estimate.t = now;
      if (meso_prev_plan && !meso_window.empty()) {
        const Eigen::VectorXd z = estimate_reduced_state(
            meso_window, *meso_prev_plan, sensor_cells, now,
            tracking.estimator_lambda);
        state_estimate =
            unstack_state(lift(meso_prev_plan->basis, z), params, now);
        const Observation& latest = meso_window.observations.back();
        double residual = 0.0;
        for (std::size_t s = 0; s < latest.cells.size(); ++s) {
          residual += latest.values[s] -
                      state_estimate.h[static_cast<std::size_t>(latest.cells[s])];
        }
        if (!latest.cells.empty()) {
          residual /= static_cast<double>(latest.cells.size());
          for (double& h : state_estimate.h) {
            h = std::max(h + residual, params.h_min);
          }
        }
      }

      // discrepancy mining against the plan the meso last sent
      if (meso_prev_plan) {
        std::vector<Observation> fresh(
            meso_obs_buffer.begin() +
                static_cast<long>(std::min<std::size_t>(
                    static_cast<std::size_t>(meso_mined_cursor + 1),
                    meso_obs_buffer.size())),
            meso_obs_buffer.end());
        const std::vector<DiscrepancyRecord> records = mine_discrepancies(
            *meso_prev_plan, fresh, options.meso.disc_window,
            options.meso.delta_ok, scenario_features(forecast));
        if (!records.empty()) {
          for (const DiscrepancyRecord& rec : records) {
            bus.publish(Topic::Discrepancy, now, now, serialize_discrepancy(rec));
          }
          std::vector<FeedbackRecord> feedback;
          for (const DiscrepancyRecord& rec : records) {
            feedback.push_back(FeedbackRecord{rec.features, rec.ok});
          }
          ingest_feedback(catalog, feedback, options.feedback_radius);
          bus.publish(Topic::CatalogUpdate, now, now,
                      "version=" + std::to_string(catalog.version));
          log.events.emplace_back(
              now, "CATALOG_UPDATE v=" + std::to_string(catalog.version) +
                       " records=" + std::to_string(records.size()));
          meso_mined_cursor = static_cast<long>(meso_obs_buffer.size()) - 1;
        }
      }

      // plan
      const ScenarioParams remaining = re_anchor_scenario(forecast, now);
      if (remaining.horizon > options.meso.dt_out) {
        try {
          MesoCycleResult cycle =
              meso_cycle(pool, catalog, state_estimate, remaining, options.meso,
                         params, now, next_plan_id, meso_rng);
          pool = std::move(cycle.pool);
          if (cycle.plan) {
            const double available = now + latency.meso_compute;
            bus.publish(Topic::Plan, now, available, serialize_plan(*cycle.plan));
            log.plans.push_back(PlanLogRecord{now, cycle.plan->plan_id,
                                              cycle.plan->predicted_cost});
            std::string note = cycle.note.empty() ? "" : (" " + cycle.note);
            log.events.emplace_back(
                now, "PLAN_PUBLISHED id=" + std::to_string(cycle.plan->plan_id) +
                         " available=" + fmt_g17(available) + note);
            meso_prev_plan = std::move(cycle.plan);
            ++next_plan_id;
          } else {
            log.events.emplace_back(now, "MESO_CYCLE_NO_PLAN " + cycle.note);
          }
        } catch (const std::exception& e) {
          log.events.emplace_back(now, std::string("MESO_ERROR ") + e.what());
        }
      }
    }
  }

  log.causality_violations = bus.causality_violations();
  return log;
}

std::string RunLog::serialize() const {
  std::ostringstream os;
  nlohmann::json header;
  header["seed"] = seed;
  header["true_cost"] = true_cost;
  header["n_decisions"] = decisions.size();
  header["n_plans"] = plans.size();
  header["causality_violations"] = causality_violations;
  os << header.dump() << '\n';
  os << "# decisions\n";
  os << "t,mode,control,qp_iters,plan_id,est_err\n";
  for (const auto& [t, d] : decisions) {
    os << fmt_g17(t) << ',' << rt_mode_name(d.mode) << ','
       << fmt_g17(d.control.outflow) << ',' << d.qp_iterations << ','
       << d.plan_id << ',' << fmt_g17(d.est_err) << '\n';
  }
  os << "# plans\n";
  os << "t,plan_id,predicted_cost\n";
  for (const PlanLogRecord& p : plans) {
    os << fmt_g17(p.t) << ',' << p.plan_id << ',' << fmt_g17(p.predicted_cost)
       << '\n';
  }
  os << "# events\n";
  os << "t,event\n";
  for (const auto& [t, e] : events) {
    os << fmt_g17(t) << ',' << e << '\n';
  }
  return os.str();
}

void RunLog::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << serialize();
}

ComparisonReport compare_baselines(const LatencyConfig& latency,
                                   const PlantParams& params,
                                   const ScenarioParams& scenario_truth,
                                   const Catalog& catalog,
                                   const std::vector<std::uint64_t>& seeds,
                                   const ClosedLoopOptions& base_options) {
  ComparisonReport report;
  report.seeds = seeds;
  const ClosedLoopMode modes[] = {
      ClosedLoopMode::FullThreeTier, ClosedLoopMode::RtOnly,
      ClosedLoopMode::MesoOpenLoop, ClosedLoopMode::ConstantControl};

  for (ClosedLoopMode mode : modes) {
    std::vector<RunStats> stats;
    for (std::uint64_t seed : seeds) {
      ClosedLoopOptions options = base_options;
      options.mode = mode;
      const RunLog log =
          run_closed_loop(latency, params, scenario_truth, catalog, seed, options);
      RunStats s;
      s.true_cost = log.true_cost;
      for (const auto& [t, e] : log.events) {
        if (e.rfind("PLANT_FAILURE", 0) == 0) s.plant_failure = true;
      }
      for (const auto& [t, d] : log.decisions) {
        ++s.mode_counts[rt_mode_name(d.mode)];
      }
      stats.push_back(std::move(s));
    }
    double mean = 0.0;
    for (const RunStats& s : stats) mean += s.true_cost;
    mean /= std::max<std::size_t>(1, stats.size());
    const std::string name = closed_loop_mode_name(mode);
    report.mean_cost[name] = mean;
    report.runs[name] = std::move(stats);
  }
  const double rt_only = report.mean_cost["rt_only"];
  const double three = report.mean_cost["three_tier"];
  report.improvement_vs_rt_only =
      std::abs(rt_only) > 1e-12 ? (rt_only - three) / std::abs(rt_only) : 0.0;
  return report;
}

std::string ComparisonReport::to_json() const {
  nlohmann::json j;
  j["seeds"] = seeds;
  for (const auto& [name, stats] : runs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const RunStats& s : stats) {
      nlohmann::json e;
      e["true_cost"] = s.true_cost;
      e["plant_failure"] = s.plant_failure;
      e["mode_counts"] = s.mode_counts;
      arr.push_back(e);
    }
    j["runs"][name] = arr;
    j["mean_cost"][name] = mean_cost.at(name);
  }
  j["improvement_vs_rt_only"] = improvement_vs_rt_only;
  return j.dump(2);
}

}  // namespace tritier
