#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tritier/catalog.hpp"
#include "tritier/meso.hpp"
#include "tritier/plant.hpp"
#include "tritier/realtime.hpp"

namespace tritier {

// ---------------------------------------------------------------------------
// Discrete-event closed-loop engine over simulated time: real-time ticks at
// multiples of t1, meso cycles at multiples of t2, messages flowing through a
// bus with explicit availability delays (compute latency becomes a model
// parameter). Everything is a pure function of (config, scenario, catalog,
// seed).
// ---------------------------------------------------------------------------

struct LatencyConfig {
  double t1 = 10.0;                 // real-time tick [s]
  double t2 = 120.0;                // meso cycle [s]
  bool offline_pretime = true;      // seed an initial catalog plan at t = 0
  double meso_compute = 60.0;       // plan availability delay [s]
  double rt_cost_per_qp_iter = 1e-3;  // modeled seconds per QP iteration
};

enum class LatencyVerdict { Ok, Warning, Error };

/// Error when t1 >= t2 (the ordering is structural); warning when t2/t1
/// falls outside the one-to-two-orders separation band [10, 100].
LatencyVerdict validate_latency(const LatencyConfig& cfg);

enum class Topic { Plan, Sensor, Discrepancy, CatalogUpdate };

const char* topic_name(Topic t);

struct Message {
  Topic topic;
  double publish_time = 0.0;
  double available_time = 0.0;
  std::string payload;
  long seq = 0;
};

/// Append-only per-topic queues with monotone sequence numbers. Reads are
/// filtered by availability; a read that would surface a message from the
/// future is counted as a causality violation (and not returned).
class MessageBus {
 public:
  long publish(Topic topic, double publish_time, double available_time,
               std::string payload);
  /// Newest message with available_time <= now.
  const Message* latest(Topic topic, double now) const;
  /// All messages with publish_time <= now and seq > after_seq, in order.
  std::vector<const Message*> published_up_to(Topic topic, double now,
                                              long after_seq) const;
  long causality_violations() const { return violations_; }

 private:
  std::map<Topic, std::vector<Message>> queues_;
  std::map<Topic, long> next_seq_;
  mutable long violations_ = 0;
};

enum class ClosedLoopMode {
  FullThreeTier,
  RtOnly,        // tracks the single pre-run catalog plan
  MesoOpenLoop,  // meso plans applied without real-time correction
  ConstantControl,
};

const char* closed_loop_mode_name(ClosedLoopMode mode);

struct ClosedLoopOptions {
  ClosedLoopMode mode = ClosedLoopMode::FullThreeTier;
  MesoConfig meso;
  TrackingConfig tracking;
  std::vector<int> sensor_cells;
  double noise_std = 0.0;
  int catalog_knn = 3;
  double feedback_radius = 1.0;  // scaled feature distance
  /// The forecast the layers plan against; defaults to the truth when the
  /// series are empty. The truth may deviate (that is the experiment).
  ScenarioParams scenario_estimate;
};

struct PlanLogRecord {
  double t = 0.0;
  long plan_id = 0;
  double predicted_cost = 0.0;
};

struct RunLog {
  std::vector<std::pair<double, RtDecision>> decisions;
  std::vector<PlanLogRecord> plans;
  double true_cost = 0.0;
  std::vector<std::pair<double, std::string>> events;
  std::uint64_t seed = 0;
  long causality_violations = 0;

  /// Header JSON line, then CSV sections for decisions, plans and events.
  std::string serialize() const;
  void write(const std::string& path) const;
};

/// Run the closed loop over floor(horizon/t1) real-time ticks. Plant failure
/// under the applied controls ends the log early with a PLANT_FAILURE event.
RunLog run_closed_loop(const LatencyConfig& latency, const PlantParams& params,
                       const ScenarioParams& scenario_truth,
                       const Catalog& catalog, std::uint64_t seed,
                       const ClosedLoopOptions& options);

struct RunStats {
  double true_cost = 0.0;
  bool plant_failure = false;
  std::map<std::string, int> mode_counts;
};

struct ComparisonReport {
  std::vector<std::uint64_t> seeds;
  // config name -> per-seed stats, configs: three_tier, rt_only,
  // meso_open_loop, constant
  std::map<std::string, std::vector<RunStats>> runs;
  std::map<std::string, double> mean_cost;
  double improvement_vs_rt_only = 0.0;

  std::string to_json() const;
};

/// Paired ablation study: all four configurations on identical
/// (plant, scenario, seed) triples.
ComparisonReport compare_baselines(const LatencyConfig& latency,
                                   const PlantParams& params,
                                   const ScenarioParams& scenario_truth,
                                   const Catalog& catalog,
                                   const std::vector<std::uint64_t>& seeds,
                                   const ClosedLoopOptions& base_options);

/// Remaining scenario window [t0, horizon], series resampled in place.
ScenarioParams re_anchor_scenario(const ScenarioParams& scenario, double t0);

}  // namespace tritier
