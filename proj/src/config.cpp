#include "tritier/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tritier {

namespace {
using nlohmann::json;

class SectionReader {
 public:
  SectionReader(const json& j, std::string prefix)
      : j_(j), prefix_(std::move(prefix)) {}

  ~SectionReader() = default;

  double number(const char* key, double fallback) {
    mark(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_number()) throw ConfigError(path(key), "expected a number");
    return j_[key].get<double>();
  }

  double required_number(const char* key) {
    mark(key);
    if (!j_.contains(key)) throw ConfigError(path(key), "missing required field");
    if (!j_[key].is_number()) throw ConfigError(path(key), "expected a number");
    return j_[key].get<double>();
  }

  int integer(const char* key, int fallback) {
    mark(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_number_integer())
      throw ConfigError(path(key), "expected an integer");
    return j_[key].get<int>();
  }

  bool boolean(const char* key, bool fallback) {
    mark(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_boolean()) throw ConfigError(path(key), "expected a boolean");
    return j_[key].get<bool>();
  }

  std::string text(const char* key, const std::string& fallback) {
    mark(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_string()) throw ConfigError(path(key), "expected a string");
    return j_[key].get<std::string>();
  }

  std::vector<double> numbers(const char* key, std::vector<double> fallback) {
    mark(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_array()) throw ConfigError(path(key), "expected an array");
    std::vector<double> out;
    for (const auto& v : j_[key]) {
      if (!v.is_number()) throw ConfigError(path(key), "expected numbers");
      out.push_back(v.get<double>());
    }
    return out;
  }

  std::vector<int> integers(const char* key, std::vector<int> fallback) {
    mark(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_array()) throw ConfigError(path(key), "expected an array");
    std::vector<int> out;
    for (const auto& v : j_[key]) {
      if (!v.is_number_integer()) throw ConfigError(path(key), "expected integers");
      out.push_back(v.get<int>());
    }
    return out;
  }

  FeatureRange range(const char* key, FeatureRange fallback) {
    mark(key);
    if (!j_.contains(key)) return fallback;
    const auto v = numbers(key, {});
    if (v.size() != 2) throw ConfigError(path(key), "expected [lo, hi]");
    return FeatureRange{v[0], v[1]};
  }

  /// Complains about keys nobody consumed; typos must not pass silently.
  void finish() const {
    if (!j_.is_object()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(path(key.c_str()), "unknown field");
    }
  }

 private:
  std::string path(const char* key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }
  void mark(const char* key) { seen_.insert(key); }

  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

const json kEmpty = json::object();

const json& section(const json& root, const char* name,
                    std::set<std::string>& seen) {
  seen.insert(name);
  if (!root.contains(name)) return kEmpty;
  if (!root[name].is_object()) throw ConfigError(name, "expected an object");
  return root[name];
}

ScenarioParams parse_scenario(const json& root, const char* name,
                              std::set<std::string>& seen,
                              const ScenarioParams& defaults) {
  const json& j = section(root, name, seen);
  SectionReader r(j, name);
  ScenarioParams s = defaults;
  s.inflow_series = r.numbers("inflow_series", defaults.inflow_series);
  s.price_series = r.numbers("price_series", defaults.price_series);
  s.u_max = r.number("u_max", defaults.u_max);
  s.h_lo = r.number("h_lo", defaults.h_lo);
  s.h_hi = r.number("h_hi", defaults.h_hi);
  s.horizon = r.number("horizon", defaults.horizon);
  s.initial_depth = r.number("initial_depth", defaults.initial_depth);
  r.finish();
  return s;
}
}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json root = json::parse(json_text, nullptr, false);
  if (root.is_discarded()) throw ConfigError("<root>", "not valid JSON");
  if (!root.is_object()) throw ConfigError("<root>", "expected an object");
  std::set<std::string> seen;

  RunConfig cfg;

  {
    const json& j = section(root, "plant", seen);
    SectionReader r(j, "plant");
    cfg.plant.n_cells = r.integer("n_cells", cfg.plant.n_cells);
    cfg.plant.domain_length = r.number("domain_length", cfg.plant.domain_length);
    cfg.plant.gravity = r.number("gravity", cfg.plant.gravity);
    cfg.plant.cfl_number = r.number("cfl_number", cfg.plant.cfl_number);
    cfg.plant.h_min = r.number("h_min", cfg.plant.h_min);
    cfg.plant.friction_coeff = r.number("friction_coeff", cfg.plant.friction_coeff);
    r.finish();
    std::string why;
    if (!cfg.plant.valid(&why)) throw ConfigError("plant", why);
  }

  {
    ScenarioParams defaults;
    defaults.inflow_series = {3.0, 3.0, 3.0, 3.0};
    defaults.price_series = {50.0, 50.0, 50.0, 50.0};
    defaults.u_max = 10.0;
    defaults.h_lo = 1.0;
    defaults.h_hi = 2.0;
    defaults.horizon = 600.0;
    defaults.initial_depth = 1.5;
    cfg.scenario = parse_scenario(root, "scenario", seen, defaults);
    std::string why;
    if (!cfg.scenario.valid(&why)) throw ConfigError("scenario", why);
    cfg.scenario_estimate = parse_scenario(root, "scenario_estimate", seen, cfg.scenario);
    if (!cfg.scenario_estimate.valid(&why))
      throw ConfigError("scenario_estimate", why);
  }

  {
    const json& j = section(root, "feature_ranges", seen);
    SectionReader r(j, "feature_ranges");
    cfg.feature_ranges[0] = r.range("mean_inflow", FeatureRange{2.0, 6.0});
    cfg.feature_ranges[1] = r.range("inflow_amp", FeatureRange{0.0, 2.0});
    cfg.feature_ranges[2] = r.range("mean_price", FeatureRange{20.0, 80.0});
    cfg.feature_ranges[3] = r.range("price_amp", FeatureRange{0.0, 20.0});
    cfg.feature_ranges[4] = r.range("initial_depth", FeatureRange{1.2, 1.8});
    r.finish();
    const char* names[] = {"mean_inflow", "inflow_amp", "mean_price",
                           "price_amp", "initial_depth"};
    for (int d = 0; d < kFeatureDim; ++d) {
      if (!(cfg.feature_ranges[static_cast<std::size_t>(d)].lo <
            cfg.feature_ranges[static_cast<std::size_t>(d)].hi)) {
        throw ConfigError(std::string("feature_ranges.") + names[d],
                          "lo must be < hi");
      }
    }
  }

  {
    seen.insert("latency");
    if (!root.contains("latency")) {
      throw ConfigError("latency.t1", "missing required field");
    }
    const json& j = root["latency"];
    if (!j.is_object()) throw ConfigError("latency", "expected an object");
    SectionReader r(j, "latency");
    cfg.latency.t1 = r.required_number("t1");
    cfg.latency.t2 = r.required_number("t2");
    cfg.latency.offline_pretime = r.boolean("offline_pretime", true);
    cfg.latency.meso_compute = r.number("meso_compute", cfg.latency.t2 / 2.0);
    cfg.latency.rt_cost_per_qp_iter =
        r.number("rt_cost_per_qp_iter", cfg.latency.rt_cost_per_qp_iter);
    r.finish();
    if (validate_latency(cfg.latency) == LatencyVerdict::Error) {
      throw ConfigError("latency.t1", "latency ordering requires 0 < t1 < t2");
    }
    if (!(cfg.latency.meso_compute >= 0.0) ||
        cfg.latency.meso_compute > cfg.latency.t2) {
      throw ConfigError("latency.meso_compute", "must be in [0, t2]");
    }
  }

  {
    const json& j = section(root, "meso", seen);
    SectionReader r(j, "meso");
    cfg.meso.pool_size = r.integer("pool_size", cfg.meso.pool_size);
    cfg.meso.intervals = r.integer("intervals", cfg.meso.intervals);
    cfg.meso.sqp_budget = r.integer("sqp_budget", cfg.meso.sqp_budget);
    cfg.meso.energy_target = r.number("energy_target", cfg.meso.energy_target);
    cfg.meso.sigma_mut = r.number("sigma_mut", cfg.meso.sigma_mut);
    cfg.meso.v_tol = r.number("v_tol", cfg.meso.v_tol);
    cfg.meso.dt_out = r.number("dt_out", cfg.latency.t1);
    cfg.meso.plan_horizon = r.number("plan_horizon", cfg.meso.plan_horizon);
    cfg.meso.plan_valid_margin =
        r.number("plan_valid_margin", cfg.meso.plan_valid_margin);
    cfg.meso.delta_ok = r.number("delta_ok", cfg.meso.delta_ok);
    cfg.meso.disc_window = r.integer("disc_window", cfg.meso.disc_window);
    r.finish();
    cfg.meso.t2 = cfg.latency.t2;
    if (cfg.meso.pool_size < 1) throw ConfigError("meso.pool_size", "must be >= 1");
    if (cfg.meso.intervals < 1) throw ConfigError("meso.intervals", "must be >= 1");
    if (!(cfg.meso.energy_target > 0.0 && cfg.meso.energy_target <= 1.0)) {
      throw ConfigError("meso.energy_target", "must be in (0, 1]");
    }
  }

  {
    const json& j = section(root, "realtime", seen);
    SectionReader r(j, "realtime");
    cfg.realtime.horizon_steps = r.integer("horizon_steps", cfg.realtime.horizon_steps);
    cfg.realtime.q_weight = r.number("q_weight", cfg.realtime.q_weight);
    cfg.realtime.r_weight = r.number("r_weight", cfg.realtime.r_weight);
    cfg.realtime.deadline = r.number("deadline", cfg.latency.t1);
    cfg.realtime.estimator_lambda =
        r.number("estimator_lambda", cfg.realtime.estimator_lambda);
    cfg.realtime.estimator_window =
        r.integer("estimator_window", cfg.realtime.estimator_window);
    r.finish();
    cfg.realtime.u_min = 0.0;
    cfg.realtime.u_max = cfg.scenario.u_max;
    cfg.realtime.cost_per_qp_iter = cfg.latency.rt_cost_per_qp_iter;
    if (cfg.realtime.horizon_steps < 1)
      throw ConfigError("realtime.horizon_steps", "must be >= 1");
    if (!(cfg.realtime.q_weight > 0.0) || !(cfg.realtime.r_weight > 0.0))
      throw ConfigError("realtime.q_weight", "weights must be > 0");
    if (!(cfg.realtime.deadline > 0.0))
      throw ConfigError("realtime.deadline", "must be > 0");
  }

  {
    const json& j = section(root, "catalog", seen);
    SectionReader r(j, "catalog");
    cfg.catalog.n_scenarios = r.integer("n_scenarios", cfg.catalog.n_scenarios);
    cfg.catalog.starts_per_scenario =
        r.integer("starts_per_scenario", cfg.catalog.starts_per_scenario);
    cfg.catalog.series_len = r.integer("series_len", cfg.catalog.series_len);
    cfg.catalog.knn = r.integer("k", cfg.catalog.knn);
    cfg.catalog.build.intervals = cfg.meso.intervals;
    cfg.catalog.build.sqp_iters = r.integer("sqp_max_iters", cfg.catalog.build.sqp_iters);
    cfg.catalog.build.classify.probes = r.integer("probes", 3);
    cfg.catalog.build.classify.eps = r.number("eps", 0.05);
    cfg.catalog.build.classify.sigma_thresh = r.number("sigma_thresh", 1e3);
    cfg.catalog.build.classify.dt_out = cfg.meso.dt_out;
    r.finish();
    if (cfg.catalog.knn < 1) throw ConfigError("catalog.k", "must be >= 1");
  }

  {
    const json& j = section(root, "sensors", seen);
    SectionReader r(j, "sensors");
    cfg.sensor_cells = r.integers("cells", {});
    cfg.noise_std = r.number("noise_std", 0.0);
    r.finish();
    for (int c : cfg.sensor_cells) {
      if (c < 0 || c >= cfg.plant.n_cells)
        throw ConfigError("sensors.cells", "cell index outside the grid");
    }
    if (cfg.noise_std < 0.0) throw ConfigError("sensors.noise_std", "must be >= 0");
  }

  {
    SectionReader r(root, "");
    cfg.feedback_radius = r.number("feedback_radius", cfg.feedback_radius);
    const double seed = r.number("seed", 42.0);
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.output_dir = r.text("output_dir", cfg.output_dir);
  }
  for (const auto& [key, value] : root.items()) {
    static const std::set<std::string> known = {
        "plant",    "scenario", "scenario_estimate", "feature_ranges",
        "latency",  "meso",     "realtime",          "catalog",
        "sensors",  "seed",     "output_dir",        "feedback_radius"};
    if (!known.count(key)) throw ConfigError(key, "unknown field");
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

ClosedLoopOptions closed_loop_options(const RunConfig& cfg) {
  ClosedLoopOptions options;
  options.mode = ClosedLoopMode::FullThreeTier;
  options.meso = cfg.meso;
  options.tracking = cfg.realtime;
  options.sensor_cells = cfg.sensor_cells;
  options.noise_std = cfg.noise_std;
  options.catalog_knn = cfg.catalog.knn;
  options.feedback_radius = cfg.feedback_radius;
  options.scenario_estimate = cfg.scenario_estimate;
  return options;
}

}  // namespace tritier
