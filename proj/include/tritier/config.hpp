#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "tritier/catalog.hpp"
#include "tritier/orchestrator.hpp"

namespace tritier {

struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(std::string field_path, const std::string& what)
      : std::runtime_error("config field `" + field_path + "`: " + what),
        field(std::move(field_path)) {}
};

struct CatalogConfig {
  int n_scenarios = 8;
  int starts_per_scenario = 2;
  int series_len = 8;
  int knn = 3;
  CatalogBuildConfig build;
};

/// Everything a run needs, one JSON file with named nested sections. Only
/// latency.t1 and latency.t2 are required; every other field has a default
/// (documented in the README) so a minimal config runs.
struct RunConfig {
  PlantParams plant;
  ScenarioParams scenario;  // the truth the closed loop runs against
  ScenarioParams scenario_estimate;  // the forecast; defaults to scenario
  FeatureRanges feature_ranges;
  LatencyConfig latency;
  MesoConfig meso;
  TrackingConfig realtime;
  CatalogConfig catalog;
  std::vector<int> sensor_cells;
  double noise_std = 0.0;
  double feedback_radius = 1.0;
  std::uint64_t seed = 42;
  std::string output_dir = "tritier_out";
};

/// Parses and validates; throws ConfigError naming the offending field.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& json_text);

ClosedLoopOptions closed_loop_options(const RunConfig& cfg);

}  // namespace tritier
