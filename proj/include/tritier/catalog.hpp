#pragma once

#include <Eigen/Core>
#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "tritier/plant.hpp"
#include "tritier/rng.hpp"
#include "tritier/solvers.hpp"

namespace tritier {

// ---------------------------------------------------------------------------
// Offline layer: sampled scenarios are optimized by multistart SQP, each
// candidate's control-to-state regularity is classified empirically, and the
// results form a catalog queried by scaled k-NN. Beta-Bernoulli pseudo-counts
// carry the probabilistic well-behavedness information and absorb closed-loop
// feedback.
// ---------------------------------------------------------------------------

constexpr int kFeatureDim = 5;  // mean inflow, inflow amp, mean price, price amp, initial depth

enum class RegularityLabel { Smooth, Rough, Failed };

const char* regularity_label_name(RegularityLabel label);

struct CatalogEntry {
  Eigen::VectorXd scenario_features;  // raw (unscaled) feature vector
  Eigen::VectorXd control_params;     // M meso intervals
  double objective = 0.0;             // +inf sentinel for Failed entries
  RegularityLabel label = RegularityLabel::Smooth;
  double sensitivity = 0.0;
  double beta_a = 1.0;
  double beta_b = 1.0;
  long id = 0;
};

struct FeatureScaling {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;  // strictly positive per dimension

  Eigen::VectorXd apply(const Eigen::VectorXd& f) const {
    return (f - mean).cwiseQuotient(std);
  }
};

struct Catalog {
  std::vector<CatalogEntry> entries;
  FeatureScaling feature_scaling;
  int version = 0;
  std::uint64_t build_seed = 0;
};

struct RegularityVerdict {
  double success_prob = 0.5;
  std::vector<long> neighbor_ids;
  double mean_sensitivity = 0.0;
};

struct FeatureRange {
  double lo = 0.0;
  double hi = 1.0;
};

using FeatureRanges = std::array<FeatureRange, kFeatureDim>;

struct EmptyCatalogError : std::runtime_error {
  EmptyCatalogError() : std::runtime_error("catalog is empty") {}
};

struct EmptyBuildError : std::runtime_error {
  EmptyBuildError() : std::runtime_error("no scenarios to build from") {}
};

struct CorruptCatalogError : std::runtime_error {
  int line;
  CorruptCatalogError(int line_number, const std::string& what)
      : std::runtime_error("corrupt catalog at line " +
                           std::to_string(line_number) + ": " + what),
        line(line_number) {}
};

/// The 5-feature scenario summary used for catalog queries.
Eigen::VectorXd scenario_features(const ScenarioParams& scenario);

/// Inverse of scenario_features for synthetic scenarios: series built as
/// mean + amplitude * cos/sin over one period, so the features round-trip.
ScenarioParams make_scenario(const Eigen::VectorXd& features,
                             const ScenarioParams& base, int series_len = 8);

/// Latin hypercube over the feature box: each dimension's n strata are used
/// exactly once. Deterministic given the rng seed.
std::vector<ScenarioParams> sample_scenarios(int n, Rng& rng,
                                             const FeatureRanges& ranges,
                                             const ScenarioParams& base);

struct ClassifyConfig {
  int probes = 3;
  double eps = 0.05;           // relative perturbation size
  double sigma_thresh = 1e3;   // sensitivity limit for the Smooth label
  double dt_out = 0.0;         // 0: horizon/16
};

struct RegularityResult {
  RegularityLabel label;
  double sensitivity;
};

/// Simulate the nominal control, then probe random perturbations; Failed on
/// nominal simulation failure, Rough on any probe failure or sensitivity
/// above sigma_thresh, Smooth otherwise. Sensitivity is the worst probe's
/// relative state change over relative control change.
RegularityResult classify_regularity(const PlantParams& params,
                                     const ScenarioParams& scenario,
                                     const ControlTrajectory& control,
                                     const ClassifyConfig& cfg, Rng& rng);

struct CatalogBuildConfig {
  int intervals = 12;         // decision dimension M
  SqpSettings sqp;
  int sqp_iters = 30;
  ClassifyConfig classify;
};

/// Multistart SQP per scenario (uniform starts in the box), candidate
/// classification, best-entry selection. Scenarios are evaluated in parallel
/// but merged in scenario order from per-index child streams, so the result
/// is a pure function of (scenarios, seed, settings).
Catalog build_catalog(const PlantParams& params,
                      const std::vector<ScenarioParams>& scenarios,
                      int starts_per_scenario, const CatalogBuildConfig& cfg,
                      Rng& rng);

/// k nearest entries in scaled feature space, ties broken by lower id;
/// k is capped at the catalog size. Throws EmptyCatalogError.
std::vector<CatalogEntry> query_nearest(const Catalog& catalog,
                                        const Eigen::VectorXd& features, int k);

/// Pooled Beta posterior over the k nearest entries.
RegularityVerdict wellbehaved_prob(const Catalog& catalog,
                                   const Eigen::VectorXd& features, int k);

struct FeedbackRecord {
  Eigen::VectorXd features;
  bool ok = true;
};

/// Each entry within `radius` (scaled distance) of a record gets beta_a or
/// beta_b bumped. No-op (no version change) on an empty record list.
void ingest_feedback(Catalog& catalog, const std::vector<FeedbackRecord>& records,
                     double radius);

void save_catalog(const Catalog& catalog, const std::string& path);
Catalog load_catalog(const std::string& path);

}  // namespace tritier
