#include "tritier/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "tritier/text_format.hpp"
#include "tritier/transcription.hpp"

namespace tritier {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = 3.14159265358979323846;
}  // namespace

const char* regularity_label_name(RegularityLabel label) {
  switch (label) {
    case RegularityLabel::Smooth: return "SMOOTH";
    case RegularityLabel::Rough: return "ROUGH";
    case RegularityLabel::Failed: return "FAILED";
  }
  return "UNKNOWN";
}

Eigen::VectorXd scenario_features(const ScenarioParams& scenario) {
  auto mean_of = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  auto amp_of = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return 0.5 * (*hi - *lo);
  };
  Eigen::VectorXd f(kFeatureDim);
  f[0] = mean_of(scenario.inflow_series);
  f[1] = amp_of(scenario.inflow_series);
  f[2] = mean_of(scenario.price_series);
  f[3] = amp_of(scenario.price_series);
  f[4] = scenario.initial_depth;
  return f;
}

ScenarioParams make_scenario(const Eigen::VectorXd& features,
                             const ScenarioParams& base, int series_len) {
  ScenarioParams s = base;
  s.inflow_series.resize(static_cast<std::size_t>(series_len));
  s.price_series.resize(static_cast<std::size_t>(series_len));
  for (int k = 0; k < series_len; ++k) {
    const double phase = 2.0 * kPi * k / series_len;
    s.inflow_series[static_cast<std::size_t>(k)] =
        std::max(0.0, features[0] + features[1] * std::cos(phase));
    s.price_series[static_cast<std::size_t>(k)] =
        std::max(0.0, features[2] + features[3] * std::sin(phase));
  }
  s.initial_depth = features[4];
  return s;
}

std::vector<ScenarioParams> sample_scenarios(int n, Rng& rng,
                                             const FeatureRanges& ranges,
                                             const ScenarioParams& base) {
  if (n < 1) throw std::invalid_argument("sample_scenarios: n must be >= 1");
  for (const FeatureRange& r : ranges) {
    if (!(r.lo < r.hi))
      throw std::invalid_argument("sample_scenarios: range lo must be < hi");
  }
  // Latin hypercube: per dimension a permutation of the n strata, one sample
  // uniform inside each stratum
  std::vector<Eigen::VectorXd> features(
      static_cast<std::size_t>(n), Eigen::VectorXd::Zero(kFeatureDim));
  for (int d = 0; d < kFeatureDim; ++d) {
    std::vector<int> strata(static_cast<std::size_t>(n));
    std::iota(strata.begin(), strata.end(), 0);
    rng.shuffle(strata);
    const double width = (ranges[static_cast<std::size_t>(d)].hi -
                          ranges[static_cast<std::size_t>(d)].lo) /
                         static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform();
      features[static_cast<std::size_t>(i)][d] =
          ranges[static_cast<std::size_t>(d)].lo +
          (static_cast<double>(strata[static_cast<std::size_t>(i)]) + u) * width;
    }
  }
  std::vector<ScenarioParams> out;
  out.reserve(static_cast<std::size_t>(n));
  for (const Eigen::VectorXd& f : features) out.push_back(make_scenario(f, base));
  return out;
}

namespace {
Eigen::VectorXd stack_final_state(const Trajectory& traj) {
  const PlantState& s = traj.snapshots.back();
  const int n = s.n_cells();
  Eigen::VectorXd v(2 * n);
  for (int i = 0; i < n; ++i) {
    v[i] = s.h[static_cast<std::size_t>(i)];
    v[n + i] = s.hu[static_cast<std::size_t>(i)];
  }
  return v;
}
}  // namespace

RegularityResult classify_regularity(const PlantParams& params,
                                     const ScenarioParams& scenario,
                                     const ControlTrajectory& control,
                                     const ClassifyConfig& cfg, Rng& rng) {
  const double dt_out =
      cfg.dt_out > 0.0 ? cfg.dt_out : std::max(scenario.horizon / 16.0, 1e-6);
  const PlantState state0 = PlantState::flat(params.n_cells, scenario.initial_depth);

  const SimResult nominal = simulate(state0, control, scenario, params, dt_out);
  if (std::holds_alternative<FailureReport>(nominal)) {
    return {RegularityLabel::Failed, 0.0};
  }
  const Eigen::VectorXd x_nom = stack_final_state(std::get<Trajectory>(nominal));
  const double x_norm = std::max(x_nom.norm(), 1e-12);

  const int m = control.intervals();
  Eigen::VectorXd u_nom(m);
  for (int j = 0; j < m; ++j) u_nom[j] = control.outflows[static_cast<std::size_t>(j)];
  const double u_norm = std::max(u_nom.norm(), 1e-3 * scenario.u_max * std::sqrt(m));

  double sensitivity = 0.0;
  for (int p = 0; p < cfg.probes; ++p) {
    ControlTrajectory perturbed = control;
    for (int j = 0; j < m; ++j) {
      const double scale = std::max(std::abs(u_nom[j]), 0.1 * scenario.u_max);
      const double delta = cfg.eps * scale * rng.uniform(-1.0, 1.0);
      perturbed.outflows[static_cast<std::size_t>(j)] =
          std::clamp(u_nom[j] + delta, 0.0, scenario.u_max);
    }
    Eigen::VectorXd du(m);
    for (int j = 0; j < m; ++j)
      du[j] = perturbed.outflows[static_cast<std::size_t>(j)] - u_nom[j];
    const double du_norm = du.norm();
    if (du_norm <= 0.0) continue;

    const SimResult probe = simulate(state0, perturbed, scenario, params, dt_out);
    if (std::holds_alternative<FailureReport>(probe)) {
      return {RegularityLabel::Rough, sensitivity};
    }
    const Eigen::VectorXd dx = stack_final_state(std::get<Trajectory>(probe)) - x_nom;
    const double probe_sens = (dx.norm() / x_norm) / (du_norm / u_norm);
    sensitivity = std::max(sensitivity, probe_sens);
  }
  const RegularityLabel label = sensitivity > cfg.sigma_thresh
                                    ? RegularityLabel::Rough
                                    : RegularityLabel::Smooth;
  return {label, sensitivity};
}

Catalog build_catalog(const PlantParams& params,
                      const std::vector<ScenarioParams>& scenarios,
                      int starts_per_scenario, const CatalogBuildConfig& cfg,
                      Rng& rng) {
  if (scenarios.empty()) throw EmptyBuildError{};
  const int n = static_cast<int>(scenarios.size());
  const int m_starts = std::max(1, starts_per_scenario);

  Catalog catalog;
  catalog.build_seed = rng.seed();
  catalog.entries.resize(static_cast<std::size_t>(n));

  // scenarios are independent; each writes its own slot from its own child
  // stream, so the merge order (and the catalog) is thread-count invariant
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const ScenarioParams& scenario = scenarios[static_cast<std::size_t>(i)];
    Rng sc_rng = rng.fork(static_cast<std::uint64_t>(i));
    const PlantState state0 =
        PlantState::flat(params.n_cells, scenario.initial_depth);
    const NlpProblem problem =
        transcribe(scenario, scenario.horizon, cfg.intervals, params, state0,
                   cfg.classify.dt_out > 0.0 ? cfg.classify.dt_out
                                             : std::max(scenario.horizon / 16.0, 1e-6));

    struct Candidate {
      Eigen::VectorXd u;
      double objective;
      RegularityResult reg;
    };
    std::vector<Candidate> candidates;
    int n_smooth = 0;
    int n_failed = 0;
    for (int s = 0; s < m_starts; ++s) {
      Eigen::VectorXd start(cfg.intervals);
      for (int j = 0; j < cfg.intervals; ++j)
        start[j] = sc_rng.uniform(0.0, scenario.u_max);
      const NlpSolution nlp = solve_nlp_sqp(problem, start, cfg.sqp, cfg.sqp_iters);

      Candidate cand;
      cand.u = nlp.x;
      cand.objective = nlp.cost;
      Rng cls_rng = sc_rng.fork(1000 + static_cast<std::uint64_t>(s));
      cand.reg = classify_regularity(
          params, scenario, controls_from_vector(nlp.x, scenario.horizon),
          cfg.classify, cls_rng);
      if (nlp.status == NlpStatus::RoughRegion &&
          cand.reg.label == RegularityLabel::Smooth) {
        cand.reg.label = RegularityLabel::Rough;
      }
      if (cand.reg.label == RegularityLabel::Smooth) ++n_smooth;
      if (cand.reg.label == RegularityLabel::Failed) ++n_failed;
      candidates.push_back(std::move(cand));
    }

    auto best_with = [&](RegularityLabel want) -> const Candidate* {
      const Candidate* best = nullptr;
      for (const Candidate& c : candidates) {
        if (c.reg.label != want) continue;
        if (!best || c.objective < best->objective) best = &c;
      }
      return best;
    };

    CatalogEntry entry;
    entry.id = i;
    entry.scenario_features = scenario_features(scenario);
    entry.beta_a = 1.0 + n_smooth;
    entry.beta_b = 1.0 + n_failed;
    const Candidate* chosen = best_with(RegularityLabel::Smooth);
    if (!chosen) chosen = best_with(RegularityLabel::Rough);
    if (chosen) {
      entry.control_params = chosen->u;
      entry.objective = chosen->objective;
      entry.label = chosen->reg.label;
      entry.sensitivity = chosen->reg.sensitivity;
    } else {
      entry.control_params = Eigen::VectorXd::Zero(cfg.intervals);
      entry.objective = kInf;
      entry.label = RegularityLabel::Failed;
      entry.sensitivity = 0.0;
    }
    catalog.entries[static_cast<std::size_t>(i)] = std::move(entry);
  }

  // feature scaling fit over all scenarios
  Eigen::MatrixXd f(kFeatureDim, n);
  for (int i = 0; i < n; ++i) f.col(i) = catalog.entries[static_cast<std::size_t>(i)].scenario_features;
  catalog.feature_scaling.mean = f.rowwise().mean();
  catalog.feature_scaling.std = Eigen::VectorXd(kFeatureDim);
  for (int d = 0; d < kFeatureDim; ++d) {
    const double mu = catalog.feature_scaling.mean[d];
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      const double diff = f(d, i) - mu;
      var += diff * diff;
    }
    var /= std::max(1, n - 1);
    catalog.feature_scaling.std[d] = std::max(std::sqrt(var), 1e-9);
  }
  catalog.version = 1;
  return catalog;
}

std::vector<CatalogEntry> query_nearest(const Catalog& catalog,
                                        const Eigen::VectorXd& features, int k) {
  if (catalog.entries.empty()) throw EmptyCatalogError{};
  if (k < 1) throw std::invalid_argument("query_nearest: k must be >= 1");
  const Eigen::VectorXd q = catalog.feature_scaling.apply(features);
  std::vector<std::pair<double, long>> dist_id;
  dist_id.reserve(catalog.entries.size());
  for (const CatalogEntry& e : catalog.entries) {
    const double d = (catalog.feature_scaling.apply(e.scenario_features) - q).norm();
    dist_id.emplace_back(d, e.id);
  }
  std::sort(dist_id.begin(), dist_id.end());
  const int take = std::min<int>(k, static_cast<int>(dist_id.size()));
  std::vector<CatalogEntry> out;
  out.reserve(static_cast<std::size_t>(take));
  for (int i = 0; i < take; ++i) {
    const long id = dist_id[static_cast<std::size_t>(i)].second;
    const auto it = std::find_if(catalog.entries.begin(), catalog.entries.end(),
                                 [&](const CatalogEntry& e) { return e.id == id; });
    out.push_back(*it);
  }
  return out;
}

RegularityVerdict wellbehaved_prob(const Catalog& catalog,
                                   const Eigen::VectorXd& features, int k) {
  const std::vector<CatalogEntry> neighbors = query_nearest(catalog, features, k);
  RegularityVerdict verdict;
  double sum_a = 0.0;
  double sum_b = 0.0;
  double sens = 0.0;
  int n_sens = 0;
  for (const CatalogEntry& e : neighbors) {
    verdict.neighbor_ids.push_back(e.id);
    sum_a += e.beta_a;
    sum_b += e.beta_b;
    if (e.label != RegularityLabel::Failed) {
      sens += e.sensitivity;
      ++n_sens;
    }
  }
  verdict.success_prob = sum_a / (sum_a + sum_b);
  verdict.mean_sensitivity = n_sens > 0 ? sens / n_sens : 0.0;
  return verdict;
}

void ingest_feedback(Catalog& catalog, const std::vector<FeedbackRecord>& records,
                     double radius) {
  if (records.empty()) return;
  for (const FeedbackRecord& rec : records) {
    const Eigen::VectorXd q = catalog.feature_scaling.apply(rec.features);
    for (CatalogEntry& e : catalog.entries) {
      const double d = (catalog.feature_scaling.apply(e.scenario_features) - q).norm();
      if (d <= radius) {
        if (rec.ok) {
          e.beta_a += 1.0;
        } else {
          e.beta_b += 1.0;
        }
      }
    }
  }
  ++catalog.version;
}

void save_catalog(const Catalog& catalog, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  nlohmann::json header;
  header["version"] = catalog.version;
  header["build_seed"] = catalog.build_seed;
  header["feature_scaling"]["mean"] = std::vector<double>(
      catalog.feature_scaling.mean.data(),
      catalog.feature_scaling.mean.data() + catalog.feature_scaling.mean.size());
  header["feature_scaling"]["std"] = std::vector<double>(
      catalog.feature_scaling.std.data(),
      catalog.feature_scaling.std.data() + catalog.feature_scaling.std.size());
  out << header.dump() << '\n';

  for (const CatalogEntry& e : catalog.entries) {
    out << e.id << ' ' << regularity_label_name(e.label) << ' '
        << fmt_g17(e.objective) << ' ' << fmt_g17(e.sensitivity) << ' '
        << fmt_g17(e.beta_a) << ' ' << fmt_g17(e.beta_b);
    for (int d = 0; d < e.scenario_features.size(); ++d)
      out << ' ' << fmt_g17(e.scenario_features[d]);
    out << ' ' << e.control_params.size();
    for (int j = 0; j < e.control_params.size(); ++j)
      out << ' ' << fmt_g17(e.control_params[j]);
    out << '\n';
  }
}

Catalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorruptCatalogError(0, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw CorruptCatalogError(1, "missing header");

  Catalog catalog;
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded()) throw CorruptCatalogError(1, "header is not valid JSON");
  if (!header.contains("version")) throw CorruptCatalogError(1, "missing version field");
  if (!header.contains("feature_scaling") || !header.contains("build_seed"))
    throw CorruptCatalogError(1, "missing feature_scaling or build_seed");
  try {
    catalog.version = header["version"].get<int>();
    catalog.build_seed = header["build_seed"].get<std::uint64_t>();
    const std::vector<double> mean =
        header["feature_scaling"]["mean"].get<std::vector<double>>();
    const std::vector<double> std_dev =
        header["feature_scaling"]["std"].get<std::vector<double>>();
    catalog.feature_scaling.mean =
        Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<long>(mean.size()));
    catalog.feature_scaling.std = Eigen::Map<const Eigen::VectorXd>(
        std_dev.data(), static_cast<long>(std_dev.size()));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCatalogError(1, e.what());
  }

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> tok = tokenize(line);
    if (tok.size() < 7 + kFeatureDim)
      throw CorruptCatalogError(line_no, "too few fields");
    bool ok = true;
    CatalogEntry e;
    std::size_t p = 0;
    e.id = parse_long(tok[p++], ok);
    if (!ok) throw CorruptCatalogError(line_no, "bad id");
    const std::string& label = tok[p++];
    if (label == "SMOOTH") {
      e.label = RegularityLabel::Smooth;
    } else if (label == "ROUGH") {
      e.label = RegularityLabel::Rough;
    } else if (label == "FAILED") {
      e.label = RegularityLabel::Failed;
    } else {
      throw CorruptCatalogError(line_no, "unknown label " + label);
    }
    e.objective = parse_double(tok[p++], ok);
    if (!ok) throw CorruptCatalogError(line_no, "bad objective");
    e.sensitivity = parse_double(tok[p++], ok);
    if (!ok) throw CorruptCatalogError(line_no, "bad sensitivity");
    e.beta_a = parse_double(tok[p++], ok);
    if (!ok) throw CorruptCatalogError(line_no, "bad beta_a");
    e.beta_b = parse_double(tok[p++], ok);
    if (!ok) throw CorruptCatalogError(line_no, "bad beta_b");
    e.scenario_features = Eigen::VectorXd(kFeatureDim);
    for (int d = 0; d < kFeatureDim; ++d) {
      e.scenario_features[d] = parse_double(tok[p++], ok);
      if (!ok) throw CorruptCatalogError(line_no, "bad feature");
    }
    const long m = parse_long(tok[p++], ok);
    if (!ok || m < 0) throw CorruptCatalogError(line_no, "bad control length");
    if (tok.size() != p + static_cast<std::size_t>(m))
      throw CorruptCatalogError(line_no, "control length mismatch");
    e.control_params = Eigen::VectorXd(m);
    for (long j = 0; j < m; ++j) {
      e.control_params[j] = parse_double(tok[p++], ok);
      if (!ok) throw CorruptCatalogError(line_no, "bad control value");
    }
    catalog.entries.push_back(std::move(e));
  }
  return catalog;
}

}  // namespace tritier
