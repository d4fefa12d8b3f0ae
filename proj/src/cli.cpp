#include "tritier/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tritier/catalog.hpp"
#include "tritier/config.hpp"
#include "tritier/orchestrator.hpp"
#include "tritier/text_format.hpp"

namespace tritier::cli {

namespace {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("TRITIER_LOG");
  if (!env) return LogLevel::Error;
  const std::string v(env);
  if (v == "debug") return LogLevel::Debug;
  if (v == "info") return LogLevel::Info;
  return LogLevel::Error;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::Info) std::cerr << "[info] " << msg << '\n';
}

std::filesystem::path ensure_output_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output_dir " + cfg.output_dir);
  return dir;
}

int cmd_offline_build(const std::string& config_path) {
  RunConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (cfg.catalog.n_scenarios < 1) {
    std::cerr << "offline-build: no scenarios requested (catalog.n_scenarios = "
              << cfg.catalog.n_scenarios << ")\n";
    return kExitEmptyBuild;
  }
  try {
    const auto dir = ensure_output_dir(cfg);
    Rng rng(cfg.seed);
    ScenarioParams base = cfg.scenario;
    const std::vector<ScenarioParams> scenarios = [&] {
      ScenarioParams tpl = base;
      tpl.inflow_series.assign(static_cast<std::size_t>(cfg.catalog.series_len), 0.0);
      tpl.price_series.assign(static_cast<std::size_t>(cfg.catalog.series_len), 0.0);
      return sample_scenarios(cfg.catalog.n_scenarios, rng, cfg.feature_ranges, tpl);
    }();

    const auto t_start = std::chrono::steady_clock::now();
    Catalog catalog = build_catalog(cfg.plant, scenarios,
                                    cfg.catalog.starts_per_scenario,
                                    cfg.catalog.build, rng);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();

    const auto path = dir / "catalog.txt";
    save_catalog(catalog, path.string());

    std::map<std::string, int> labels;
    for (const CatalogEntry& e : catalog.entries) ++labels[regularity_label_name(e.label)];
    std::cout << "catalog: " << catalog.entries.size() << " entries -> "
              << path.string() << '\n';
    for (const auto& [label, count] : labels) {
      std::cout << "  " << label << ": " << count << '\n';
    }
    std::cout << "build wall time: " << wall << " s\n";
    return kExitOk;
  } catch (const EmptyBuildError&) {
    return kExitEmptyBuild;
  } catch (const std::exception& e) {
    std::cerr << "offline-build failed: " << e.what() << '\n';
    return kExitInfrastructure;
  }
}

int cmd_run(const std::string& config_path, const std::string& catalog_path) {
  RunConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  Catalog catalog;
  try {
    catalog = load_catalog(catalog_path);
  } catch (const CorruptCatalogError& e) {
    std::cerr << "catalog error: " << e.what() << '\n';
    return kExitCorruptCatalog;
  }
  try {
    const auto dir = ensure_output_dir(cfg);
    ClosedLoopOptions options = closed_loop_options(cfg);
    log_info("closed loop: " + std::to_string(
                 static_cast<long>(cfg.scenario.horizon / cfg.latency.t1)) +
             " ticks");
    const RunLog log = run_closed_loop(cfg.latency, cfg.plant, cfg.scenario,
                                       catalog, cfg.seed, options);
    log.write((dir / "runlog.txt").string());

    std::map<std::string, int> modes;
    for (const auto& [t, d] : log.decisions) ++modes[rt_mode_name(d.mode)];
    std::cout << "true_cost: " << fmt_g17(log.true_cost) << '\n';
    std::cout << "decisions: " << log.decisions.size() << '\n';
    for (const auto& [mode, count] : modes) {
      std::cout << "  " << mode << ": " << count << '\n';
    }
    for (const auto& [t, e] : log.events) {
      if (e.rfind("PLANT_FAILURE", 0) == 0) {
        std::cout << "plant failure at t=" << t << " (logged)\n";
      }
    }
    std::cout << "runlog: " << (dir / "runlog.txt").string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kExitInfrastructure;
  }
}

int cmd_compare(const std::string& config_path, const std::string& catalog_path,
                const std::string& seeds_csv) {
  RunConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  std::vector<std::uint64_t> seeds;
  for (const std::string& tok : split(seeds_csv, ',')) {
    if (tok.empty()) continue;
    bool ok = true;
    const long v = parse_long(tok, ok);
    if (!ok || v < 0) {
      std::cerr << "config error: bad seed `" << tok << "`\n";
      return kExitConfig;
    }
    seeds.push_back(static_cast<std::uint64_t>(v));
  }
  if (seeds.empty()) {
    std::cerr << "config error: --seeds must name at least one seed\n";
    return kExitConfig;
  }
  Catalog catalog;
  try {
    catalog = load_catalog(catalog_path);
  } catch (const CorruptCatalogError& e) {
    std::cerr << "catalog error: " << e.what() << '\n';
    return kExitCorruptCatalog;
  }
  try {
    const auto dir = ensure_output_dir(cfg);
    const ComparisonReport report =
        compare_baselines(cfg.latency, cfg.plant, cfg.scenario, catalog, seeds,
                          closed_loop_options(cfg));
    const auto path = dir / "comparison.json";
    std::ofstream out(path);
    out << report.to_json() << '\n';
    for (const auto& [name, mean] : report.mean_cost) {
      std::cout << name << " mean cost: " << fmt_g17(mean) << '\n';
    }
    std::cout << "improvement vs rt_only: "
              << fmt_g17(report.improvement_vs_rt_only) << '\n';
    std::cout << "report: " << path.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "compare failed: " << e.what() << '\n';
    return kExitInfrastructure;
  }
}

int cmd_inspect(const std::string& catalog_path, const std::string& features_csv,
                int k) {
  Catalog catalog;
  try {
    catalog = load_catalog(catalog_path);
  } catch (const CorruptCatalogError& e) {
    std::cerr << "catalog error: " << e.what() << '\n';
    return kExitCorruptCatalog;
  }
  Eigen::VectorXd f(kFeatureDim);
  const std::vector<std::string> tok = split(features_csv, ',');
  if (static_cast<int>(tok.size()) != kFeatureDim) {
    std::cerr << "--features needs exactly " << kFeatureDim << " values\n";
    return kExitConfig;
  }
  for (int d = 0; d < kFeatureDim; ++d) {
    bool ok = true;
    f[d] = parse_double(tok[static_cast<std::size_t>(d)], ok);
    if (!ok) {
      std::cerr << "--features: bad number `" << tok[static_cast<std::size_t>(d)]
                << "`\n";
      return kExitConfig;
    }
  }
  try {
    const std::vector<CatalogEntry> nearest = query_nearest(catalog, f, k);
    const RegularityVerdict verdict = wellbehaved_prob(catalog, f, k);
    nlohmann::json j;
    j["query"] = std::vector<double>(f.data(), f.data() + f.size());
    j["k"] = k;
    nlohmann::json arr = nlohmann::json::array();
    for (const CatalogEntry& e : nearest) {
      nlohmann::json je;
      je["id"] = e.id;
      je["label"] = regularity_label_name(e.label);
      je["objective"] = e.objective;
      je["sensitivity"] = e.sensitivity;
      je["beta_a"] = e.beta_a;
      je["beta_b"] = e.beta_b;
      je["features"] = std::vector<double>(
          e.scenario_features.data(),
          e.scenario_features.data() + e.scenario_features.size());
      const double dist =
          (catalog.feature_scaling.apply(e.scenario_features) -
           catalog.feature_scaling.apply(f))
              .norm();
      je["distance"] = dist;
      arr.push_back(je);
    }
    j["nearest"] = arr;
    j["verdict"]["success_prob"] = verdict.success_prob;
    j["verdict"]["mean_sensitivity"] = verdict.mean_sensitivity;
    j["verdict"]["neighbor_ids"] = verdict.neighbor_ids;
    std::cout << j.dump(2) << '\n';
    return kExitOk;
  } catch (const EmptyCatalogError&) {
    std::cerr << "catalog is empty\n";
    return kExitEmptyCatalog;
  } catch (const std::exception& e) {
    std::cerr << "inspect failed: " << e.what() << '\n';
    return kExitInfrastructure;
  }
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"three-tier hierarchical control testbed"};
  app.require_subcommand(1);

  std::string config_path;
  std::string catalog_path;
  std::string seeds_csv;
  std::string features_csv;
  int k = 3;

  CLI::App* build = app.add_subcommand("offline-build", "build the solution catalog");
  build->add_option("config", config_path, "config JSON")->required();

  CLI::App* runcmd = app.add_subcommand("run", "run the closed loop");
  runcmd->add_option("config", config_path, "config JSON")->required();
  runcmd->add_option("--catalog", catalog_path, "catalog file")->required();

  CLI::App* compare = app.add_subcommand("compare", "ablation comparison");
  compare->add_option("config", config_path, "config JSON")->required();
  compare->add_option("--catalog", catalog_path, "catalog file")->required();
  compare->add_option("--seeds", seeds_csv, "comma-separated seed list")->required();

  CLI::App* inspect = app.add_subcommand("inspect", "query the catalog");
  inspect->add_option("catalog", catalog_path, "catalog file")->required();
  inspect->add_option("--features", features_csv, "f1,...,f5")->required();
  inspect->add_option("-k", k, "neighbor count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  if (build->parsed()) return cmd_offline_build(config_path);
  if (runcmd->parsed()) return cmd_run(config_path, catalog_path);
  if (compare->parsed()) return cmd_compare(config_path, catalog_path, seeds_csv);
  if (inspect->parsed()) return cmd_inspect(catalog_path, features_csv, k);
  return kExitConfig;
}

}  // namespace tritier::cli
