#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "tritier/cli.hpp"
#include "tritier/config.hpp"
#include "tritier/text_format.hpp"

using namespace tritier;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tritier_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write_config(const fs::path& dir, const std::string& body) {
  const fs::path path = dir / "config.json";
  std::ofstream out(path);
  out << body;
  return path.string();
}

/// Small, fast closed-loop config; output_dir injected per test.
std::string small_config(const fs::path& out_dir, int n_scenarios = 4,
                         std::uint64_t seed = 42) {
  nlohmann::json j;
  j["latency"] = {{"t1", 10.0}, {"t2", 120.0}, {"meso_compute", 60.0}};
  j["plant"] = {{"n_cells", 10}, {"domain_length", 100.0}};
  j["scenario"] = {{"inflow_series", {2.0, 2.0}}, {"price_series", {50.0, 50.0}},
                   {"u_max", 5.0},  {"h_lo", 0.8},
                   {"h_hi", 2.2},   {"horizon", 240.0},
                   {"initial_depth", 1.5}};
  j["meso"] = {{"pool_size", 3}, {"intervals", 3}, {"sqp_budget", 2},
               {"plan_horizon", 240.0}};
  j["realtime"] = {{"horizon_steps", 4}};
  j["catalog"] = {{"n_scenarios", n_scenarios}, {"starts_per_scenario", 2},
                  {"sqp_max_iters", 8}, {"probes", 2}};
  j["seed"] = seed;
  j["output_dir"] = out_dir.string();
  return j.dump(2);
}

int run_cli(std::initializer_list<std::string> args) {
  std::vector<std::string> storage = {"tritier"};
  storage.insert(storage.end(), args);
  std::vector<const char*> argv;
  for (const std::string& s : storage) argv.push_back(s.c_str());
  return tritier::cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_decision_rows(const std::string& runlog) {
  std::istringstream in(runlog);
  std::string line;
  int rows = 0;
  bool in_decisions = false;
  while (std::getline(in, line)) {
    if (line == "# decisions") {
      in_decisions = true;
      std::getline(in, line);  // header
      continue;
    }
    if (line == "# plans") break;
    if (in_decisions && !line.empty()) ++rows;
  }
  return rows;
}

}  // namespace

TEST_CASE("minimal config runs on defaults; only latency is required") {
  const RunConfig cfg = parse_config(R"({"latency":{"t1":10,"t2":600}})");
  CHECK(cfg.latency.t1 == 10.0);
  CHECK(cfg.latency.t2 == 600.0);
  CHECK(cfg.plant.n_cells == 50);
  CHECK(cfg.meso.pool_size == 8);
  CHECK(cfg.meso.intervals == 12);
  CHECK(cfg.realtime.horizon_steps == 10);
  CHECK(cfg.catalog.knn == 3);
  CHECK(cfg.seed == 42);
}

TEST_CASE("config errors name the offending field") {
  SUBCASE("missing latency.t1") {
    try {
      parse_config(R"({"latency":{"t2":600}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field == "latency.t1");
    }
  }
  SUBCASE("missing latency section entirely") {
    try {
      parse_config(R"({})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field == "latency.t1");
    }
  }
  SUBCASE("type error") {
    try {
      parse_config(R"({"latency":{"t1":"fast","t2":600}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field == "latency.t1");
    }
  }
  SUBCASE("ordering violation") {
    try {
      parse_config(R"({"latency":{"t1":600,"t2":10}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field == "latency.t1");
    }
  }
  SUBCASE("unknown keys are rejected, not ignored") {
    try {
      parse_config(R"({"latency":{"t1":10,"t2":600,"t3":5}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field == "latency.t3");
    }
    CHECK_THROWS_AS(parse_config(R"({"latency":{"t1":10,"t2":600},"plnt":{}})"),
                    ConfigError);
  }
  SUBCASE("bad sensor cell") {
    CHECK_THROWS_AS(
        parse_config(
            R"({"latency":{"t1":10,"t2":600},"plant":{"n_cells":5},"sensors":{"cells":[7]}})"),
        ConfigError);
  }
}

TEST_CASE("offline-build: exit codes and catalog artifact") {
  SUBCASE("nominal build writes a catalog with one entry per scenario") {
    const fs::path dir = fresh_dir("build_ok");
    const std::string cfg = write_config(dir, small_config(dir, 4));
    CHECK(run_cli({"offline-build", cfg}) == cli::kExitOk);
    const Catalog catalog = load_catalog((dir / "catalog.txt").string());
    CHECK(catalog.entries.size() == 4);
  }
  SUBCASE("missing latency.t1 exits 2") {
    const fs::path dir = fresh_dir("build_cfg");
    const std::string cfg = write_config(dir, R"({"latency":{"t2":600}})");
    CHECK(run_cli({"offline-build", cfg}) == cli::kExitConfig);
  }
  SUBCASE("zero scenarios exits 3") {
    const fs::path dir = fresh_dir("build_zero");
    const std::string cfg = write_config(dir, small_config(dir, 0));
    CHECK(run_cli({"offline-build", cfg}) == cli::kExitEmptyBuild);
  }
}

TEST_CASE("run: decision count, determinism, corrupt catalog") {
  const fs::path dir = fresh_dir("run_main");
  const std::string cfg = write_config(dir, small_config(dir));
  REQUIRE(run_cli({"offline-build", cfg}) == cli::kExitOk);
  const std::string catalog_path = (dir / "catalog.txt").string();

  SUBCASE("nominal run emits floor(horizon/t1) decision rows") {
    CHECK(run_cli({"run", cfg, "--catalog", catalog_path}) == cli::kExitOk);
    const std::string runlog = slurp(dir / "runlog.txt");
    CHECK(count_decision_rows(runlog) == 24);  // 240 / 10
  }

  SUBCASE("identical config and seed give byte-identical logs") {
    REQUIRE(run_cli({"run", cfg, "--catalog", catalog_path}) == cli::kExitOk);
    const std::string first = slurp(dir / "runlog.txt");
    REQUIRE(run_cli({"run", cfg, "--catalog", catalog_path}) == cli::kExitOk);
    CHECK(first == slurp(dir / "runlog.txt"));
    CHECK(!first.empty());
  }

  SUBCASE("corrupt catalog exits 5") {
    const fs::path bad = dir / "bad_catalog.txt";
    std::ofstream out(bad);
    out << "definitely not a catalog\n";
    out.close();
    CHECK(run_cli({"run", cfg, "--catalog", bad.string()}) ==
          cli::kExitCorruptCatalog);
  }
}

TEST_CASE("compare: run matrix and seed validation") {
  const fs::path dir = fresh_dir("compare_main");
  const std::string cfg = write_config(dir, small_config(dir, 3));
  REQUIRE(run_cli({"offline-build", cfg}) == cli::kExitOk);
  const std::string catalog_path = (dir / "catalog.txt").string();

  SUBCASE("two seeds give four configs x two runs") {
    CHECK(run_cli({"compare", cfg, "--catalog", catalog_path, "--seeds", "1,2"}) ==
          cli::kExitOk);
    const nlohmann::json report =
        nlohmann::json::parse(slurp(dir / "comparison.json"));
    int total_runs = 0;
    for (const auto& [name, runs] : report.at("runs").items()) {
      total_runs += static_cast<int>(runs.size());
    }
    CHECK(total_runs == 8);
    // means re-aggregate from the per-run costs
    for (const auto& [name, runs] : report.at("runs").items()) {
      double mean = 0.0;
      for (const auto& r : runs) mean += r.at("true_cost").get<double>();
      mean /= static_cast<double>(runs.size());
      CHECK(report.at("mean_cost").at(name).get<double>() ==
            doctest::Approx(mean).epsilon(1e-12));
    }
  }

  SUBCASE("empty seed list exits 2") {
    CHECK(run_cli({"compare", cfg, "--catalog", catalog_path, "--seeds", ""}) ==
          cli::kExitConfig);
  }
}

TEST_CASE("inspect: nearest entry, JSON output, empty catalog") {
  const fs::path dir = fresh_dir("inspect_main");
  const std::string cfg = write_config(dir, small_config(dir, 3));
  REQUIRE(run_cli({"offline-build", cfg}) == cli::kExitOk);
  const std::string catalog_path = (dir / "catalog.txt").string();
  const Catalog catalog = load_catalog(catalog_path);
  const CatalogEntry& target = catalog.entries[1];

  SUBCASE("query at an entry's own features returns it at distance zero") {
    std::ostringstream features;
    for (int d = 0; d < kFeatureDim; ++d) {
      if (d) features << ',';
      features << fmt_g17(target.scenario_features[d]);
    }
    std::ostringstream captured;
    std::streambuf* old = std::cout.rdbuf(captured.rdbuf());
    const int code = run_cli(
        {"inspect", catalog_path, "--features", features.str(), "-k", "1"});
    std::cout.rdbuf(old);
    CHECK(code == cli::kExitOk);
    const nlohmann::json out = nlohmann::json::parse(captured.str());
    REQUIRE(out.at("nearest").size() == 1);
    CHECK(out.at("nearest")[0].at("id").get<long>() == target.id);
    CHECK(out.at("nearest")[0].at("distance").get<double>() <= 1e-12);
    CHECK(out.at("verdict").contains("success_prob"));
  }

  SUBCASE("empty catalog exits 6") {
    Catalog empty;
    empty.feature_scaling.mean = Eigen::VectorXd::Zero(kFeatureDim);
    empty.feature_scaling.std = Eigen::VectorXd::Ones(kFeatureDim);
    const fs::path empty_path = dir / "empty_catalog.txt";
    save_catalog(empty, empty_path.string());
    CHECK(run_cli({"inspect", empty_path.string(), "--features", "1,2,3,4,5"}) ==
          cli::kExitEmptyCatalog);
  }
}
