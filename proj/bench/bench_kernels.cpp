// Serial vs OpenMP timing for the hot kernels and the catalog build.
// Usage: tritier-bench [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <omp.h>
#include <vector>

#include "tritier/catalog.hpp"
#include "tritier/kernels.hpp"
#include "tritier/mor.hpp"
#include "tritier/plant.hpp"
#include "tritier/rng.hpp"

using namespace tritier;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename F>
double time_best_of(int repeats, F&& f) {
  double best = 1e30;
  for (int i = 0; i < repeats; ++i) {
    const double t0 = now_s();
    f();
    best = std::min(best, now_s() - t0);
  }
  return best;
}

void bench_sweep(int repeats) {
  std::printf("rusanov sweep (one update, best of %d)\n", repeats);
  std::printf("%10s %12s %12s %8s\n", "cells", "serial [s]", "omp [s]", "speedup");
  for (int n : {1000, 10000, 100000, 1000000}) {
    std::vector<double> h(n, 1.5), hu(n, 0.3);
    std::vector<double> h_out(n), hu_out(n);
    const kernels::BoundaryFlux closed{0.0, 0.5 * 9.81 * 1.5 * 1.5};
    kernels::SweepWorkspace ws;
    const int inner = std::max(1, 2000000 / n);
    const double ts = time_best_of(repeats, [&] {
      for (int i = 0; i < inner; ++i) {
        kernels::rusanov_sweep_serial(h.data(), hu.data(), n, 9.81, 0.01, 0.0,
                                      0.01, closed, closed, ws, h_out.data(),
                                      hu_out.data());
      }
    });
    const double tp = time_best_of(repeats, [&] {
      for (int i = 0; i < inner; ++i) {
        kernels::rusanov_sweep_omp(h.data(), hu.data(), n, 9.81, 0.01, 0.0,
                                   0.01, closed, closed, ws, h_out.data(),
                                   hu_out.data());
      }
    });
    std::printf("%10d %12.3e %12.3e %8.2f\n", n, ts / inner, tp / inner, ts / tp);
  }
}

void bench_gram(int repeats) {
  std::printf("\ngram matrix X^T X (best of %d)\n", repeats);
  std::printf("%16s %12s %12s %8s\n", "size", "serial [s]", "omp [s]", "speedup");
  Rng rng(7);
  for (const auto& [rows, cols] : std::vector<std::pair<int, int>>{
           {2000, 40}, {2000, 120}, {20000, 120}}) {
    Eigen::MatrixXd x(rows, cols);
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) x(i, j) = rng.uniform(-1.0, 1.0);
    Eigen::MatrixXd g;
    const double ts =
        time_best_of(repeats, [&] { kernels::gram_matrix_serial(x, g); });
    const double tp =
        time_best_of(repeats, [&] { kernels::gram_matrix_omp(x, g); });
    std::printf("%10dx%-5d %12.3e %12.3e %8.2f\n", rows, cols, ts, tp, ts / tp);
  }
}

void bench_catalog_build(int repeats) {
  std::printf("\ncatalog build, %d scenarios x 2 starts (best of %d)\n", 6, repeats);
  PlantParams params;
  params.n_cells = 30;
  params.domain_length = 300.0;

  ScenarioParams base;
  base.u_max = 8.0;
  base.h_lo = 1.0;
  base.h_hi = 2.0;
  base.horizon = 240.0;
  base.initial_depth = 1.5;
  base.inflow_series.assign(8, 0.0);
  base.price_series.assign(8, 0.0);

  FeatureRanges ranges{FeatureRange{2.0, 5.0}, FeatureRange{0.0, 1.0},
                       FeatureRange{20.0, 80.0}, FeatureRange{0.0, 10.0},
                       FeatureRange{1.2, 1.8}};
  Rng rng(11);
  const std::vector<ScenarioParams> scenarios =
      sample_scenarios(6, rng, ranges, base);
  CatalogBuildConfig cfg;
  cfg.intervals = 6;
  cfg.sqp_iters = 4;
  cfg.classify.probes = 2;

  const int max_threads = omp_get_max_threads();
  std::printf("%10s %12s\n", "threads", "build [s]");
  for (int threads = 1; threads <= max_threads; threads *= 2) {
    omp_set_num_threads(threads);
    const double t = time_best_of(repeats, [&] {
      Rng build_rng(11);
      (void)build_catalog(params, scenarios, 2, cfg, build_rng);
    });
    std::printf("%10d %12.3f\n", threads, t);
  }
  omp_set_num_threads(max_threads);
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 3;
  std::printf("threads available: %d\n\n", omp_get_max_threads());
  bench_sweep(repeats);
  bench_gram(repeats);
  bench_catalog_build(std::max(1, repeats / 3));
  return 0;
}
