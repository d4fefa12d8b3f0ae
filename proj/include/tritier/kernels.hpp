#pragma once

#include <Eigen/Core>
#include <vector>

// Hot inner loops, each in a serial and an OpenMP variant. Both variants
// perform identical arithmetic per output slot (no reordered reductions), so
// their results are bit-identical at any thread count; the serial version is
// the reference the tests compare against and the fallback below the grain
// size. Higher-level parallelism (catalog scenarios, meso particles) lives in
// the owning modules and follows the same slot-per-index rule.

namespace tritier::kernels {

/// Process-wide switch; parallel dispatch is on by default.
bool parallel_enabled();
void set_parallel(bool on);

/// Problem size below which the dispatchers stay serial.
constexpr int kParallelGrain = 512;

/// Scratch buffers for one finite-volume sweep (per-interface fluxes).
struct SweepWorkspace {
  std::vector<double> flux_h;
  std::vector<double> flux_q;
  void resize(int n_cells);
};

/// Prescribed boundary flux (mass component = the boundary discharge
/// exactly, so closed boundaries conserve mass to rounding).
struct BoundaryFlux {
  double mass = 0.0;
  double momentum = 0.0;
};

/// One first-order Rusanov update of the 1D shallow-water state (n interior
/// cells, no ghosts); interior interface fluxes are Rusanov, the two boundary
/// fluxes are imposed. lambda = dt/dx, friction is a quadratic momentum drag.
void rusanov_sweep_serial(const double* h, const double* hu, int n,
                          double gravity, double lambda, double friction,
                          double dt, BoundaryFlux left, BoundaryFlux right,
                          SweepWorkspace& ws, double* h_out, double* hu_out);
void rusanov_sweep_omp(const double* h, const double* hu, int n,
                       double gravity, double lambda, double friction,
                       double dt, BoundaryFlux left, BoundaryFlux right,
                       SweepWorkspace& ws, double* h_out, double* hu_out);
void rusanov_sweep(const double* h, const double* hu, int n, double gravity,
                   double lambda, double friction, double dt, BoundaryFlux left,
                   BoundaryFlux right, SweepWorkspace& ws, double* h_out,
                   double* hu_out);

/// Gram matrix G = X^T X (column snapshots); only the lower triangle is
/// computed independently, then mirrored.
void gram_matrix_serial(const Eigen::MatrixXd& x, Eigen::MatrixXd& g);
void gram_matrix_omp(const Eigen::MatrixXd& x, Eigen::MatrixXd& g);
void gram_matrix(const Eigen::MatrixXd& x, Eigen::MatrixXd& g);

}  // namespace tritier::kernels
