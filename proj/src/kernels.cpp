#include "tritier/kernels.hpp"

#include <atomic>
#include <cmath>

namespace tritier::kernels {

namespace {
std::atomic<bool> g_parallel{true};

inline void rusanov_flux(double hl, double ql, double hr, double qr,
                         double gravity, double& fh, double& fq) {
  const double ul = ql / hl;
  const double ur = qr / hr;
  const double cl = std::sqrt(gravity * hl);
  const double cr = std::sqrt(gravity * hr);
  const double a = std::max(std::abs(ul) + cl, std::abs(ur) + cr);
  const double fhl = ql;
  const double fhr = qr;
  const double fql = ql * ul + 0.5 * gravity * hl * hl;
  const double fqr = qr * ur + 0.5 * gravity * hr * hr;
  fh = 0.5 * (fhl + fhr) - 0.5 * a * (hr - hl);
  fq = 0.5 * (fql + fqr) - 0.5 * a * (qr - ql);
}

inline void cell_update(const double* h, const double* hu, const double* fh,
                        const double* fq, int i, double lambda, double friction,
                        double dt, double* h_out, double* hu_out) {
  // cell i sits between interfaces i and i+1
  const double u = hu[i] / h[i];
  h_out[i] = h[i] - lambda * (fh[i + 1] - fh[i]);
  hu_out[i] = hu[i] - lambda * (fq[i + 1] - fq[i]) - dt * friction * u * std::abs(u);
}
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

void SweepWorkspace::resize(int n_cells) {
  flux_h.resize(static_cast<std::size_t>(n_cells) + 1);
  flux_q.resize(static_cast<std::size_t>(n_cells) + 1);
}

void rusanov_sweep_serial(const double* h, const double* hu, int n,
                          double gravity, double lambda, double friction,
                          double dt, BoundaryFlux left, BoundaryFlux right,
                          SweepWorkspace& ws, double* h_out, double* hu_out) {
  ws.resize(n);
  double* fh = ws.flux_h.data();
  double* fq = ws.flux_q.data();
  fh[0] = left.mass;
  fq[0] = left.momentum;
  fh[n] = right.mass;
  fq[n] = right.momentum;
  for (int i = 1; i < n; ++i) {
    rusanov_flux(h[i - 1], hu[i - 1], h[i], hu[i], gravity, fh[i], fq[i]);
  }
  for (int i = 0; i < n; ++i) {
    cell_update(h, hu, fh, fq, i, lambda, friction, dt, h_out, hu_out);
  }
}

void rusanov_sweep_omp(const double* h, const double* hu, int n,
                       double gravity, double lambda, double friction,
                       double dt, BoundaryFlux left, BoundaryFlux right,
                       SweepWorkspace& ws, double* h_out, double* hu_out) {
  ws.resize(n);
  double* fh = ws.flux_h.data();
  double* fq = ws.flux_q.data();
  fh[0] = left.mass;
  fq[0] = left.momentum;
  fh[n] = right.mass;
  fq[n] = right.momentum;
#pragma omp parallel for schedule(static)
  for (int i = 1; i < n; ++i) {
    rusanov_flux(h[i - 1], hu[i - 1], h[i], hu[i], gravity, fh[i], fq[i]);
  }
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    cell_update(h, hu, fh, fq, i, lambda, friction, dt, h_out, hu_out);
  }
}

void rusanov_sweep(const double* h, const double* hu, int n, double gravity,
                   double lambda, double friction, double dt, BoundaryFlux left,
                   BoundaryFlux right, SweepWorkspace& ws, double* h_out,
                   double* hu_out) {
  if (parallel_enabled() && n >= kParallelGrain) {
    rusanov_sweep_omp(h, hu, n, gravity, lambda, friction, dt, left, right, ws,
                      h_out, hu_out);
  } else {
    rusanov_sweep_serial(h, hu, n, gravity, lambda, friction, dt, left, right,
                         ws, h_out, hu_out);
  }
}

namespace {
inline double column_dot(const Eigen::MatrixXd& x, int a, int b) {
  const double* pa = x.col(a).data();
  const double* pb = x.col(b).data();
  double acc = 0.0;
  const Eigen::Index rows = x.rows();
  for (Eigen::Index r = 0; r < rows; ++r) acc += pa[r] * pb[r];
  return acc;
}
}  // namespace

void gram_matrix_serial(const Eigen::MatrixXd& x, Eigen::MatrixXd& g) {
  const int n = static_cast<int>(x.cols());
  g.resize(n, n);
  for (int j = 0; j < n; ++j) {
    for (int i = j; i < n; ++i) {
      const double v = column_dot(x, i, j);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
}

void gram_matrix_omp(const Eigen::MatrixXd& x, Eigen::MatrixXd& g) {
  const int n = static_cast<int>(x.cols());
  g.resize(n, n);
  // flattened lower triangle so the load per thread stays even
  const long total = static_cast<long>(n) * (n + 1) / 2;
#pragma omp parallel for schedule(static)
  for (long k = 0; k < total; ++k) {
    // row-major walk of the lower triangle: k -> (i, j), j <= i
    const long i = static_cast<long>((std::sqrt(8.0 * static_cast<double>(k) + 1.0) - 1.0) / 2.0);
    long base = i * (i + 1) / 2;
    long row = i;
    while (base > k) {  // guard against sqrt rounding
      --row;
      base = row * (row + 1) / 2;
    }
    while (base + row + 1 <= k) {
      ++row;
      base = row * (row + 1) / 2;
    }
    const long col = k - base;
    const double v = column_dot(x, static_cast<int>(row), static_cast<int>(col));
    g(row, col) = v;
    g(col, row) = v;
  }
}

void gram_matrix(const Eigen::MatrixXd& x, Eigen::MatrixXd& g) {
  const long work = static_cast<long>(x.cols()) * x.cols();
  if (parallel_enabled() && work >= kParallelGrain) {
    gram_matrix_omp(x, g);
  } else {
    gram_matrix_serial(x, g);
  }
}

}  // namespace tritier::kernels
