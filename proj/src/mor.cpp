#include "tritier/mor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tritier/kernels.hpp"

namespace tritier {

std::pair<Eigen::VectorXd, Eigen::MatrixXd> jacobi_eigh(Eigen::MatrixXd a) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n) throw std::invalid_argument("jacobi_eigh: matrix not square");
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

  auto off_norm = [&]() {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  const double scale = std::max(a.norm(), 1e-300);
  const double target = 1e-12 * scale;
  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps && off_norm() > target; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double tau = (aqq - app) / (2.0 * apq);
        // smaller-root tangent keeps the rotation angle below pi/4
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  Eigen::VectorXd evals(n);
  for (int i = 0; i < n; ++i) evals[i] = a(i, i);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return evals[i] > evals[j]; });
  Eigen::VectorXd evals_sorted(n);
  Eigen::MatrixXd v_sorted(n, n);
  for (int i = 0; i < n; ++i) {
    evals_sorted[i] = evals[order[static_cast<std::size_t>(i)]];
    v_sorted.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return {evals_sorted, v_sorted};
}

PodBasis compute_pod(const SnapshotMatrix& snaps, double energy_target,
                     int max_modes) {
  if (!(energy_target > 0.0 && energy_target <= 1.0)) {
    throw std::invalid_argument("compute_pod: energy_target must be in (0,1]");
  }
  const int dim = static_cast<int>(snaps.columns.rows());
  const int n_snap = static_cast<int>(snaps.columns.cols());
  if (n_snap < 1) throw std::invalid_argument("compute_pod: need >= 1 snapshot");

  PodBasis basis;
  basis.mean_state = snaps.columns.rowwise().mean();
  Eigen::MatrixXd centered(dim, n_snap);
  for (int j = 0; j < n_snap; ++j) centered.col(j) = snaps.columns.col(j) - basis.mean_state;

  Eigen::MatrixXd gram;
  kernels::gram_matrix(centered, gram);
  auto [evals, evecs] = jacobi_eigh(gram);

  const double sigma1 = std::sqrt(std::max(evals[0], 0.0));
  if (!(sigma1 > 1e-12 * std::max(1.0, basis.mean_state.norm()))) {
    // zero variance after centering: flag and return a unit placeholder mode
    basis.degenerate = true;
    basis.modes = Eigen::MatrixXd::Zero(dim, 1);
    basis.modes(0, 0) = 1.0;
    basis.singular_values = Eigen::VectorXd::Zero(1);
    basis.energy_fraction = 1.0;
    return basis;
  }

  double total_energy = 0.0;
  std::vector<double> sigmas;
  for (int i = 0; i < n_snap; ++i) {
    const double lam = std::max(evals[i], 0.0);
    total_energy += lam;
    const double sigma = std::sqrt(lam);
    if (sigma > 1e-12 * sigma1) sigmas.push_back(sigma);
  }

  int r = 1;
  double captured = sigmas[0] * sigmas[0];
  while (captured / total_energy < energy_target &&
         r < static_cast<int>(sigmas.size()) && r < max_modes) {
    captured += sigmas[static_cast<std::size_t>(r)] * sigmas[static_cast<std::size_t>(r)];
    ++r;
  }

  basis.singular_values = Eigen::VectorXd(r);
  basis.modes = Eigen::MatrixXd(dim, r);
  for (int i = 0; i < r; ++i) {
    basis.singular_values[i] = sigmas[static_cast<std::size_t>(i)];
    basis.modes.col(i) = centered * evecs.col(i) / sigmas[static_cast<std::size_t>(i)];
  }
  // one modified Gram-Schmidt pass pins orthonormality to the 1e-10 contract
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < i; ++j) {
      basis.modes.col(i) -= basis.modes.col(j).dot(basis.modes.col(i)) * basis.modes.col(j);
    }
    const double norm = basis.modes.col(i).norm();
    if (norm > 0.0) basis.modes.col(i) /= norm;
  }
  basis.energy_fraction = captured / total_energy;
  return basis;
}

Eigen::VectorXd project(const PodBasis& basis, const Eigen::VectorXd& state) {
  if (state.size() != basis.mean_state.size()) {
    throw std::invalid_argument("project: state dimension mismatch");
  }
  return basis.modes.transpose() * (state - basis.mean_state);
}

Eigen::VectorXd lift(const PodBasis& basis, const Eigen::VectorXd& reduced) {
  if (reduced.size() != basis.rank()) {
    throw std::invalid_argument("lift: reduced dimension mismatch");
  }
  return basis.mean_state + basis.modes * reduced;
}

}  // namespace tritier
