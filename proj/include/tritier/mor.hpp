#pragma once

#include <Eigen/Core>
#include <utility>
#include <vector>

namespace tritier {

// ---------------------------------------------------------------------------
// Proper Orthogonal Decomposition by the method of snapshots: the Gram matrix
// of the mean-centered snapshot columns (n_snap x n_snap, small at desk
// scale) is eigendecomposed by cyclic Jacobi rotations, and the modes are
// recovered as X v_i / sigma_i.
// ---------------------------------------------------------------------------

struct SnapshotMatrix {
  Eigen::MatrixXd columns;    // state dim x n_snap (h stacked over hu)
  std::vector<double> times;  // seconds per column
};

struct PodBasis {
  Eigen::MatrixXd modes;            // state dim x r, orthonormal columns
  Eigen::VectorXd singular_values;  // length r, non-increasing
  double energy_fraction = 1.0;     // captured share of total snapshot energy
  Eigen::VectorXd mean_state;
  bool degenerate = false;  // zero variance after centering

  int rank() const { return static_cast<int>(modes.cols()); }
  int state_dim() const { return static_cast<int>(modes.rows()); }
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; sweeps until the
/// off-diagonal Frobenius norm falls below 1e-12 relative to the matrix
/// norm. Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> jacobi_eigh(Eigen::MatrixXd a);

/// r = smallest mode count capturing energy_target of the centered snapshot
/// energy, capped at max_modes so downstream tracking QPs stay small.
PodBasis compute_pod(const SnapshotMatrix& snaps, double energy_target,
                     int max_modes = 20);

Eigen::VectorXd project(const PodBasis& basis, const Eigen::VectorXd& state);
Eigen::VectorXd lift(const PodBasis& basis, const Eigen::VectorXd& reduced);

}  // namespace tritier
