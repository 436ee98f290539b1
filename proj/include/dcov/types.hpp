#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "dcov/rng.hpp"

namespace dcov {

// Centered observation matrix: n samples (rows) by p variables (columns).
// Construct through center_columns() so the invariants hold.
struct DataMatrix {
  Eigen::MatrixXd values;        // n x p, column means removed
  Eigen::VectorXd column_means;  // length p, means recorded at centering time

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

// Centers each column of `raw`. Rejects non-finite entries (reporting the
// first offending row/column) and matrices with fewer than 2 rows.
DataMatrix center_columns(const Eigen::MatrixXd& raw);

// Random disjoint split of columns {0..p-1} into `group_count` groups whose
// sizes differ by at most one. Reproducible from the stored seed.
struct Partition {
  int group_count = 0;
  std::vector<std::vector<int>> column_index_lists;  // 0-based column ids
  std::uint64_t seed = 0;

  int group_size(int m) const {
    return static_cast<int>(column_index_lists[m].size());
  }
  int total_columns() const;
};

Partition make_partition(int p, int g, std::uint64_t seed);

// Hyperparameters of the multiplicative gamma process shrinkage prior plus
// the noise-precision prior. a2 > 1 is required so column precisions are
// stochastically increasing.
struct MgpsHyperparams {
  double nu = 3.0;
  double a1 = 2.1;
  double a2 = 3.1;
  double a_sigma = 1.0;
  double b_sigma = 0.3;

  void validate() const;
};

// Shrinkage state for one group's loadings matrix (p_g x k_g).
// tau[h] == prod_{l<=h} delta[l] after every update.
struct MgpsState {
  Eigen::MatrixXd phi;    // p_g x k_g, elementwise local precisions
  Eigen::VectorXd delta;  // k_g multiplicative increments
  Eigen::VectorXd tau;    // k_g cumulative column precisions
  MgpsHyperparams hyper;

  void recompute_tau();
};

// Per-group sampler state: loadings, diagonal noise variances, shrinkage.
struct FactorState {
  Eigen::MatrixXd loadings;         // p_g x k_g
  Eigen::VectorXd noise_variances;  // length p_g, all > 0
  MgpsState mgps;

  Eigen::Index dim() const { return loadings.rows(); }
  Eigen::Index rank() const { return loadings.cols(); }
};

// Latent factors coupling the groups: eta^(m) = sqrt(rho) X + sqrt(1-rho) Z^(m).
// eta is always recomputed from (X, Z, rho); it is never stored.
struct SharedLatentState {
  Eigen::MatrixXd shared_factors;             // n x k_g
  std::vector<Eigen::MatrixXd> idio_factors;  // one n x k_g block per group
  double rho = 1.0;
  std::vector<double> rho_grid;

  Eigen::MatrixXd eta(int m) const {
    return std::sqrt(rho) * shared_factors +
           std::sqrt(1.0 - rho) * idio_factors[static_cast<std::size_t>(m)];
  }
};

// Equally spaced candidate correlations on [0, 1].
std::vector<double> make_rho_grid(int size = 101);

}  // namespace dcov
