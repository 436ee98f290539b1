#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

namespace dcov {

// Global covariance estimate kept in factored block form:
//
//   Sigma = L * E * L^T + diag(noise)
//
// where L stacks the per-group loading blocks block-diagonally and the
// coupling matrix E has identity diagonal blocks and rho*I off-diagonal
// blocks. Blocks live in group order; column_indices maps each block row
// back to its original column id, so materialization restores the original
// variable order. trace(Sigma) does not depend on rho.
struct CovEstimate {
  std::vector<Eigen::MatrixXd> block_loadings;       // per group, p_m x k_g
  std::vector<std::vector<int>> column_indices;      // original 0-based ids
  double rho = 0.0;
  Eigen::VectorXd noise_diag;                        // length p, original order
  std::optional<Eigen::MatrixXd> materialized;       // dense p x p on request

  int group_count() const { return static_cast<int>(block_loadings.size()); }
  int factors_per_group() const;
  int total_dim() const;

  // Exact trace from the factored form.
  double trace() const;

  // Checks block shapes, the column cover, rho in [0,1], noise >= 0.
  void validate() const;
};

// Convenience for tests and manual assembly: contiguous column ids
// {0..p0-1}, {p0..p0+p1-1}, ... for the given block sizes.
std::vector<std::vector<int>> contiguous_indices(const std::vector<int>& sizes);

// Dense symmetric p x p covariance in original column order.
// Entry (i, j) = c * lambda_i . lambda_j + [i == j] * noise_i, with c = 1
// when i and j belong to the same group and c = rho otherwise.
Eigen::MatrixXd materialize_covariance(const CovEstimate& est);

// Streams the same matrix in contiguous row blocks (original order) without
// ever holding more than block_rows x p entries. fn receives the first row
// index of the block and the block itself.
void for_each_covariance_row_block(
    const CovEstimate& est, Eigen::Index block_rows,
    const std::function<void(Eigen::Index, const Eigen::MatrixXd&)>& fn);

}  // namespace dcov
