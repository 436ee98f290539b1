#pragma once

#include <Eigen/Dense>
#include <ostream>
#include <vector>

#include "dcov/cov_estimate.hpp"

namespace dcov {

// Largest singular value of (estimate - truth) for symmetric inputs,
// computed by power iteration on the squared difference (relative tolerance
// 1e-6). Never forms a dense eigendecomposition.
double operator_norm_error(const Eigen::MatrixXd& estimate,
                           const Eigen::MatrixXd& truth);

struct ErrorSummaries {
  double mse = 0.0;
  double avg_abs_bias = 0.0;
  double max_abs_bias = 0.0;
};

// Elementwise error summaries over all p^2 entries. Values are unscaled;
// any x100 display scaling belongs to report formatting.
ErrorSummaries error_summaries(const Eigen::MatrixXd& estimate,
                               const Eigen::MatrixXd& truth);

// Top `count` eigenvalues (descending) of the factored covariance, via
// subspace iteration on the implicit operator; the matrix is never
// materialized.
std::vector<double> leading_eigenvalues(const CovEstimate& est, int count);

// Streams row blocks of the implied correlation matrix and writes a CSV edge
// list "i,j,correlation" (1-based original column ids, i < j) for entries
// with |correlation| >= threshold. Returns the edge count. Rejects columns
// with zero variance by name.
long threshold_adjacency(const CovEstimate& est, double threshold,
                         std::ostream& edge_csv);

}  // namespace dcov
