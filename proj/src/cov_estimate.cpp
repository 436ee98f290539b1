#include "dcov/cov_estimate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dcov/errors.hpp"

namespace dcov {

int CovEstimate::factors_per_group() const {
  return block_loadings.empty() ? 0
                                : static_cast<int>(block_loadings[0].cols());
}

int CovEstimate::total_dim() const {
  int p = 0;
  for (const auto& block : block_loadings) p += static_cast<int>(block.rows());
  return p;
}

double CovEstimate::trace() const {
  double t = noise_diag.sum();
  for (const auto& block : block_loadings) t += block.squaredNorm();
  return t;
}

void CovEstimate::validate() const {
  if (block_loadings.empty()) throw ConfigError("covariance estimate: empty");
  const int k = factors_per_group();
  if (k < 1) throw ConfigError("covariance estimate: factor count must be >= 1");
  for (const auto& block : block_loadings) {
    if (block.cols() != k) {
      throw ConfigError(
          "covariance estimate: groups disagree on factor count (" +
          std::to_string(block.cols()) + " vs " + std::to_string(k) + ")");
    }
  }
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw ConfigError("covariance estimate: rho must lie in [0, 1]");
  }
  const int p = total_dim();
  if (noise_diag.size() != p) {
    throw ConfigError("covariance estimate: noise diagonal has length " +
                      std::to_string(noise_diag.size()) + ", expected " +
                      std::to_string(p));
  }
  if ((noise_diag.array() < 0.0).any()) {
    throw ConfigError("covariance estimate: negative noise variance");
  }
  if (column_indices.size() != block_loadings.size()) {
    throw ConfigError("covariance estimate: column index lists missing");
  }
  std::vector<char> seen(static_cast<std::size_t>(p), 0);
  for (std::size_t m = 0; m < column_indices.size(); ++m) {
    if (column_indices[m].size() !=
        static_cast<std::size_t>(block_loadings[m].rows())) {
      throw ConfigError("covariance estimate: group " + std::to_string(m + 1) +
                        " index list does not match its block size");
    }
    for (int c : column_indices[m]) {
      if (c < 0 || c >= p || seen[static_cast<std::size_t>(c)]) {
        throw ConfigError(
            "covariance estimate: column ids must disjointly cover 0..p-1");
      }
      seen[static_cast<std::size_t>(c)] = 1;
    }
  }
}

std::vector<std::vector<int>> contiguous_indices(const std::vector<int>& sizes) {
  std::vector<std::vector<int>> out(sizes.size());
  int next = 0;
  for (std::size_t m = 0; m < sizes.size(); ++m) {
    out[m].resize(static_cast<std::size_t>(sizes[m]));
    for (int j = 0; j < sizes[m]; ++j) out[m][static_cast<std::size_t>(j)] = next++;
  }
  return out;
}

namespace {

// Scatter the per-group blocks into a p x k_g row map plus a group id per
// original column. Row i of `lam` is the loading row of original column i.
struct ExpandedLoadings {
  Eigen::MatrixXd lam;         // p x k_g
  std::vector<int> group_of;   // length p
};

ExpandedLoadings expand(const CovEstimate& est) {
  est.validate();
  const int p = est.total_dim();
  const int k = est.factors_per_group();
  ExpandedLoadings ex;
  ex.lam.resize(p, k);
  ex.group_of.assign(static_cast<std::size_t>(p), -1);
  for (std::size_t m = 0; m < est.block_loadings.size(); ++m) {
    const auto& cols = est.column_indices[m];
    for (std::size_t j = 0; j < cols.size(); ++j) {
      ex.lam.row(cols[j]) = est.block_loadings[m].row(static_cast<Eigen::Index>(j));
      ex.group_of[static_cast<std::size_t>(cols[j])] = static_cast<int>(m);
    }
  }
  return ex;
}

}  // namespace

void for_each_covariance_row_block(
    const CovEstimate& est, Eigen::Index block_rows,
    const std::function<void(Eigen::Index, const Eigen::MatrixXd&)>& fn) {
  const ExpandedLoadings ex = expand(est);
  const Eigen::Index p = ex.lam.rows();
  const double rho = est.rho;
  Eigen::MatrixXd block;
  for (Eigen::Index start = 0; start < p; start += block_rows) {
    const Eigen::Index rows = std::min(block_rows, p - start);
    block.noalias() = ex.lam.middleRows(start, rows) * ex.lam.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const int gi = ex.group_of[static_cast<std::size_t>(start + r)];
      for (Eigen::Index j = 0; j < p; ++j) {
        if (ex.group_of[static_cast<std::size_t>(j)] != gi) block(r, j) *= rho;
      }
      block(r, start + r) += est.noise_diag[start + r];
    }
    fn(start, block);
  }
}

Eigen::MatrixXd materialize_covariance(const CovEstimate& est) {
  const Eigen::Index p = est.total_dim();
  Eigen::MatrixXd sigma(p, p);
  for_each_covariance_row_block(
      est, 256, [&](Eigen::Index start, const Eigen::MatrixXd& block) {
        sigma.middleRows(start, block.rows()) = block;
      });
  return sigma;
}

}  // namespace dcov
