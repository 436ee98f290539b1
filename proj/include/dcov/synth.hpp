#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "dcov/rng.hpp"
#include "dcov/types.hpp"

namespace dcov {

// Loadings with exactly s nonzeros per column at uniformly random positions,
// values drawn from Uniform(0.1, 3).
Eigen::MatrixXd sparse_loadings(int p, int k, int s, RngStream& rng);

struct SyntheticDataset {
  DataMatrix data;                // centered n x p draws
  Eigen::MatrixXd true_loadings;  // p x k
  Eigen::MatrixXd true_sigma;     // p x p (empty when not requested)
  int sparsity = 0;
};

// Benchmark generator: y_i = Lambda * eta_i + eps_i with eta_i ~ N(0, I_k)
// and eps_i ~ N(0, sigma2 * I_p). Set want_sigma = false to skip the dense
// p x p truth (it is the only p^2 allocation here).
SyntheticDataset generate(int p, int k, int s, int n, double sigma2,
                          std::uint64_t seed, bool want_sigma = true);

}  // namespace dcov
