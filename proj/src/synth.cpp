#include "dcov/synth.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "dcov/errors.hpp"

namespace dcov {

Eigen::MatrixXd sparse_loadings(int p, int k, int s, RngStream& rng) {
  if (s < 1 || s > p) {
    throw ConfigError("sparse_loadings: sparsity s = " + std::to_string(s) +
                      " must satisfy 1 <= s <= p = " + std::to_string(p));
  }
  Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(p, k);
  std::vector<int> idx(static_cast<std::size_t>(p));
  for (int h = 0; h < k; ++h) {
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    for (int t = 0; t < s; ++t) {
      lam(idx[static_cast<std::size_t>(t)], h) = rng.uniform(0.1, 3.0);
    }
  }
  return lam;
}

SyntheticDataset generate(int p, int k, int s, int n, double sigma2,
                          std::uint64_t seed, bool want_sigma) {
  if (sigma2 <= 0.0) throw ConfigError("generate: sigma2 must be positive");
  if (n < 2) throw ConfigError("generate: need n >= 2 samples");
  RngStream rng = make_stream(seed, StreamFamily::kDataGen);

  SyntheticDataset out;
  out.sparsity = s;
  out.true_loadings = sparse_loadings(p, k, s, rng);

  const double sd = std::sqrt(sigma2);
  Eigen::MatrixXd scores = rng.normal_matrix(n, k);
  Eigen::MatrixXd raw = scores * out.true_loadings.transpose();
  raw += sd * rng.normal_matrix(n, p);
  out.data = center_columns(raw);

  if (want_sigma) {
    out.true_sigma.noalias() =
        out.true_loadings * out.true_loadings.transpose();
    out.true_sigma.diagonal().array() += sigma2;
  }
  return out;
}

}  // namespace dcov
