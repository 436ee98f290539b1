#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "dcov/errors.hpp"
#include "dcov/synth.hpp"

using namespace dcov;

TEST_SUITE("synthdata") {

TEST_CASE("sparse loadings: exactly s nonzeros per column in [0.1, 3]") {
  RngStream rng(1);
  const Eigen::MatrixXd lam = sparse_loadings(40, 5, 7, rng);
  for (int h = 0; h < 5; ++h) {
    int nonzeros = 0;
    for (int j = 0; j < 40; ++j) {
      const double v = lam(j, h);
      if (v != 0.0) {
        ++nonzeros;
        CHECK(v >= 0.1);
        CHECK(v <= 3.0);
      }
    }
    CHECK(nonzeros == 7);
  }
}

TEST_CASE("sparse loadings: s = p fills the column densely") {
  RngStream rng(2);
  const Eigen::MatrixXd lam = sparse_loadings(6, 2, 6, rng);
  CHECK((lam.array() != 0.0).all());
}

TEST_CASE("sparse loadings: out-of-range sparsity is rejected") {
  RngStream rng(3);
  CHECK_THROWS_AS(sparse_loadings(5, 2, 6, rng), ConfigError);
  CHECK_THROWS_AS(sparse_loadings(5, 2, 0, rng), ConfigError);
}

TEST_CASE("generate: deterministic and centered") {
  const auto a = generate(10, 2, 3, 50, 0.5, 77);
  const auto b = generate(10, 2, 3, 50, 0.5, 77);
  CHECK(a.data.values == b.data.values);
  CHECK(a.true_loadings == b.true_loadings);
  CHECK(a.data.values.colwise().sum().cwiseAbs().maxCoeff() <= 1e-9 * 50);
}

TEST_CASE("generate: truth is the factor decomposition and is PSD") {
  const auto ds = generate(12, 3, 4, 30, 0.5, 5);
  const Eigen::MatrixXd want =
      ds.true_loadings * ds.true_loadings.transpose() +
      0.5 * Eigen::MatrixXd::Identity(12, 12);
  CHECK((ds.true_sigma - want).cwiseAbs().maxCoeff() <= 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ds.true_sigma);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("generate: sigma is skipped on request") {
  const auto ds = generate(10, 2, 2, 30, 0.5, 6, /*want_sigma=*/false);
  CHECK(ds.true_sigma.size() == 0);
  CHECK(ds.true_loadings.rows() == 10);
}

TEST_CASE("generate: sample covariance converges to the returned truth") {
  // 100k draws; every entry within 4 Gaussian-formula standard errors.
  const int p = 10, n = 100000;
  const auto ds = generate(p, 2, 2, n, 0.5, 7);
  const Eigen::MatrixXd sample_cov =
      ds.data.values.transpose() * ds.data.values / static_cast<double>(n);
  for (int r = 0; r < p; ++r) {
    for (int c = 0; c < p; ++c) {
      const double se = std::sqrt((ds.true_sigma(r, r) * ds.true_sigma(c, c) +
                                   ds.true_sigma(r, c) * ds.true_sigma(r, c)) /
                                  n);
      CHECK(std::abs(sample_cov(r, c) - ds.true_sigma(r, c)) <= 4.0 * se);
    }
  }
}

TEST_CASE("generate: rejects bad noise and tiny samples") {
  CHECK_THROWS_AS(generate(4, 1, 1, 10, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(generate(4, 1, 1, 1, 0.5, 1), ConfigError);
}

}  // TEST_SUITE
