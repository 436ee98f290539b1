#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "dcov/rng.hpp"
#include "dcov/types.hpp"

namespace dcov {

struct PriorLoadingsDraw {
  Eigen::MatrixXd loadings;  // p x k
  MgpsState state;
};

// Draws a loadings matrix and matching shrinkage state from the prior:
//   phi_jh ~ Gamma(nu/2, nu/2), delta_1 ~ Gamma(a1, 1),
//   delta_l ~ Gamma(a2, 1) for l >= 2, tau_h = prod_{l<=h} delta_l,
//   lambda_jh ~ N(0, 1 / (phi_jh * tau_h)).
// All Gamma parameters throughout this module are shape-rate.
PriorLoadingsDraw sample_prior_loadings(int p, int k,
                                        const MgpsHyperparams& hyper,
                                        RngStream& rng);

// Conditional update of the local precisions given the loadings:
//   phi_jh | rest ~ Gamma((nu + 1)/2, (nu + tau_h * lambda_jh^2) / 2),
// the exact conjugate update under the prior above (a joint-distribution
// test fails for any other shape). tau is left untouched.
void update_phi(MgpsState& state, const Eigen::MatrixXd& loadings,
                RngStream& rng);

// Shape and rate of delta_h's full conditional given the rest of `state`
// (1-based h). Exposed so the sequential update below is checkable.
std::pair<double, double> delta_conditional_params(
    const MgpsState& state, const Eigen::MatrixXd& loadings, int h);

// Sequential conditional update of delta_1..delta_k using leave-one-out
// precision products; recomputes tau afterwards.
void update_delta(MgpsState& state, const Eigen::MatrixXd& loadings,
                  RngStream& rng);

// Prior mass near a sparse truth: draws n_draws block-structured loading
// sets (g groups of ceil(k/g) factors each) from the prior and reports, for
// each epsilon, the empirical probability that the factored-form trace lands
// within epsilon of trace(Lambda0 * Lambda0^T) for an s-sparse Lambda0.
struct TraceConcentrationResult {
  std::vector<double> epsilon;
  std::vector<double> probability;
  std::vector<double> mc_stderr;
  double target_trace = 0.0;
};

TraceConcentrationResult trace_concentration_experiment(
    int p, int k, int g, int s, const MgpsHyperparams& hyper,
    const std::vector<double>& epsilons, int n_draws, std::uint64_t seed);

}  // namespace dcov
