#include "dcov/mgps.hpp"

#include <cmath>
#include <string>

#include "dcov/errors.hpp"
#include "dcov/synth.hpp"

namespace dcov {

PriorLoadingsDraw sample_prior_loadings(int p, int k,
                                        const MgpsHyperparams& hyper,
                                        RngStream& rng) {
  hyper.validate();
  if (p < 1 || k < 1) {
    throw ConfigError("sample_prior_loadings: dimensions must be >= 1");
  }
  PriorLoadingsDraw out;
  out.state.hyper = hyper;

  out.state.phi.resize(p, k);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index h = 0; h < k; ++h)
      out.state.phi(j, h) = rng.gamma(hyper.nu / 2.0, hyper.nu / 2.0);

  out.state.delta.resize(k);
  out.state.delta[0] = rng.gamma(hyper.a1, 1.0);
  for (Eigen::Index h = 1; h < k; ++h)
    out.state.delta[h] = rng.gamma(hyper.a2, 1.0);
  out.state.recompute_tau();

  out.loadings.resize(p, k);
  for (Eigen::Index h = 0; h < k; ++h) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const double prec = out.state.phi(j, h) * out.state.tau[h];
      out.loadings(j, h) = rng.normal() / std::sqrt(prec);
    }
  }
  return out;
}

void update_phi(MgpsState& state, const Eigen::MatrixXd& loadings,
                RngStream& rng) {
  if (loadings.rows() != state.phi.rows() ||
      loadings.cols() != state.phi.cols()) {
    throw ConfigError("update_phi: loadings do not match state dimensions");
  }
  const double nu = state.hyper.nu;
  const double shape = (nu + 1.0) / 2.0;
  for (Eigen::Index h = 0; h < loadings.cols(); ++h) {
    const double tau_h = state.tau[h];
    for (Eigen::Index j = 0; j < loadings.rows(); ++j) {
      const double lam2 = loadings(j, h) * loadings(j, h);
      state.phi(j, h) = rng.gamma(shape, (nu + tau_h * lam2) / 2.0);
    }
  }
}

std::pair<double, double> delta_conditional_params(
    const MgpsState& state, const Eigen::MatrixXd& loadings, int h) {
  const Eigen::Index p = loadings.rows();
  const Eigen::Index k = loadings.cols();
  if (h < 1 || h > k) throw ConfigError("delta_conditional_params: bad index");
  // col_score[l] = sum_j phi_jl * lambda_jl^2
  const Eigen::VectorXd col_score =
      (state.phi.array() * loadings.array().square()).colwise().sum();

  const Eigen::Index hi = h - 1;
  double shape, rate = 1.0;
  if (h == 1) {
    shape = static_cast<double>(p) * static_cast<double>(k) / 2.0 +
            state.hyper.a1;
  } else {
    shape = state.hyper.a2 +
            (static_cast<double>(p) / 2.0) * static_cast<double>(k - hi);
  }
  // Leave-one-out products tau_l^{(h)} = prod_{t <= l, t != h} delta_t,
  // accumulated over l = h..k.
  double prod = 1.0;
  for (Eigen::Index t = 0; t < hi; ++t) prod *= state.delta[t];
  rate += 0.5 * prod * col_score[hi];
  for (Eigen::Index l = hi + 1; l < k; ++l) {
    prod *= state.delta[l];
    rate += 0.5 * prod * col_score[l];
  }
  return {shape, rate};
}

void update_delta(MgpsState& state, const Eigen::MatrixXd& loadings,
                  RngStream& rng) {
  if (loadings.rows() != state.phi.rows() ||
      loadings.cols() != state.phi.cols()) {
    throw ConfigError("update_delta: loadings do not match state dimensions");
  }
  const Eigen::Index k = loadings.cols();
  for (Eigen::Index h = 0; h < k; ++h) {
    const auto [shape, rate] =
        delta_conditional_params(state, loadings, static_cast<int>(h) + 1);
    state.delta[h] = rng.gamma(shape, rate);
  }
  state.recompute_tau();
}

TraceConcentrationResult trace_concentration_experiment(
    int p, int k, int g, int s, const MgpsHyperparams& hyper,
    const std::vector<double>& epsilons, int n_draws, std::uint64_t seed) {
  hyper.validate();
  if (s < 1 || s > p || 2 * s > p) {
    throw ConfigError("trace experiment: sparsity s = " + std::to_string(s) +
                      " must satisfy 1 <= s <= p and s/p <= 1/2");
  }
  if (g < 1 || g > p) throw ConfigError("trace experiment: bad group count");
  if (n_draws < 1) throw ConfigError("trace experiment: need n_draws >= 1");

  RngStream truth_rng = make_stream(seed, StreamFamily::kDataGen);
  const Eigen::MatrixXd lam0 = sparse_loadings(p, k, s, truth_rng);
  const double target = lam0.squaredNorm();

  // Group sizes follow the floor/ceil split; positions do not affect the
  // trace, so only the sizes matter here.
  const int k_g = (k + g - 1) / g;
  std::vector<int> sizes(static_cast<std::size_t>(g), p / g);
  for (int m = 0; m < p % g; ++m) sizes[static_cast<std::size_t>(m)] += 1;

  RngStream draw_rng = make_stream(seed, StreamFamily::kExperiment);
  std::vector<long> hits(epsilons.size(), 0);
  for (int d = 0; d < n_draws; ++d) {
    double tr = 0.0;
    for (int m = 0; m < g; ++m) {
      tr += sample_prior_loadings(sizes[static_cast<std::size_t>(m)], k_g,
                                  hyper, draw_rng)
                .loadings.squaredNorm();
    }
    const double diff = std::abs(tr - target);
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
      if (diff < epsilons[e]) ++hits[e];
    }
  }

  TraceConcentrationResult res;
  res.epsilon = epsilons;
  res.target_trace = target;
  res.probability.resize(epsilons.size());
  res.mc_stderr.resize(epsilons.size());
  for (std::size_t e = 0; e < epsilons.size(); ++e) {
    const double prob = static_cast<double>(hits[e]) / n_draws;
    res.probability[e] = prob;
    res.mc_stderr[e] = std::sqrt(prob * (1.0 - prob) / n_draws);
  }
  return res;
}

}  // namespace dcov
