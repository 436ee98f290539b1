#include <doctest.h>

#include <algorithm>
#include <chrono>

#include "dcov/gibbs.hpp"
#include "dcov/mgps.hpp"
#include "test_support.hpp"

using namespace dcov;

namespace {

CoupledState single_group_state(int p, int n, int k, std::uint64_t seed) {
  RngStream rng(seed);
  CoupledState cs;
  cs.couple = false;  // baseline path: cost is the per-worker kernel chain
  cs.data.push_back(rng.normal_matrix(n, p));
  RngStream init(seed + 1);
  auto draw = sample_prior_loadings(p, k, MgpsHyperparams{}, init);
  FactorState st;
  st.loadings = draw.loadings;
  st.mgps = draw.state;
  st.noise_variances = Eigen::VectorXd::Ones(p);
  cs.factors.push_back(std::move(st));
  cs.shared.shared_factors = rng.normal_matrix(n, k);
  cs.shared.idio_factors.push_back(rng.normal_matrix(n, k));
  cs.shared.rho = 1.0;
  cs.shared.rho_grid = make_rho_grid(101);
  return cs;
}

double median_sweep_seconds(int p, int n, int k, int sweeps, int repeats) {
  std::vector<double> times;
  for (int rep = 0; rep < repeats; ++rep) {
    CoupledState cs = single_group_state(p, n, k, 40 + rep);
    SweepStreams streams = SweepStreams::create(50 + rep, 1);
    // warmup
    full_sweep(cs, streams, 0);
    const auto t0 = std::chrono::steady_clock::now();
    for (long t = 1; t <= sweeps; ++t) full_sweep(cs, streams, t);
    times.push_back(std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count() /
                    sweeps);
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

}  // namespace

TEST_SUITE("perf") {

TEST_CASE("per-worker sweep time grows at most ~linearly in p") {
  const int n = 200, k = 4, sweeps = 10, repeats = 5;
  const double t1 = median_sweep_seconds(384, n, k, sweeps, repeats);
  const double t2 = median_sweep_seconds(768, n, k, sweeps, repeats);
  INFO("median sweep seconds: p=384 -> ", t1, ", p=768 -> ", t2);
  CHECK(t2 <= 2.5 * t1);
}

}  // TEST_SUITE
