#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "dcov/rng.hpp"
#include "dcov/types.hpp"

namespace dcov {

// One group's additive contribution to the shared updates. The precision and
// mean parts are produced at the start of a sweep for the shared-factor draw;
// rho_loglik is produced at the end of the sweep (it needs the freshly drawn
// X and Z) for the correlation draw. sweep_stamp guards the coordinator
// against aggregating summaries from different sweeps.
struct WorkerSummary {
  Eigen::MatrixXd precision_contribution;  // k_g x k_g, Lambda^T Omega^-1 Lambda
  Eigen::MatrixXd mean_contributions;      // n x k_g, row i = Lambda^T Omega^-1 Q_i
  Eigen::VectorXd rho_loglik;              // |grid|, empty until the rho phase
  // Per-column input for the scale-rebalancing move, filled at the end of
  // the local phase: sum_j phi_jh tau_h lambda_jh^2.
  Eigen::VectorXd scale_loading_score;
  long sweep_stamp = -1;
};

// Q_i = y_i - sqrt(1-rho) * Lambda * Z_i. Omega is diagonal, so its inverse
// is elementwise and the whole summary costs O(n p_g k_g + p_g k_g^2).
WorkerSummary worker_summarize_for_shared(const Eigen::MatrixXd& data,
                                          const FactorState& state,
                                          const Eigen::MatrixXd& idio_factors,
                                          double rho,
                                          const std::vector<double>& rho_grid,
                                          long sweep_stamp = 0);

// X_i ~ N(A^-1 sqrt(rho) b_i, A^-1) with
// A = rho * sum_m precision_contribution_m + I and b_i the summed mean rows.
// Throws NumericError if the aggregate precision fails its Cholesky
// factorization (upstream corruption).
Eigen::MatrixXd sample_shared_factors(const std::vector<WorkerSummary>& summaries,
                                      double rho, RngStream& rng);

// Z_i ~ N(B^-1 sqrt(1-rho) Lambda^T Omega^-1 R_i, B^-1) with
// B = (1-rho) * Lambda^T Omega^-1 Lambda + I and
// R_i = y_i - sqrt(rho) * Lambda * X_i.
Eigen::MatrixXd sample_idiosyncratic_factors(const Eigen::MatrixXd& data,
                                             const FactorState& state,
                                             const Eigen::MatrixXd& shared_factors,
                                             double rho, RngStream& rng);

// Row-wise conjugate update of the loadings given eta and the shrinkage
// state: row j ~ N((D_j^-1 + s_j eta^T eta)^-1 eta^T s_j y_j, (...)^-1) with
// s_j = 1/sigma2_j and D_j^-1 = diag(phi_j1 tau_1, ..., phi_jk tau_k).
// The Gram matrix eta^T eta is formed once and shared across rows.
Eigen::MatrixXd sample_loadings_rows(const Eigen::MatrixXd& data,
                                     const Eigen::MatrixXd& eta,
                                     const Eigen::VectorXd& sigma2,
                                     const MgpsState& mgps, RngStream& rng);

// Conjugate noise update: 1/sigma2_j ~ Gamma(a + n/2, b + rss_j / 2).
Eigen::VectorXd sample_noise_variances(const Eigen::MatrixXd& data,
                                       const Eigen::MatrixXd& loadings,
                                       const Eigen::MatrixXd& eta,
                                       double a_sigma, double b_sigma,
                                       RngStream& rng);

// Per-group Gaussian log likelihood of the data over the candidate grid,
// with eta recomposed as sqrt(r) X + sqrt(1-r) Z for each grid value r.
// Expanding the quadratic form makes each grid entry O(1) after an
// O(n p_g k_g) precomputation.
Eigen::VectorXd worker_rho_loglik(const Eigen::MatrixXd& data,
                                  const Eigen::MatrixXd& loadings,
                                  const Eigen::VectorXd& sigma2,
                                  const Eigen::MatrixXd& shared_factors,
                                  const Eigen::MatrixXd& idio_factors,
                                  const std::vector<double>& rho_grid);

// Draws a grid value with probability proportional to exp(loglik - max);
// the prior over the grid is uniform so no prior term appears.
double sample_rho(const Eigen::VectorXd& summed_loglik,
                  const std::vector<double>& rho_grid, RngStream& rng);

// Barrier guard: every summary must carry the current sweep's stamp before
// the coordinator may aggregate it. Throws NumericError otherwise.
void check_summary_stamps(const std::vector<WorkerSummary>& summaries,
                          long sweep_index);

// ---------------------------------------------------------------------------
// Coupled sweep
// ---------------------------------------------------------------------------

// Executes a batch of independent tasks and waits for completion. The serial
// runner executes in index order; pools assign task m to thread m % T.
struct TaskRunner {
  virtual ~TaskRunner() = default;
  virtual void run(std::vector<std::function<void()>>& tasks) = 0;
};

struct SerialRunner : TaskRunner {
  void run(std::vector<std::function<void()>>& tasks) override {
    for (auto& t : tasks) t();
  }
};

// Full coupled state, one entry per group. `couple` is false on the
// single-group baseline path: rho is pinned to 1, eta == X, and the Z and
// rho updates are skipped.
struct CoupledState {
  std::vector<Eigen::MatrixXd> data;  // per group, n x p_m
  std::vector<FactorState> factors;
  SharedLatentState shared;
  bool couple = true;

  int group_count() const { return static_cast<int>(data.size()); }
  Eigen::Index samples() const { return data.empty() ? 0 : data[0].rows(); }
};

// One deterministic stream per (group, variable family) plus coordinator
// streams for the shared draws; results are independent of thread count.
struct WorkerStreams {
  RngStream idio, loadings, phi, delta, sigma2;
};

struct SweepStreams {
  std::vector<WorkerStreams> workers;
  RngStream shared_factors;
  RngStream rho;
  RngStream scale_move;
  RngStream rho_realloc;

  static SweepStreams create(std::uint64_t seed, int group_count);
};

// Scale-rebalancing move on the likelihood-invariant orbit
//   lambda_h -> lambda_h / c,  X_h -> c X_h,  Z_h^(m) -> c Z_h^(m):
// one-at-a-time Gibbs mixes across this scale ridge extremely slowly once
// p_g is of the order of n, and can sit at an unbalanced scale for thousands
// of sweeps. Drawing log c by Metropolis steps on the orbit density
//   A t - (S_lambda/2) e^{-2t} - (S_eta/2) e^{2t},
// with A = n(terms scaled up) - p (rows scaled down) and the S-terms read
// off the current state, leaves the posterior exactly invariant (the grid
// log likelihood is invariant too, so the rho draw needs no recompute).
void apply_scale_rebalance(CoupledState& cs,
                           const std::vector<WorkerSummary>& summaries,
                           RngStream& rng);

// Correlation-reallocation move: jump rho across the interior of the grid
// while rescaling X by sqrt(rho/r) and every Z by sqrt((1-rho)/(1-r)), which
// keeps each eta^(m) (and so the likelihood) exactly fixed. The grid
// conditional alone pins rho to the current (X, Z) allocation and the pair
// barely moves; sampling the orbit coordinate from its exact density
// (latent priors times the transformation Jacobian) restores mixing.
// No-op at the rho = 0 or 1 endpoints and on the uncoupled path.
void apply_rho_reallocation(CoupledState& cs, RngStream& rng);

struct SweepTimings {
  double worker_seconds = 0.0;
  double shared_seconds = 0.0;
};

// One full Gibbs sweep over every variable block, in order: per-group
// summaries -> shared factors -> idiosyncratic factors -> eta recomposition
// -> loadings rows -> phi -> delta/tau -> noise -> correlation (aggregated
// grid). Group tasks run through `runner`; the shared draws run on the
// calling thread between the two task batches. Kernel failures are rethrown
// with the sweep index, group id, and a state snapshot attached.
void full_sweep(CoupledState& cs, SweepStreams& streams, long sweep_index,
                TaskRunner& runner, SweepTimings* timings = nullptr);

// Convenience overload: serial execution.
void full_sweep(CoupledState& cs, SweepStreams& streams, long sweep_index);

}  // namespace dcov
