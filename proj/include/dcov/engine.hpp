#pragma once

#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "dcov/cov_estimate.hpp"
#include "dcov/gibbs.hpp"
#include "dcov/types.hpp"

namespace dcov {

// Fork-join pool for the per-group sweep phases. Task m runs on thread
// slot m % thread_count (static round-robin), so the work split is
// deterministic; the calling thread participates as slot 0 and run()
// doubles as the phase barrier. Helpers spin briefly before sleeping:
// sweeps arrive every few hundred microseconds and a condition-variable
// wakeup per phase would otherwise dominate small-group runs.
class TaskPool final : public TaskRunner {
 public:
  explicit TaskPool(int thread_count);
  ~TaskPool() override;

  TaskPool(const TaskPool&) = delete;
  TaskPool& operator=(const TaskPool&) = delete;

  int thread_count() const { return total_threads_; }
  void run(std::vector<std::function<void()>>& tasks) override;

 private:
  void worker_loop(int slot);

  std::mutex mutex_;
  std::condition_variable cv_start_, cv_done_;
  std::vector<std::function<void()>>* batch_ = nullptr;
  std::atomic<long> generation_{0};
  std::atomic<int> remaining_{0};
  std::atomic<bool> stop_{false};
  int total_threads_ = 1;
  std::vector<std::thread> helpers_;
};

struct RunConfig {
  int n = 0;  // 0 = take from the data
  int p = 0;  // 0 = take from the data
  int g = 1;
  int k = 1;             // global factor budget
  int k_g_override = 0;  // 0 = ceil(k / g)
  int sweep_count = 10000;
  int burn_in = 4000;
  int thin = 10;
  std::uint64_t seed = 1;
  MgpsHyperparams hyper;
  int rho_grid_size = 101;
  std::string estimator = "posterior_mean";
  bool materialize_sigma = false;
  int threads = 0;  // 0 = min(g, hardware)

  // When non-empty, replaces the seeded random partition (used by tests and
  // for reproducing a run from its manifest).
  std::vector<std::vector<int>> partition_override;

  int k_g() const { return k_g_override > 0 ? k_g_override : (k + g - 1) / g; }
  void validate() const;
};

struct PhaseTimings {
  double partition_seconds = 0.0;
  double init_seconds = 0.0;
  double worker_seconds = 0.0;
  double shared_seconds = 0.0;
  double accumulate_seconds = 0.0;
  double combine_seconds = 0.0;
  double total_seconds = 0.0;
};

struct RhoSummary {
  double mean = 1.0;
  double sd = 0.0;
  double q025 = 1.0;
  double q975 = 1.0;
};

struct RunReport {
  RunConfig config;
  PhaseTimings timings;
  long retained_draws = 0;
  int k_g = 1;
  int threads_used = 1;
  RhoSummary rho;
};

// Streaming sums of the retained draws; posterior means come out of the
// combine step without storing individual draws. Loading draws enter in the
// balanced gauge (columns scaled by the realized latent scale), the
// identified functional of each draw.
struct PosteriorAccumulator {
  std::vector<Eigen::MatrixXd> loadings_sum, loadings_sq_sum;
  std::vector<Eigen::VectorXd> sigma2_sum, sigma2_sq_sum;
  std::vector<double> rho_draws;
  long count = 0;
  long expected = 0;

  void init(const CoupledState& cs, long expected_draws);
  void add(const CoupledState& cs);
};

// Posterior means of the per-group loadings, noise variances, and rho,
// assembled with the original column order restored. Rejects an accumulator
// that has not seen its full complement of draws.
CovEstimate combine(const PosteriorAccumulator& acc, const Partition& part);

// Observer for retained draws (diagnostics, per-draw covariance tracking).
struct RetainedDrawHook {
  virtual ~RetainedDrawHook() = default;
  virtual void on_retained(const CoupledState& cs, long sweep_index) = 0;
};

// Repeatedly applies full_sweep under the pool's barrier contract and feeds
// retained draws to the accumulator (and hook, when given).
void run_parallel_workers(CoupledState& cs, SweepStreams& streams,
                          const RunConfig& cfg, PosteriorAccumulator& acc,
                          TaskRunner& runner, PhaseTimings& timings,
                          RetainedDrawHook* hook = nullptr);

// Full pipeline: partition columns, initialize the coupled state from the
// prior, run the sweeps, and combine the draws into a covariance estimate.
// With g == 1 the run takes the uncoupled baseline path (rho pinned to 1).
std::pair<CovEstimate, RunReport> run_estimation(const DataMatrix& data,
                                                 const RunConfig& cfg,
                                                 RetainedDrawHook* hook = nullptr);

}  // namespace dcov
