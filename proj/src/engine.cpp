#include "dcov/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "dcov/errors.hpp"
#include "dcov/mgps.hpp"

namespace dcov {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_s(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace

// ---------------------------------------------------------------------------
// TaskPool
// ---------------------------------------------------------------------------

TaskPool::TaskPool(int thread_count)
    : total_threads_(std::max(1, thread_count)) {
  helpers_.reserve(static_cast<std::size_t>(total_threads_ - 1));
  for (int slot = 1; slot < total_threads_; ++slot) {
    helpers_.emplace_back([this, slot] { worker_loop(slot); });
  }
}

TaskPool::~TaskPool() {
  {
    std::lock_guard<std::mutex> lk(mutex_);
    stop_.store(true, std::memory_order_release);
  }
  cv_start_.notify_all();
  for (auto& t : helpers_) t.join();
}

void TaskPool::worker_loop(int slot) {
  long seen = 0;
  for (;;) {
    // Fast path: spin for a short while; phases arrive back to back.
    bool ready = false;
    for (int spin = 0; spin < 20000; ++spin) {
      if (stop_.load(std::memory_order_acquire)) return;
      if (generation_.load(std::memory_order_acquire) != seen) {
        ready = true;
        break;
      }
      if ((spin & 127) == 127) std::this_thread::yield();
    }
    if (!ready) {
      std::unique_lock<std::mutex> lk(mutex_);
      cv_start_.wait(lk, [&] {
        return stop_.load(std::memory_order_acquire) ||
               generation_.load(std::memory_order_acquire) != seen;
      });
      if (stop_.load(std::memory_order_acquire)) return;
    }
    seen = generation_.load(std::memory_order_acquire);
    auto* tasks = batch_;
    for (std::size_t i = static_cast<std::size_t>(slot); i < tasks->size();
         i += static_cast<std::size_t>(total_threads_)) {
      (*tasks)[i]();
    }
    if (remaining_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
      std::lock_guard<std::mutex> lk(mutex_);
      cv_done_.notify_one();
    }
  }
}

void TaskPool::run(std::vector<std::function<void()>>& tasks) {
  if (total_threads_ <= 1 || tasks.size() <= 1) {
    for (auto& t : tasks) t();
    return;
  }
  {
    std::lock_guard<std::mutex> lk(mutex_);
    batch_ = &tasks;
    remaining_.store(total_threads_ - 1, std::memory_order_release);
    generation_.fetch_add(1, std::memory_order_acq_rel);
  }
  cv_start_.notify_all();
  for (std::size_t i = 0; i < tasks.size();
       i += static_cast<std::size_t>(total_threads_)) {
    tasks[i]();
  }
  for (int spin = 0;; ++spin) {
    if (remaining_.load(std::memory_order_acquire) == 0) break;
    if (spin >= 20000) {
      std::unique_lock<std::mutex> lk(mutex_);
      cv_done_.wait(lk, [&] {
        return remaining_.load(std::memory_order_acquire) == 0;
      });
      break;
    }
    if ((spin & 127) == 127) std::this_thread::yield();
  }
  batch_ = nullptr;
}

// ---------------------------------------------------------------------------
// Configuration and accumulation
// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (g < 1) throw ConfigError("config: group count must be >= 1");
  if (k < 1) throw ConfigError("config: factor budget must be >= 1");
  if (k_g_override < 0) throw ConfigError("config: k_g override must be >= 0");
  if (sweep_count < 1) throw ConfigError("config: sweep count must be >= 1");
  if (burn_in < 0 || burn_in >= sweep_count) {
    throw ConfigError("config: burn-in must satisfy 0 <= burn_in < sweeps");
  }
  if (thin < 1) throw ConfigError("config: thinning interval must be >= 1");
  if (rho_grid_size < 2) throw ConfigError("config: rho grid needs >= 2 points");
  if (estimator != "posterior_mean") {
    throw ConfigError("config: unknown estimator '" + estimator +
                      "' (supported: posterior_mean)");
  }
  hyper.validate();
}

void PosteriorAccumulator::init(const CoupledState& cs, long expected_draws) {
  const auto g = static_cast<std::size_t>(cs.group_count());
  loadings_sum.resize(g);
  loadings_sq_sum.resize(g);
  sigma2_sum.resize(g);
  sigma2_sq_sum.resize(g);
  for (std::size_t m = 0; m < g; ++m) {
    const auto& f = cs.factors[m];
    loadings_sum[m] = Eigen::MatrixXd::Zero(f.dim(), f.rank());
    loadings_sq_sum[m] = Eigen::MatrixXd::Zero(f.dim(), f.rank());
    sigma2_sum[m] = Eigen::VectorXd::Zero(f.dim());
    sigma2_sq_sum[m] = Eigen::VectorXd::Zero(f.dim());
  }
  rho_draws.clear();
  rho_draws.reserve(static_cast<std::size_t>(expected_draws));
  count = 0;
  expected = expected_draws;
}

void PosteriorAccumulator::add(const CoupledState& cs) {
  // Loadings are recorded in the balanced gauge: column h is scaled by the
  // realized latent scale r_h, the gauge coordinate the likelihood cannot
  // pin (only lambda_h * eta_h is identified). Without this the estimate
  // inherits the chain's wander along the scale ridge, which shows up as
  // badly inflated leading eigenvalues once p_g approaches n.
  const auto n = static_cast<double>(cs.samples());
  const auto k = cs.shared.shared_factors.cols();
  const int g = cs.group_count();
  Eigen::VectorXd gauge(k);
  for (Eigen::Index h = 0; h < k; ++h) {
    double total = cs.shared.shared_factors.col(h).squaredNorm();
    if (cs.couple) {
      for (int m = 0; m < g; ++m) {
        total += cs.shared.idio_factors[static_cast<std::size_t>(m)]
                     .col(h)
                     .squaredNorm();
      }
    }
    gauge[h] = std::sqrt(total / (n * (cs.couple ? g + 1 : 1)));
  }
  for (std::size_t m = 0; m < loadings_sum.size(); ++m) {
    const auto& f = cs.factors[m];
    const Eigen::MatrixXd gauged = f.loadings * gauge.asDiagonal();
    loadings_sum[m] += gauged;
    loadings_sq_sum[m] += gauged.cwiseAbs2();
    sigma2_sum[m] += f.noise_variances;
    sigma2_sq_sum[m] += f.noise_variances.cwiseAbs2();
  }
  rho_draws.push_back(cs.shared.rho);
  ++count;
}

CovEstimate combine(const PosteriorAccumulator& acc, const Partition& part) {
  if (acc.count == 0 || acc.count != acc.expected) {
    throw ConfigError("combine: accumulator incomplete (" +
                      std::to_string(acc.count) + " of " +
                      std::to_string(acc.expected) + " draws)");
  }
  if (part.column_index_lists.size() != acc.loadings_sum.size()) {
    throw ConfigError("combine: partition and accumulator disagree on groups");
  }
  const double inv = 1.0 / static_cast<double>(acc.count);
  CovEstimate est;
  est.column_indices = part.column_index_lists;
  est.rho = std::accumulate(acc.rho_draws.begin(), acc.rho_draws.end(), 0.0) *
            inv;
  est.block_loadings.resize(acc.loadings_sum.size());
  est.noise_diag.resize(part.total_columns());
  for (std::size_t m = 0; m < acc.loadings_sum.size(); ++m) {
    est.block_loadings[m] = acc.loadings_sum[m] * inv;
    const auto& cols = part.column_index_lists[m];
    for (std::size_t j = 0; j < cols.size(); ++j) {
      est.noise_diag[cols[j]] =
          acc.sigma2_sum[m][static_cast<Eigen::Index>(j)] * inv;
    }
  }
  est.validate();
  return est;
}

// ---------------------------------------------------------------------------
// Estimation pipeline
// ---------------------------------------------------------------------------

void run_parallel_workers(CoupledState& cs, SweepStreams& streams,
                          const RunConfig& cfg, PosteriorAccumulator& acc,
                          TaskRunner& runner, PhaseTimings& timings,
                          RetainedDrawHook* hook) {
  SweepTimings sweep_times;
  for (int t = 1; t <= cfg.sweep_count; ++t) {
    full_sweep(cs, streams, t, runner, &sweep_times);
    if (t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
      const auto t0 = Clock::now();
      acc.add(cs);
      if (hook) hook->on_retained(cs, t);
      timings.accumulate_seconds += elapsed_s(t0);
    }
  }
  timings.worker_seconds += sweep_times.worker_seconds;
  timings.shared_seconds += sweep_times.shared_seconds;
}

std::pair<CovEstimate, RunReport> run_estimation(const DataMatrix& data,
                                                 const RunConfig& cfg,
                                                 RetainedDrawHook* hook) {
  cfg.validate();
  const auto t_all = Clock::now();
  const int n = static_cast<int>(data.rows());
  const int p = static_cast<int>(data.cols());
  if (n < 2) throw ConfigError("run_estimation: need at least 2 samples");
  if (cfg.n != 0 && cfg.n != n) {
    throw ConfigError("run_estimation: config n does not match the data");
  }
  if (cfg.p != 0 && cfg.p != p) {
    throw ConfigError("run_estimation: config p does not match the data");
  }
  if (p < cfg.g) {
    throw ConfigError("run_estimation: dimension p must be >= group count");
  }

  RunReport report;
  report.config = cfg;
  report.k_g = cfg.k_g();

  // Divide: split the columns.
  auto t0 = Clock::now();
  Partition part;
  if (cfg.partition_override.empty()) {
    part = make_partition(p, cfg.g, cfg.seed);
  } else {
    part.group_count = static_cast<int>(cfg.partition_override.size());
    part.column_index_lists = cfg.partition_override;
    part.seed = cfg.seed;
    if (part.group_count != cfg.g) {
      throw ConfigError("run_estimation: partition override has wrong group count");
    }
    std::vector<char> seen(static_cast<std::size_t>(p), 0);
    for (const auto& lst : part.column_index_lists) {
      for (int c : lst) {
        if (c < 0 || c >= p || seen[static_cast<std::size_t>(c)]) {
          throw ConfigError(
              "run_estimation: partition override must disjointly cover the "
              "columns");
        }
        seen[static_cast<std::size_t>(c)] = 1;
      }
    }
    if (part.total_columns() != p) {
      throw ConfigError("run_estimation: partition override misses columns");
    }
  }
  report.timings.partition_seconds = elapsed_s(t0);

  // Initialize the coupled state. Loadings start at the thin-SVD point of
  // each group's block (balanced against unit-variance factors); starting
  // from prior draws instead leaves the chain on an unbalanced scale ridge
  // it exits very slowly when p_g > n. Shrinkage state still starts at a
  // prior draw; its first update conditions on the loadings anyway.
  t0 = Clock::now();
  const int g = cfg.g;
  const int k_g = cfg.k_g();
  CoupledState cs;
  cs.couple = g > 1;
  cs.data.resize(static_cast<std::size_t>(g));
  cs.factors.resize(static_cast<std::size_t>(g));
  cs.shared.idio_factors.resize(static_cast<std::size_t>(g));
  Eigen::MatrixXd reference_scores;  // score directions of the first group
  for (int m = 0; m < g; ++m) {
    const auto mm = static_cast<std::size_t>(m);
    const auto& cols = part.column_index_lists[mm];
    const int p_m = static_cast<int>(cols.size());
    Eigen::MatrixXd block(n, p_m);
    for (int j = 0; j < p_m; ++j) {
      block.col(j) = data.values.col(cols[static_cast<std::size_t>(j)]);
    }

    RngStream init = make_stream(cfg.seed, StreamFamily::kInitLoadings,
                                 static_cast<std::uint64_t>(m));
    cs.factors[mm].mgps =
        sample_prior_loadings(p_m, k_g, cfg.hyper, init).state;

    Eigen::BDCSVD<Eigen::MatrixXd> svd(
        block, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const int rank = std::min(k_g, static_cast<int>(svd.singularValues().size()));
    Eigen::MatrixXd lam0(p_m, k_g);
    Eigen::MatrixXd scores(n, k_g);
    for (int h = 0; h < rank; ++h) {
      lam0.col(h) = svd.matrixV().col(h) * svd.singularValues()[h] /
                    std::sqrt(static_cast<double>(n));
      scores.col(h) = svd.matrixU().col(h);
    }
    for (int h = rank; h < k_g; ++h) {
      lam0.col(h) = 0.01 * init.normal_vector(p_m);
      scores.col(h).setZero();
    }

    // The per-group decompositions carry arbitrary column order and sign;
    // the shared factor only couples groups whose directions agree, so
    // greedily match each group's score vectors against the first group's
    // and flip signs to positive correlation.
    if (m == 0) {
      reference_scores = scores;
    } else {
      Eigen::MatrixXd aligned_lam(p_m, k_g);
      std::vector<char> used(static_cast<std::size_t>(k_g), 0);
      for (int h = 0; h < k_g; ++h) {
        int best = -1;
        double best_corr = 0.0;
        for (int j = 0; j < k_g; ++j) {
          if (used[static_cast<std::size_t>(j)]) continue;
          const double corr = reference_scores.col(h).dot(scores.col(j));
          if (best < 0 || std::abs(corr) > std::abs(best_corr)) {
            best = j;
            best_corr = corr;
          }
        }
        used[static_cast<std::size_t>(best)] = 1;
        aligned_lam.col(h) =
            (best_corr < 0.0 ? -1.0 : 1.0) * lam0.col(best);
      }
      lam0 = std::move(aligned_lam);
    }
    cs.factors[mm].loadings = std::move(lam0);

    Eigen::VectorXd resid_var(p_m);
    for (int j = 0; j < p_m; ++j) {
      double explained = 0.0;
      for (int h = 0; h < rank; ++h) {
        const double v = svd.singularValues()[h] * svd.matrixV()(j, h);
        explained += v * v;
      }
      resid_var[j] = std::max(
          1e-3, (block.col(j).squaredNorm() - explained) / static_cast<double>(n));
    }
    cs.factors[mm].noise_variances = std::move(resid_var);
    cs.data[mm] = std::move(block);
  }
  RngStream latent_init = make_stream(cfg.seed, StreamFamily::kInitLatent);
  cs.shared.shared_factors = latent_init.normal_matrix(n, k_g);
  for (int m = 0; m < g; ++m) {
    cs.shared.idio_factors[static_cast<std::size_t>(m)] =
        latent_init.normal_matrix(n, k_g);
  }
  cs.shared.rho_grid = make_rho_grid(cfg.rho_grid_size);
  if (cs.couple) {
    RngStream rho_init = make_stream(cfg.seed, StreamFamily::kInitRho);
    cs.shared.rho = cs.shared.rho_grid[rho_init.uniform_index(
        cs.shared.rho_grid.size())];
  } else {
    cs.shared.rho = 1.0;
  }
  report.timings.init_seconds = elapsed_s(t0);

  // Fit: run the coupled sweeps.
  const int hw = std::max(1u, std::thread::hardware_concurrency());
  const int threads =
      std::min(g, cfg.threads > 0 ? cfg.threads : hw);
  report.threads_used = threads;

  SweepStreams streams = SweepStreams::create(cfg.seed, g);
  PosteriorAccumulator acc;
  const long expected = (cfg.sweep_count - cfg.burn_in) / cfg.thin;
  acc.init(cs, expected);

  if (threads > 1) {
    TaskPool pool(threads);
    run_parallel_workers(cs, streams, cfg, acc, pool, report.timings, hook);
  } else {
    SerialRunner serial;
    run_parallel_workers(cs, streams, cfg, acc, serial, report.timings, hook);
  }

  // Combine: posterior means back in original column order.
  t0 = Clock::now();
  CovEstimate est = combine(acc, part);
  if (cfg.materialize_sigma) est.materialized = materialize_covariance(est);
  report.timings.combine_seconds = elapsed_s(t0);

  report.retained_draws = acc.count;
  report.rho.mean = est.rho;
  if (!acc.rho_draws.empty()) {
    double sq = 0.0;
    for (double r : acc.rho_draws) sq += (r - est.rho) * (r - est.rho);
    report.rho.sd = std::sqrt(sq / static_cast<double>(acc.rho_draws.size()));
    report.rho.q025 = quantile(acc.rho_draws, 0.025);
    report.rho.q975 = quantile(acc.rho_draws, 0.975);
  }
  report.timings.total_seconds = elapsed_s(t_all);
  return {std::move(est), std::move(report)};
}

}  // namespace dcov
