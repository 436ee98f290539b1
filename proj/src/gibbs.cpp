#include "dcov/gibbs.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "dcov/errors.hpp"
#include "dcov/mgps.hpp"

namespace dcov {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_dims(const Eigen::MatrixXd& data, const FactorState& state) {
  if (data.cols() != state.loadings.rows() ||
      state.noise_variances.size() != state.loadings.rows()) {
    throw ConfigError("gibbs kernel: data and state dimensions disagree");
  }
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

WorkerSummary worker_summarize_for_shared(const Eigen::MatrixXd& data,
                                          const FactorState& state,
                                          const Eigen::MatrixXd& idio_factors,
                                          double rho,
                                          const std::vector<double>& rho_grid,
                                          long sweep_stamp) {
  check_dims(data, state);
  (void)rho_grid;  // the grid part of the summary is filled in the rho phase
  const Eigen::VectorXd inv_noise = state.noise_variances.cwiseInverse();
  const Eigen::MatrixXd weighted =
      inv_noise.asDiagonal() * state.loadings;  // Omega^-1 Lambda, p x k

  WorkerSummary s;
  s.sweep_stamp = sweep_stamp;
  s.precision_contribution.noalias() = state.loadings.transpose() * weighted;
  // Row i of mean_contributions is Lambda^T Omega^-1 Q_i with
  // Q_i = y_i - sqrt(1-rho) Lambda Z_i; the second term collapses to
  // Z * (Lambda^T Omega^-1 Lambda) because the matrix is symmetric.
  s.mean_contributions.noalias() = data * weighted;
  if (rho < 1.0) {
    s.mean_contributions.noalias() -=
        std::sqrt(1.0 - rho) * idio_factors * s.precision_contribution;
  }
  return s;
}

Eigen::MatrixXd sample_shared_factors(const std::vector<WorkerSummary>& summaries,
                                      double rho, RngStream& rng) {
  if (summaries.empty()) throw ConfigError("sample_shared_factors: no summaries");
  const Eigen::Index k = summaries[0].precision_contribution.rows();
  const Eigen::Index n = summaries[0].mean_contributions.rows();

  Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(k, k);
  Eigen::MatrixXd mean_sum = Eigen::MatrixXd::Zero(n, k);
  for (const auto& s : summaries) {
    if (s.precision_contribution.rows() != k ||
        s.mean_contributions.rows() != n) {
      throw ConfigError("sample_shared_factors: summaries disagree on shape");
    }
    precision.noalias() += rho * s.precision_contribution;
    mean_sum += s.mean_contributions;
  }

  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    throw NumericError(
        "sample_shared_factors: aggregate precision is not positive "
        "definite; a worker summary is corrupted");
  }
  // Row i of the result: A^-1 sqrt(rho) b_i + chol(A)^-T xi_i.
  Eigen::MatrixXd x =
      std::sqrt(rho) * llt.solve(mean_sum.transpose()).transpose();
  Eigen::MatrixXd noise = rng.normal_matrix(n, k);
  x.noalias() += llt.matrixU().solve(noise.transpose()).transpose();
  return x;
}

Eigen::MatrixXd sample_idiosyncratic_factors(const Eigen::MatrixXd& data,
                                             const FactorState& state,
                                             const Eigen::MatrixXd& shared_factors,
                                             double rho, RngStream& rng) {
  check_dims(data, state);
  const Eigen::Index n = data.rows();
  const Eigen::Index k = state.loadings.cols();

  const Eigen::VectorXd inv_noise = state.noise_variances.cwiseInverse();
  const Eigen::MatrixXd weighted = inv_noise.asDiagonal() * state.loadings;
  Eigen::MatrixXd info;  // Lambda^T Omega^-1 Lambda
  info.noalias() = state.loadings.transpose() * weighted;

  Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(k, k);
  precision.noalias() += (1.0 - rho) * info;
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    throw NumericError(
        "sample_idiosyncratic_factors: posterior precision is not positive "
        "definite");
  }

  // Lambda^T Omega^-1 R_i = (Lambda^T Omega^-1 y_i) - sqrt(rho) * info * X_i.
  Eigen::MatrixXd rhs = data * weighted;
  if (rho > 0.0) rhs.noalias() -= std::sqrt(rho) * shared_factors * info;
  Eigen::MatrixXd z =
      std::sqrt(1.0 - rho) * llt.solve(rhs.transpose()).transpose();
  Eigen::MatrixXd noise = rng.normal_matrix(n, k);
  z.noalias() += llt.matrixU().solve(noise.transpose()).transpose();
  return z;
}

Eigen::MatrixXd sample_loadings_rows(const Eigen::MatrixXd& data,
                                     const Eigen::MatrixXd& eta,
                                     const Eigen::VectorXd& sigma2,
                                     const MgpsState& mgps, RngStream& rng) {
  const Eigen::Index n = data.rows();
  const Eigen::Index p = data.cols();
  const Eigen::Index k = eta.cols();
  if (n < 2) throw ConfigError("sample_loadings_rows: need n >= 2 samples");
  if (eta.rows() != n || sigma2.size() != p || mgps.phi.rows() != p ||
      mgps.phi.cols() != k) {
    throw ConfigError("sample_loadings_rows: dimension mismatch");
  }

  const Eigen::MatrixXd gram = eta.transpose() * eta;   // shared across rows
  const Eigen::MatrixXd cross = data.transpose() * eta; // row j = y_j^T eta

  Eigen::MatrixXd loadings(p, k);
  Eigen::MatrixXd precision(k, k);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double inv_s2 = 1.0 / sigma2[j];
    precision = inv_s2 * gram;
    precision.diagonal() +=
        (mgps.phi.row(j).transpose().array() * mgps.tau.array()).matrix();
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
      throw NumericError("sample_loadings_rows: posterior precision for row " +
                         std::to_string(j + 1) + " is not positive definite");
    }
    Eigen::VectorXd row = llt.solve(inv_s2 * cross.row(j).transpose());
    row += llt.matrixU().solve(rng.normal_vector(k));
    loadings.row(j) = row.transpose();
  }
  return loadings;
}

Eigen::VectorXd sample_noise_variances(const Eigen::MatrixXd& data,
                                       const Eigen::MatrixXd& loadings,
                                       const Eigen::MatrixXd& eta,
                                       double a_sigma, double b_sigma,
                                       RngStream& rng) {
  const Eigen::Index n = data.rows();
  const Eigen::Index p = data.cols();
  if (loadings.rows() != p || eta.rows() != n ||
      eta.cols() != loadings.cols()) {
    throw ConfigError("sample_noise_variances: dimension mismatch");
  }
  Eigen::MatrixXd resid = data;
  resid.noalias() -= eta * loadings.transpose();
  const double shape = a_sigma + static_cast<double>(n) / 2.0;
  Eigen::VectorXd sigma2(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double rate = b_sigma + 0.5 * resid.col(j).squaredNorm();
    sigma2[j] = 1.0 / rng.gamma(shape, rate);
  }
  return sigma2;
}

Eigen::VectorXd worker_rho_loglik(const Eigen::MatrixXd& data,
                                  const Eigen::MatrixXd& loadings,
                                  const Eigen::VectorXd& sigma2,
                                  const Eigen::MatrixXd& shared_factors,
                                  const Eigen::MatrixXd& idio_factors,
                                  const std::vector<double>& rho_grid) {
  const Eigen::Index n = data.rows();
  const Eigen::Index p = data.cols();
  if (loadings.rows() != p || sigma2.size() != p ||
      shared_factors.rows() != n || idio_factors.rows() != n) {
    throw ConfigError("worker_rho_loglik: dimension mismatch");
  }
  const Eigen::VectorXd inv_noise = sigma2.cwiseInverse();
  const Eigen::MatrixXd weighted = inv_noise.asDiagonal() * loadings;
  const Eigen::MatrixXd info = loadings.transpose() * weighted;      // k x k
  const Eigen::MatrixXd proj = data * weighted;                      // n x k

  // ||y_i - Lambda eta_i||^2 weighted by Omega^-1 expands into six scalars;
  // each grid value then costs O(1).
  const double s_yy =
      (data.array().square().matrix() * inv_noise).sum();
  const double s_x = proj.cwiseProduct(shared_factors).sum();
  const double s_z = proj.cwiseProduct(idio_factors).sum();
  const Eigen::MatrixXd xm = shared_factors * info;
  const double q_xx = xm.cwiseProduct(shared_factors).sum();
  const double q_xz = xm.cwiseProduct(idio_factors).sum();
  const double q_zz =
      (idio_factors * info).cwiseProduct(idio_factors).sum();
  const double log_norm =
      -0.5 * static_cast<double>(n) *
      (static_cast<double>(p) * kLog2Pi + sigma2.array().log().sum());

  Eigen::VectorXd loglik(static_cast<Eigen::Index>(rho_grid.size()));
  for (std::size_t r = 0; r < rho_grid.size(); ++r) {
    const double a = std::sqrt(rho_grid[r]);
    const double b = std::sqrt(1.0 - rho_grid[r]);
    const double quad = s_yy - 2.0 * a * s_x - 2.0 * b * s_z +
                        a * a * q_xx + 2.0 * a * b * q_xz + b * b * q_zz;
    loglik[static_cast<Eigen::Index>(r)] = log_norm - 0.5 * quad;
  }
  return loglik;
}

double sample_rho(const Eigen::VectorXd& summed_loglik,
                  const std::vector<double>& rho_grid, RngStream& rng) {
  if (summed_loglik.size() != static_cast<Eigen::Index>(rho_grid.size())) {
    throw ConfigError("sample_rho: log likelihood and grid sizes differ");
  }
  double max_ll = -std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < summed_loglik.size(); ++r) {
    if (std::isnan(summed_loglik[r])) {
      throw NumericError("sample_rho: NaN log likelihood entry");
    }
    max_ll = std::max(max_ll, summed_loglik[r]);
  }
  if (!std::isfinite(max_ll)) {
    throw NumericError("sample_rho: all grid log likelihoods are -inf");
  }
  double total = 0.0;
  Eigen::VectorXd weights(summed_loglik.size());
  for (Eigen::Index r = 0; r < summed_loglik.size(); ++r) {
    weights[r] = std::exp(summed_loglik[r] - max_ll);
    total += weights[r];
  }
  const double u = rng.uniform() * total;
  double cum = 0.0;
  for (Eigen::Index r = 0; r < weights.size(); ++r) {
    cum += weights[r];
    if (u < cum) return rho_grid[static_cast<std::size_t>(r)];
  }
  return rho_grid.back();
}

void apply_scale_rebalance(CoupledState& cs,
                           const std::vector<WorkerSummary>& summaries,
                           RngStream& rng) {
  const int g = cs.group_count();
  const auto n = cs.samples();
  const auto k = cs.shared.shared_factors.cols();
  Eigen::Index p_total = 0;
  for (const auto& f : cs.factors) p_total += f.dim();
  const double scaled_up =
      static_cast<double>(n) * (cs.couple ? g + 1 : 1);
  const double exponent = scaled_up - static_cast<double>(p_total);

  for (Eigen::Index h = 0; h < k; ++h) {
    double s_lambda = 0.0;
    // The latent norms are read from the state itself, not the summaries:
    // the reallocation move may have rescaled Z after the local phase.
    double s_eta = cs.shared.shared_factors.col(h).squaredNorm();
    for (int m = 0; m < g; ++m) {
      s_lambda += summaries[static_cast<std::size_t>(m)].scale_loading_score[h];
      if (cs.couple) {
        s_eta += cs.shared.idio_factors[static_cast<std::size_t>(m)]
                     .col(h)
                     .squaredNorm();
      }
    }
    if (!(s_lambda > 0.0) || !(s_eta > 0.0)) continue;

    auto log_density = [&](double t) {
      return exponent * t - 0.5 * s_lambda * std::exp(-2.0 * t) -
             0.5 * s_eta * std::exp(2.0 * t);
    };
    double t = 0.0;
    double lp = log_density(0.0);
    for (int step = 0; step < 3; ++step) {
      const double prop = t + 0.4 * rng.normal();
      const double lp_prop = log_density(prop);
      if (std::log(rng.uniform() + 5e-324) < lp_prop - lp) {
        t = prop;
        lp = lp_prop;
      }
    }
    if (t == 0.0) continue;
    const double c = std::exp(t);
    cs.shared.shared_factors.col(h) *= c;
    for (int m = 0; m < g; ++m) {
      const auto mm = static_cast<std::size_t>(m);
      if (cs.couple) cs.shared.idio_factors[mm].col(h) *= c;
      cs.factors[mm].loadings.col(h) /= c;
    }
  }
}

void apply_rho_reallocation(CoupledState& cs, RngStream& rng) {
  if (!cs.couple) return;
  const double rho = cs.shared.rho;
  if (rho <= 0.0 || rho >= 1.0) return;
  const auto& grid = cs.shared.rho_grid;
  const int g = cs.group_count();
  const double nk = static_cast<double>(cs.shared.shared_factors.size());

  const double a_x = rho * cs.shared.shared_factors.squaredNorm();
  double z_norm2 = 0.0;
  for (const auto& z : cs.shared.idio_factors) z_norm2 += z.squaredNorm();
  const double a_z = (1.0 - rho) * z_norm2;

  // Orbit density over interior grid values r (log, up to a constant):
  //   -a_x/(2r) - a_z/(2(1-r)) - (nk/2) log r - (g nk/2) log(1-r)
  std::vector<double> lp;
  std::vector<double> values;
  for (double r : grid) {
    if (r <= 0.0 || r >= 1.0) continue;
    values.push_back(r);
    lp.push_back(-a_x / (2.0 * r) - a_z / (2.0 * (1.0 - r)) -
                 0.5 * nk * std::log(r) -
                 0.5 * nk * static_cast<double>(g) * std::log(1.0 - r));
  }
  if (values.empty()) return;
  const double max_lp = *std::max_element(lp.begin(), lp.end());
  double total = 0.0;
  for (double& l : lp) {
    l = std::exp(l - max_lp);
    total += l;
  }
  const double u = rng.uniform() * total;
  double cum = 0.0;
  std::size_t pick = values.size() - 1;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    cum += lp[i];
    if (u < cum) {
      pick = i;
      break;
    }
  }
  const double r = values[pick];
  if (r == rho) return;
  cs.shared.shared_factors *= std::sqrt(rho / r);
  const double z_scale = std::sqrt((1.0 - rho) / (1.0 - r));
  for (auto& z : cs.shared.idio_factors) z *= z_scale;
  cs.shared.rho = r;
}

void check_summary_stamps(const std::vector<WorkerSummary>& summaries,
                          long sweep_index) {
  for (const auto& s : summaries) {
    if (s.sweep_stamp != sweep_index) {
      throw NumericError("stale worker summary (stamp " +
                         std::to_string(s.sweep_stamp) + ", sweep " +
                         std::to_string(sweep_index) + ")");
    }
  }
}

// ---------------------------------------------------------------------------
// Coupled sweep
// ---------------------------------------------------------------------------

SweepStreams SweepStreams::create(std::uint64_t seed, int group_count) {
  SweepStreams s{
      {},
      make_stream(seed, StreamFamily::kSharedFactors),
      make_stream(seed, StreamFamily::kRho),
      make_stream(seed, StreamFamily::kScaleMove),
      make_stream(seed, StreamFamily::kRhoRealloc),
  };
  s.workers.reserve(static_cast<std::size_t>(group_count));
  for (int m = 0; m < group_count; ++m) {
    const auto w = static_cast<std::uint64_t>(m);
    s.workers.push_back(WorkerStreams{
        make_stream(seed, StreamFamily::kIdioFactors, w),
        make_stream(seed, StreamFamily::kLoadings, w),
        make_stream(seed, StreamFamily::kPhi, w),
        make_stream(seed, StreamFamily::kDelta, w),
        make_stream(seed, StreamFamily::kSigma2, w),
    });
  }
  return s;
}

namespace {

std::string state_snapshot(const CoupledState& cs, int m) {
  const auto& f = cs.factors[static_cast<std::size_t>(m)];
  std::ostringstream os;
  os << "group " << m + 1 << "/" << cs.group_count() << ": p_g=" << f.dim()
     << " k_g=" << f.rank() << " rho=" << cs.shared.rho
     << " sigma2 in [" << f.noise_variances.minCoeff() << ", "
     << f.noise_variances.maxCoeff() << "] tau in ["
     << f.mgps.tau.minCoeff() << ", " << f.mgps.tau.maxCoeff()
     << "] |loadings|max=" << f.loadings.cwiseAbs().maxCoeff();
  return os.str();
}

// Runs per-group tasks, capturing the first failure (lowest group id) and
// rethrowing it with sweep/group context after the batch completes.
void run_group_phase(CoupledState& cs, TaskRunner& runner, long sweep_index,
                     const std::function<void(int)>& body) {
  const int g = cs.group_count();
  std::vector<std::string> errors(static_cast<std::size_t>(g));
  std::vector<std::function<void()>> tasks;
  tasks.reserve(static_cast<std::size_t>(g));
  for (int m = 0; m < g; ++m) {
    tasks.push_back([&, m] {
      try {
        body(m);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(m)] = e.what();
      }
    });
  }
  runner.run(tasks);
  for (int m = 0; m < g; ++m) {
    if (!errors[static_cast<std::size_t>(m)].empty()) {
      throw NumericError("sweep " + std::to_string(sweep_index) + ", worker " +
                         std::to_string(m + 1) + ": " +
                         errors[static_cast<std::size_t>(m)] + " [" +
                         state_snapshot(cs, m) + "]");
    }
  }
}

}  // namespace

void full_sweep(CoupledState& cs, SweepStreams& streams, long sweep_index,
                TaskRunner& runner, SweepTimings* timings) {
  const int g = cs.group_count();
  if (g == 0 || streams.workers.size() != static_cast<std::size_t>(g)) {
    throw ConfigError("full_sweep: stream count does not match group count");
  }
  const double rho = cs.couple ? cs.shared.rho : 1.0;
  const auto& grid = cs.shared.rho_grid;

  std::vector<WorkerSummary> summaries(static_cast<std::size_t>(g));

  auto t0 = std::chrono::steady_clock::now();
  run_group_phase(cs, runner, sweep_index, [&](int m) {
    const auto mm = static_cast<std::size_t>(m);
    summaries[mm] = worker_summarize_for_shared(
        cs.data[mm], cs.factors[mm], cs.shared.idio_factors[mm], rho, grid,
        sweep_index);
  });
  if (timings) timings->worker_seconds += elapsed_s(t0);

  t0 = std::chrono::steady_clock::now();
  check_summary_stamps(summaries, sweep_index);
  cs.shared.shared_factors =
      sample_shared_factors(summaries, rho, streams.shared_factors);
  if (timings) timings->shared_seconds += elapsed_s(t0);

  t0 = std::chrono::steady_clock::now();
  run_group_phase(cs, runner, sweep_index, [&](int m) {
    const auto mm = static_cast<std::size_t>(m);
    auto& f = cs.factors[mm];
    auto& w = streams.workers[mm];
    const Eigen::MatrixXd& y = cs.data[mm];

    if (cs.couple) {
      cs.shared.idio_factors[mm] = sample_idiosyncratic_factors(
          y, f, cs.shared.shared_factors, rho, w.idio);
    }
    const Eigen::MatrixXd eta =
        cs.couple ? std::sqrt(rho) * cs.shared.shared_factors +
                        std::sqrt(1.0 - rho) * cs.shared.idio_factors[mm]
                  : cs.shared.shared_factors;

    f.loadings =
        sample_loadings_rows(y, eta, f.noise_variances, f.mgps, w.loadings);
    update_phi(f.mgps, f.loadings, w.phi);
    update_delta(f.mgps, f.loadings, w.delta);
    f.noise_variances = sample_noise_variances(
        y, f.loadings, eta, f.mgps.hyper.a_sigma, f.mgps.hyper.b_sigma,
        w.sigma2);

    if (cs.couple) {
      summaries[mm].rho_loglik = worker_rho_loglik(
          y, f.loadings, f.noise_variances, cs.shared.shared_factors,
          cs.shared.idio_factors[mm], grid);
    }
    summaries[mm].scale_loading_score =
        ((f.mgps.phi.array() * f.loadings.array().square()).colwise().sum() *
         f.mgps.tau.transpose().array())
            .transpose();
  });
  if (timings) timings->worker_seconds += elapsed_s(t0);

  t0 = std::chrono::steady_clock::now();
  if (cs.couple) {
    Eigen::VectorXd total = summaries[0].rho_loglik;
    for (int m = 1; m < g; ++m) {
      total += summaries[static_cast<std::size_t>(m)].rho_loglik;
    }
    cs.shared.rho = sample_rho(total, grid, streams.rho);
    apply_rho_reallocation(cs, streams.rho_realloc);
  }
  // The grid log likelihood is invariant under the rebalance, so the order
  // of these coordinator draws does not matter.
  apply_scale_rebalance(cs, summaries, streams.scale_move);
  if (timings) timings->shared_seconds += elapsed_s(t0);
}

void full_sweep(CoupledState& cs, SweepStreams& streams, long sweep_index) {
  SerialRunner runner;
  full_sweep(cs, streams, sweep_index, runner);
}

}  // namespace dcov
