#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "dcov/engine.hpp"
#include "dcov/errors.hpp"
#include "dcov/io.hpp"
#include "dcov/metrics.hpp"
#include "dcov/mgps.hpp"
#include "dcov/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitBudget = 4;

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const std::string& config_path, const std::string& out_prefix) {
  auto kv = dcov::KeyValueConfig::parse_file(config_path);
  kv.validate_keys({"p", "k", "n", "seed", "s", "sigma2"});
  const int p = static_cast<int>(kv.require_int("p"));
  const int k = static_cast<int>(kv.require_int("k"));
  const int n = static_cast<int>(kv.require_int("n"));
  const std::uint64_t seed = kv.require_uint64("seed");
  const int s = static_cast<int>(kv.get_int("s", (p + 19) / 20));
  const double sigma2 = kv.get_double("sigma2", 0.5);

  const dcov::SyntheticDataset ds = dcov::generate(p, k, s, n, sigma2, seed);

  const fs::path data_file = out_prefix + "_data.csv";
  const fs::path loadings_file = out_prefix + "_loadings.csv";
  const fs::path sigma_file = out_prefix + "_sigma.csv";
  const fs::path manifest_file = out_prefix + "_manifest.json";

  dcov::atomic_write_file(data_file, [&](std::ostream& os) {
    dcov::write_csv_matrix(os, ds.data.values);
  });
  dcov::atomic_write_file(loadings_file, [&](std::ostream& os) {
    dcov::write_csv_matrix(os, ds.true_loadings);
  });
  dcov::atomic_write_file(sigma_file, [&](std::ostream& os) {
    dcov::write_csv_matrix(os, ds.true_sigma);
  });
  dcov::atomic_write_file(manifest_file, [&](std::ostream& os) {
    const json doc{{"kind", "dcov-synthetic-manifest"},
                   {"p", p},
                   {"k", k},
                   {"n", n},
                   {"s", s},
                   {"sigma2", sigma2},
                   {"seed", seed},
                   {"files",
                    {{"data", data_file.string()},
                     {"loadings", loadings_file.string()},
                     {"sigma", sigma_file.string()}}}};
    os << doc.dump(1) << '\n';
  });
  std::cout << "simulate: wrote " << data_file << " (" << n << "x" << p
            << "), truth, and manifest (s=" << s << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

int cmd_fit(const std::string& config_path, const std::string& data_path,
            const std::string& truth_path, const std::string& out_prefix,
            int groups_override, int threads_override) {
  auto kv = dcov::KeyValueConfig::parse_file(config_path);
  kv.validate_keys(dcov::fit_config_keys());
  dcov::RunConfig cfg = dcov::run_config_from_kv(kv);
  if (groups_override > 0) cfg.g = groups_override;
  if (threads_override > 0) cfg.threads = threads_override;

  const Eigen::MatrixXd raw = dcov::read_csv_matrix(data_path);
  const dcov::DataMatrix data = dcov::center_columns(raw);
  cfg.n = static_cast<int>(data.rows());
  cfg.p = static_cast<int>(data.cols());

  auto [est, report] = dcov::run_estimation(data, cfg);

  const fs::path estimate_file = out_prefix + "_estimate.json";
  dcov::atomic_write_file(estimate_file, [&](std::ostream& os) {
    dcov::write_estimate_json(os, est, cfg);
  });
  if (cfg.materialize_sigma && est.materialized.has_value()) {
    dcov::atomic_write_file(out_prefix + "_sigma_dense.csv",
                            [&](std::ostream& os) {
                              dcov::write_csv_matrix(os, *est.materialized);
                            });
  }

  dcov::ErrorSummaries errors;
  double opnorm = 0.0;
  bool have_truth = false;
  if (!truth_path.empty()) {
    const Eigen::MatrixXd truth = dcov::read_csv_matrix(truth_path);
    const Eigen::MatrixXd dense = est.materialized.has_value()
                                      ? *est.materialized
                                      : dcov::materialize_covariance(est);
    opnorm = dcov::operator_norm_error(dense, truth);
    errors = dcov::error_summaries(dense, truth);
    have_truth = true;
  }
  dcov::atomic_write_file(out_prefix + "_report.json", [&](std::ostream& os) {
    dcov::write_report_json(os, report, have_truth ? &errors : nullptr,
                            have_truth ? &opnorm : nullptr);
  });

  std::cout << "fit: g=" << cfg.g << " k_g=" << report.k_g << " retained="
            << report.retained_draws << " rho_mean=" << report.rho.mean
            << " total_s=" << report.timings.total_seconds << "\n";
  if (have_truth) std::cout << "fit: operator norm error = " << opnorm << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

int cmd_evaluate(const std::string& estimate_path, const std::string& truth_path,
                 const std::string& out_prefix) {
  const Eigen::MatrixXd truth = dcov::read_csv_matrix(truth_path);

  Eigen::MatrixXd dense;
  std::vector<double> eigenvalues;
  int g = 0;  // 0 = unknown (dense estimate input)
  if (fs::path(estimate_path).extension() == ".json") {
    const dcov::CovEstimate est = dcov::read_estimate_json(estimate_path);
    g = est.group_count();
    dense = dcov::materialize_covariance(est);
    const int count = std::min(100, est.total_dim());
    eigenvalues = dcov::leading_eigenvalues(est, count);
  } else {
    dense = dcov::read_csv_matrix(estimate_path);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
    const int count = std::min<Eigen::Index>(100, dense.rows());
    for (int i = 0; i < count; ++i) {
      eigenvalues.push_back(es.eigenvalues()[dense.rows() - 1 - i]);
    }
  }

  const double opnorm = dcov::operator_norm_error(dense, truth);
  const dcov::ErrorSummaries errors = dcov::error_summaries(dense, truth);

  dcov::atomic_write_file(out_prefix + "_metrics.json", [&](std::ostream& os) {
    const json doc{{"g", g},
                   {"operator_norm_error", opnorm},
                   {"mse", errors.mse},
                   {"avg_abs_bias", errors.avg_abs_bias},
                   {"max_abs_bias", errors.max_abs_bias}};
    os << doc.dump(1) << '\n';
  });
  dcov::atomic_write_file(out_prefix + "_opnorm_by_groups.csv",
                          [&](std::ostream& os) {
                            os << "g,log_operator_norm_error\n";
                            os << g << ',' << fmt(std::log(opnorm)) << '\n';
                          });
  dcov::atomic_write_file(out_prefix + "_eigenvalues.csv", [&](std::ostream& os) {
    dcov::write_eigenvalue_csv(os, eigenvalues, "");
  });

  std::cout << "evaluate: operator norm error = " << opnorm
            << ", mse = " << errors.mse << ", max abs bias = "
            << errors.max_abs_bias << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct CellStats {
  std::vector<double> time_s, opnorm, mse, avg_bias, max_bias;
};

std::pair<double, double> mean_se(const std::vector<double>& xs) {
  const auto n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, 0.0};
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

int cmd_bench(const std::string& config_path, const std::string& out_path) {
  auto kv = dcov::KeyValueConfig::parse_file(config_path);
  auto allowed = dcov::fit_config_keys();
  for (const char* extra :
       {"p_values", "k_values", "n_values", "g_values", "replicates", "s",
        "sigma2", "time_budget_seconds", "memory_budget_mb"}) {
    allowed.push_back(extra);
  }
  // g/k come from the grid lists here.
  allowed.erase(std::remove(allowed.begin(), allowed.end(), std::string("g")),
                allowed.end());
  allowed.erase(std::remove(allowed.begin(), allowed.end(), std::string("k")),
                allowed.end());
  kv.validate_keys(allowed);

  const std::vector<long> p_values = kv.require_int_list("p_values");
  const std::vector<long> k_values = kv.require_int_list("k_values");
  if (p_values.size() != k_values.size()) {
    throw dcov::ConfigError(
        "bench: p_values and k_values must pair up (equal lengths)");
  }
  const std::vector<long> n_values = kv.require_int_list("n_values");
  const std::vector<long> g_values = kv.require_int_list("g_values");
  const int replicates = static_cast<int>(kv.require_int("replicates"));
  const std::uint64_t seed = kv.require_uint64("seed");
  const double sigma2 = kv.get_double("sigma2", 0.5);
  const double time_budget = kv.get_double("time_budget_seconds", 600.0);
  const double memory_budget_bytes =
      kv.get_double("memory_budget_mb", 4096.0) * 1024.0 * 1024.0;
  if (replicates < 1) throw dcov::ConfigError("bench: replicates must be >= 1");

  bool any_fail = false;
  std::ostringstream table;
  table << "p,k,n,g,s,replicates,status,time_sec_mean,time_sec_se,"
           "opnorm_mean,opnorm_se,mse_mean,mse_se,avg_abs_bias_mean,"
           "avg_abs_bias_se,max_abs_bias_mean,max_abs_bias_se\n";

  for (std::size_t pk = 0; pk < p_values.size(); ++pk) {
    const int p = static_cast<int>(p_values[pk]);
    const int k = static_cast<int>(k_values[pk]);
    const int s = static_cast<int>(kv.get_int("s", (p + 19) / 20));
    for (long n : n_values) {
      // One dataset per replicate, shared across all g for comparability.
      for (long g : g_values) {
        dcov::RunConfig base;
        base.k = k;
        base.g = static_cast<int>(g);
        base.seed = seed;
        base.sweep_count =
            static_cast<int>(kv.get_int("sweeps", base.sweep_count));
        base.burn_in = static_cast<int>(kv.get_int("burn_in", base.burn_in));
        base.thin = static_cast<int>(kv.get_int("thin", base.thin));
        base.hyper.nu = kv.get_double("nu", base.hyper.nu);
        base.hyper.a1 = kv.get_double("a1", base.hyper.a1);
        base.hyper.a2 = kv.get_double("a2", base.hyper.a2);
        base.hyper.a_sigma = kv.get_double("a_sigma", base.hyper.a_sigma);
        base.hyper.b_sigma = kv.get_double("b_sigma", base.hyper.b_sigma);
        base.rho_grid_size = static_cast<int>(
            kv.get_int("rho_grid_size", base.rho_grid_size));
        base.threads = static_cast<int>(kv.get_int("threads", 0));

        const int k_g = base.k_g();
        const double predicted_bytes =
            8.0 * (2.0 * static_cast<double>(n) * p + 4.0 * p * k_g +
                   static_cast<double>(n) * k_g * (g + 2.0));

        std::string status = "ok";
        CellStats stats;
        if (predicted_bytes > memory_budget_bytes) {
          status = "Fail";
        } else {
          for (int r = 0; r < replicates; ++r) {
            const std::uint64_t rep_seed = seed + static_cast<std::uint64_t>(r);
            const dcov::SyntheticDataset ds =
                dcov::generate(p, k, s, static_cast<int>(n), sigma2, rep_seed);
            dcov::RunConfig cfg = base;
            cfg.seed = rep_seed;
            cfg.n = static_cast<int>(n);
            cfg.p = p;
            auto [est, report] = dcov::run_estimation(ds.data, cfg);
            const Eigen::MatrixXd dense = dcov::materialize_covariance(est);
            stats.time_s.push_back(report.timings.total_seconds);
            stats.opnorm.push_back(
                dcov::operator_norm_error(dense, ds.true_sigma));
            const auto errs = dcov::error_summaries(dense, ds.true_sigma);
            stats.mse.push_back(errs.mse);
            stats.avg_bias.push_back(errs.avg_abs_bias);
            stats.max_bias.push_back(errs.max_abs_bias);
            if (report.timings.total_seconds > time_budget) {
              status = "Fail";  // over budget: flag and move to the next cell
              break;
            }
          }
        }
        table << p << ',' << k << ',' << n << ',' << g << ',' << s << ','
              << replicates << ',' << status;
        if (status == "ok") {
          for (const auto* v : {&stats.time_s, &stats.opnorm, &stats.mse,
                                &stats.avg_bias, &stats.max_bias}) {
            const auto [m, se] = mean_se(*v);
            table << ',' << fmt(m) << ',' << fmt(se);
          }
        } else {
          any_fail = true;
          for (int c = 0; c < 10; ++c) table << ",Fail";
        }
        table << '\n';
        std::cout << "bench: p=" << p << " k=" << k << " n=" << n << " g=" << g
                  << " -> " << status << "\n";
      }
    }
  }

  dcov::atomic_write_file(out_path, [&](std::ostream& os) {
    os << "# dcov bench seed=" << seed << " config=" << config_path << '\n';
    os << table.str();
  });
  std::cout << "bench: wrote " << out_path << "\n";
  return any_fail ? kExitBudget : kExitOk;
}

// ---------------------------------------------------------------------------
// trace-experiment
// ---------------------------------------------------------------------------

int cmd_trace_experiment(const std::string& config_path,
                         const std::string& out_path) {
  auto kv = dcov::KeyValueConfig::parse_file(config_path);
  kv.validate_keys({"p", "k", "g", "s", "n_draws", "seed", "epsilons", "nu",
                    "a1", "a2", "a_sigma", "b_sigma"});
  const int p = static_cast<int>(kv.require_int("p"));
  const int k = static_cast<int>(kv.require_int("k"));
  const int g = static_cast<int>(kv.require_int("g"));
  const int s = static_cast<int>(kv.require_int("s"));
  const int n_draws = static_cast<int>(kv.get_int("n_draws", 20000));
  const std::uint64_t seed = kv.require_uint64("seed");
  const std::vector<double> epsilons = kv.require_double_list("epsilons");
  dcov::MgpsHyperparams hyper;
  hyper.nu = kv.get_double("nu", hyper.nu);
  hyper.a1 = kv.get_double("a1", hyper.a1);
  hyper.a2 = kv.get_double("a2", hyper.a2);
  hyper.a_sigma = kv.get_double("a_sigma", hyper.a_sigma);
  hyper.b_sigma = kv.get_double("b_sigma", hyper.b_sigma);

  const auto result = dcov::trace_concentration_experiment(
      p, k, g, s, hyper, epsilons, n_draws, seed);

  std::ostringstream echo;
  echo << "dcov trace-experiment p=" << p << " k=" << k << " g=" << g
       << " s=" << s << " n_draws=" << n_draws << " seed=" << seed
       << " target_trace=" << result.target_trace;
  dcov::atomic_write_file(out_path, [&](std::ostream& os) {
    dcov::write_trace_concentration_csv(os, result, echo.str());
  });
  std::cout << "trace-experiment: wrote " << out_path << " ("
            << epsilons.size() << " epsilon values)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// adjacency
// ---------------------------------------------------------------------------

int cmd_adjacency(const std::string& estimate_path, double threshold,
                  const std::string& out_path) {
  const dcov::CovEstimate est = dcov::read_estimate_json(estimate_path);
  long edges = 0;
  dcov::atomic_write_file(out_path, [&](std::ostream& os) {
    os << "# dcov adjacency threshold=" << fmt(threshold) << " estimate="
       << estimate_path << '\n';
    os << "i,j,correlation\n";
    edges = dcov::threshold_adjacency(est, threshold, os);
  });
  std::cout << "adjacency: " << edges << " edges at |corr| >= " << threshold
            << " -> " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "dcov: distributed Bayesian covariance estimation with coupled sparse "
      "factor models"};
  app.require_subcommand(1);

  std::string config, data, truth, out, estimate;
  int groups = 0, threads = 0;
  double threshold = 0.0;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic benchmark dataset");
  sim->add_option("--config", config, "Key-value config file")->required();
  sim->add_option("--out", out, "Output file prefix")->default_val("synth");

  auto* fit = app.add_subcommand("fit", "Estimate a covariance matrix from data");
  fit->add_option("--config", config, "Key-value config file")->required();
  fit->add_option("--data", data, "Data CSV (n rows x p columns)")->required();
  fit->add_option("--truth", truth, "Optional true covariance CSV for error metrics");
  fit->add_option("--out", out, "Output file prefix")->default_val("fit");
  fit->add_option("--groups", groups, "Override the group count g");
  fit->add_option("--threads", threads, "Override the worker thread count");

  auto* eval = app.add_subcommand("evaluate", "Compare an estimate against the truth");
  eval->add_option("--estimate", estimate, "Estimate file (.json factored or .csv dense)")
      ->required();
  eval->add_option("--truth", truth, "True covariance CSV")->required();
  eval->add_option("--out", out, "Output file prefix")->default_val("evaluate");

  auto* bench = app.add_subcommand("bench", "Run a (p,k,n,g) benchmark grid");
  bench->add_option("--config", config, "Grid config file")->required();
  bench->add_option("--out", out, "Output CSV path")->default_val("bench.csv");

  auto* trace = app.add_subcommand("trace-experiment",
                                   "Prior trace-concentration experiment");
  trace->add_option("--config", config, "Experiment config file")->required();
  trace->add_option("--out", out, "Output CSV path")->default_val("trace.csv");

  auto* adj = app.add_subcommand("adjacency",
                                 "Threshold the implied correlation matrix");
  adj->add_option("--estimate", estimate, "Factored estimate JSON")->required();
  adj->add_option("--threshold", threshold, "Correlation threshold")->required();
  adj->add_option("--out", out, "Edge list CSV path")->default_val("edges.csv");

  try {
    app.parse(argc, argv);
    if (sim->parsed()) return cmd_simulate(config, out);
    if (fit->parsed()) return cmd_fit(config, data, truth, out, groups, threads);
    if (eval->parsed()) return cmd_evaluate(estimate, truth, out);
    if (bench->parsed()) return cmd_bench(config, out);
    if (trace->parsed()) return cmd_trace_experiment(config, out);
    if (adj->parsed()) return cmd_adjacency(estimate, threshold, out);
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const dcov::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dcov::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
