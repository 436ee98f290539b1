#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "dcov/cov_estimate.hpp"
#include "dcov/engine.hpp"
#include "dcov/mgps.hpp"
#include "dcov/metrics.hpp"

namespace dcov {

// ---------------------------------------------------------------------------
// Flat key-value configuration files
// ---------------------------------------------------------------------------
// Format: `key = value` lines, `#` or `;` comments, optional [section]
// headers that are purely cosmetic. Keys are global and must be unique.

class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::filesystem::path& path);
  static KeyValueConfig parse_string(const std::string& text,
                                     const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string require_string(const std::string& key) const;
  long require_int(const std::string& key) const;
  double require_double(const std::string& key) const;
  std::uint64_t require_uint64(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<long> require_int_list(const std::string& key) const;
  std::vector<double> require_double_list(const std::string& key) const;

  // Rejects the config if it holds keys outside `allowed`, listing them.
  void validate_keys(const std::vector<std::string>& allowed) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
};

// Builds a sampler configuration from config keys, applying defaults for
// anything absent. Required: g, k, seed.
RunConfig run_config_from_kv(const KeyValueConfig& kv);

// Allowed fit config keys (shared between `fit` and `bench`).
std::vector<std::string> fit_config_keys();

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

// Writes via a temporary file in the same directory followed by an atomic
// rename, so an interrupted run never leaves a partial file behind.
void atomic_write_file(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& writer);

// Dense matrices as header-free row-major CSV with round-trip precision.
void write_csv_matrix(std::ostream& os, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_csv_matrix(const std::filesystem::path& path);

// Canonical factored persistence of a covariance estimate. `model_echo`
// carries every configuration field that determines the estimate (threads
// and other execution-only settings are excluded so reruns are
// byte-identical). Column ids are written 1-based.
void write_estimate_json(std::ostream& os, const CovEstimate& est,
                         const RunConfig& model_echo);
CovEstimate read_estimate_json(const std::filesystem::path& path);

void write_report_json(std::ostream& os, const RunReport& report,
                       const ErrorSummaries* errors = nullptr,
                       const double* opnorm_error = nullptr);

void write_trace_concentration_csv(std::ostream& os,
                                   const TraceConcentrationResult& result,
                                   const std::string& config_echo);

void write_eigenvalue_csv(std::ostream& os, const std::vector<double>& values,
                          const std::string& config_echo);

}  // namespace dcov
