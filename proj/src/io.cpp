#include "dcov/io.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dcov/errors.hpp"

namespace dcov {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) parts.push_back(trim(item));
  return parts;
}

double parse_double(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0' || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': '" + value +
                      "' is not a number");
  }
  return x;
}

long parse_long(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const long x = std::strtol(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0' || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': '" + value +
                      "' is not an integer");
  }
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// KeyValueConfig
// ---------------------------------------------------------------------------

KeyValueConfig KeyValueConfig::parse_string(const std::string& text,
                                            const std::string& origin) {
  KeyValueConfig kv;
  kv.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') continue;  // cosmetic section
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    }
    if (!kv.values_.emplace(key, value).second) {
      throw ConfigError(origin + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValueConfig KeyValueConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path.string());
}

bool KeyValueConfig::has(const std::string& key) const {
  return values_.count(key) > 0;
}

std::string KeyValueConfig::require_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
  }
  return it->second;
}

long KeyValueConfig::require_int(const std::string& key) const {
  return parse_long(key, require_string(key));
}

double KeyValueConfig::require_double(const std::string& key) const {
  return parse_double(key, require_string(key));
}

std::uint64_t KeyValueConfig::require_uint64(const std::string& key) const {
  const std::string v = require_string(key);
  errno = 0;
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0' || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': '" + v +
                      "' is not an unsigned integer");
  }
  return static_cast<std::uint64_t>(x);
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
  return has(key) ? require_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key,
                                  double fallback) const {
  return has(key) ? require_double(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = require_string(key);
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<long> KeyValueConfig::require_int_list(const std::string& key) const {
  std::vector<long> out;
  for (const auto& part : split(require_string(key), ',')) {
    if (!part.empty()) out.push_back(parse_long(key, part));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::vector<double> KeyValueConfig::require_double_list(
    const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split(require_string(key), ',')) {
    if (!part.empty()) out.push_back(parse_double(key, part));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

void KeyValueConfig::validate_keys(
    const std::vector<std::string>& allowed) const {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : values_) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      unknown.push_back(key);
    }
  }
  if (!unknown.empty()) {
    std::string msg = origin_ + ": unknown config keys:";
    for (const auto& k : unknown) msg += " '" + k + "'";
    throw ConfigError(msg);
  }
}

std::vector<std::string> fit_config_keys() {
  return {"g",        "k",          "k_g",      "seed",      "sweeps",
          "burn_in",  "thin",       "nu",       "a1",        "a2",
          "a_sigma",  "b_sigma",    "rho_grid_size",         "estimator",
          "materialize",            "threads"};
}

RunConfig run_config_from_kv(const KeyValueConfig& kv) {
  RunConfig cfg;
  cfg.g = static_cast<int>(kv.require_int("g"));
  cfg.k = static_cast<int>(kv.require_int("k"));
  cfg.seed = kv.require_uint64("seed");
  cfg.k_g_override = static_cast<int>(kv.get_int("k_g", 0));
  cfg.sweep_count = static_cast<int>(kv.get_int("sweeps", cfg.sweep_count));
  cfg.burn_in = static_cast<int>(kv.get_int("burn_in", cfg.burn_in));
  cfg.thin = static_cast<int>(kv.get_int("thin", cfg.thin));
  cfg.hyper.nu = kv.get_double("nu", cfg.hyper.nu);
  cfg.hyper.a1 = kv.get_double("a1", cfg.hyper.a1);
  cfg.hyper.a2 = kv.get_double("a2", cfg.hyper.a2);
  cfg.hyper.a_sigma = kv.get_double("a_sigma", cfg.hyper.a_sigma);
  cfg.hyper.b_sigma = kv.get_double("b_sigma", cfg.hyper.b_sigma);
  cfg.rho_grid_size =
      static_cast<int>(kv.get_int("rho_grid_size", cfg.rho_grid_size));
  cfg.estimator = kv.get_string("estimator", cfg.estimator);
  cfg.materialize_sigma = kv.get_bool("materialize", cfg.materialize_sigma);
  cfg.threads = static_cast<int>(kv.get_int("threads", cfg.threads));
  return cfg;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void atomic_write_file(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& writer) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  try {
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw ConfigError("cannot write " + tmp.string());
      writer(os);
      os.flush();
      if (!os) throw ConfigError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

void write_csv_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  char buf[40];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const int len = std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (j > 0) os.put(',');
      os.write(buf, len);
    }
    os.put('\n');
  }
}

Eigen::MatrixXd read_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open matrix file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<double> row;
    const char* ptr = t.c_str();
    while (*ptr != '\0') {
      char* end = nullptr;
      errno = 0;
      const double x = std::strtod(ptr, &end);
      if (end == ptr) {
        throw ConfigError(path.string() + ": malformed CSV row '" + t + "'");
      }
      row.push_back(x);
      ptr = end;
      while (*ptr == ',' || *ptr == ' ' || *ptr == '\t') ++ptr;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ConfigError(path.string() + ": ragged CSV rows");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(path.string() + ": empty matrix file");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

namespace {

json model_echo_json(const RunConfig& cfg) {
  // Only fields that determine the estimate's bytes; execution-only
  // settings (threads, materialize) are deliberately absent.
  return json{{"n", cfg.n},
              {"p", cfg.p},
              {"g", cfg.g},
              {"k", cfg.k},
              {"k_g", cfg.k_g()},
              {"sweeps", cfg.sweep_count},
              {"burn_in", cfg.burn_in},
              {"thin", cfg.thin},
              {"seed", cfg.seed},
              {"rho_grid_size", cfg.rho_grid_size},
              {"estimator", cfg.estimator},
              {"hyper",
               {{"nu", cfg.hyper.nu},
                {"a1", cfg.hyper.a1},
                {"a2", cfg.hyper.a2},
                {"a_sigma", cfg.hyper.a_sigma},
                {"b_sigma", cfg.hyper.b_sigma}}}};
}

}  // namespace

void write_estimate_json(std::ostream& os, const CovEstimate& est,
                         const RunConfig& model_echo) {
  est.validate();
  json groups = json::array();
  for (std::size_t m = 0; m < est.block_loadings.size(); ++m) {
    json cols = json::array();
    for (int c : est.column_indices[m]) cols.push_back(c + 1);
    json rows = json::array();
    const auto& block = est.block_loadings[m];
    for (Eigen::Index i = 0; i < block.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < block.cols(); ++j) row.push_back(block(i, j));
      rows.push_back(std::move(row));
    }
    groups.push_back(json{{"columns", std::move(cols)},
                          {"loadings", std::move(rows)}});
  }
  json noise = json::array();
  for (Eigen::Index i = 0; i < est.noise_diag.size(); ++i)
    noise.push_back(est.noise_diag[i]);

  const json doc{{"format", "dcov-covariance-factored"},
                 {"version", 1},
                 {"g", est.group_count()},
                 {"k_g", est.factors_per_group()},
                 {"rho", est.rho},
                 {"groups", std::move(groups)},
                 {"noise_diag", std::move(noise)},
                 {"config", model_echo_json(model_echo)}};
  os << doc.dump(1) << '\n';
}

CovEstimate read_estimate_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open estimate file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "dcov-covariance-factored") {
    throw ConfigError(path.string() + ": not a factored covariance file");
  }
  CovEstimate est;
  est.rho = doc.at("rho").get<double>();
  for (const auto& grp : doc.at("groups")) {
    std::vector<int> cols;
    for (const auto& c : grp.at("columns")) cols.push_back(c.get<int>() - 1);
    const auto& rows = grp.at("loadings");
    const auto nr = static_cast<Eigen::Index>(rows.size());
    const auto nc = nr > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
    Eigen::MatrixXd block(nr, nc);
    for (Eigen::Index i = 0; i < nr; ++i)
      for (Eigen::Index j = 0; j < nc; ++j)
        block(i, j) = rows[static_cast<std::size_t>(i)]
                          [static_cast<std::size_t>(j)].get<double>();
    est.column_indices.push_back(std::move(cols));
    est.block_loadings.push_back(std::move(block));
  }
  const auto& noise = doc.at("noise_diag");
  est.noise_diag.resize(static_cast<Eigen::Index>(noise.size()));
  for (Eigen::Index i = 0; i < est.noise_diag.size(); ++i)
    est.noise_diag[i] = noise[static_cast<std::size_t>(i)].get<double>();
  est.validate();
  return est;
}

void write_report_json(std::ostream& os, const RunReport& report,
                       const ErrorSummaries* errors,
                       const double* opnorm_error) {
  const auto& cfg = report.config;
  json doc{{"config", model_echo_json(cfg)},
           {"k_g", report.k_g},
           {"retained_draws", report.retained_draws},
           {"threads_used", report.threads_used},
           {"timings_seconds",
            {{"partition", report.timings.partition_seconds},
             {"init", report.timings.init_seconds},
             {"worker", report.timings.worker_seconds},
             {"shared", report.timings.shared_seconds},
             {"accumulate", report.timings.accumulate_seconds},
             {"combine", report.timings.combine_seconds},
             {"total", report.timings.total_seconds}}},
           {"rho",
            {{"mean", report.rho.mean},
             {"sd", report.rho.sd},
             {"q025", report.rho.q025},
             {"q975", report.rho.q975}}}};
  doc["config"]["threads"] = cfg.threads;
  doc["config"]["materialize"] = cfg.materialize_sigma;
  if (errors != nullptr && opnorm_error != nullptr) {
    doc["error_metrics"] = {{"operator_norm_error", *opnorm_error},
                            {"mse", errors->mse},
                            {"avg_abs_bias", errors->avg_abs_bias},
                            {"max_abs_bias", errors->max_abs_bias}};
  }
  os << doc.dump(1) << '\n';
}

void write_trace_concentration_csv(std::ostream& os,
                                   const TraceConcentrationResult& result,
                                   const std::string& config_echo) {
  if (!config_echo.empty()) os << "# " << config_echo << '\n';
  os << "epsilon,probability,mc_stderr\n";
  char buf[120];
  for (std::size_t i = 0; i < result.epsilon.size(); ++i) {
    const int len =
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n",
                      result.epsilon[i], result.probability[i],
                      result.mc_stderr[i]);
    os.write(buf, len);
  }
}

void write_eigenvalue_csv(std::ostream& os, const std::vector<double>& values,
                          const std::string& config_echo) {
  if (!config_echo.empty()) os << "# " << config_echo << '\n';
  os << "index,value\n";
  char buf[48];
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int len =
        std::snprintf(buf, sizeof buf, "%zu,%.10g\n", i + 1, values[i]);
    os.write(buf, len);
  }
}

}  // namespace dcov
