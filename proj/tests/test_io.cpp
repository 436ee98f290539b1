#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dcov/errors.hpp"
#include "dcov/io.hpp"
#include "test_support.hpp"

using namespace dcov;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "dcov_io_tests";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("config: values, sections, comments") {
  const auto kv = KeyValueConfig::parse_string(
      "# comment\n"
      "[model]\n"
      "g = 3\n"
      "name = hello world\n"
      "; another comment\n"
      "[sampler]\n"
      "rate = 2.5\n"
      "flag = true\n"
      "list = 1, 2, 3\n");
  CHECK(kv.require_int("g") == 3);
  CHECK(kv.require_string("name") == "hello world");
  CHECK(kv.require_double("rate") == 2.5);
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.require_int_list("list") == std::vector<long>{1, 2, 3});
  CHECK(kv.get_int("absent", 9) == 9);
}

TEST_CASE("config: missing keys are named, unknown keys are listed") {
  const auto kv = KeyValueConfig::parse_string("a = 1\nmystery = 2\n");
  CHECK_THROWS_WITH_AS(kv.require_int("n"), doctest::Contains("'n'"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(kv.validate_keys({"a"}), doctest::Contains("'mystery'"),
                       ConfigError);
}

TEST_CASE("config: duplicate keys and malformed lines are rejected") {
  CHECK_THROWS_AS(KeyValueConfig::parse_string("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse_string("just a line\n"), ConfigError);
  const auto kv = KeyValueConfig::parse_string("x = abc\n");
  CHECK_THROWS_AS(kv.require_int("x"), ConfigError);
}

TEST_CASE("run config from keys: defaults and required fields") {
  const auto kv = KeyValueConfig::parse_string("g = 2\nk = 4\nseed = 10\n");
  const RunConfig cfg = run_config_from_kv(kv);
  CHECK(cfg.g == 2);
  CHECK(cfg.k == 4);
  CHECK(cfg.seed == 10);
  CHECK(cfg.sweep_count == 10000);  // library default
  CHECK(cfg.burn_in == 4000);
  CHECK(cfg.thin == 10);
  const auto missing = KeyValueConfig::parse_string("g = 2\nk = 4\n");
  CHECK_THROWS_WITH_AS(run_config_from_kv(missing), doctest::Contains("'seed'"),
                       ConfigError);
}

TEST_CASE("csv matrix: write/read round trip is exact") {
  RngStream rng(1);
  const Eigen::MatrixXd m = 1e3 * rng.normal_matrix(7, 5);
  const fs::path file = scratch_dir() / "roundtrip.csv";
  atomic_write_file(file, [&](std::ostream& os) { write_csv_matrix(os, m); });
  const Eigen::MatrixXd back = read_csv_matrix(file);
  CHECK(back == m);
}

TEST_CASE("csv matrix: malformed input is rejected") {
  const fs::path file = scratch_dir() / "bad.csv";
  {
    std::ofstream os(file);
    os << "1,2\n3\n";
  }
  CHECK_THROWS_AS(read_csv_matrix(file), ConfigError);
  CHECK_THROWS_AS(read_csv_matrix(scratch_dir() / "nonexistent.csv"),
                  ConfigError);
}

TEST_CASE("estimate json: round trip preserves every field exactly") {
  RngStream rng(2);
  CovEstimate est = testsup::random_estimate({3, 2}, 2, 0.31, rng);
  RunConfig echo;
  echo.n = 50;
  echo.p = 5;
  echo.g = 2;
  echo.k = 4;
  echo.seed = 99;
  const fs::path file = scratch_dir() / "estimate.json";
  atomic_write_file(file, [&](std::ostream& os) {
    write_estimate_json(os, est, echo);
  });
  const CovEstimate back = read_estimate_json(file);
  CHECK(back.rho == est.rho);
  CHECK(back.noise_diag == est.noise_diag);
  for (int m = 0; m < 2; ++m) {
    CHECK(back.block_loadings[m] == est.block_loadings[m]);
    CHECK(back.column_indices[m] == est.column_indices[m]);
  }
  // The echo should carry the run seed but no execution-only settings.
  const auto doc = nlohmann::json::parse(slurp(file));
  CHECK(doc["config"]["seed"] == 99);
  CHECK_FALSE(doc["config"].contains("threads"));
}

TEST_CASE("estimate json: repeated writes are byte-identical") {
  RngStream rng(3);
  CovEstimate est = testsup::random_estimate({4}, 1, 0.0, rng);
  std::ostringstream a, b;
  write_estimate_json(a, est, RunConfig{});
  write_estimate_json(b, est, RunConfig{});
  CHECK(a.str() == b.str());
}

TEST_CASE("atomic write: failures leave no file or temporary behind") {
  const fs::path file = scratch_dir() / "never_created.json";
  fs::remove(file);
  CHECK_THROWS_AS(atomic_write_file(file,
                                    [](std::ostream&) {
                                      throw NumericError("mid-write failure");
                                    }),
                  NumericError);
  CHECK_FALSE(fs::exists(file));
  fs::path tmp = file;
  tmp += ".tmp";
  CHECK_FALSE(fs::exists(tmp));
}

TEST_CASE("atomic write: success leaves exactly the target") {
  const fs::path file = scratch_dir() / "created.txt";
  atomic_write_file(file, [](std::ostream& os) { os << "payload\n"; });
  CHECK(slurp(file) == "payload\n");
  fs::path tmp = file;
  tmp += ".tmp";
  CHECK_FALSE(fs::exists(tmp));
}

TEST_CASE("report json: structure and config echo") {
  RunReport report;
  report.config.g = 3;
  report.config.k = 6;
  report.config.seed = 123;
  report.retained_draws = 55;
  report.k_g = 2;
  report.timings.total_seconds = 1.5;
  report.rho.mean = 0.4;
  std::ostringstream os;
  const ErrorSummaries errs{0.01, 0.05, 0.2};
  const double opnorm = 1.25;
  write_report_json(os, report, &errs, &opnorm);
  const auto doc = nlohmann::json::parse(os.str());
  CHECK(doc["config"]["seed"] == 123);
  CHECK(doc["retained_draws"] == 55);
  CHECK(doc["timings_seconds"]["total"] == 1.5);
  CHECK(doc["rho"]["mean"] == 0.4);
  CHECK(doc["error_metrics"]["operator_norm_error"] == 1.25);
  CHECK(doc["error_metrics"]["mse"] == 0.01);
}

}  // TEST_SUITE
