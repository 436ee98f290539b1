#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace dcov {

// All randomness in the project flows through RngStream instances whose
// seeds are derived from a single run seed plus named tags. Each logical
// variable family owns its own stream, so results do not depend on thread
// count or scheduling order.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t t : tags) s = splitmix64(s ^ splitmix64(t));
  return s;
}

// Named stream families. A stream is identified by (run seed, family, worker).
enum class StreamFamily : std::uint64_t {
  kPartition = 1,
  kInitLoadings,
  kInitLatent,
  kInitRho,
  kSharedFactors,
  kIdioFactors,
  kLoadings,
  kPhi,
  kDelta,
  kSigma2,
  kRho,
  kDataGen,
  kExperiment,
  kScaleMove,
  kRhoRealloc,
};

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  double normal() {
    std::normal_distribution<double> d;
    return d(gen_);
  }

  // Shape-rate parameterization: mean = shape / rate. (std::gamma_distribution
  // takes shape-scale, so the rate is inverted here, in exactly one place.)
  double gamma(double shape, double rate) {
    std::gamma_distribution<double> d(shape, 1.0 / rate);
    double x = d(gen_);
    // Guard against underflow to zero; state entries must stay positive.
    return x > 0.0 ? x : 5e-324;
  }

  double uniform() {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(gen_);
  }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }

  std::size_t uniform_index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(gen_);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    std::normal_distribution<double> d;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = d(gen_);
    return v;
  }

  // Column-major fill order; fixed so draws are reproducible.
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> d;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = d(gen_);
    return m;
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline RngStream make_stream(std::uint64_t master, StreamFamily family,
                             std::uint64_t worker = 0) {
  return RngStream(
      derive_seed(master, {static_cast<std::uint64_t>(family), worker}));
}

}  // namespace dcov
