#include "dcov/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcov/errors.hpp"

namespace dcov {

DataMatrix center_columns(const Eigen::MatrixXd& raw) {
  if (raw.rows() < 2) {
    throw ConfigError("center_columns: need at least 2 rows, got " +
                      std::to_string(raw.rows()));
  }
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      if (!std::isfinite(raw(i, j))) {
        throw ConfigError("center_columns: non-finite entry at row " +
                          std::to_string(i + 1) + ", column " +
                          std::to_string(j + 1));
      }
    }
  }
  DataMatrix out;
  out.column_means = raw.colwise().mean();
  out.values = raw.rowwise() - out.column_means.transpose();
  return out;
}

int Partition::total_columns() const {
  int total = 0;
  for (const auto& lst : column_index_lists)
    total += static_cast<int>(lst.size());
  return total;
}

Partition make_partition(int p, int g, std::uint64_t seed) {
  if (g < 1) throw ConfigError("make_partition: group count must be >= 1");
  if (g > p) {
    throw ConfigError("make_partition: group count " + std::to_string(g) +
                      " exceeds dimension " + std::to_string(p));
  }
  std::vector<int> order(static_cast<std::size_t>(p));
  std::iota(order.begin(), order.end(), 0);
  RngStream rng = make_stream(seed, StreamFamily::kPartition);
  std::shuffle(order.begin(), order.end(), rng.engine());

  Partition part;
  part.group_count = g;
  part.seed = seed;
  part.column_index_lists.resize(static_cast<std::size_t>(g));
  const int base = p / g;
  const int extra = p % g;  // first `extra` groups get one more column
  int pos = 0;
  for (int m = 0; m < g; ++m) {
    const int sz = base + (m < extra ? 1 : 0);
    auto& lst = part.column_index_lists[static_cast<std::size_t>(m)];
    lst.assign(order.begin() + pos, order.begin() + pos + sz);
    std::sort(lst.begin(), lst.end());
    pos += sz;
  }
  return part;
}

void MgpsHyperparams::validate() const {
  if (!(a2 > 1.0)) {
    throw ConfigError(
        "mgps hyperparameters: a2 must exceed 1 so column precisions are "
        "stochastically increasing (got a2 = " +
        std::to_string(a2) + ")");
  }
  if (nu <= 0.0 || a1 <= 0.0 || a_sigma <= 0.0 || b_sigma <= 0.0) {
    throw ConfigError("mgps hyperparameters: all values must be positive");
  }
}

void MgpsState::recompute_tau() {
  tau.resize(delta.size());
  double prod = 1.0;
  for (Eigen::Index h = 0; h < delta.size(); ++h) {
    prod *= delta[h];
    tau[h] = prod;
  }
}

std::vector<double> make_rho_grid(int size) {
  if (size < 2) throw ConfigError("rho grid needs at least 2 points");
  std::vector<double> grid(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i)
    grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / (size - 1);
  return grid;
}

}  // namespace dcov
