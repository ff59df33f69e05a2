#include "zutis/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "zutis/error.hpp"

namespace zutis {

double Assignment::total(const CostMatrix& costs) const {
  double sum = 0.0;
  for (const auto& [r, c] : pairs) sum += costs(r, c);
  return sum;
}

namespace {

// Rows of `a` are the augmenting side; requires a.rows() <= a.cols().
// Returns, for every row, its assigned column.
std::vector<int> solve_rows(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

Assignment hungarian_match(const CostMatrix& costs) {
  if (!costs.allFinite()) throw NumericError("hungarian_match: non-finite cost");
  Assignment out;
  if (costs.rows() == 0 || costs.cols() == 0) return out;

  if (costs.rows() <= costs.cols()) {
    const auto cols = solve_rows(costs);
    for (int r = 0; r < static_cast<int>(cols.size()); ++r) out.pairs.emplace_back(r, cols[r]);
  } else {
    const Eigen::MatrixXd t = costs.transpose();
    const auto rows = solve_rows(t);
    for (int c = 0; c < static_cast<int>(rows.size()); ++c) out.pairs.emplace_back(rows[c], c);
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  return out;
}

}  // namespace zutis
