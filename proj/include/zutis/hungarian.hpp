#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace zutis {

/// Dense rows x cols cost table; rows are proposals, columns ground truths.
using CostMatrix = Eigen::MatrixXd;

struct Assignment {
  /// (row, column) pairs sorted by row.
  std::vector<std::pair<int, int>> pairs;

  double total(const CostMatrix& costs) const;
};

/// Minimum-cost injective assignment of min(rows, cols) pairs.
///
/// Runs the O(n^2 m) shortest-augmenting-path Hungarian method with the
/// smaller side as the augmenting side. Scans and comparisons are in index
/// order with strict improvement, so equal-cost alternatives resolve toward
/// lower indices and the result is a pure function of the input (an all-equal
/// table yields the diagonal). Throws NumericError on non-finite costs.
Assignment hungarian_match(const CostMatrix& costs);

}  // namespace zutis
