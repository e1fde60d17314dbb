#pragma once

#include <vector>

namespace fsnas::eval {

// Sample Pearson correlation. Degenerate-input error when n < 2 or either
// vector has zero variance.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

// Kendall tau-b: (C - D) / sqrt((C + D + Tx)(C + D + Ty)), computed via
// sort + merge-sort inversion counting (O(n log n)). The O(n^2) pair-count
// reference lives in the test suite. Degenerate-input error when n < 2 or
// either vector is entirely tied.
double kendall_tau(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace fsnas::eval
