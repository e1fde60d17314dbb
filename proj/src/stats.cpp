#include "fsnas/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "fsnas/error.hpp"

namespace fsnas::eval {

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  check(xs.size() == ys.size(), ErrorCode::Dimension,
        "pearson inputs must have equal length");
  const std::size_t n = xs.size();
  check(n >= 2, ErrorCode::Degenerate, "pearson needs n >= 2");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  check(sxx > 0.0 && syy > 0.0, ErrorCode::Degenerate,
        "pearson undefined for a constant vector");
  return sxy / std::sqrt(sxx * syy);
}

namespace {

// inversions (strictly decreasing pairs) counted during merge sort
std::int64_t merge_count(std::vector<double>& v, std::vector<double>& tmp,
                         std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t count = merge_count(v, tmp, lo, mid) + merge_count(v, tmp, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      count += static_cast<std::int64_t>(mid - i);
      tmp[k++] = v[j++];
    } else {
      tmp[k++] = v[i++];
    }
  }
  while (i < mid) tmp[k++] = v[i++];
  while (j < hi) tmp[k++] = v[j++];
  std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo),
            tmp.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return count;
}

template <typename Key>
std::int64_t tie_pairs(std::vector<Key> keys) {
  std::sort(keys.begin(), keys.end());
  std::int64_t total = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i <= keys.size(); ++i) {
    if (i < keys.size() && keys[i] == keys[i - 1]) {
      ++run;
    } else {
      total += static_cast<std::int64_t>(run) * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

}  // namespace

double kendall_tau(const std::vector<double>& xs, const std::vector<double>& ys) {
  check(xs.size() == ys.size(), ErrorCode::Dimension,
        "kendall_tau inputs must have equal length");
  const std::size_t n = xs.size();
  check(n >= 2, ErrorCode::Degenerate, "kendall_tau needs n >= 2");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (xs[a] != xs[b]) return xs[a] < xs[b];
    return ys[a] < ys[b];
  });

  const std::int64_t n0 = static_cast<std::int64_t>(n) * (n - 1) / 2;
  const std::int64_t n1 = tie_pairs(xs);
  const std::int64_t n2 = tie_pairs(ys);
  std::vector<std::pair<double, double>> xy(n);
  for (std::size_t i = 0; i < n; ++i) xy[i] = {xs[i], ys[i]};
  const std::int64_t n3 = tie_pairs(std::move(xy));

  check(n0 > n1 && n0 > n2, ErrorCode::Degenerate,
        "kendall_tau undefined for an entirely tied vector");

  // y-sequence in x-order; within x-tie runs y ascends, so every counted
  // inversion is a strictly discordant pair
  std::vector<double> yseq(n), tmp(n);
  for (std::size_t i = 0; i < n; ++i) yseq[i] = ys[order[i]];
  const std::int64_t discordant = merge_count(yseq, tmp, 0, n);

  const std::int64_t con_minus_dis = n0 - n1 - n2 + n3 - 2 * discordant;
  return static_cast<double>(con_minus_dis) /
         std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

}  // namespace fsnas::eval
