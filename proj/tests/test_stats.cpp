#include <doctest.h>

#include <cmath>

#include "fsnas/error.hpp"
#include "fsnas/rng.hpp"
#include "fsnas/stats.hpp"

using namespace fsnas;
using namespace fsnas::eval;

namespace {

// O(n^2) pair-counting reference for tau-b.
double brute_force_tau(const std::vector<double>& xs,
                       const std::vector<double>& ys) {
  std::int64_t con = 0, dis = 0, tx_only = 0, ty_only = 0;
  const std::size_t n = xs.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = xs[i] - xs[j], dy = ys[i] - ys[j];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0)
        ++tx_only;
      else if (dy == 0.0)
        ++ty_only;
      else if ((dx > 0.0) == (dy > 0.0))
        ++con;
      else
        ++dis;
    }
  return static_cast<double>(con - dis) /
         std::sqrt(static_cast<double>(con + dis + tx_only) *
                   static_cast<double>(con + dis + ty_only));
}

// Raw sum formula, the independent route for pearson.
double direct_pearson(const std::vector<double>& xs,
                      const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    syy += ys[i] * ys[i];
    sxy += xs[i] * ys[i];
  }
  return (n * sxy - sx * sy) /
         std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

}  // namespace

TEST_CASE("pearson on exact linear relations") {
  std::vector<double> xs = {0.1, 0.4, 0.2, 0.9, 0.5};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(2.0 * x + 3.0);
  CHECK(pearson(xs, ys) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> neg;
  for (double x : xs) neg.push_back(-x);
  CHECK(pearson(xs, neg) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("pearson matches the direct-sum formula") {
  std::vector<double> xs = {1, 2, 3, 4};
  std::vector<double> ys = {1, 3, 2, 4};
  CHECK(std::abs(pearson(xs, ys) - direct_pearson(xs, ys)) <= 1e-12);

  Rng rng(50);
  for (int it = 0; it < 200; ++it) {
    const int n = 2 + static_cast<int>(rng.randint(60));
    std::vector<double> a, b;
    for (int i = 0; i < n; ++i) {
      a.push_back(rng.uniform(0.0, 1.0));
      b.push_back(rng.uniform(0.0, 1.0));
    }
    double p;
    try {
      p = pearson(a, b);
    } catch (const Error&) {
      continue;  // degenerate draw
    }
    CHECK(std::abs(p - direct_pearson(a, b)) <= 1e-12);
    CHECK(p >= -1.0 - 1e-12);
    CHECK(p <= 1.0 + 1e-12);
  }
}

TEST_CASE("pearson is invariant under positive affine maps") {
  Rng rng(51);
  std::vector<double> xs, ys;
  for (int i = 0; i < 40; ++i) {
    xs.push_back(rng.uniform(0.0, 1.0));
    ys.push_back(rng.uniform(0.0, 1.0));
  }
  const double base = pearson(xs, ys);
  for (int it = 0; it < 20; ++it) {
    const double a = rng.uniform(0.1, 5.0), b = rng.uniform(-3.0, 3.0);
    std::vector<double> tx;
    for (double x : xs) tx.push_back(a * x + b);
    CHECK(std::abs(pearson(tx, ys) - base) <= 1e-12);
  }
}

TEST_CASE("pearson degenerate inputs") {
  CHECK_THROWS_AS(pearson({1.0}, {2.0}), Error);
  CHECK_THROWS_AS(pearson({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), Error);
  CHECK_THROWS_AS(pearson({1.0, 2.0, 3.0}, {5.0, 5.0, 5.0}), Error);
  try {
    pearson({1.0, 1.0}, {1.0, 1.0});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Degenerate);
  }
}

TEST_CASE("kendall tau on exact orderings") {
  std::vector<double> xs = {0.1, 0.2, 0.3, 0.4, 0.5};
  CHECK(kendall_tau(xs, xs) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> rev(xs.rbegin(), xs.rend());
  CHECK(kendall_tau(xs, rev) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("kendall tau equals brute-force pair counting exactly") {
  Rng rng(52);
  for (int it = 0; it < 1000; ++it) {
    const int n = 2 + static_cast<int>(rng.randint(199));
    // quantize into a few levels so ties are frequent
    const int levels = 2 + static_cast<int>(rng.randint(12));
    std::vector<double> xs, ys;
    for (int i = 0; i < n; ++i) {
      xs.push_back(static_cast<double>(rng.randint(levels)) / levels);
      ys.push_back(static_cast<double>(rng.randint(levels)) / levels);
    }
    double mine;
    try {
      mine = kendall_tau(xs, ys);
    } catch (const Error&) {
      // degenerate: the reference denominator must also be zero
      bool xs_tied = true, ys_tied = true;
      for (double v : xs) xs_tied = xs_tied && v == xs[0];
      for (double v : ys) ys_tied = ys_tied && v == ys[0];
      CHECK((xs_tied || ys_tied));
      continue;
    }
    CHECK(mine == brute_force_tau(xs, ys));
  }
}

TEST_CASE("kendall tau is invariant under strictly monotone transforms") {
  Rng rng(53);
  std::vector<double> xs, ys;
  for (int i = 0; i < 60; ++i) {
    xs.push_back(rng.uniform(0.0, 1.0));
    ys.push_back(rng.uniform(0.0, 1.0));
  }
  const double base = kendall_tau(xs, ys);
  std::vector<double> tx;
  for (double x : xs) tx.push_back(std::exp(3.0 * x));
  CHECK(kendall_tau(tx, ys) == doctest::Approx(base).epsilon(1e-12));
  std::vector<double> ty;
  for (double y : ys) ty.push_back(std::atan(10.0 * y - 5.0));
  CHECK(kendall_tau(xs, ty) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("kendall tau degenerate inputs") {
  CHECK_THROWS_AS(kendall_tau({1.0}, {1.0}), Error);
  CHECK_THROWS_AS(kendall_tau({2.0, 2.0, 2.0}, {1.0, 2.0, 3.0}), Error);
  CHECK_THROWS_AS(kendall_tau({1.0, 2.0}, {7.0, 7.0}), Error);
}
