#include <doctest.h>

#include <cmath>
#include <vector>

#include "fsnas/ops.hpp"
#include "support/naive_ops.hpp"

using namespace fsnas;

namespace {

TensorF random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  TensorF t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("conv2d scalar scaling") {
  TensorF x({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
  TensorF w({1, 1, 1, 1}, {2.0f});
  TensorF y = conv2d(x, w, 1, 0);
  REQUIRE(y.shape() == std::vector<int>({1, 1, 3, 3}));
  for (float v : y.values()) CHECK(v == 2.0f);
}

TEST_CASE("conv2d identity kernel with padding") {
  Rng rng(7);
  TensorF x = random_tensor({2, 3, 5, 5}, rng);
  TensorF w({3, 3, 3, 3});
  // center tap 1 on the matching channel
  for (int co = 0; co < 3; ++co) w.at(((co * 3 + co) * 3 + 1) * 3 + 1) = 1.0f;
  TensorF y = conv2d(x, w, 1, 1);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.values().size(); ++i)
    CHECK(y.at(i) == doctest::Approx(x.at(i)).epsilon(1e-6));
}

TEST_CASE("conv2d matches six-loop reference") {
  Rng rng(11);
  auto check_case = [&](int n, int cin, int h, int w, int cout, int k, int s,
                        int p) {
    TensorF x = random_tensor({n, cin, h, w}, rng);
    TensorF wt = random_tensor({cout, cin, k, k}, rng);
    TensorF y = conv2d(x, wt, s, p);
    std::vector<double> xd(x.values().begin(), x.values().end());
    std::vector<double> wd(wt.values().begin(), wt.values().end());
    int ho = 0, wo = 0;
    auto ref = testing::naive_conv2d(xd, n, cin, h, w, wd, cout, k, s, p, ho, wo);
    REQUIRE(y.shape() == std::vector<int>({n, cout, ho, wo}));
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(y.at(i) - ref[i]) <= 1e-5);
  };
  check_case(2, 3, 5, 5, 4, 3, 1, 0);
  check_case(2, 3, 5, 5, 4, 3, 1, 1);
  check_case(1, 2, 7, 7, 3, 3, 2, 1);
  check_case(4, 8, 16, 16, 8, 3, 1, 1);
  check_case(4, 8, 16, 16, 6, 1, 2, 0);
}

TEST_CASE("conv2d error paths") {
  TensorF x({1, 2, 4, 4});
  TensorF w({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, 1, 0), Error);
  TensorF w2({1, 2, 5, 5});
  try {
    conv2d(x, w2, 1, 0);
    FAIL("expected configuration error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
}

TEST_CASE("linear identity and hand arithmetic") {
  TensorF x({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  TensorF eye({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  TensorF zero({2});
  TensorF y = linear(x, eye, zero);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.at(i) == x.at(i));

  TensorF x1({1, 2}, {1.0f, 2.0f});
  TensorF w1({1, 2}, {3.0f, 4.0f});
  TensorF b1({1}, {5.0f});
  CHECK(linear(x1, w1, b1).item() == doctest::Approx(16.0));
}

TEST_CASE("linear matches loop oracle") {
  Rng rng(13);
  TensorF x = random_tensor({4, 8}, rng);
  TensorF w = random_tensor({5, 8}, rng);
  TensorF b = random_tensor({5}, rng);
  TensorF y = linear(x, w, b);
  std::vector<double> xd(x.values().begin(), x.values().end());
  std::vector<double> wd(w.values().begin(), w.values().end());
  std::vector<double> bd(b.values().begin(), b.values().end());
  auto ref = testing::naive_linear(xd, 4, 8, wd, 5, bd);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(std::abs(y.at(i) - ref[i]) <= 1e-6);
  TensorF wbad({5, 7});
  CHECK_THROWS_AS(linear(x, wbad, b), Error);
}

TEST_CASE("batch_norm2d eval with unit stats is identity") {
  Rng rng(17);
  TensorF x = random_tensor({2, 3, 4, 4}, rng);
  TensorF gamma({3}, {1.0f, 1.0f, 1.0f});
  TensorF beta({3});
  BnStats<float> stats(3);
  TensorF y = batch_norm2d(x, gamma, beta, stats, BnMode::Eval);
  for (std::size_t i = 0; i < x.values().size(); ++i)
    CHECK(y.at(i) == doctest::Approx(x.at(i)).epsilon(1e-4));
}

TEST_CASE("batch_norm2d train on constant input yields beta") {
  TensorF x({4, 2, 3, 3}, std::vector<float>(4 * 2 * 9, 0.7f));
  TensorF gamma({2}, {1.0f, 1.0f});
  TensorF beta({2}, {0.25f, -0.5f});
  BnStats<float> stats(2);
  TensorF y = batch_norm2d(x, gamma, beta, stats, BnMode::Train);
  for (int b = 0; b < 4; ++b)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 9; ++i)
        CHECK(y.at((b * 2 + c) * 9 + i) ==
              doctest::Approx(beta.at(c)).epsilon(1e-5));
}

TEST_CASE("batch_norm2d train output statistics") {
  Rng rng(19);
  TensorF x = random_tensor({8, 3, 6, 6}, rng, -2.0, 3.0);
  TensorF gamma({3}, {1.0f, 1.0f, 1.0f});
  TensorF beta({3});
  BnStats<float> stats(3);
  TensorF y = batch_norm2d(x, gamma, beta, stats, BnMode::Train);
  const int cnt = 8 * 36;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int b = 0; b < 8; ++b)
      for (int i = 0; i < 36; ++i) mean += y.at((b * 3 + c) * 36 + i);
    mean /= cnt;
    for (int b = 0; b < 8; ++b)
      for (int i = 0; i < 36; ++i) {
        const double d = y.at((b * 3 + c) * 36 + i) - mean;
        var += d * d;
      }
    var /= cnt;
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-3);
  }
}

TEST_CASE("batch_norm2d capacity error") {
  TensorF x({1, 4, 2, 2});
  TensorF gamma({4}, std::vector<float>(4, 1.0f));
  TensorF beta({4});
  BnStats<float> stats(3);
  try {
    batch_norm2d(x, gamma, beta, stats, BnMode::Train);
    FAIL("expected capacity error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Capacity);
  }
}

TEST_CASE("cross_entropy uniform and extreme logits") {
  TensorF z({1, 4});
  CHECK(cross_entropy(z, {2}).item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  TensorF extreme({1, 2}, {10.0f, -10.0f});
  const double expected = std::log1p(std::exp(-20.0));
  CHECK(cross_entropy(extreme, {0}).item() ==
        doctest::Approx(expected).epsilon(1e-3));

  CHECK_THROWS_AS(cross_entropy(z, {4}), Error);
  CHECK_THROWS_AS(cross_entropy(z, {-1}), Error);
}

TEST_CASE("kl_distill identical and two-class checks") {
  TensorF a({1, 2}, {0.0f, 0.0f});
  CHECK(kl_distill(a, a).item() == doctest::Approx(0.0).epsilon(1e-9));

  TensorF s({1, 2}, {1.0f, 0.0f});
  TensorF t({1, 2}, {0.0f, 0.0f});
  const double expected = testing::naive_kl_row({1.0, 0.0}, {0.0, 0.0});
  CHECK(kl_distill(s, t).item() == doctest::Approx(expected).epsilon(1e-6));

  TensorF bad({1, 3});
  CHECK_THROWS_AS(kl_distill(s, bad), Error);
}

TEST_CASE("kl_distill non-negative over random pairs") {
  Rng rng(23);
  for (int it = 0; it < 1000; ++it) {
    TensorF s = random_tensor({2, 5}, rng, -4.0, 4.0);
    TensorF t = random_tensor({2, 5}, rng, -4.0, 4.0);
    CHECK(kl_distill(s, t).item() >= -1e-7f);
  }
  TensorF x = random_tensor({3, 7}, rng, -3.0, 3.0);
  CHECK(std::abs(kl_distill(x, x).item()) <= 1e-7f);
}

TEST_CASE("backward accumulates and leaves disconnected params at zero") {
  Rng rng(29);
  TensorF x = random_tensor({3, 4}, rng);
  TensorF w = random_tensor({2, 4}, rng);
  TensorF b = random_tensor({2}, rng);
  TensorF unused = random_tensor({5}, rng);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  unused.set_requires_grad(true);

  Tape<float> tape;
  TensorF loss;
  {
    TapeScope<float> scope(tape);
    loss = cross_entropy(linear(x, w, b), {0, 1, 0});
  }
  tape.backward(loss);
  std::vector<float> once = w.grad();
  tape.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i)
    CHECK(w.grad()[i] == doctest::Approx(2.0f * once[i]).epsilon(1e-7));
  unused.ensure_grad();
  for (float g : unused.grad()) CHECK(g == 0.0f);

  TensorF vec;
  {
    TapeScope<float> scope(tape);
    vec = linear(x, w, b);
  }
  CHECK_THROWS_AS(tape.backward(vec), Error);
}

TEST_CASE("relu, add, pooling, softmax basics") {
  TensorF x({1, 1, 2, 2}, {-1.0f, 2.0f, 0.0f, -3.0f});
  TensorF r = relu(x);
  CHECK(r.values() == std::vector<float>({0.0f, 2.0f, 0.0f, 0.0f}));

  TensorF y({1, 1, 2, 2}, {1.0f, 1.0f, 1.0f, 1.0f});
  TensorF s = add(x, y);
  CHECK(s.at(0) == 0.0f);
  CHECK(s.at(1) == 3.0f);
  TensorF zbad({1, 1, 1, 4});
  CHECK_THROWS_AS(add(x, zbad), Error);

  TensorF g = global_avg_pool(y);
  REQUIRE(g.shape() == std::vector<int>({1, 1}));
  CHECK(g.item() == doctest::Approx(1.0));

  TensorF logits({1, 3}, {1.0f, 1.0f, 1.0f});
  TensorF p = softmax(logits);
  for (int i = 0; i < 3; ++i)
    CHECK(p.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("dropout inverted scaling and inactive identity") {
  Rng rng(31);
  TensorF x({1, 1000}, std::vector<float>(1000, 1.0f));
  TensorF pass = dropout(x, 0.4, false, rng);
  CHECK(pass.same_storage(x));

  Rng rng2(31);
  TensorF y = dropout(x, 0.4, true, rng2);
  double mean = 0.0;
  int zeros = 0;
  for (float v : y.values()) {
    mean += v;
    if (v == 0.0f) ++zeros;
    else CHECK(v == doctest::Approx(1.0 / 0.6).epsilon(1e-6));
  }
  mean /= 1000.0;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.15));
  CHECK(zeros > 300);
  CHECK(zeros < 500);

  // same seed reproduces the same mask
  Rng rng3(31);
  TensorF y2 = dropout(x, 0.4, true, rng3);
  CHECK(y2.values() == y.values());
}

TEST_CASE("prefix slices copy and full-slice passthrough") {
  Rng rng(37);
  TensorF w = random_tensor({4, 3, 3, 3}, rng);
  TensorF s = prefix_slice4(w, 2, 2);
  REQUIRE(s.shape() == std::vector<int>({2, 2, 3, 3}));
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 9; ++i)
        CHECK(s.at((a * 2 + b) * 9 + i) == w.at((a * 3 + b) * 9 + i));
  CHECK(prefix_slice4(w, 4, 3).same_storage(w));
  CHECK_THROWS_AS(prefix_slice4(w, 5, 3), Error);

  TensorF v = random_tensor({6}, rng);
  CHECK(prefix_slice1(v, 6).same_storage(v));
  TensorF v3 = prefix_slice1(v, 3);
  for (int i = 0; i < 3; ++i) CHECK(v3.at(i) == v.at(i));

  TensorF m = random_tensor({3, 5}, rng);
  TensorF mc = prefix_slice_cols(m, 2);
  REQUIRE(mc.shape() == std::vector<int>({3, 2}));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) CHECK(mc.at(i * 2 + j) == m.at(i * 5 + j));
}

TEST_CASE("forward results are bit-identical across repeated runs") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    TensorF x = random_tensor({2, 3, 8, 8}, rng);
    TensorF w = random_tensor({4, 3, 3, 3}, rng);
    TensorF y = conv2d(x, w, 1, 1);
    return y.values();
  };
  CHECK(run(99) == run(99));
}
