#include <cmath>
#include <random>
#include <thread>

#include "doctest.h"

#include "avvp/grad_check.hpp"
#include "avvp/tape.hpp"

using namespace avvp;

namespace {
Tensor rnd(Shape s, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values) v = u(rng);
  return t;
}
}  // namespace

TEST_CASE("linear forward values") {
  Tape t;
  Val x = t.input(Tensor({1, 2}, {1.0, 2.0}));
  Val w = t.input(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  Val b = t.input(Tensor({2}, {0.0, 0.0}));
  Val y = t.linear(x, w, b);
  CHECK(t.value(y).values == std::vector<double>{1.0, 2.0});

  Val x2 = t.input(Tensor({1, 2}, {1.0, 1.0}));
  Val w2 = t.input(Tensor({2, 1}, {2.0, 3.0}));
  Val b2 = t.input(Tensor({1}, {1.0}));
  CHECK(t.value(t.linear(x2, w2, b2)).values[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("linear shape mismatch names both shapes") {
  Tape t;
  Val x = t.input(Tensor({4, 2}, std::vector<double>(8, 1.0)));
  Val w = t.input(Tensor({3, 5}, std::vector<double>(15, 1.0)));
  Val b = t.input(Tensor({5}, std::vector<double>(5, 0.0)));
  try {
    t.linear(x, w, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[4x2]") != std::string::npos);
    CHECK(msg.find("[3x5]") != std::string::npos);
  }
}

TEST_CASE("sigmoid values") {
  Tape t;
  Val x = t.input(Tensor({3}, {0.0, 1.0, 30.0}));
  const auto& y = t.value(t.sigmoid(x)).values;
  CHECK(y[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(y[2] > 0.999999);
  // monotone approach to 1
  Tape t2;
  const auto& z = t2.value(t2.sigmoid(t2.input(Tensor({3}, {5.0, 10.0, 20.0})))).values;
  CHECK(z[0] < z[1]);
  CHECK(z[1] < z[2]);
  CHECK(z[2] < 1.0);
}

TEST_CASE("softmax values and normalization") {
  Tape t;
  Val u = t.softmax(t.input(Tensor({4}, {3.0, 3.0, 3.0, 3.0})), {0});
  for (double v : t.value(u).values) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  Val peak = t.softmax(t.input(Tensor({3}, {20.0, 0.0, 0.0})), {0});
  CHECK(t.value(peak).values[0] > 0.999);

  Val two = t.softmax(t.input(Tensor({2}, {0.0, std::log(3.0)})), {0});
  CHECK(t.value(two).values[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t.value(two).values[1] == doctest::Approx(0.75).epsilon(1e-12));

  // sums over the normalized axes equal 1 within 1e-6
  std::mt19937_64 rng(7);
  Tensor x = rnd({3, 4, 5}, rng);
  Tape t3;
  const Tensor& s = t3.value(t3.softmax(t3.input(x), {1, 2}));
  for (std::size_t n = 0; n < 3; ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 20; ++i) acc += s.values[n * 20 + i];
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(t3.softmax(t3.input(x), {}), UsageError);
}

TEST_CASE("backward basics") {
  std::mt19937_64 rng(11);
  Tensor w = rnd({3, 2}, rng);

  SUBCASE("loss = sum(W) gives all-ones gradient") {
    Tape t;
    Val wv = t.param(w);
    t.backward(t.sum_all(wv));
    for (double g : w.grad) CHECK(g == 1.0);
  }
  SUBCASE("loss = sum(W^2)/2 gives gradient W") {
    Tape t;
    Val wv = t.param(w);
    t.backward(t.affine(t.sum_all(t.mul(wv, wv)), 0.5, 0.0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      CHECK(w.grad[i] == doctest::Approx(w.values[i]).epsilon(1e-15));
    }
  }
  SUBCASE("non-scalar loss is a usage error") {
    Tape t;
    Val wv = t.param(w);
    CHECK_THROWS_AS(t.backward(wv), UsageError);
  }
}

TEST_CASE("gradient accumulation is linear in the loss") {
  std::mt19937_64 rng(13);
  Tensor w = rnd({4, 3}, rng);
  Tensor x = rnd({2, 4}, rng);
  Tensor b = rnd({3}, rng);

  auto l1 = [&](Tape& t, Val wv) { return t.sum_all(t.sigmoid(t.linear(t.input(x), wv, t.input(b)))); };
  auto l2 = [&](Tape& t, Val wv) { return t.mean_all(t.tanh(t.linear(t.input(x), wv, t.input(b)))); };

  // route A: one backward on the summed loss
  Tensor wa = w;
  {
    Tape t;
    Val wv = t.param(wa);
    t.backward(t.add(l1(t, wv), l2(t, wv)));
  }
  // route B: two separate backward passes accumulate
  Tensor wb = w;
  {
    Tape t;
    Val wv = t.param(wb);
    t.backward(l1(t, wv));
  }
  {
    Tape t;
    Val wv = t.param(wb);
    t.backward(l2(t, wv));
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(std::abs(wa.grad[i] - wb.grad[i]) < 1e-10);
  }
}

TEST_CASE("parameters unused by the loss keep exactly zero gradients") {
  std::mt19937_64 rng(17);
  Tensor used = rnd({2, 2}, rng);
  Tensor bound_unused = rnd({2, 2}, rng);
  Tensor never_bound = rnd({2, 2}, rng);

  Tape t;
  Val u = t.param(used);
  Val s = t.param(bound_unused);
  t.mul(s, s);  // on the tape, off the loss path
  t.backward(t.sum_all(u));
  for (double g : used.grad) CHECK(g == 1.0);
  REQUIRE(bound_unused.has_grad());
  for (double g : bound_unused.grad) CHECK(g == 0.0);
  CHECK_FALSE(never_bound.has_grad());
}

TEST_CASE("grad_check oracle behavior") {
  std::mt19937_64 rng(19);
  Tensor x = rnd({2, 3}, rng);

  const double e_sig = grad_check(
      [](Tape& t, Val v) { return t.sum_all(t.sigmoid(v)); }, x, 1e-4);
  CHECK(e_sig < 1e-4);

  std::mt19937_64 rng2(23);
  Tensor w = rnd({3, 2}, rng2);
  Tensor b = rnd({2}, rng2);
  const double e_lin = grad_check(
      [&](Tape& t, Val v) { return t.sum_all(t.linear(v, t.input(w), t.input(b))); }, x, 1e-4);
  CHECK(e_lin < 1e-6);  // exact up to rounding for a linear map

  const double e_const = grad_check(
      [](Tape& t, Val v) {
        (void)v;
        return t.input(scalar_tensor(3.5));
      },
      x, 1e-4);
  CHECK(e_const == 0.0);

  CHECK_THROWS_AS(grad_check([](Tape& t, Val v) { return t.sigmoid(v); }, x, 1e-4), UsageError);
  CHECK_THROWS_AS(grad_check([](Tape& t, Val v) { return t.sum_all(v); }, x, 0.0), UsageError);
}

TEST_CASE("two-layer net matches finite differences at 1e-3") {
  std::mt19937_64 rng(29);
  Tensor x = rnd({2, 4}, rng, -1.0, 1.0);
  Tensor w1 = rnd({4, 6}, rng, -0.7, 0.7);
  Tensor b1 = rnd({6}, rng, -0.2, 0.2);
  Tensor w2 = rnd({6, 5}, rng, -0.7, 0.7);
  Tensor b2 = rnd({5}, rng, -0.2, 0.2);
  REQUIRE(w1.size() + b1.size() + w2.size() + b2.size() == 65);

  auto net = [&](Tape& t, Val w1v, Val b1v, Val w2v, Val b2v) {
    Val h = t.tanh(t.linear(t.input(x), w1v, b1v));
    return t.mean_all(t.sigmoid(t.linear(h, w2v, b2v)));
  };
  CHECK(grad_check([&](Tape& t, Val v) { return net(t, v, t.input(b1), t.input(w2), t.input(b2)); },
                   w1, 1e-4) < 1e-3);
  CHECK(grad_check([&](Tape& t, Val v) { return net(t, t.input(w1), v, t.input(w2), t.input(b2)); },
                   b1, 1e-4) < 1e-3);
  CHECK(grad_check([&](Tape& t, Val v) { return net(t, t.input(w1), t.input(b1), v, t.input(b2)); },
                   w2, 1e-4) < 1e-3);
  CHECK(grad_check([&](Tape& t, Val v) { return net(t, t.input(w1), t.input(b1), t.input(w2), v); },
                   b2, 1e-4) < 1e-3);
}

TEST_CASE("forward and backward are deterministic bit-for-bit") {
  auto run = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor x = rnd({3, 4}, rng);
    Tensor w = rnd({4, 4}, rng);
    Tensor b = rnd({4}, rng);
    Tape t;
    Val wv = t.param(w);
    Val y = t.softmax(t.linear(t.relu(t.input(x)), wv, t.input(b)), {1});
    Val loss = t.mean_all(t.mul(y, y));
    t.backward(loss);
    return std::pair<double, std::vector<double>>(t.scalar(loss), w.grad);
  };
  const auto a = run(123);
  const auto b = run(123);
  CHECK(a.first == b.first);
  REQUIRE(a.second.size() == b.second.size());
  for (std::size_t i = 0; i < a.second.size(); ++i) CHECK(a.second[i] == b.second[i]);
}

TEST_CASE("independent tapes run concurrently over frozen parameters") {
  std::mt19937_64 rng(31);
  Tensor w = rnd({6, 6}, rng);
  Tensor b = rnd({6}, rng);
  auto eval = [&](const Tensor& x) {
    Tape t;
    // inference only: parameters passed as constants
    return t.scalar(t.mean_all(t.sigmoid(t.linear(t.input(x), t.input(w), t.input(b)))));
  };
  std::vector<Tensor> inputs;
  for (int i = 0; i < 8; ++i) inputs.push_back(rnd({5, 6}, rng));
  std::vector<double> serial(8), parallel(8);
  for (int i = 0; i < 8; ++i) serial[i] = eval(inputs[i]);
  std::vector<std::thread> pool;
  for (int i = 0; i < 8; ++i) {
    pool.emplace_back([&, i] { parallel[i] = eval(inputs[i]); });
  }
  for (auto& th : pool) th.join();
  for (int i = 0; i < 8; ++i) CHECK(serial[i] == parallel[i]);
}

TEST_CASE("structural primitives round-trip") {
  std::mt19937_64 rng(37);
  Tensor x = rnd({2, 3, 4}, rng);

  Tape t;
  Val xv = t.input(x);
  Val tr = t.transpose(t.transpose(xv, {0, 2, 1}), {0, 2, 1});
  CHECK(t.value(tr).values == x.values);

  Val rs = t.reshape(t.reshape(xv, {6, 4}), {2, 3, 4});
  CHECK(t.value(rs).values == x.values);
  CHECK_THROWS_AS(t.reshape(xv, {5, 5}), DimensionError);

  Tensor y = rnd({2, 2, 4}, rng);
  Val cat = t.concat({xv, t.input(y)}, 1);
  CHECK(t.value(cat).shape == Shape{2, 5, 4});
  CHECK_THROWS_AS(t.concat({xv, t.input(rnd({2, 2, 3}, rng))}, 1), DimensionError);

  // clamp saturates and passes gradient only inside the band
  Tensor z({4}, {-2.0, -0.5, 0.5, 2.0});
  Tape t2;
  Val zv = t2.param(z);
  Val c = t2.clamp(zv, -1.0, 1.0);
  CHECK(t2.value(c).values == std::vector<double>{-1.0, -0.5, 0.5, 1.0});
  t2.backward(t2.sum_all(c));
  CHECK(z.grad == std::vector<double>{0.0, 1.0, 1.0, 0.0});
}

TEST_CASE("non-finite forward values are rejected") {
  Tape t;
  Val x = t.input(Tensor({2}, {1.0, -1.0}));
  CHECK_THROWS_AS(t.log(x), NumericError);  // log of a negative
}
