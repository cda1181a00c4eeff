#include <doctest.h>

#include "oracles.hpp"
#include "salprune/tape.hpp"

using namespace salprune;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  SplitMix64 rng(seed);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Sum of w * y for a fixed weighting w, i.e. the seed of backward().
double weighted(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace

TEST_CASE("relu gradient at exactly zero is zero") {
  Tape t;
  const Var x = t.leaf(Tensor({1, 3}, std::vector<double>{-1.0, 0.0, 2.0}), true);
  const Var y = t.relu(x);
  t.backward(y, Tensor({1, 3}, 1.0));
  CHECK(t.grad(x).values() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("backward runs once per tape") {
  Tape t;
  const Var x = t.leaf(Tensor({2}, 1.0), true);
  const Var y = t.combine(2.0, x, 0.0, x);
  t.backward(y, Tensor({2}, 1.0));
  CHECK(t.consumed());
  CHECK_THROWS_AS(t.backward(y, Tensor({2}, 1.0)), TapeError);
}

TEST_CASE("seed shape must match the output") {
  Tape t;
  const Var x = t.leaf(Tensor({2}, 1.0), true);
  CHECK_THROWS_AS(t.backward(x, Tensor({3}, 1.0)), ShapeError);
}

TEST_CASE("shared subexpressions accumulate gradients") {
  Tape t;
  const Var x = t.leaf(Tensor({3}, std::vector<double>{1, 2, 3}), true);
  const Var sq = t.mul(x, x);
  const Var y = t.combine(1.0, sq, 3.0, x);  // x^2 + 3x
  t.backward(y, Tensor({3}, 1.0));
  CHECK(t.grad(x).values() == std::vector<double>{5, 7, 9});
}

TEST_CASE("leaves without requires_grad report zeros") {
  Tape t;
  const Var a = t.leaf(Tensor({2}, 1.0), false);
  const Var b = t.leaf(Tensor({2}, 2.0), true);
  const Var y = t.mul(a, b);
  t.backward(y, Tensor({2}, 1.0));
  CHECK(t.grad(a).values() == std::vector<double>{0, 0});
  CHECK(t.grad(b).values() == std::vector<double>{1, 1});
}

TEST_CASE("operator gradients agree with finite differences") {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    const int B = 2, C = 2, F = 3, H = 4, W = 6;
    Tensor x = random_tensor({B, C, H, W}, 10 + trial);
    Tensor w = random_tensor({F, C, 3, 3}, 20 + trial);
    Tensor b = random_tensor({F}, 30 + trial);
    Tensor dw = random_tensor({5, F * (H / 2) * (W / 2)}, 40 + trial);
    Tensor db = random_tensor({5}, 50 + trial);
    const Tensor seed = random_tensor({B, 5}, 60 + trial);

    auto run = [&](Tape& t, Var* vars) {
      vars[0] = t.leaf_ref(x, true);
      vars[1] = t.leaf_ref(w, true);
      vars[2] = t.leaf_ref(b, true);
      vars[3] = t.leaf_ref(dw, true);
      vars[4] = t.leaf_ref(db, true);
      const Var h = t.max_pool2(t.relu(t.conv2d(vars[0], vars[1], vars[2])));
      return t.dense(t.flatten(h), vars[3], vars[4]);
    };
    Tape t;
    Var v[5];
    const Var out = run(t, v);
    t.backward(out, seed);
    const Tensor gx = t.grad(v[0]), gw = t.grad(v[1]), gb = t.grad(v[2]), gdw = t.grad(v[3]), gdb = t.grad(v[4]);

    auto eval = [&] {
      Tape e;
      Var u[5];
      return weighted(e.value(run(e, u)), seed);
    };
    oracle::FdStats st;
    Tensor* targets[5] = {&x, &w, &b, &dw, &db};
    const Tensor* grads[5] = {&gx, &gw, &gb, &gdw, &gdb};
    for (int k = 0; k < 5; ++k)
      for (std::size_t i = 0; i < targets[k]->size(); ++i)
        oracle::fd_check_coordinate((*targets[k])[i], (*grads[k])[i], 1e-5, eval, st, "t" + std::to_string(k));
    INFO(st.worst);
    CHECK(st.checked > 0);
    CHECK(st.max_rel < 1e-6);
    CHECK(st.kinks <= st.checked / 20);
  }
}
