#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "scenedec/optim.hpp"
#include "scenedec/rng.hpp"
#include "scenedec/tensor.hpp"
#include "support/oracles.hpp"

using namespace scenedec;
using namespace scenedec::ad;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool rg = false) {
  return Tensor::from(shape, oracles::random_values(numel(shape), rng, lo, hi), rg);
}

}  // namespace

TEST_CASE("erf forward matches independent series oracle") {
  for (double x = -6.0; x <= 6.0; x += 0.173) {
    const Tensor t = erf(Tensor::scalar(x));
    CHECK(t.item() == doctest::Approx(oracles::erf_series(x)).epsilon(1e-13));
  }
  CHECK(std::abs(erf(Tensor::scalar(6.0)).item() - 1.0) < 1e-12);
  CHECK(erf(Tensor::scalar(0.0)).item() == 0.0);
  // antisymmetry
  for (double x : {0.3, 1.7, 4.2}) {
    CHECK(erf(Tensor::scalar(-x)).item() ==
          doctest::Approx(-erf(Tensor::scalar(x)).item()).epsilon(1e-15));
  }
}

TEST_CASE("elementwise forward values") {
  CHECK(exp(Tensor::scalar(1.0)).item() == doctest::Approx(M_E).epsilon(1e-15));
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(relu(Tensor::scalar(-2.0)).item() == 0.0);
  CHECK(relu(Tensor::scalar(3.0)).item() == 3.0);
  CHECK(square(Tensor::scalar(-3.0)).item() == 9.0);
  CHECK(sqrt(Tensor::scalar(4.0)).item() == 2.0);
  CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(log(Tensor::scalar(M_E)).item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("elementwise rejects non-finite input with the offending index") {
  Tensor x = Tensor::from({3}, {1.0, std::nan(""), 2.0});
  try {
    exp(x);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
}

TEST_CASE("unary gradients pass central finite differences") {
  Rng rng(11);
  struct Case {
    Unary op;
    double lo, hi;
  };
  const Case cases[] = {
      {Unary::Exp, -2.0, 2.0},    {Unary::Erf, -2.0, 2.0},
      {Unary::Sigmoid, -4.0, 4.0}, {Unary::Sqrt, 0.5, 3.0},
      {Unary::Softplus, -4.0, 4.0}, {Unary::Log, 0.5, 3.0}};
  for (const auto& c : cases) {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x = random_tensor({2, 3}, rng, c.lo, c.hi);
      Tensor w = random_tensor({2, 3}, rng);
      auto f = [&](const Tensor& t) { return reduce_sum(mul(w, elementwise(c.op, t))); };
      const auto rep = grad_check(f, x, 1e-3);
      CHECK_MESSAGE(rep.max_rel_err < 1e-4, "op ", static_cast<int>(c.op), " err ",
                    rep.max_rel_err);
    }
  }
  // square and relu: inputs kept away from 0, where the derivative vanishes
  // (square) or kinks (relu) and the relative-error measure degenerates
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> vals(6);
    for (auto& v : vals) {
      const double m = rng.uniform(0.3, 2.0);
      v = rng.uniform() < 0.5 ? -m : m;
    }
    Tensor x = Tensor::from({6}, vals);
    Tensor w = random_tensor({6}, rng);
    auto fsq = [&](const Tensor& t) { return reduce_sum(mul(w, square(t))); };
    auto fre = [&](const Tensor& t) { return reduce_sum(mul(w, relu(t))); };
    CHECK(grad_check(fsq, x, 1e-3).max_rel_err < 1e-4);
    CHECK(grad_check(fre, x, 1e-3).max_rel_err < 1e-4);
  }
}

TEST_CASE("binary op gradients") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_tensor({5}, rng);
    Tensor b = random_tensor({5}, rng, 0.5, 2.0);
    Tensor joint = concat_flat({a, b});
    auto split = [](const Tensor& t) {
      return std::pair{narrow(t, 0, 0, 5), narrow(t, 0, 5, 5)};
    };
    auto fadd = [&](const Tensor& t) {
      auto [x, y] = split(t);
      return reduce_sum(square(add(x, y)));
    };
    auto fsub = [&](const Tensor& t) {
      auto [x, y] = split(t);
      return reduce_sum(square(sub(x, y)));
    };
    auto fmul = [&](const Tensor& t) {
      auto [x, y] = split(t);
      return reduce_sum(square(mul(x, y)));
    };
    auto fdiv = [&](const Tensor& t) {
      auto [x, y] = split(t);
      return reduce_sum(square(divide(x, y)));
    };
    CHECK(grad_check(fadd, joint, 1e-3).max_rel_err < 1e-4);
    CHECK(grad_check(fsub, joint, 1e-3).max_rel_err < 1e-4);
    CHECK(grad_check(fmul, joint, 1e-3).max_rel_err < 1e-4);
    CHECK(grad_check(fdiv, joint, 1e-3).max_rel_err < 1e-4);
  }
}

TEST_CASE("safe_divide is zero with zero gradient where the denominator is zero") {
  Tensor a = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  Tensor b = Tensor::from({3}, {2.0, 0.0, 4.0}, true);
  Tensor out = safe_divide(a, b);
  CHECK(out.at(0) == 0.5);
  CHECK(out.at(1) == 0.0);
  CHECK(out.at(2) == 0.75);
  backward(reduce_sum(out));
  CHECK(a.grad()[1] == 0.0);
  CHECK(b.grad()[1] == 0.0);
  CHECK(a.grad()[0] == 0.5);
}

TEST_CASE("matmul forward and gradients") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(a, b);
  CHECK(c.values() == std::vector<double>{19, 22, 43, 50});

  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({4, 2}, rng);
    auto f_lhs = [&](const Tensor& t) { return reduce_sum(square(matmul(t, w))); };
    auto f_rhs = [&](const Tensor& t) { return reduce_sum(square(matmul(x, t))); };
    CHECK(grad_check(f_lhs, x, 1e-3).max_rel_err < 1e-4);
    CHECK(grad_check(f_rhs, w, 1e-3).max_rel_err < 1e-4);
  }
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), Error);
}

TEST_CASE("matmul_nt equals matmul against the explicit transpose") {
  Rng rng(77);
  Tensor a = random_tensor({3, 5}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  std::vector<double> bt(5 * 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) bt[j * 4 + i] = b.at(i * 5 + j);
  Tensor ref = matmul(a, Tensor::from({5, 4}, bt));
  Tensor got = matmul_nt(a, b);
  REQUIRE(got.shape() == Shape{3, 4});
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(got.at(i) == doctest::Approx(ref.at(i)).epsilon(1e-14));
  auto f_a = [&](const Tensor& t) { return reduce_sum(square(matmul_nt(t, b))); };
  auto f_b = [&](const Tensor& t) { return reduce_sum(square(matmul_nt(a, t))); };
  CHECK(grad_check(f_a, a, 1e-3).max_rel_err < 1e-4);
  CHECK(grad_check(f_b, b, 1e-3).max_rel_err < 1e-4);
  CHECK_THROWS_AS(matmul_nt(a, Tensor::from({4, 3}, std::vector<double>(12, 0.0))),
                  Error);
}

TEST_CASE("conv2d matches a direct cross-correlation oracle") {
  Rng rng(14);
  struct Sizes {
    std::size_t C, H, W, F, kh, kw, s;
  };
  for (const auto& z : {Sizes{1, 5, 5, 1, 3, 3, 1}, Sizes{2, 6, 7, 3, 3, 3, 2},
                        Sizes{3, 8, 8, 4, 5, 5, 2}, Sizes{2, 9, 4, 2, 3, 3, 3}}) {
    auto xv = oracles::random_values(z.C * z.H * z.W, rng);
    auto kv = oracles::random_values(z.F * z.C * z.kh * z.kw, rng);
    Tensor x = Tensor::from({z.C, z.H, z.W}, xv);
    Tensor k = Tensor::from({z.F, z.C, z.kh, z.kw}, kv);
    Tensor out = conv2d(x, k, z.s);
    const auto ref =
        oracles::conv2d_direct(xv, z.C, z.H, z.W, kv, z.F, z.kh, z.kw, z.s);
    REQUIRE(out.size() == ref.size());
    CHECK(out.dim(1) == (z.H + z.s - 1) / z.s);
    CHECK(out.dim(2) == (z.W + z.s - 1) / z.s);
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(out.at(i) == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d centered delta kernel reproduces the input") {
  Rng rng(15);
  Tensor x = random_tensor({2, 6, 6}, rng);
  std::vector<double> kv(2 * 2 * 3 * 3, 0.0);
  kv[(0 * 2 + 0) * 9 + 4] = 1.0;  // filter 0 passes channel 0
  kv[(1 * 2 + 1) * 9 + 4] = 1.0;  // filter 1 passes channel 1
  Tensor k = Tensor::from({2, 2, 3, 3}, kv);
  Tensor out = conv2d(x, k, 1);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out.at(i) == x.at(i));
}

TEST_CASE("conv2d gradients") {
  Rng rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t s = trial % 2 ? 2 : 1;
    Tensor x = random_tensor({2, 5, 6}, rng);
    Tensor k = random_tensor({3, 2, 3, 3}, rng);
    auto f_x = [&](const Tensor& t) { return reduce_sum(square(conv2d(t, k, s))); };
    auto f_k = [&](const Tensor& t) { return reduce_sum(square(conv2d(x, t, s))); };
    CHECK(grad_check(f_x, x, 1e-3).max_rel_err < 1e-4);
    CHECK(grad_check(f_k, k, 1e-3).max_rel_err < 1e-4);
  }
}

TEST_CASE("add_channel_bias and upsample2x") {
  Rng rng(17);
  Tensor x = random_tensor({3, 2, 2}, rng);
  Tensor b = Tensor::from({3}, {1.0, -2.0, 0.5});
  Tensor y = add_channel_bias(x, b);
  CHECK(y.at(0) == doctest::Approx(x.at(0) + 1.0));
  CHECK(y.at(4) == doctest::Approx(x.at(4) - 2.0));
  auto f_x = [&](const Tensor& t) { return reduce_sum(square(add_channel_bias(t, b))); };
  auto f_b = [&](const Tensor& t) { return reduce_sum(square(add_channel_bias(x, t))); };
  CHECK(grad_check(f_x, x, 1e-3).max_rel_err < 1e-4);
  CHECK(grad_check(f_b, b, 1e-3).max_rel_err < 1e-4);

  Tensor u = upsample2x(x);
  CHECK(u.shape() == Shape{3, 4, 4});
  CHECK(u.at(0) == x.at(0));
  CHECK(u.at(1) == x.at(0));
  CHECK(u.at(4) == x.at(0));
  auto f_u = [&](const Tensor& t) { return reduce_sum(square(upsample2x(t))); };
  CHECK(grad_check(f_u, x, 1e-3).max_rel_err < 1e-4);
}

TEST_CASE("scale_channels broadcasts a map across channels") {
  Rng rng(18);
  Tensor x = random_tensor({3, 2, 2}, rng);
  Tensor m = Tensor::from({2, 2}, {1.0, 0.5, -2.0, 0.25});
  Tensor y = scale_channels(x, m);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(y.at(c * 4 + i) == x.at(c * 4 + i) * m.at(i));
  auto f_x = [&](const Tensor& t) { return reduce_sum(square(scale_channels(t, m))); };
  auto f_m = [&](const Tensor& t) { return reduce_sum(square(scale_channels(x, t))); };
  CHECK(grad_check(f_x, x, 1e-3).max_rel_err < 1e-4);
  CHECK(grad_check(f_m, m, 1e-3).max_rel_err < 1e-4);
  CHECK_THROWS_AS(scale_channels(x, Tensor::from({3, 2}, std::vector<double>(6, 0.0))),
                  Error);
}

TEST_CASE("softmax_rows values and invariances") {
  Tensor m = Tensor::from({1, 2}, {1.0, 0.0});
  Tensor a = softmax_rows(m, 10.0);
  // 1/(1+e^-10) and its complement
  CHECK(a.at(0) == doctest::Approx(0.9999546021312976).epsilon(1e-12));
  CHECK(a.at(1) == doctest::Approx(4.5397868702434395e-05).epsilon(1e-12));

  Rng rng(18);
  Tensor big = random_tensor({4, 5}, rng, -3.0, 3.0);
  Tensor s1 = softmax_rows(big, 2.5);
  // rows sum to one
  for (std::size_t i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 5; ++j) sum += s1.at(i * 5 + j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  // adding a constant to one row leaves the distribution unchanged
  auto shifted = big.values();
  for (std::size_t j = 0; j < 5; ++j) shifted[2 * 5 + j] += 7.25;
  Tensor s2 = softmax_rows(Tensor::from({4, 5}, shifted), 2.5);
  for (std::size_t i = 0; i < s1.size(); ++i)
    CHECK(s1.at(i) == doctest::Approx(s2.at(i)).epsilon(1e-12));

  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({3, 4}, rng, -2.0, 2.0);
    Tensor w = random_tensor({3, 4}, rng);
    auto f = [&](const Tensor& t) {
      return reduce_sum(mul(softmax_rows(t, 3.0), w));
    };
    CHECK(grad_check(f, x, 1e-3).max_rel_err < 1e-4);
  }
}

TEST_CASE("reductions") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(reduce_sum(x).item() == 21.0);
  CHECK(reduce_mean(x).item() == 3.5);
  Tensor rows = reduce_sum(x, {1});
  CHECK(rows.values() == std::vector<double>{6, 15});
  Tensor cols = reduce_mean(x, {0});
  CHECK(cols.values() == std::vector<double>{2.5, 3.5, 4.5});

  // sum over an empty extent yields zeros
  Tensor empty = Tensor::zeros({3, 0});
  Tensor z = reduce_sum(empty, {1});
  CHECK(z.shape() == Shape{3});
  CHECK(z.values() == std::vector<double>{0, 0, 0});
  CHECK_THROWS_AS(reduce_mean(empty, {1}), Error);

  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor t = random_tensor({2, 3, 4}, rng);
    auto f = [&](const Tensor& u) {
      return reduce_sum(square(reduce_mean(u, {0, 2})));
    };
    CHECK(grad_check(f, t, 1e-3).max_rel_err < 1e-4);
  }
}

TEST_CASE("gradients accumulate across a diamond graph") {
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  Tensor s = square(x);
  Tensor y = reduce_sum(add(s, s));
  backward(y);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(x.grad()[i] == doctest::Approx(4.0 * x.at(i)).epsilon(1e-15));
}

TEST_CASE("narrow, concat, stack, reshape") {
  Tensor x = Tensor::from({2, 4}, {0, 1, 2, 3, 4, 5, 6, 7});
  Tensor mid = narrow(x, 1, 1, 2);
  CHECK(mid.shape() == Shape{2, 2});
  CHECK(mid.values() == std::vector<double>{1, 2, 5, 6});
  CHECK_THROWS_AS(narrow(x, 1, 3, 2), Error);

  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = Tensor::from({3}, {3, 4, 5});
  CHECK(concat_flat({a, b}).values() == std::vector<double>{1, 2, 3, 4, 5});

  Tensor r0 = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor r1 = Tensor::from({4}, {5, 6, 7, 8});
  Tensor st = stack_rows({r0, r1});
  CHECK(st.shape() == Shape{2, 4});
  CHECK(st.values() == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});

  Rng rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor t = random_tensor({3, 4}, rng);
    auto f = [&](const Tensor& u) {
      Tensor n1 = narrow(u, 0, 1, 2);
      Tensor r = reshape(n1, {2, 2, 2});
      return reduce_sum(square(concat_flat({r, narrow(u, 1, 0, 1)})));
    };
    CHECK(grad_check(f, t, 1e-3).max_rel_err < 1e-4);
  }
}

TEST_CASE("adam: zero gradient from a fresh state is a fixed point") {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 3.0}, true);
  p.mutable_grad();
  AdamState st;
  adam_step(p, st, 1e-3, "p");
  CHECK(p.values() == std::vector<double>{1.0, -2.0, 3.0});
  p.zero_grad();
  CHECK_FALSE(p.has_grad());
}

TEST_CASE("adam: single unit-gradient step moves by about -lr") {
  Tensor p = Tensor::scalar(1.0, true);
  p.mutable_grad()[0] = 1.0;
  AdamState st;
  adam_step(p, st, 1e-3, "p");
  // bias-corrected: mhat = 1, vhat = 1, delta = -lr / (1 + eps)
  CHECK(p.item() == doctest::Approx(1.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(std::abs((p.item() - 1.0) + 1e-3) < 1e-10);
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  Tensor p = Tensor::scalar(1.0, true);
  p.mutable_grad()[0] = std::nan("");
  AdamState st;
  try {
    adam_step(p, st, 1e-3, "encoder.head.weight");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("encoder.head.weight") != std::string::npos);
  }
}

TEST_CASE("grad_check flags a wrong hand-written gradient") {
  // custom op with a deliberately wrong backward: y = 2x claimed, true y = x^2
  auto bad_square = [](const Tensor& x) {
    auto n = std::make_shared<Node>();
    n->shape = x.shape();
    n->values.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) n->values[i] = x.at(i) * x.at(i);
    n->requires_grad = x.requires_grad();
    if (n->requires_grad) {
      n->parents.push_back(x.node_ptr());
      Node* xp = x.node();
      n->backward_fn = [xp](Node& self) {
        xp->ensure_grad();
        for (std::size_t i = 0; i < self.values.size(); ++i)
          xp->grad[i] += self.grad[i] * 2.0;  // missing the factor x
      };
    }
    return Tensor::wrap(n);
  };
  Tensor x = Tensor::from({2}, {3.0, -1.5});
  auto f = [&](const Tensor& t) { return reduce_sum(bad_square(t)); };
  CHECK(grad_check(f, x, 1e-3).max_rel_err > 0.1);
}

TEST_CASE("identical inputs give bit-identical op results") {
  Rng rng(21);
  const auto xv = oracles::random_values(2 * 7 * 7, rng);
  const auto kv = oracles::random_values(3 * 2 * 3 * 3, rng);
  Tensor o1 = conv2d(Tensor::from({2, 7, 7}, xv), Tensor::from({3, 2, 3, 3}, kv), 2);
  Tensor o2 = conv2d(Tensor::from({2, 7, 7}, xv), Tensor::from({3, 2, 3, 3}, kv), 2);
  CHECK(o1.values() == o2.values());
}
