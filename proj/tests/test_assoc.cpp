#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scenedec/assoc.hpp"
#include "scenedec/optim.hpp"
#include "scenedec/rng.hpp"

using namespace scenedec;
using ad::Tensor;

TEST_CASE("similarity frozen values on unit codes") {
  const Tensor a = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const Tensor b = Tensor::from({2, 2}, {0.8, 0.6, -0.6, 0.8});
  const Tensor m = assoc::similarity(a, b);
  CHECK(m.at(0) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(m.at(1) == doctest::Approx(-0.6).epsilon(1e-14));
  CHECK(m.at(2) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(m.at(3) == doctest::Approx(0.8).epsilon(1e-14));

  const Tensor assign = assoc::soft_assignment(m, 10.0);
  CHECK(assign.at(0) == doctest::Approx(0.9999991684719722).epsilon(1e-12));
  CHECK(assign.at(1) == doctest::Approx(8.315280276641321e-07).epsilon(1e-9));
  CHECK(assign.at(2) == doctest::Approx(0.11920292202211755).epsilon(1e-12));
  CHECK(assign.at(3) == doctest::Approx(0.8807970779778823).epsilon(1e-12));
  CHECK(assign.at(0) + assign.at(1) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(assign.at(2) + assign.at(3) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("similarity ignores code magnitude") {
  Rng rng(201);
  std::vector<double> av(3 * 8), bv(4 * 8);
  for (auto& x : av) x = rng.gaussian();
  for (auto& x : bv) x = rng.gaussian();
  const Tensor a = Tensor::from({3, 8}, av);
  const Tensor b = Tensor::from({4, 8}, bv);
  std::vector<double> av3 = av, bv5 = bv;
  for (auto& x : av3) x *= 3.0;
  for (auto& x : bv5) x *= 0.2;
  const Tensor m1 = assoc::similarity(a, b);
  const Tensor m2 = assoc::similarity(Tensor::from({3, 8}, av3), Tensor::from({4, 8}, bv5));
  for (std::size_t i = 0; i < m1.size(); ++i) {
    CHECK(m1.at(i) == doctest::Approx(m2.at(i)).epsilon(1e-12));
    CHECK(m1.at(i) >= -1.0 - 1e-12);
    CHECK(m1.at(i) <= 1.0 + 1e-12);
  }
}

TEST_CASE("similarity compares only the leading dimensions when asked") {
  Rng rng(202);
  std::vector<double> head(2 * 4);
  for (auto& x : head) x = rng.gaussian();
  // Same first 4 dims, wildly different tail.
  std::vector<double> av, bv;
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      av.push_back(head[r * 4 + c]);
    }
    for (std::size_t c = 0; c < 6; ++c) av.push_back(rng.gaussian() * 5.0);
  }
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 4; ++c) bv.push_back(head[r * 4 + c]);
    for (std::size_t c = 0; c < 6; ++c) bv.push_back(rng.gaussian() * 5.0);
  }
  const Tensor m =
      assoc::similarity(Tensor::from({2, 10}, av), Tensor::from({2, 10}, bv), 4);
  CHECK(m.at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.at(3) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("soft assignment recovers a permutation of noisy codes") {
  const std::size_t n = 4, D = 128, dims = 16;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 13);
    std::vector<double> tv(n * D);
    for (auto& x : tv) x = rng.gaussian();
    const Tensor target = Tensor::from({n, D}, tv);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.uniform_int(0, static_cast<int>(i))]);
    // Source slot j holds target code perm[j] plus noise.
    std::vector<double> sv(n * D);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < D; ++c)
        sv[j * D + c] = tv[perm[j] * D + c] + 0.05 * rng.gaussian();
    const Tensor source = Tensor::from({n, D}, sv);
    const Tensor assign =
        assoc::soft_assignment(assoc::similarity(target, source, dims), 10.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < n; ++j)
        if (assign.at(i * n + j) > assign.at(i * n + best)) best = j;
      CHECK(perm[best] == i);
    }
  }
}

TEST_CASE("well separated codes make the soft reorder nearly hard") {
  const std::size_t n = 4, D = 16;
  std::vector<double> tv(n * D, 0.0), sv(n * D, 0.0);
  const std::size_t perm[n] = {2, 0, 3, 1};
  Rng rng(203);
  for (std::size_t i = 0; i < n; ++i) tv[i * D + i] = 1.0;  // orthogonal codes
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t c = 0; c < D; ++c)
      sv[j * D + c] = tv[perm[j] * D + c] + 0.01 * rng.gaussian();
  }
  const Tensor target = Tensor::from({n, D}, tv);
  const Tensor source = Tensor::from({n, D}, sv);
  const Tensor assign = assoc::soft_assignment(assoc::similarity(target, source), 10.0);
  // Payload: one row of data per source slot.
  std::vector<double> items(n * 3);
  for (auto& x : items) x = rng.uniform();
  const Tensor reordered = assoc::reorder(assign, Tensor::from({n, 3}, items));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t src = 0;
    while (perm[src] != i) ++src;  // source slot holding target code i
    CHECK(assign.at(i * n + src) > 0.99);
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(std::abs(reordered.at(i * 3 + c) - items[src * 3 + c]) < 5e-3);
  }
}

TEST_CASE("reorder with explicit assignments") {
  const Tensor items = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor ident = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor swap = Tensor::from({2, 2}, {0, 1, 1, 0});
  const Tensor same = assoc::reorder(ident, items);
  const Tensor flipped = assoc::reorder(swap, items);
  for (std::size_t i = 0; i < 6; ++i) CHECK(same.at(i) == items.at(i));
  CHECK(flipped.at(0) == 4.0);
  CHECK(flipped.at(3) == 1.0);
  CHECK_THROWS_AS(assoc::reorder(ident, Tensor::from({3, 2}, std::vector<double>(6, 0.0))),
                  Error);
}

TEST_CASE("association gradients pass central differences") {
  Rng rng(204);
  std::vector<double> av(3 * 6), bv(3 * 6), items(3 * 4), wv(3 * 4);
  for (auto& x : av) x = rng.gaussian();
  for (auto& x : bv) x = rng.gaussian();
  for (auto& x : items) x = rng.uniform();
  for (auto& x : wv) x = rng.gaussian();
  const Tensor b = Tensor::from({3, 6}, bv);
  const Tensor payload = Tensor::from({3, 4}, items);
  const Tensor w = Tensor::from({3, 4}, wv);
  auto f = [&](const Tensor& a) {
    const Tensor assign = assoc::soft_assignment(assoc::similarity(a, b), 5.0);
    return ad::reduce_sum(ad::mul(assoc::reorder(assign, payload), w));
  };
  CHECK(ad::grad_check(f, Tensor::from({3, 6}, av), 1e-3).max_rel_err < 1e-5);
  auto g = [&](const Tensor& bb) {
    const Tensor assign =
        assoc::soft_assignment(assoc::similarity(Tensor::from({3, 6}, av), bb), 5.0);
    return ad::reduce_sum(ad::mul(assoc::reorder(assign, payload), w));
  };
  CHECK(ad::grad_check(g, b, 1e-3).max_rel_err < 1e-5);
}

TEST_CASE("association argument validation") {
  const Tensor a = Tensor::from({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
  CHECK_THROWS_AS(
      assoc::similarity(a, Tensor::from({2, 3}, std::vector<double>(6, 1.0))), Error);
  CHECK_THROWS_AS(assoc::similarity(a, a, 9), Error);
  CHECK_THROWS_AS(
      assoc::similarity(Tensor::from({1, 4}, {0.0, 0.0, 0.0, 0.0}), a), Error);
  // Nonzero tail does not save a zero head when only the head is compared.
  CHECK_THROWS_AS(
      assoc::similarity(Tensor::from({1, 4}, {0.0, 0.0, 5.0, 5.0}), a, 2), Error);
  CHECK_THROWS_AS(assoc::soft_assignment(a, 0.0), Error);
}
