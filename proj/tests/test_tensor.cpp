#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "langdet/gradcheck.hpp"
#include "langdet/ops.hpp"
#include "langdet/rng.hpp"
#include "langdet/tensor.hpp"

using namespace langdet;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = true) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

// Keeps coordinates away from the kinks of relu/abs/min/max so central
// differences stay valid.
Tensor random_tensor_offset(Rng& rng, Shape shape, double min_mag, bool requires_grad = true) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) {
    double s = rng.normal();
    x = s + (s >= 0.0 ? min_mag : -min_mag);
  }
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("forward primitive examples") {
  auto a = Tensor::from_values({2}, {1, 2});
  auto b = Tensor::from_values({2}, {3, 4});
  auto c = add(a, b);
  CHECK(c[0] == 4.0);
  CHECK(c[1] == 6.0);

  // matmul against the identity leaves any 3x3 matrix unchanged
  auto eye = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(7);
  auto m = random_tensor(rng, {3, 3}, false);
  auto prod = matmul(eye, m);
  for (std::size_t i = 0; i < 9; ++i) CHECK(prod[i] == doctest::Approx(m[i]).epsilon(1e-15));

  CHECK(mean(Tensor::from_values({3}, {2, 4, 6})).value() == doctest::Approx(4.0));
}

TEST_CASE("shape mismatch rejected with both shapes named") {
  auto a = Tensor::from_values({2}, {1, 2});
  auto b = Tensor::from_values({3}, {1, 2, 3});
  try {
    add(a, b);
    FAIL("expected exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2)") != std::string::npos);
    CHECK(msg.find("(3)") != std::string::npos);
  }
}

TEST_CASE("softmax basics") {
  auto u = softmax(Tensor::from_values({3}, {0, 0, 0}), 1.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // shift invariance
  const double c = 3.7, delta = 0.9, temp = 0.55;
  auto s1 = softmax(Tensor::from_values({2}, {c, c + delta}), temp);
  auto s2 = softmax(Tensor::from_values({2}, {0.0, delta}), temp);
  CHECK(s1[0] == doctest::Approx(s2[0]).epsilon(1e-14));
  CHECK(s1[1] == doctest::Approx(s2[1]).epsilon(1e-14));

  // direct exponentiation oracle for softmax([1,2,3], T=1)
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  auto s = softmax(Tensor::from_values({3}, {1, 2, 3}), 1.0);
  CHECK(s[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
  CHECK(s[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));

  CHECK_THROWS_AS(softmax(Tensor::from_values({2}, {1, 2}), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax(Tensor::from_values({2}, {1, 2}), -1.0), std::invalid_argument);
}

TEST_CASE("softmax outputs form a distribution") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor(rng, {17}, false);
    auto y = softmax(x, rng.uniform(0.05, 3.0));
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y[i] > 0.0);
      total += y[i];
    }
    CHECK(std::fabs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("cosine similarity identities") {
  Rng rng(3);
  auto v = random_tensor(rng, {8}, false);
  CHECK(cosine_similarity(v, v).value() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_similarity(v, scale(v, -1.0)).value() == doctest::Approx(-1.0).epsilon(1e-12));

  auto ex = Tensor::from_values({2}, {1, 0});
  auto ey = Tensor::from_values({2}, {0, 1});
  CHECK(cosine_similarity(ex, ey).value() == doctest::Approx(0.0));

  // symmetry and positive scale invariance
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor(rng, {11}, false);
    auto b = random_tensor(rng, {11}, false);
    const double ab = cosine_similarity(a, b).value();
    CHECK(cosine_similarity(b, a).value() == doctest::Approx(ab).epsilon(1e-15));
    const double lambda = rng.uniform(0.1, 9.0);
    CHECK(std::fabs(cosine_similarity(scale(a, lambda), b).value() - ab) < 1e-12);
  }

  CHECK_THROWS_AS(cosine_similarity(Tensor::zeros({4}), v), std::invalid_argument);
}

TEST_CASE("kl divergence values") {
  auto p = Tensor::from_values({3}, {0.2, 0.5, 0.3});
  CHECK(kl_divergence(p, p).value() == doctest::Approx(0.0).epsilon(1e-15));

  auto one_hot = Tensor::from_values({2}, {1.0, 0.0});
  auto half = Tensor::from_values({2}, {0.5, 0.5});
  CHECK(kl_divergence(one_hot, half).value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // direct sum-p-log(p/q) oracle
  auto p2 = Tensor::from_values({2}, {0.3, 0.7});
  auto q2 = Tensor::from_values({2}, {0.6, 0.4});
  const double oracle = 0.3 * std::log(0.3 / 0.6) + 0.7 * std::log(0.7 / 0.4);
  CHECK(kl_divergence(p2, q2).value() == doctest::Approx(oracle).epsilon(1e-12));

  CHECK_THROWS_AS(kl_divergence(p, half), std::invalid_argument);
}

TEST_CASE("kl nonnegativity over random distributions") {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 9;
    std::vector<double> pv(n), qv(n);
    double ps = 0, qs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      pv[i] = rng.uniform(0.0, 1.0);
      qv[i] = rng.uniform(0.0, 1.0) + 1e-6;
      ps += pv[i];
      qs += qv[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      pv[i] /= ps;
      qv[i] /= qs;
    }
    auto p = Tensor::from_values({n}, pv);
    auto q = Tensor::from_values({n}, qv);
    CHECK(kl_divergence(p, q).value() >= -1e-12);
    CHECK(kl_divergence(p, p).value() < 1e-10);
  }
}

TEST_CASE("backward on sum of squares") {
  auto x = Tensor::from_values({2}, {1, 2}, true);
  auto loss = sum(mul(x, x));
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));

  auto fd = finite_difference_check([&] { return sum(mul(x, x)); }, x, 1e-5);
  CHECK(fd < 1e-6);
}

TEST_CASE("backward requires scalar loss and non-empty tape") {
  auto x = Tensor::from_values({2}, {1, 2}, true);
  auto y = add(x, x);
  CHECK_THROWS_AS(y.backward(), std::invalid_argument);
  auto constant = Tensor::from_values({1}, {3.0});
  CHECK_THROWS_AS(constant.backward(), std::invalid_argument);
}

TEST_CASE("gradient accumulates across fan-out") {
  auto x = Tensor::scalar(3.0, true);
  auto y = add(x, x);  // dy/dx = 2
  auto loss = sum(y);
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("backward is deterministic") {
  for (int rep = 0; rep < 2; ++rep) {
    Rng rng(99);
    auto a = random_tensor(rng, {6, 5});
    auto b = random_tensor(rng, {5, 4});
    auto loss = sum(gelu(matmul(a, b)));
    loss.backward();
    static std::vector<double> first_a, first_b;
    if (rep == 0) {
      first_a = a.grad();
      first_b = b.grad();
    } else {
      CHECK(a.grad() == first_a);  // bit-identical
      CHECK(b.grad() == first_b);
    }
  }
}

TEST_CASE("finite differences across every differentiable op, 20 seeds") {
  for (int seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 1337);

    auto a = random_tensor(rng, {4, 3});
    auto b = random_tensor(rng, {4, 3});
    CHECK(finite_difference_check_many([&] { return sum(mul(add(a, b), sub(a, b))); }, {a, b}) < 1e-4);

    auto denom = random_tensor_offset(rng, {7}, 0.5);
    auto numer = random_tensor(rng, {7});
    CHECK(finite_difference_check_many([&] { return mean(div(numer, denom)); }, {numer, denom}) < 1e-4);

    auto m1 = random_tensor(rng, {3, 5});
    auto m2 = random_tensor(rng, {5, 2});
    CHECK(finite_difference_check_many([&] { return sum(matmul(m1, m2)); }, {m1, m2}) < 1e-4);
    auto m3 = random_tensor(rng, {4, 5});
    CHECK(finite_difference_check_many([&] { return sum(matmul(m1, m3, true)); }, {m1, m3}) < 1e-4);

    auto v1 = random_tensor(rng, {4});
    auto v2 = random_tensor(rng, {3});
    CHECK(finite_difference_check_many(
              [&] { return mean(concat({v1, v2})); }, {v1, v2}) < 1e-4);
    auto r1 = random_tensor(rng, {2, 3});
    auto r2 = random_tensor(rng, {2, 4});
    CHECK(finite_difference_check_many([&] { return sum(concat({r1, r2}, 1)); }, {r1, r2}) < 1e-4);

    auto sl = random_tensor(rng, {9});
    CHECK(finite_difference_check([&] { return sum(slice(sl, 2, 6)); }, sl) < 1e-4);
    auto sm = random_tensor(rng, {5, 4});
    CHECK(finite_difference_check([&] { return sum(slice_rows(sm, 1, 3)); }, sm) < 1e-4);
    CHECK(finite_difference_check([&] { return sum(slice_cols(sm, 0, 2)); }, sm) < 1e-4);
    CHECK(finite_difference_check([&] { return sum(mul(reshape(sm, {4, 5}), reshape(sm, {4, 5}))); }, sm) < 1e-4);

    auto act = random_tensor_offset(rng, {12}, 0.05);
    CHECK(finite_difference_check([&] { return sum(relu(act)); }, act) < 1e-4);
    CHECK(finite_difference_check([&] { return sum(gelu(act)); }, act) < 1e-4);
    CHECK(finite_difference_check([&] { return sum(sigmoid(act)); }, act) < 1e-4);
    CHECK(finite_difference_check([&] { return sum(langdet::abs(act)); }, act) < 1e-4);

    auto mna = random_tensor(rng, {10});
    auto mnb = add(random_tensor(rng, {10}, false), Tensor::full({10}, 0.4));
    auto mnb_leaf = random_tensor(rng, {10});
    CHECK(finite_difference_check([&] { return sum(vmin(mna, mnb)); }, mna) < 1e-4);
    CHECK(finite_difference_check([&] { return sum(vmax(mna, mnb)); }, mna) < 1e-4);
    (void)mnb_leaf;

    auto ln_x = random_tensor(rng, {3, 6});
    auto gamma = random_tensor_offset(rng, {6}, 0.2);
    auto beta = random_tensor(rng, {6});
    CHECK(finite_difference_check_many(
              [&] { return sum(layer_norm(ln_x, gamma, beta)); }, {ln_x, gamma, beta}) < 1e-4);

    auto sx = random_tensor(rng, {7});
    CHECK(finite_difference_check([&] { return sum(mul(softmax(sx, 0.7), sx)); }, sx) < 1e-4);
    auto smx = random_tensor(rng, {3, 5});
    CHECK(finite_difference_check(
              [&] { return sum(mul(softmax_rows(smx, 1.3), smx)); }, smx) < 1e-4);

    auto logits = random_tensor(rng, {6});
    CHECK(finite_difference_check([&] { return cross_entropy(logits, 2); }, logits) < 1e-4);
    auto logit_rows = random_tensor(rng, {3, 4});
    CHECK(finite_difference_check(
              [&] { return mean(cross_entropy_rows(logit_rows, {1, 0, 3})); }, logit_rows) < 1e-4);

    auto ca = random_tensor_offset(rng, {9}, 0.1);
    auto cb = random_tensor_offset(rng, {9}, 0.1);
    CHECK(finite_difference_check_many([&] { return cosine_similarity(ca, cb); }, {ca, cb}) < 1e-4);

    auto img = random_tensor(rng, {2, 6, 6});
    auto ker = random_tensor(rng, {3, 2, 3, 3});
    auto kb = random_tensor(rng, {3});
    CHECK(finite_difference_check_many(
              [&] { return mean(conv2d(img, ker, kb, 2, 1)); }, {img, ker, kb}) < 1e-4);
    CHECK(finite_difference_check([&] { return sum(global_avg_pool(img)); }, img) < 1e-4);

    auto rows = random_tensor(rng, {4, 3});
    auto rvec = random_tensor(rng, {3});
    CHECK(finite_difference_check_many(
              [&] { return sum(mul(add_rowvec(rows, rvec), rows)); }, {rows, rvec}) < 1e-4);

    auto table = random_tensor(rng, {5, 3});
    CHECK(finite_difference_check(
              [&] { return sum(embedding_rows(table, {0, 2, 2, 4})); }, table) < 1e-4);

    auto toks = random_tensor(rng, {6, 4});
    CHECK(finite_difference_check(
              [&] { return sum(mul(tokens_to_chw(toks, 2, 3), tokens_to_chw(toks, 2, 3))); }, toks) < 1e-4);

    auto p_vals = softmax(random_tensor(rng, {5}, false), 1.0);
    auto q_logits = random_tensor(rng, {5});
    CHECK(finite_difference_check(
              [&] { return kl_divergence(p_vals, softmax(q_logits, 1.0)); }, q_logits) < 1e-5);
  }
}

TEST_CASE("softmax plus kl composite gradient") {
  Rng rng(404);
  auto p = softmax(random_tensor(rng, {9}, false), 1.0);
  auto logits = random_tensor(rng, {9});
  auto err = finite_difference_check(
      [&] { return kl_divergence(p, softmax(logits, 0.5)); }, logits, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("interior nodes are immutable") {
  auto x = Tensor::from_values({2}, {1, 2}, true);
  auto y = add(x, x);
  CHECK_THROWS_AS(y.mutable_values(), std::logic_error);
}
