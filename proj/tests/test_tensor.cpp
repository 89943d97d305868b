#include <doctest.h>

#include <cstring>
#include <string>
#include <vector>

#include "rectflow/adam.hpp"
#include "rectflow/rng.hpp"
#include "rectflow/tensor.hpp"
#include "test_support.hpp"

using namespace rectflow;

namespace {

Tensor random_tensor(Shape shape, rng::Prng& prng, bool requires_grad = true,
                     double scl = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = scl * prng.gauss();
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_SUITE("tensor_engine") {

TEST_CASE("add is elementwise") {
  auto a = Tensor::from_values({2}, {1.0, 2.0});
  auto b = Tensor::from_values({2}, {3.0, 4.0});
  auto c = add(a, b);
  CHECK(c.values() == std::vector<double>{4.0, 6.0});
}

TEST_CASE("matmul by identity returns the operand") {
  rng::Prng prng(7, rng::kInit, 0);
  auto a = random_tensor({3, 3}, prng, false);
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  auto id = Tensor::from_values({3, 3}, eye);
  auto out = matmul(id, a);
  CHECK(out.values() == a.values());
}

TEST_CASE("mean of squares") {
  auto x = Tensor::from_values({2}, {3.0, 4.0});
  CHECK(mean(square(x)).item() == doctest::Approx(12.5).epsilon(1e-15));
}

TEST_CASE("broadcasting follows standard rules") {
  auto a = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  auto row = Tensor::from_values({3}, {10, 20, 30});
  auto col = Tensor::from_values({2, 1}, {100, 200});
  CHECK(add(a, row).values() ==
        std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(add(a, col).values() ==
        std::vector<double>{101, 102, 103, 204, 205, 206});
  CHECK(mul(a, Tensor::scalar(2.0)).values() ==
        std::vector<double>{2, 4, 6, 8, 10, 12});
}

TEST_CASE("shape mismatch errors name both shapes") {
  auto a = Tensor::from_values({2}, {1.0, 2.0});
  auto b = Tensor::from_values({3}, {1.0, 2.0, 3.0});
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
  auto m = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  auto n = Tensor::from_values({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS((void)matmul(m, n), ShapeError);
}

TEST_CASE("non-finite results raise a numeric fault") {
  auto big = Tensor::from_values({1}, {1000.0});
  CHECK_THROWS_AS((void)exp(big), NumericFault);
  auto neg = Tensor::from_values({1}, {-1.0});
  CHECK_THROWS_AS((void)sqrt(neg), NumericFault);
}

TEST_CASE("backward of sum of squares is 2x") {
  auto x = Tensor::from_values({3}, {1.0, 2.0, 3.0}, true);
  backward(sum(square(x)));
  CHECK(x.grad() == std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("backward of mean is 1/n") {
  auto x = Tensor::from_values({4}, {1.0, 2.0, 3.0, 4.0}, true);
  backward(mean(x));
  CHECK(x.grad() == std::vector<double>{0.25, 0.25, 0.25, 0.25});
}

TEST_CASE("backward contract errors") {
  auto x = Tensor::from_values({2}, {1.0, 2.0}, true);
  auto y = square(x);
  CHECK_THROWS_AS(backward(y), ContractError);  // non-scalar loss
  backward(sum(y));                             // clears the tape
  CHECK_THROWS_AS(backward(sum(square(Tensor::from_values({1}, {2.0})))),
                  ContractError);  // nothing recorded, tape empty
  Tape::current().clear();
}

TEST_CASE("no-grad scope detaches results") {
  auto x = Tensor::from_values({2}, {1.0, 2.0}, true);
  const std::size_t before = Tape::current().size();
  {
    NoGradGuard guard;
    auto y = square(x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(Tape::current().size() == before);
}

TEST_CASE("slice and concat round values correctly") {
  auto a = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  auto s = slice(a, 1, 1, 2);
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s.values() == std::vector<double>{2, 3, 5, 6});
  auto c = concat({a, a}, 0);
  CHECK(c.shape() == Shape{4, 3});
  auto c1 = concat({a, s}, 1);
  CHECK(c1.shape() == Shape{2, 5});
  CHECK(c1.values() == std::vector<double>{1, 2, 3, 2, 3, 4, 5, 6, 5, 6});
}

TEST_CASE("gradient check covers every primitive") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    rng::Prng prng(seed, rng::kInit, 99);
    auto x = random_tensor({4, 3}, prng);
    auto y = random_tensor({4, 3}, prng);
    auto row = random_tensor({3}, prng);
    auto m = random_tensor({3, 5}, prng);

    using LF = std::function<Tensor()>;
    const std::vector<std::pair<const char*, LF>> cases = {
        {"add", [&] { return sum(square(add(x, y))); }},
        {"add_bcast", [&] { return sum(square(add(x, row))); }},
        {"sub", [&] { return sum(square(sub(x, y))); }},
        {"mul", [&] { return sum(mul(x, y)); }},
        {"mul_bcast", [&] { return sum(mul(x, row)); }},
        {"matmul", [&] { return sum(square(matmul(x, m))); }},
        {"scale", [&] { return sum(scale(x, -2.5)); }},
        {"mean", [&] { return mean(mul(x, x)); }},
        {"sqrt", [&] { return sum(sqrt(add(square(x), row.defined()
                                                         ? square(row)
                                                         : square(row)))); }},
        {"exp", [&] { return sum(exp(scale(x, 0.3))); }},
        {"sin", [&] { return sum(sin(x)); }},
        {"cos", [&] { return sum(cos(x)); }},
        {"tanh", [&] { return sum(tanh(x)); }},
        {"transpose", [&] { return sum(square(matmul(transpose(x), x))); }},
        {"reshape", [&] { return sum(square(reshape(x, {3, 4}))); }},
        {"concat", [&] { return sum(square(concat({x, y}, 1))); }},
        {"slice", [&] { return sum(square(slice(x, 0, 1, 2))); }},
        {"broadcast_to",
         [&] { return sum(square(broadcast_to(row, {4, 3}))); }},
        {"composite", [&] {
           auto h = tanh(add(matmul(x, m), slice(matmul(y, m), 0, 0, 4)));
           return mean(square(h));
         }},
    };
    for (const auto& [name, fn] : cases) {
      auto res = testsup::gradcheck(fn, {x, y, row, m});
      INFO("primitive ", name, " seed ", seed, ": ", res.detail);
      CHECK(res.ok);
    }
  }
}

TEST_CASE("backward is linear in the loss") {
  rng::Prng prng(3, rng::kInit, 5);
  auto x = random_tensor({8}, prng);
  auto w = random_tensor({8}, prng);

  auto l1 = [&] { return sum(mul(x, w)); };
  auto l2 = [&] { return mean(square(x)); };

  x.zero_grad();
  w.zero_grad();
  backward(add(l1(), l2()));
  auto combined = x.grad();

  x.zero_grad();
  w.zero_grad();
  backward(l1());
  auto g1 = x.grad();
  x.zero_grad();
  backward(l2());
  auto g2 = x.grad();

  for (std::size_t i = 0; i < combined.size(); ++i) {
    CHECK(combined[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
  }
}

TEST_CASE("tape replay is bit-deterministic") {
  auto run = [](std::vector<double>& grads_out) {
    rng::Prng prng(11, rng::kInit, 0);
    auto x = random_tensor({6, 4}, prng);
    auto m = random_tensor({4, 4}, prng);
    auto loss = mean(square(tanh(matmul(x, m))));
    backward(loss);
    grads_out = m.grad();
  };
  std::vector<double> a, b;
  run(a);
  run(b);
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  auto w = Tensor::from_values({3}, {1.0, -2.0, 0.5}, true);
  std::vector<Tensor> params{w};
  AdamState state(AdamConfig{}, params);
  const auto before = w.values();
  for (int i = 0; i < 25; ++i) {
    state.step(params, {std::vector<double>(3, 0.0)});
  }
  CHECK(w.values() == before);
  CHECK(state.step_count() == 25);
}

TEST_CASE("adam first step moves against the gradient by about lr") {
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  auto w = Tensor::from_values({1}, {0.7}, true);
  std::vector<Tensor> params{w};
  AdamState state(cfg, params);
  state.step(params, {{2.3}});
  const double delta = w.values()[0] - 0.7;
  CHECK(delta < 0.0);
  CHECK(std::abs(delta) == doctest::Approx(cfg.learning_rate).epsilon(1e-6));
}

TEST_CASE("adam matches a scalar reference on a quadratic") {
  // Reference: textbook bias-corrected Adam on f(w) = (w - 3)^2.
  double w_ref = 0.0, m = 0.0, v = 0.0;
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> ref_path;
  for (int k = 1; k <= 100; ++k) {
    const double g = 2.0 * (w_ref - 3.0);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, k));
    const double vhat = v / (1 - std::pow(b2, k));
    w_ref -= lr * mhat / (std::sqrt(vhat) + eps);
    ref_path.push_back(w_ref);
  }
  CHECK(std::abs(w_ref - 3.0) < 0.5);

  AdamConfig cfg;
  cfg.learning_rate = lr;
  auto w = Tensor::from_values({1}, {0.0}, true);
  std::vector<Tensor> params{w};
  AdamState state(cfg, params);
  for (int k = 0; k < 100; ++k) {
    auto diff = sub(w, Tensor::scalar(3.0));
    backward(sum(square(diff)));
    state.step(params);
    CHECK(w.values()[0] == doctest::Approx(ref_path[k]).epsilon(1e-12));
  }
  CHECK(std::abs(w.values()[0] - 3.0) < 0.5);
}

TEST_CASE("grad buffers are shape-congruent") {
  auto x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(square(x)));
  CHECK(x.grad().size() == x.size());
}

}  // TEST_SUITE
