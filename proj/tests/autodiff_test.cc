#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "windsr/autodiff.h"
#include "windsr/error.h"

using namespace windsr::autodiff;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = n(rng);
  return t;
}

// Compares backward() against central differences for every input element.
void check_gradients(std::vector<Var> inputs, const std::function<Var(const std::vector<Var>&)>& f,
                     double tol = 1e-6) {
  for (auto& in : inputs) in.zero_grad();
  backward(f(inputs));
  const double h = 1e-6;
  for (auto& in : inputs) {
    for (std::size_t i = 0; i < in.value().size(); ++i) {
      const double keep = in.value()[i];
      in.mutable_value()[i] = keep + h;
      const double up = f(inputs).value()[0];
      in.mutable_value()[i] = keep - h;
      const double down = f(inputs).value()[0];
      in.mutable_value()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      CHECK(in.grad()[i] == doctest::Approx(numeric).epsilon(tol).scale(1.0));
    }
  }
}

// Random projection to a scalar so every output element matters.
Var project(const Var& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> target(v.value().size());
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& t : target) t = n(rng);
  return mse(v, target);
}

}  // namespace

TEST_CASE("conv2d gradients (strided, padded, pointwise)") {
  std::mt19937_64 rng(1);
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 1, 3}, {1, 0, 1}, {2, 0, 3}}) {
    auto x = leaf(random_tensor({2, 7, 6}, rng));
    auto w = leaf(random_tensor({3, 2, k, k}, rng));
    auto b = leaf(random_tensor({3}, rng));
    check_gradients({x, w, b}, [=](const std::vector<Var>& v) {
      return project(conv2d(v[0], v[1], v[2], stride, pad), 5);
    });
  }
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(2);
  auto x = constant(random_tensor({2, 5, 5}, rng));
  auto w = constant(random_tensor({1, 2, 3, 3}, rng));
  auto b = constant(Tensor({1}, {0.25}));
  const auto y = conv2d(x, w, b, 2, 1);
  REQUIRE(y.shape() == Shape{1, 3, 3});
  for (int oy = 0; oy < 3; ++oy)
    for (int ox = 0; ox < 3; ++ox) {
      double acc = 0.25;
      for (int c = 0; c < 2; ++c)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
            acc += w.value()[((c * 3) + ky) * 3 + kx] * x.value()[(c * 5 + iy) * 5 + ix];
          }
      CHECK(y.value()[oy * 3 + ox] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("dense, broadcast, concat and relu gradients") {
  std::mt19937_64 rng(3);
  auto x = leaf(random_tensor({4, 3}, rng));
  auto w = leaf(random_tensor({5, 3}, rng));
  auto b = leaf(random_tensor({5}, rng));
  auto g = leaf(random_tensor({1, 5}, rng));
  auto c = leaf(random_tensor({4, 2}, rng));
  check_gradients({x, w, b, g, c}, [](const std::vector<Var>& v) {
    auto h = relu(add_row(linear(v[0], v[1], v[2]), v[3]));
    return project(concat_cols({h, v[4], scale(v[4], -2.0)}), 7);
  });
}

TEST_CASE("gather, unfold, pooling and ensemble gradients") {
  std::mt19937_64 rng(4);
  auto f = leaf(random_tensor({3, 4, 5}, rng));
  const std::vector<int> idx = {0, 7, 7, 19, 3, 12};
  check_gradients({f}, [&](const std::vector<Var>& v) {
    auto u = unfold3x3(v[0]);
    auto gathered = gather_cells(u, idx);          // [6, 27]
    auto pooled = global_avg_pool(v[0]);           // [1, 3]
    auto col = reshape(gathered, {6 * 27, 1});
    std::vector<double> ew(6 * 27, 0.5);
    auto combined = ensemble_combine(col, ew, 2);  // [81, 1]
    return add(add(project(combined, 9), project(pooled, 10)),
               project(ensemble_combine(reshape(global_avg_pool(v[0]), {3, 1}),
                                        std::vector<double>{1.0, 2.0, 3.0}, 3),
                       11));
  });
}

TEST_CASE("mse between two variables") {
  std::mt19937_64 rng(5);
  auto a = leaf(random_tensor({2, 3, 3}, rng));
  auto b = leaf(random_tensor({2, 3, 3}, rng));
  check_gradients({a, b}, [](const std::vector<Var>& v) {
    auto mid = scale(add(v[0], v[1]), 0.5);
    return add(mse(v[0], mid), mse(v[1], mid));
  });
}

TEST_CASE("no-grad guard skips graph recording") {
  auto w = leaf(Tensor({1, 1}, {2.0}));
  auto x = constant(Tensor({1, 1}, {3.0}));
  {
    NoGradGuard guard;
    auto y = linear(x, w);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.value()[0] == 6.0);
  }
  CHECK(linear(x, w).requires_grad());
}

TEST_CASE("shape errors") {
  auto a = constant(Tensor({2, 3}));
  auto b = constant(Tensor({3, 2}));
  CHECK_THROWS_AS(add(a, b), windsr::Error);
  CHECK_THROWS_AS(linear(a, constant(Tensor({4, 2}))), windsr::Error);
  CHECK_THROWS_AS(mse(a, std::vector<double>(5)), windsr::Error);
}
