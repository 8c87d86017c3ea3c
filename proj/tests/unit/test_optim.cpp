#include <doctest.h>

#include <cmath>

#include "sdmim/optim.hpp"

using namespace sdmim;

namespace {

std::vector<NamedParam<double>> one_param(double w, double g, bool decay = true) {
  Tensor<double> t({1}, {w}, true);
  t.mutable_grad()[0] = g;
  return {{"w", t, decay}};
}

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("single AdamW step by hand") {
  // mhat = 0.5, vhat = 0.25, update 0.1 * 0.5 / 0.5 = 0.1, decay 0.1 * 0.05 * 1 = 0.005.
  auto params = one_param(1.0, 0.5);
  auto state = make_optimizer(params, {0.9, 0.999, 0.0, 0.05});
  adamw_step(params, state, 0.1);
  CHECK(std::abs(params[0].tensor.data()[0] - 0.895) < 1e-6);
  CHECK(state.step == 1);
  CHECK(state.m[0][0] == doctest::Approx(0.05));
  CHECK(state.v[0][0] == doctest::Approx(0.00025));

  auto with_eps = one_param(1.0, 0.5);
  auto s2 = make_optimizer(with_eps, {0.9, 0.999, 1e-8, 0.05});
  adamw_step(with_eps, s2, 0.1);
  CHECK(std::abs(with_eps[0].tensor.data()[0] - 0.895) < 1e-6);
}

TEST_CASE("AdamW without decay follows the reference recursion for 100 steps") {
  auto params = one_param(0.3, 0.0);
  auto state = make_optimizer(params, {0.9, 0.999, 1e-8, 0.0});
  double w = 0.3, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const double g = std::sin(0.37 * t) + 0.1 * params[0].tensor.data()[0];
    params[0].tensor.mutable_grad()[0] = g;
    adamw_step(params, state, 1e-2);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t)), vhat = v / (1.0 - std::pow(0.999, t));
    w -= 1e-2 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(std::abs(params[0].tensor.data()[0] - w) < 1e-7);
  }
}

TEST_CASE("zero gradient and no decay leave parameters unchanged") {
  auto params = one_param(0.7, 0.0);
  auto state = make_optimizer(params, {0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 5; ++i) adamw_step(params, state, 0.1);
  CHECK(params[0].tensor.data()[0] == 0.7);
}

TEST_CASE("zero learning rate updates moments only") {
  auto params = one_param(0.7, 0.3);
  auto state = make_optimizer(params, {0.9, 0.999, 1e-8, 0.05});
  adamw_step(params, state, 0.0);
  CHECK(params[0].tensor.data()[0] == 0.7);
  CHECK(state.m[0][0] == doctest::Approx(0.03));
  CHECK(state.v[0][0] == doctest::Approx(0.001 * 0.09));
}

TEST_CASE("decay is skipped for excluded tensors") {
  auto params = one_param(2.0, 0.0, false);
  auto state = make_optimizer(params, {0.9, 0.999, 1e-8, 0.5});
  adamw_step(params, state, 0.1);
  CHECK(params[0].tensor.data()[0] == 2.0);
}

TEST_CASE("missing gradient is a contract error naming the tensor") {
  std::vector<NamedParam<double>> params{{"lonely", Tensor<double>({1}, {1.0}, true), true}};
  auto state = make_optimizer(params, {});
  CHECK_THROWS_WITH_AS(adamw_step(params, state, 0.1), doctest::Contains("lonely"), ContractError);
}

TEST_CASE("gradient clipping rescales to the global norm") {
  Tensor<double> a({2}, {0, 0}, true), b({1}, {0}, true);
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 0.0;
  b.mutable_grad()[0] = 4.0;
  std::vector<NamedParam<double>> params{{"a", a, true}, {"b", b, true}};
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(1.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("warmup then cosine schedule") {
  const Schedule s{8e-4, 0.0, 10.0, 100.0};
  CHECK(std::abs(lr_at(s, 5.0) - 4e-4) < 1e-9);
  CHECK(std::abs(lr_at(s, 55.0) - 4e-4) < 1e-9);
  CHECK(std::abs(lr_at(s, 100.0)) < 1e-9);
  CHECK(lr_at(s, 0.0) == 0.0);
  CHECK(lr_at(s, 10.0) == doctest::Approx(8e-4));
  for (double e = 10.0; e < 100.0; e += 0.5) CHECK(lr_at(s, e + 0.5) <= lr_at(s, e));

  const Schedule floored{8e-4, 1e-5, 10.0, 100.0};
  CHECK(lr_at(floored, 99.9) >= 1e-5);
}

}
