#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sdmim/losses.hpp"
#include "sdmim/trainer.hpp"

using namespace sdmim;

namespace {

struct Toy {
  ModelParams<float> params;
  StackedBatch<float> batch;
};

Toy toy(std::uint64_t seed = 1) {
  auto cfg = test::tiny_config();
  Rng rng(seed);
  Toy t{init_model(model_config(cfg), rng), {}};
  std::vector<PatchBatch> pbs;
  for (std::uint64_t i = 0; i < 2; ++i) {
    Rng mrng(seed + 10 + i);
    pbs.push_back(make_patch_batch(test::random_image(16, 16, seed + i), 4, random_mask(16, 0.25, mrng), 1e-6f));
  }
  t.batch = stack_batches<float>(pbs);
  return t;
}

bool all_zero(std::span<const float> g) {
  for (float v : g)
    if (v != 0.0f) return false;
  return true;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("l1 values") {
  auto y = Tensor<double>({1, 2}, {1, -1});
  CHECK(l1_masked(y, y).item() == 0.0);
  CHECK(l1_masked(Tensor<double>::zeros({1, 2}), y).item() == 1.0);
  CHECK(l1_whole_image(Tensor<double>::zeros({1, 2}), y).item() == 1.0);
  CHECK_THROWS_AS(l1_masked(Tensor<double>::zeros({2, 2}), y), ShapeError);
}

TEST_CASE("l1 gradient is the sign over the element count") {
  auto pred = Tensor<double>({2, 3}, {0.5, -1, 2, 0, 3, -2}, true);
  auto target = Tensor<double>({2, 3}, {0, 0, 3, 1, 1, -1});
  backward(l1_masked(pred, target));
  const std::vector<double> sign{1, -1, -1, -1, 1, -1};
  for (std::size_t i = 0; i < 6; ++i) CHECK(pred.grad()[i] == doctest::Approx(sign[i] / 6.0));
}

TEST_CASE("whole-image loss is non-negative and differs from masked-only") {
  auto t = toy();
  auto masked = pretrain_forward(t.params, t.batch, {1.0, LossMode::masked_only, false, true});
  auto whole = pretrain_forward(t.params, t.batch, {1.0, LossMode::whole_image, false, true});
  CHECK(whole.l1.item() >= 0.0f);
  CHECK(whole.l1.item() != masked.l1.item());
}

TEST_CASE("uniform distillation equals ln K") {
  auto uniform = Tensor<double>::zeros({3, 4});
  CHECK(distill_loss(uniform, uniform, false).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  auto wide = Tensor<double>::full({2, 4096}, 0.37);
  CHECK(std::abs(distill_loss(wide, wide, true).item() - std::log(4096.0)) < 1e-6);
}

TEST_CASE("worked cross-entropy example") {
  auto student = Tensor<double>({1, 2}, {std::log(0.9), std::log(0.1)});
  auto teacher = Tensor<double>({1, 2}, {0.0, 0.0});
  const double expected = -0.5 * (std::log(0.9) + std::log(0.1));
  CHECK(expected == doctest::Approx(1.2040).epsilon(1e-4));
  CHECK(std::abs(distill_loss(student, teacher, true).item() - 1.2040) < 1e-4);
  CHECK(distill_loss(student, teacher, false).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("distillation is minimised where the student matches the teacher") {
  auto teacher = Tensor<double>({1, 3}, {0.2, -1.0, 1.3});
  auto q = Tensor<double>({1, 3}, {0, 0, 0}, true);
  for (int it = 0; it < 5000; ++it) {
    q.zero_grad();
    backward(distill_loss(q, teacher, true));
    for (std::size_t k = 0; k < 3; ++k) q.data()[k] -= 1.0 * q.grad()[k];
  }
  auto ps = softmax_rows(teacher), qs = softmax_rows(q.detach());
  for (std::size_t k = 0; k < 3; ++k) CHECK(qs.data()[k] == doctest::Approx(ps.data()[k]).epsilon(1e-6));
  // The minimum is the teacher's entropy.
  double h = 0;
  for (double p : ps.data()) h -= p * std::log(p);
  CHECK(distill_loss(q.detach(), teacher, true).item() == doctest::Approx(h).epsilon(1e-9));
}

TEST_CASE("stop gradient detaches the teacher logits") {
  auto student = Tensor<double>({2, 3}, {0.1, 0.2, 0.3, -1, 0, 1}, true);
  auto teacher = Tensor<double>({2, 3}, {1, 0, -1, 0.5, 0.5, 0}, true);
  backward(distill_loss(student, teacher, true));
  CHECK_FALSE(teacher.has_grad());
  CHECK(student.has_grad());

  auto teacher2 = Tensor<double>({2, 3}, {1, 0, -1, 0.5, 0.5, 0}, true);
  backward(distill_loss(student, teacher2, false));
  CHECK(teacher2.has_grad());
}

TEST_CASE("total loss mixes with alpha") {
  auto l1 = Tensor<double>::scalar(1.0);
  auto d = Tensor<double>::scalar(2.0);
  CHECK(total_loss(l1, d, 0.2).item() == doctest::Approx(1.8).epsilon(1e-15));
  CHECK_THROWS_AS(total_loss(l1, d, 1.5), ConfigError);
}

TEST_CASE("alpha = 1 is exactly L1 and leaves the distillation head untouched") {
  auto t = toy(3);
  auto f = pretrain_forward(t.params, t.batch, {1.0, LossMode::masked_only, true, true});
  CHECK(f.total.item() == f.l1.item());
  CHECK(f.distill.defined());
  backward(f.total);
  for (auto& p : t.params.named())
    if (p.name.starts_with("distill_head")) CHECK(!p.tensor.has_grad());
  CHECK_FALSE(all_zero(t.params.pred_head.weight.grad()));
}

TEST_CASE("alpha = 0 is exactly the distillation loss and the prediction head gets no signal") {
  auto t = toy(4);
  auto f = pretrain_forward(t.params, t.batch, {0.0, LossMode::masked_only, true, true});
  CHECK(f.total.item() == f.distill.item());
  backward(f.total);
  CHECK(all_zero(t.params.pred_head.weight.grad()));
  CHECK(all_zero(t.params.pred_head.bias.grad()));
  CHECK_FALSE(all_zero(t.params.distill_head.fc1.weight.grad()));
}

TEST_CASE("masked-only objective sends no gradient to visible predictions") {
  auto t = toy(5);
  auto f = pretrain_forward(t.params, t.batch, {1.0, LossMode::masked_only, false, true});
  backward(f.total);
  const auto g = f.pred_all.grad();
  const std::size_t d = f.pred_all.cols();
  for (auto r : t.batch.visible_rows)
    for (std::size_t c = 0; c < d; ++c) CHECK(g[r * d + c] == 0.0f);
  double masked_mass = 0;
  for (auto r : t.batch.masked_rows)
    for (std::size_t c = 0; c < d; ++c) masked_mass += std::abs(g[r * d + c]);
  CHECK(masked_mass > 0.0);

  auto t2 = toy(5);
  auto w = pretrain_forward(t2.params, t2.batch, {1.0, LossMode::whole_image, false, true});
  backward(w.total);
  double visible_mass = 0;
  for (auto r : t2.batch.visible_rows)
    for (std::size_t c = 0; c < d; ++c) visible_mass += std::abs(w.pred_all.grad()[r * d + c]);
  CHECK(visible_mass > 0.0);
}

TEST_CASE("stop gradient keeps distillation out of the decoder") {
  for (bool stop : {true, false}) {
    auto t = toy(6);
    auto f = pretrain_forward(t.params, t.batch, {0.0, LossMode::masked_only, true, stop});
    backward(f.distill);
    bool decoder_touched = false;
    for (auto& p : t.params.named())
      if (p.name.starts_with("decoder.") && p.tensor.has_grad() && !all_zero(p.tensor.grad())) decoder_touched = true;
    CHECK(decoder_touched == !stop);
    CHECK((f.teacher.node() == nullptr || !stop));
  }
}

TEST_CASE("distillation can be switched off") {
  auto t = toy(7);
  auto f = pretrain_forward(t.params, t.batch, {0.2, LossMode::masked_only, false, true});
  CHECK_FALSE(f.distill.defined());
  CHECK(f.total.same(f.l1));
}

}
