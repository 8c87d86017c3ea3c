#include "sdmim/gradcheck.hpp"

#include <random>

#include "sdmim/losses.hpp"
#include "sdmim/model.hpp"
#include "sdmim/ops.hpp"
#include "sdmim/trainer.hpp"

namespace sdmim {
namespace {

class Inputs {
 public:
  explicit Inputs(std::uint64_t seed) : rng_(seed) {}

  Tensor<double> uniform(Shape shape, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = u(rng_);
    return Tensor<double>(std::move(shape), std::move(v), false);
  }

  /// Values in [-2,-lo] U [lo,2], keeping |x| off its kink.
  Tensor<double> away_from_zero(Shape shape, double lo = 0.1) {
    auto t = uniform(std::move(shape), lo, 2.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& x : t.data())
      if (sign(rng_)) x = -x;
    return t;
  }

 private:
  Rng rng_;
};

/// Fixed random weights turning a tensor into a scalar: sum(out * R).
template <typename T>
Tensor<T> project(const Tensor<T>& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> r(out.size());
  for (auto& x : r) x = static_cast<T>(u(rng));
  return sum(mul(out, Tensor<T>(out.shape(), std::move(r), false)));
}

template <typename T>
Tensor<T> as(const Tensor<double>& t) {
  return tensor_cast<T>(t, false);
}

// Element type of the input vector a generic lambda receives.
#define SDMIM_SCALAR(xs) typename std::decay_t<decltype(xs)>::value_type::value_type

}  // namespace

GradcheckResult gradcheck_end_to_end(std::size_t grid_side, std::size_t window, std::size_t depth,
                                     std::uint64_t seed) {
  RunConfig cfg;
  cfg.patch_size = 2;
  cfg.image_height = cfg.image_width = 2 * grid_side;
  cfg.embed_dim = 8;
  cfg.encoder_depth = depth;
  cfg.decoder_depth = 1;
  cfg.num_heads = 2;
  cfg.window_size = window;
  cfg.mlp_ratio = 2;
  cfg.head_hidden_dim = 16;
  cfg.bottleneck_dim = 8;
  cfg.distill_dim = 16;
  cfg.init_std = 0.3;  // large enough that every gradient is far from round-off
  cfg.stop_gradient = false;
  validate(cfg);

  Rng rng(seed);
  const std::size_t images = grid_side > 2 ? 2 : 1;
  std::vector<PatchBatch> batches;
  std::uniform_real_distribution<float> pixel(0.0f, 1.0f);
  for (std::size_t i = 0; i < images; ++i) {
    GrayImage img(cfg.image_height, cfg.image_width);
    for (auto& p : img.pixels) p = pixel(rng);
    auto split = random_mask(grid_side * grid_side, cfg.mask_ratio, rng);
    batches.push_back(make_patch_batch(img, cfg.patch_size, std::move(split), static_cast<float>(cfg.target_eps)));
  }
  const auto batch_f = stack_batches<float>(batches);
  const auto batch_d = stack_batches<double>(batches);
  const auto objective = objective_settings(cfg);
  const auto mc = model_config(cfg);

  auto init = init_model(mc, rng);
  const auto master = cast_params<double>(init);
  std::vector<Tensor<double>> inputs;
  for (const auto& p : master.named()) inputs.push_back(p.tensor);

  auto loss = [&](const auto& xs) {
    using T = SDMIM_SCALAR(xs);
    auto params = zero_model<T>(mc);
    std::size_t i = 0;
    params.visit([&](const std::string&, Tensor<T>& t, bool) { t = xs[i++]; });
    if constexpr (std::is_same_v<T, float>) return pretrain_forward(params, batch_f, objective).total;
    else return pretrain_forward(params, batch_d, objective).total;
  };
  const std::string name = "end_to_end_" + std::to_string(grid_side * grid_side) + "_tokens" +
                           (depth > 1 && window < grid_side ? "_shifted" : "");
  return check_gradients(name, inputs, loss, kEndToEndTolerance);
}

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed) {
  Inputs in(seed);
  std::vector<GradcheckResult> out;
  const double tol = kPrimitiveTolerance;

  out.push_back(check_gradients("matmul", {in.uniform({3, 4}), in.uniform({4, 2})},
                                [](const auto& xs) { return project(matmul(xs[0], xs[1])); }, tol));
  out.push_back(check_gradients("add", {in.uniform({3, 4}), in.uniform({3, 4})},
                                [](const auto& xs) { return project(add(xs[0], xs[1])); }, tol));
  out.push_back(check_gradients("sub", {in.uniform({3, 4}), in.uniform({3, 4})},
                                [](const auto& xs) { return project(sub(xs[0], xs[1])); }, tol));
  out.push_back(check_gradients("mul", {in.uniform({3, 4}), in.uniform({3, 4})},
                                [](const auto& xs) { return project(mul(xs[0], xs[1])); }, tol));
  out.push_back(check_gradients("scale", {in.uniform({3, 4})}, [](const auto& xs) {
    using T = SDMIM_SCALAR(xs);
    return project(scale(xs[0], T(-1.7)));
  }, tol));
  out.push_back(check_gradients("add_row_bias", {in.uniform({3, 4}), in.uniform({4})},
                                [](const auto& xs) { return project(add_row_bias(xs[0], xs[1])); }, tol));
  out.push_back(check_gradients("abs", {in.away_from_zero({3, 4})},
                                [](const auto& xs) { return project(abs(xs[0])); }, tol));
  out.push_back(check_gradients("gelu", {in.uniform({3, 4})},
                                [](const auto& xs) { return project(gelu(xs[0])); }, tol));
  out.push_back(check_gradients("log_clamped", {in.uniform({3, 4}, 0.2, 2.0)}, [](const auto& xs) {
    using T = SDMIM_SCALAR(xs);
    return project(log_clamped(xs[0], T(kLogFloor)));
  }, tol));
  out.push_back(check_gradients("sum", {in.uniform({3, 4})}, [](const auto& xs) { return sum(xs[0]); }, tol));
  out.push_back(check_gradients("mean", {in.uniform({3, 4})}, [](const auto& xs) { return mean(xs[0]); }, tol));
  out.push_back(check_gradients("softmax_rows", {in.uniform({3, 5})},
                                [](const auto& xs) { return project(softmax_rows(xs[0])); }, tol));
  out.push_back(check_gradients("layer_norm", {in.uniform({3, 6}), in.uniform({6}), in.uniform({6})},
                                [](const auto& xs) {
                                  using T = SDMIM_SCALAR(xs);
                                  return project(layer_norm(xs[0], xs[1], xs[2], T(kLayerNormEps)));
                                }, tol));
  out.push_back(check_gradients("l2_normalize_rows", {in.uniform({3, 4})}, [](const auto& xs) {
    using T = SDMIM_SCALAR(xs);
    return project(l2_normalize_rows(xs[0], T(kBottleneckEps)));
  }, tol));
  out.push_back(check_gradients("gather_rows", {in.uniform({4, 3})}, [](const auto& xs) {
    const std::vector<std::size_t> idx{2, 0, 2, 3};  // repeated row: scatter-add
    return project(gather_rows(xs[0], std::span<const std::size_t>(idx)));
  }, tol));
  out.push_back(check_gradients("replace_rows", {in.uniform({4, 3}), in.uniform({3})}, [](const auto& xs) {
    const std::vector<std::uint8_t> flags{0, 1, 0, 1};
    return project(replace_rows(xs[0], std::span<const std::uint8_t>(flags), xs[1]));
  }, tol));
  out.push_back(check_gradients("grouped_attention", {in.uniform({8, 4}), in.uniform({8, 4}), in.uniform({8, 4})},
                                [](const auto& xs) {
                                  const std::vector<std::vector<std::size_t>> groups{{0, 3, 5, 6}, {1, 2, 4, 7}};
                                  return project(grouped_attention(xs[0], xs[1], xs[2], groups, 2));
                                }, tol));
  out.push_back(check_gradients("shared_subexpression", {in.uniform({3, 4})}, [](const auto& xs) {
    const auto g = gelu(xs[0]);
    return project(add(mul(g, xs[0]), g));
  }, tol));

  const auto target = in.uniform({3, 4});
  out.push_back(check_gradients("l1_masked", {in.uniform({3, 4})}, [&](const auto& xs) {
    using T = SDMIM_SCALAR(xs);
    return l1_masked(xs[0], as<T>(target));
  }, tol));
  out.push_back(check_gradients("l1_whole_image", {in.uniform({3, 4})}, [&](const auto& xs) {
    using T = SDMIM_SCALAR(xs);
    return l1_whole_image(xs[0], as<T>(target));
  }, tol));
  out.push_back(check_gradients("distill_loss", {in.uniform({3, 5}), in.uniform({3, 5})},
                                [](const auto& xs) { return distill_loss(xs[0], xs[1], false); }, tol));
  const auto teacher = in.uniform({3, 5});
  out.push_back(check_gradients("distill_loss_stop_gradient", {in.uniform({3, 5})}, [&](const auto& xs) {
    using T = SDMIM_SCALAR(xs);
    return distill_loss(xs[0], as<T>(teacher), true);
  }, tol));
  out.push_back(check_gradients("total_loss", {in.uniform({}), in.uniform({})},
                                [](const auto& xs) { return total_loss(xs[0], xs[1], 0.2); }, tol));

  out.push_back(gradcheck_end_to_end(2, 2, 1, seed + 1));
  out.push_back(gradcheck_end_to_end(4, 2, 2, seed + 2));
  return out;
}

}  // namespace sdmim
