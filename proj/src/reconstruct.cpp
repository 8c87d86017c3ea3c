#include "sdmim/reconstruct.hpp"

#include "sdmim/error.hpp"

namespace sdmim {

Reconstruction reconstruct(const ModelParams<float>& params, const GrayImage& image, std::size_t patch,
                           MaskSplit split, float target_eps) {
  const auto grid = grid_for(image.height, image.width, patch);
  if (!(grid == params.config.grid) || patch * patch != params.config.patch_dim) {
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " does not match the checkpoint's " + std::to_string(params.config.grid.rows) + "x" +
                     std::to_string(params.config.grid.cols) + " patch grid");
  }
  const PatchBatch pb = make_patch_batch(image, patch, split, target_eps);
  const auto stacked = stack_batches<float>(std::span<const PatchBatch>(&pb, 1));

  NoGradGuard no_grad;
  const auto z = encoder_forward(embed(stacked.tokens, stacked.masked_flags, 1, params), 1, params);
  const auto pred = predict_pixels(decoder_forward(z, 1, params), params);

  const auto stats = token_stats(pb.tokens, target_eps);
  const std::size_t d = pb.tokens.cols();
  std::vector<float> masked(pb.tokens.data().begin(), pb.tokens.data().end());
  std::vector<float> recon = masked;
  for (auto i : pb.masked_idx) {
    for (std::size_t j = 0; j < d; ++j) {
      masked[i * d + j] = 0.0f;
      recon[i * d + j] = pred.data()[i * d + j] * stats[i].scale + stats[i].mean;
    }
  }
  Reconstruction r;
  r.original = image;
  r.masked = unpatchify(Tensor<float>(pb.tokens.shape(), std::move(masked), false), grid, patch);
  r.reconstruction = unpatchify(Tensor<float>(pb.tokens.shape(), std::move(recon), false), grid, patch);
  r.split = std::move(split);
  return r;
}

GrayImage triptych(const Reconstruction& r) {
  return hconcat({r.original, r.masked, r.reconstruction});
}

}  // namespace sdmim
