#include "sdmim/patching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sdmim/error.hpp"

namespace sdmim {

PatchGrid grid_for(std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
  return {height / patch, width / patch};
}

Tensor<float> patchify(const GrayImage& image, std::size_t patch) {
  const auto grid = grid_for(image.height, image.width, patch);
  const std::size_t d = patch * patch;
  std::vector<float> out(grid.count() * d);
  for (std::size_t gr = 0; gr < grid.rows; ++gr) {
    for (std::size_t gc = 0; gc < grid.cols; ++gc) {
      float* tok = out.data() + (gr * grid.cols + gc) * d;
      for (std::size_t r = 0; r < patch; ++r)
        for (std::size_t c = 0; c < patch; ++c) tok[r * patch + c] = image.at(gr * patch + r, gc * patch + c);
    }
  }
  return Tensor<float>({grid.count(), d}, std::move(out));
}

GrayImage unpatchify(const Tensor<float>& tokens, PatchGrid grid, std::size_t patch, bool clamp) {
  const std::size_t d = patch * patch;
  if (tokens.ndim() != 2 || tokens.dim(0) != grid.count() || tokens.dim(1) != d) {
    throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not fit a " +
                     std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid of " +
                     std::to_string(patch) + "x" + std::to_string(patch) + " patches");
  }
  GrayImage img(grid.rows * patch, grid.cols * patch);
  auto ts = tokens.data();
  for (std::size_t gr = 0; gr < grid.rows; ++gr) {
    for (std::size_t gc = 0; gc < grid.cols; ++gc) {
      const float* tok = ts.data() + (gr * grid.cols + gc) * d;
      for (std::size_t r = 0; r < patch; ++r) {
        for (std::size_t c = 0; c < patch; ++c) {
          float v = tok[r * patch + c];
          if (clamp) v = std::clamp(v, 0.0f, 1.0f);
          img.at(gr * patch + r, gc * patch + c) = v;
        }
      }
    }
  }
  return img;
}

std::size_t masked_count(std::size_t n_patches, double mask_ratio) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw ConfigError("mask_ratio", "must lie strictly between 0 and 1, got " + std::to_string(mask_ratio));
  }
  if (n_patches < 2) throw ConfigError("mask_ratio", "masking needs at least 2 patches");
  const auto raw = static_cast<std::size_t>(std::llround(static_cast<double>(n_patches) * mask_ratio));
  return std::clamp<std::size_t>(raw, 1, n_patches - 1);
}

MaskSplit random_mask(std::size_t n_patches, double mask_ratio, Rng& rng) {
  const std::size_t m = masked_count(n_patches, mask_ratio);
  std::vector<std::size_t> perm(n_patches);
  std::iota(perm.begin(), perm.end(), 0);
  // Partial Fisher-Yates: the first m slots are a uniform m-subset.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_patches - 1);
    std::swap(perm[i], perm[pick(rng)]);
  }
  MaskSplit split;
  split.masked.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m));
  split.visible.assign(perm.begin() + static_cast<std::ptrdiff_t>(m), perm.end());
  std::sort(split.masked.begin(), split.masked.end());
  std::sort(split.visible.begin(), split.visible.end());
  return split;
}

std::vector<TokenStats> token_stats(const Tensor<float>& tokens, float eps) {
  const std::size_t d = tokens.cols();
  const std::size_t n = tokens.size() / d;
  std::vector<TokenStats> stats(n);
  auto ts = tokens.data();
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += ts[r * d + c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (ts[r * d + c] - mu) * (ts[r * d + c] - mu);
    var /= static_cast<double>(d);
    stats[r].mean = static_cast<float>(mu);
    stats[r].scale = std::max(static_cast<float>(std::sqrt(var)), eps);
  }
  return stats;
}

template <typename T>
Tensor<T> normalize_targets(const Tensor<T>& tokens, T eps) {
  if (!(eps > T(0))) throw ContractError("normalize_targets: eps must be positive");
  const std::size_t d = tokens.cols();
  const std::size_t n = tokens.size() / d;
  std::vector<T> out(tokens.size());
  auto ts = tokens.data();
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += ts[r * d + c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (ts[r * d + c] - mu) * (ts[r * d + c] - mu);
    var /= static_cast<double>(d);
    const double denom = std::max(std::sqrt(var), static_cast<double>(eps));
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = static_cast<T>((ts[r * d + c] - mu) / denom);
  }
  return Tensor<T>(tokens.shape(), std::move(out));
}

PatchBatch make_patch_batch(const GrayImage& image, std::size_t patch, MaskSplit split, float target_eps) {
  PatchBatch b;
  b.grid = grid_for(image.height, image.width, patch);
  b.tokens = patchify(image, patch);
  b.visible_idx = std::move(split.visible);
  b.masked_idx = std::move(split.masked);
  if (b.visible_idx.size() + b.masked_idx.size() != b.grid.count()) {
    throw ContractError("make_patch_batch: mask split does not cover the patch grid");
  }
  b.targets_all = normalize_targets(b.tokens, target_eps);
  if (!b.masked_idx.empty()) b.targets = gather_rows(b.targets_all, std::span<const std::size_t>(b.masked_idx));
  return b;
}

template <typename T>
StackedBatch<T> stack_batches(std::span<const PatchBatch> batches) {
  if (batches.empty()) throw ContractError("stack_batches: empty batch");
  StackedBatch<T> s;
  s.images = batches.size();
  s.grid = batches.front().grid;
  const std::size_t n = s.grid.count();
  const std::size_t d = batches.front().tokens.cols();
  std::vector<T> tokens, targets;
  tokens.reserve(s.images * n * d);
  targets.reserve(s.images * n * d);
  s.masked_flags.assign(s.images * n, 0);
  for (std::size_t b = 0; b < s.images; ++b) {
    const auto& pb = batches[b];
    if (!(pb.grid == s.grid) || pb.tokens.cols() != d) throw ShapeError("stack_batches: images differ in shape");
    tokens.insert(tokens.end(), pb.tokens.data().begin(), pb.tokens.data().end());
    targets.insert(targets.end(), pb.targets_all.data().begin(), pb.targets_all.data().end());
    for (auto i : pb.visible_idx) s.visible_rows.push_back(b * n + i);
    for (auto i : pb.masked_idx) {
      s.masked_rows.push_back(b * n + i);
      s.masked_flags[b * n + i] = 1;
    }
  }
  s.tokens = Tensor<T>({s.images * n, d}, std::move(tokens));
  s.targets_all = Tensor<T>({s.images * n, d}, std::move(targets));
  return s;
}

template Tensor<float> normalize_targets<float>(const Tensor<float>&, float);
template Tensor<double> normalize_targets<double>(const Tensor<double>&, double);
template StackedBatch<float> stack_batches<float>(std::span<const PatchBatch>);
template StackedBatch<double> stack_batches<double>(std::span<const PatchBatch>);

}  // namespace sdmim
