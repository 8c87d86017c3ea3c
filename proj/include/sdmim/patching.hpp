#pragma once

// Image <-> patch-token conversion, random visible/masked partition and
// per-patch normalized reconstruction targets.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sdmim/image.hpp"
#include "sdmim/ops.hpp"
#include "sdmim/tensor.hpp"

namespace sdmim {

using Rng = std::mt19937_64;

struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t count() const { return rows * cols; }
  bool operator==(const PatchGrid&) const = default;
};

/// Splits an image into non-overlapping PxP patches, row-major over the grid,
/// each flattened row-major into a token of length P*P. Returns [N x P*P].
Tensor<float> patchify(const GrayImage& image, std::size_t patch);

/// Inverse of patchify. With clamp set, values are clipped to [0,1].
GrayImage unpatchify(const Tensor<float>& tokens, PatchGrid grid, std::size_t patch, bool clamp = true);

PatchGrid grid_for(std::size_t height, std::size_t width, std::size_t patch);

struct MaskSplit {
  std::vector<std::size_t> visible;  // sorted
  std::vector<std::size_t> masked;   // sorted
};

/// round(n * ratio) clamped to [1, n-1].
std::size_t masked_count(std::size_t n_patches, double mask_ratio);

/// Uniformly random subset of masked_count(n, ratio) patches.
MaskSplit random_mask(std::size_t n_patches, double mask_ratio, Rng& rng);

/// Mean and scale used to normalize one token: (x - mean) / scale.
struct TokenStats {
  float mean = 0.0f;
  float scale = 1.0f;  // max(population std, eps)
};

std::vector<TokenStats> token_stats(const Tensor<float>& tokens, float eps);

/// Per-row zero mean, unit population std (denominator max(std, eps)).
template <typename T>
Tensor<T> normalize_targets(const Tensor<T>& tokens, T eps);

/// Row selection used for every visible/masked split; differentiable.
template <typename T>
Tensor<T> gather_tokens(const Tensor<T>& tokens, std::span<const std::size_t> idx) {
  return gather_rows(tokens, idx);
}

/// One image prepared for masked modeling.
struct PatchBatch {
  Tensor<float> tokens;                 // v_all, [N x D]
  std::vector<std::size_t> visible_idx;
  std::vector<std::size_t> masked_idx;
  Tensor<float> targets;                // normalized masked tokens, [masked x D]
  Tensor<float> targets_all;            // every token normalized, [N x D]
  PatchGrid grid;
};

PatchBatch make_patch_batch(const GrayImage& image, std::size_t patch, MaskSplit split, float target_eps);

/// Several PatchBatches stacked row-wise; indices are global row numbers.
template <typename T>
struct StackedBatch {
  Tensor<T> tokens;        // [B*N x D]
  Tensor<T> targets_all;   // [B*N x D]
  std::vector<std::size_t> visible_rows;
  std::vector<std::size_t> masked_rows;
  std::vector<std::uint8_t> masked_flags;  // per row
  std::size_t images = 0;
  PatchGrid grid;
};

template <typename T>
StackedBatch<T> stack_batches(std::span<const PatchBatch> batches);

}  // namespace sdmim
