#pragma once

// Swin-lite encoder/decoder with a shared self-distillation projection head.
//
// Token stream: patch tokens are linearly embedded, masked positions are
// replaced by a learned mask token, and learned absolute position embeddings
// are added. Blocks are pre-norm transformer blocks whose attention is
// restricted to non-overlapping windows of the patch grid; with shifting on,
// every odd block cyclically shifts the grid by half a window first.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sdmim/config.hpp"
#include "sdmim/ops.hpp"
#include "sdmim/patching.hpp"
#include "sdmim/tensor.hpp"

namespace sdmim {

struct ModelConfig {
  std::size_t patch_dim = 256;  // D = P*P
  PatchGrid grid{8, 8};
  std::size_t dim = 64;         // D'
  std::size_t encoder_depth = 4;
  std::size_t decoder_depth = 1;
  std::size_t heads = 4;
  std::size_t window = 4;
  bool shifted_windows = true;
  std::size_t mlp_hidden = 256;
  std::size_t head_hidden = 256;
  std::size_t bottleneck = 256;
  std::size_t distill_dim = 4096;  // K
  double init_std = 0.02;

  std::size_t tokens() const { return grid.count(); }
  bool operator==(const ModelConfig&) const = default;
};

ModelConfig model_config(const RunConfig& cfg);

/// Closed-form number of scalar parameters for a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kBottleneckEps = 1e-8;

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct BlockParams {
  Tensor<T> norm1_gain, norm1_bias;
  LinearParams<T> query, key, value, proj;
  Tensor<T> norm2_gain, norm2_bias;
  LinearParams<T> fc1, fc2;
};

template <typename T>
struct DistillHeadParams {
  LinearParams<T> fc1, fc2, fc3;  // D' -> hidden -> hidden -> bottleneck
  Tensor<T> prototypes;           // [bottleneck x K], unit-norm columns, no bias
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  LinearParams<T> patch_embed;
  Tensor<T> pos_embed;   // [N x D']
  Tensor<T> mask_token;  // [D']
  std::vector<BlockParams<T>> encoder;
  std::vector<BlockParams<T>> decoder;
  LinearParams<T> pred_head;  // D' -> D
  DistillHeadParams<T> distill_head;

  /// Calls f(name, tensor&, decays) for every learnable tensor in a fixed order.
  void visit(const std::function<void(const std::string&, Tensor<T>&, bool)>& f);
  std::vector<NamedParam<T>> named();
  /// Handles share storage with the model.
  std::vector<NamedParam<T>> named() const { return const_cast<ModelParams*>(this)->named(); }
  std::size_t count();
  void zero_grad();
};

/// Allocates every tensor with the shape implied by cfg, filled with zeros
/// (norm gains with ones). Leaves require gradients.
template <typename T>
ModelParams<T> zero_model(const ModelConfig& cfg);

/// Truncated-normal(std) weights, zero biases, unit norm gains, unit-norm prototype columns.
ModelParams<float> init_model(const ModelConfig& cfg, Rng& rng);

/// Deep copy into another scalar type.
template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& params);

/// Deep copy (fresh tensors, no shared storage).
template <typename T>
ModelParams<T> clone_params(const ModelParams<T>& params);

/// Rescales each prototype column to unit L2 norm.
template <typename T>
void renormalize_prototypes(DistillHeadParams<T>& head);

/// Window membership for `images` stacked grids; shift rolls the grid by `shift` cells.
std::vector<std::vector<std::size_t>> window_groups(PatchGrid grid, std::size_t window, std::size_t shift,
                                                    std::size_t images);

template <typename T>
Tensor<T> embed(const Tensor<T>& tokens, std::span<const std::uint8_t> masked_flags, std::size_t images,
                const ModelParams<T>& params);

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& block,
                        const std::vector<std::vector<std::size_t>>& groups, std::size_t heads);

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& x, std::size_t images, const ModelParams<T>& params);

template <typename T>
Tensor<T> decoder_forward(const Tensor<T>& z_all, std::size_t images, const ModelParams<T>& params);

template <typename T>
Tensor<T> predict_pixels(const Tensor<T>& y, const ModelParams<T>& params);

/// MLP -> bottleneck -> L2 normalize -> prototypes. Returns [rows x K] logits.
template <typename T>
Tensor<T> distill_logits(const Tensor<T>& v, const DistillHeadParams<T>& head);

/// Zeroes attention output and MLP output projections so that every block is the identity.
template <typename T>
void zero_residual_branches(ModelParams<T>& params);

}  // namespace sdmim
