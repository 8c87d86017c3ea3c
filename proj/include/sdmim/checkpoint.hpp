#pragma once

// Checkpoint file: a text manifest followed by raw little-endian f32 arrays.
//
//   SDMIM-CHECKPOINT
//   version 1
//   epochs_completed <n>
//   optimizer_step <t>
//   config <line count>
//   <key=value lines>
//   tensors <count>
//   <name> <dims joined by x> <offset> <count>     (offset in floats from data start)
//   end
//   <data>
//
// Tensor names are param/<p>, adam_m/<p>, adam_v/<p>.

#include <cstddef>
#include <filesystem>

#include "sdmim/config.hpp"
#include "sdmim/model.hpp"
#include "sdmim/optim.hpp"

namespace sdmim {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  ModelParams<float> params;
  OptimizerState<float> optimizer;
  std::size_t epochs_completed = 0;
};

void save_checkpoint(const std::filesystem::path& path, ModelParams<float>& params,
                     const OptimizerState<float>& optimizer, const RunConfig& config,
                     std::size_t epochs_completed);

/// Rebuilds the model from the stored config. Throws CheckpointError on
/// bad magic, unsupported version, truncation or inconsistent shapes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies stored parameters into an existing model, requiring every tensor to
/// exist with the same shape; the error names the offending tensor.
void load_params_into(const Checkpoint& ckpt, ModelParams<float>& params);

}  // namespace sdmim
