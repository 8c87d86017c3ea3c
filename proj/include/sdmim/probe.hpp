#pragma once

// Frozen-encoder linear probe on per-patch labels, plus an optional
// fine-tuning variant that also updates the encoder.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdmim/config.hpp"
#include "sdmim/data.hpp"
#include "sdmim/model.hpp"

namespace sdmim {

struct ProbeFeatures {
  Tensor<float> features;            // [images*N x D'] encoder outputs, no masking
  std::vector<std::uint8_t> labels;  // one per row
};

/// Encoder forward on the unmasked token stream of every image.
/// Throws ShapeError when an image does not match the model's patch grid.
ProbeFeatures extract_features(std::span<const LabeledImage> images, const ModelParams<float>& params,
                               std::size_t patch);

struct ProbeOptions {
  std::size_t iterations = 500;
  double lr = 0.1;
  double train_fraction = 0.8;
};

struct ProbeResult {
  std::string variant;
  std::uint64_t seed = 0;
  double overall_acc = 0.0;
  std::array<std::optional<double>, kNumClasses> class_acc;  // nullopt: no test patches of that class
  std::size_t n_train = 0;
  std::size_t n_test = 0;

  bool operator==(const ProbeResult&) const = default;
};

/// Patch indices split into train/test by a seeded shuffle.
struct ProbeSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
ProbeSplit probe_split(std::size_t n, std::uint64_t split_seed, double train_fraction);

/// Multinomial logistic regression by full-batch gradient descent on the raw
/// features. Throws ContractError when fewer than two classes occur.
ProbeResult linear_probe(const Tensor<float>& features, std::span<const std::uint8_t> labels,
                         std::uint64_t split_seed, const ProbeOptions& options = {});

/// Probe head initialised from linear_probe, then encoder and head trained
/// jointly with AdamW on the training patches. `params` is not modified.
ProbeResult finetune_probe(std::span<const LabeledImage> images, const ModelParams<float>& params,
                           std::size_t patch, std::uint64_t split_seed, const RunConfig& cfg);

/// Appends one row (variant,seed,overall_acc,acc_class0..3), writing the header for a new file.
void append_probe_csv(const std::filesystem::path& path, const ProbeResult& result);

/// FNV-1a over the bit patterns of every parameter, in name order.
std::uint64_t param_checksum(const ModelParams<float>& params);

}  // namespace sdmim
