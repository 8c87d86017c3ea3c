#pragma once

// Pretraining: forward composition of the objective, single optimizer steps,
// and the epoch loop with checkpointing and resume.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdmim/checkpoint.hpp"
#include "sdmim/config.hpp"
#include "sdmim/data.hpp"
#include "sdmim/losses.hpp"
#include "sdmim/model.hpp"
#include "sdmim/optim.hpp"
#include "sdmim/patching.hpp"

namespace sdmim {

struct ObjectiveSettings {
  double alpha = 0.2;
  LossMode mode = LossMode::masked_only;
  bool distill = true;
  bool stop_gradient = true;
};

ObjectiveSettings objective_settings(const RunConfig& cfg);

/// Every intermediate of one pretraining forward pass.
template <typename T>
struct PretrainForward {
  Tensor<T> embedded;  // encoder input
  Tensor<T> z_all;     // encoder output
  Tensor<T> y_all;     // decoder output
  Tensor<T> pred_all;  // pixel predictions for every token
  Tensor<T> student;   // distillation logits of encoder visible tokens (q)
  Tensor<T> teacher;   // distillation logits of decoder visible tokens (p)
  Tensor<T> l1;
  Tensor<T> distill;   // undefined when distillation is off
  Tensor<T> total;
};

template <typename T>
PretrainForward<T> pretrain_forward(const ModelParams<T>& params, const StackedBatch<T>& batch,
                                    const ObjectiveSettings& objective);

LossReport make_report(const PretrainForward<float>& fwd, const StackedBatch<float>& batch,
                       const ObjectiveSettings& objective);

/// Forward, backward, optional clipping, AdamW, prototype renormalization.
/// Throws NumericalError naming the first non-finite tensor when the loss is not finite.
LossReport train_step(std::span<const PatchBatch> batch, ModelParams<float>& params,
                      OptimizerState<float>& optimizer, const RunConfig& cfg, double lr);

/// Images for one sample in one epoch: augmentation and mask are seeded from (seed, epoch, index).
PatchBatch prepare_sample(const LabeledImage& image, std::size_t sample_index, std::size_t epoch,
                          const RunConfig& cfg);

struct StepRecord {
  std::size_t epoch = 0;  // 0-based
  std::size_t step = 0;   // global optimizer step, 1-based
  double lr = 0.0;
  LossReport report;
  double wall_ms = 0.0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  double l1 = 0.0;
  double distill = 0.0;
  double total = 0.0;
};

struct FitOptions {
  std::filesystem::path checkpoint_dir;      // empty: no checkpoints
  std::optional<Checkpoint> resume;          // continue from this state
  std::size_t stop_after_epoch = 0;          // nonzero: return once this many epochs are done
  std::function<void(const StepRecord&)> on_step;
};

struct FitResult {
  ModelParams<float> params;
  OptimizerState<float> optimizer;
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
  std::size_t epochs_completed = 0;
};

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size);

ModelParams<float> initial_model(const RunConfig& cfg);

FitResult fit(const std::vector<LabeledImage>& dataset, const RunConfig& cfg, FitOptions options = {});

/// CSV columns: epoch,step,lr,l1,distill,total,mode,alpha,wall_ms
void write_metrics_csv(const std::filesystem::path& path, std::span<const StepRecord> steps);

/// Training images per config: the folder when data_dir is set, otherwise the synthetic corpus.
std::vector<LabeledImage> training_corpus(const RunConfig& cfg);

}  // namespace sdmim
