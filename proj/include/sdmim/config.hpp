#pragma once

// Flat key=value run configuration. Every knob of the pipeline lives here;
// defaults reproduce the reference pretraining protocol (lr 8e-4, wd 0.05,
// betas 0.9/0.999, mask ratio 0.2, alpha 0.2, 100 epochs with 10 warmup,
// 16x16 patches).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sdmim {

enum class LossMode { masked_only, whole_image };

std::string_view to_string(LossMode mode);

struct RunConfig {
  // image / model
  std::size_t image_height = 128;
  std::size_t image_width = 128;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 64;
  std::size_t encoder_depth = 4;
  std::size_t decoder_depth = 1;
  std::size_t num_heads = 4;
  std::size_t window_size = 4;
  bool shifted_windows = true;
  std::size_t mlp_ratio = 4;
  std::size_t head_hidden_dim = 256;
  std::size_t bottleneck_dim = 256;
  std::size_t distill_dim = 4096;
  double init_std = 0.02;

  // objective
  double mask_ratio = 0.2;
  double alpha = 0.2;
  LossMode loss_mode = LossMode::masked_only;
  bool distill = true;
  bool stop_gradient = true;
  double target_eps = 1e-6;

  // optimization
  double base_lr = 8e-4;
  double min_lr = 0.0;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 10;
  std::size_t batch_size = 0;  // 0 = whole training set
  double grad_clip = 0.0;      // 0 = off
  bool fixed_mask = false;

  // data
  std::size_t num_images = 64;
  std::string data_dir;  // empty = synthetic corpus
  std::uint64_t data_seed = 1;
  double noise_sigma = 0.02;
  double flip_prob = 0.5;
  bool augment = true;

  // run
  std::uint64_t seed = 0;
  std::string out_dir = "runs/sdmim";
  std::size_t checkpoint_every = 10;  // epochs; 0 = only at the end

  // probe
  std::size_t probe_images = 64;
  std::size_t probe_iterations = 500;
  double probe_lr = 0.1;
  bool probe_finetune = false;
  double finetune_lr = 1e-4;
  double finetune_weight_decay = 0.05;
  std::size_t finetune_steps = 50;

  bool operator==(const RunConfig&) const = default;
};

/// Applies one key=value assignment. Unknown keys and unparsable values throw ConfigError.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);
/// Applies "key=value" (as given to --set).
void apply_override(RunConfig& cfg, std::string_view assignment);

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Every field as key=value lines, in declaration order; parse_config(echo) == cfg.
std::string config_echo(const RunConfig& cfg);

/// Throws ConfigError naming the first offending field.
void validate(const RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace sdmim
