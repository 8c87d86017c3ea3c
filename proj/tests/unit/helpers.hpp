#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "sdmim/config.hpp"
#include "sdmim/model.hpp"
#include "sdmim/patching.hpp"

namespace sdmim::test {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sdmim_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// 16x16 images of 4x4 patches, D'=8: fast enough for per-step tests.
inline RunConfig tiny_config() {
  RunConfig cfg;
  cfg.image_height = cfg.image_width = 16;
  cfg.patch_size = 4;
  cfg.embed_dim = 8;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 1;
  cfg.num_heads = 2;
  cfg.window_size = 2;
  cfg.mlp_ratio = 2;
  cfg.head_hidden_dim = 16;
  cfg.bottleneck_dim = 8;
  cfg.distill_dim = 16;
  cfg.num_images = 4;
  cfg.probe_images = 8;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.checkpoint_every = 0;
  return cfg;
}

inline GrayImage random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  GrayImage img(h, w);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

}  // namespace sdmim::test
