#pragma once

// Synthetic panoramic-radiograph-like corpus, image folder loading and the
// noise / horizontal-flip augmentations used during pretraining.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "sdmim/image.hpp"
#include "sdmim/patching.hpp"

namespace sdmim {

enum PatchClass : std::uint8_t { kBackground = 0, kTooth = 1, kRestoration = 2, kAppliance = 3 };
inline constexpr std::size_t kNumClasses = 4;

/// Per-patch class labels, row-major over the patch grid.
struct LabelGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> labels;

  bool empty() const { return labels.empty(); }
  std::uint8_t at(std::size_t r, std::size_t c) const { return labels[r * cols + c]; }
  bool operator==(const LabelGrid&) const = default;
};

struct LabeledImage {
  GrayImage pixels;
  LabelGrid labels;  // empty for folder images
  std::uint64_t seed = 0;
  bool operator==(const LabeledImage&) const = default;
};

/// Deterministic SplitMix64-style mixing of a seed with stream coordinates.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Two arcs of soft elliptical "teeth" over a shaded jaw band, some teeth
/// capped with bright "restorations", and occasionally a thin bright
/// horizontal "appliance" wire. A patch is labelled with the highest-priority
/// class covering at least 15% of its pixels (appliance > restoration > tooth).
std::vector<LabeledImage> generate_synthetic(std::uint64_t seed, std::size_t height, std::size_t width,
                                             std::size_t count, std::size_t patch);

/// Loads every PGM/PNG in a folder (sorted by file name), resized to height x width.
/// Undecodable files are skipped with a warning on stderr; an empty result throws IoError.
std::vector<LabeledImage> load_folder(const std::filesystem::path& dir, std::size_t height, std::size_t width);

struct AugmentOptions {
  double flip_prob = 0.5;
  double noise_sigma = 0.02;
};

LabeledImage flip_horizontal(const LabeledImage& image);

/// Flip with probability flip_prob (pixels and labels together), then add
/// Gaussian noise and clamp to [0,1].
LabeledImage augment(const LabeledImage& image, const AugmentOptions& options, Rng& rng);

void write_label_csv(const std::filesystem::path& path, const LabelGrid& grid);
LabelGrid read_label_csv(const std::filesystem::path& path);

}  // namespace sdmim
