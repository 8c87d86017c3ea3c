#pragma once

// Reconstruction dumps: original, masked input and model reconstruction.

#include <cstddef>

#include "sdmim/image.hpp"
#include "sdmim/model.hpp"
#include "sdmim/patching.hpp"

namespace sdmim {

struct Reconstruction {
  GrayImage original;
  GrayImage masked;          // masked patches set to zero
  GrayImage reconstruction;  // visible patches copied, masked patches predicted
  MaskSplit split;
};

/// Predictions for masked patches are mapped back to pixels with each
/// patch's own mean and scale, the inverse of the target normalization.
Reconstruction reconstruct(const ModelParams<float>& params, const GrayImage& image, std::size_t patch,
                           MaskSplit split, float target_eps);

/// The three panels side by side.
GrayImage triptych(const Reconstruction& r);

}  // namespace sdmim
