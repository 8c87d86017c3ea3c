#pragma once

// Reconstruction, self-distillation and combined pretraining objectives.

#include <cstddef>

#include "sdmim/config.hpp"
#include "sdmim/tensor.hpp"

namespace sdmim {

inline constexpr double kLogFloor = 1e-12;

/// Mean absolute error over the masked tokens' elements.
template <typename T>
Tensor<T> l1_masked(const Tensor<T>& predicted, const Tensor<T>& targets);

/// Mean absolute error over every token (the whole-image ablation).
template <typename T>
Tensor<T> l1_whole_image(const Tensor<T>& predicted, const Tensor<T>& targets);

/// Row-mean cross-entropy -sum_k softmax(p)_k log softmax(q)_k. With
/// stop_gradient the teacher logits p are detached before use.
template <typename T>
Tensor<T> distill_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits, bool stop_gradient);

/// alpha * l1 + (1 - alpha) * distill.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l1, const Tensor<T>& distill, double alpha);

struct LossReport {
  double l1 = 0.0;
  double distill = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  std::size_t n_masked = 0;
  std::size_t n_visible = 0;
  LossMode mode = LossMode::masked_only;

  bool operator==(const LossReport&) const = default;
};

}  // namespace sdmim
