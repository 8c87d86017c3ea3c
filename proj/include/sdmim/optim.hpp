#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sdmim/model.hpp"

namespace sdmim {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Adaptive-moment state mirroring the parameter list.
template <typename T>
struct OptimizerState {
  AdamWHyper hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

template <typename T>
OptimizerState<T> make_optimizer(const std::vector<NamedParam<T>>& params, AdamWHyper hyper);

/// One AdamW update with decoupled weight decay:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   w <- w - lr * mhat / (sqrt(vhat) + eps) - lr * wd * w   (decay only where NamedParam::decay)
/// Throws ContractError naming any parameter without a gradient.
template <typename T>
void adamw_step(std::vector<NamedParam<T>>& params, OptimizerState<T>& state, double lr);

/// Scales all gradients so that their global L2 norm is at most max_norm. Returns the pre-clip norm.
template <typename T>
double clip_grad_norm(std::vector<NamedParam<T>>& params, double max_norm);

struct Schedule {
  double base_lr = 8e-4;
  double min_lr = 0.0;
  double warmup_epochs = 10.0;
  double total_epochs = 100.0;
};

/// Linear warmup from 0 to base_lr, then half-cosine decay to 0, floored at min_lr.
double lr_at(const Schedule& schedule, double epoch);

}  // namespace sdmim
