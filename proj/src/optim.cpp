#include "sdmim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sdmim {

template <typename T>
OptimizerState<T> make_optimizer(const std::vector<NamedParam<T>>& params, AdamWHyper hyper) {
  OptimizerState<T> s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.size(), T(0));
    s.v.emplace_back(p.tensor.size(), T(0));
  }
  return s;
}

template <typename T>
void adamw_step(std::vector<NamedParam<T>>& params, OptimizerState<T>& state, double lr) {
  if (params.size() != state.m.size()) {
    throw ContractError("adamw_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " tensors but " + std::to_string(params.size()) + " were given");
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw ContractError("adamw_step: parameter '" + p.name + "' has no gradient");
  }
  const auto& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(h.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(h.beta2, t));
  const T step_lr = static_cast<T>(lr);
  const T eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto w = p.tensor.data();
    auto g = p.tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) {
      throw ContractError("adamw_step: optimizer state for '" + p.name + "' has the wrong size");
    }
    const T decay = p.decay ? static_cast<T>(lr * h.weight_decay) : T(0);
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const T mhat = m[k] / bc1;
      const T vhat = v[k] / bc2;
      w[k] = w[k] - step_lr * mhat / (std::sqrt(vhat) + eps) - decay * w[k];
    }
  }
}

template <typename T>
double clip_grad_norm(std::vector<NamedParam<T>>& params, double max_norm) {
  double ss = 0.0;
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) ss += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.mutable_grad()) g *= f;
    }
  }
  return norm;
}

double lr_at(const Schedule& s, double epoch) {
  double lr = 0.0;
  if (epoch < s.warmup_epochs) {
    lr = s.base_lr * epoch / s.warmup_epochs;
  } else {
    const double span = s.total_epochs - s.warmup_epochs;
    const double tau = span > 0.0 ? std::clamp((epoch - s.warmup_epochs) / span, 0.0, 1.0) : 1.0;
    lr = s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * tau));
  }
  return std::max(lr, s.min_lr);
}

template OptimizerState<float> make_optimizer<float>(const std::vector<NamedParam<float>>&, AdamWHyper);
template OptimizerState<double> make_optimizer<double>(const std::vector<NamedParam<double>>&, AdamWHyper);
template void adamw_step<float>(std::vector<NamedParam<float>>&, OptimizerState<float>&, double);
template void adamw_step<double>(std::vector<NamedParam<double>>&, OptimizerState<double>&, double);
template double clip_grad_norm<float>(std::vector<NamedParam<float>>&, double);
template double clip_grad_norm<double>(std::vector<NamedParam<double>>&, double);

}  // namespace sdmim
