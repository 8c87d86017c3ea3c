#pragma once

// Finite-difference gradient checking: analytic f32 gradients against f64
// central differences, relative error |a - n| / max(1, |a|, |n|).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdmim/tensor.hpp"

namespace sdmim {

inline constexpr double kFiniteDifferenceStep = 1e-4;
inline constexpr double kPrimitiveTolerance = 1e-4;
inline constexpr double kEndToEndTolerance = 1e-3;

struct GradcheckResult {
  std::string name;
  double worst = 0.0;  // worst relative error over all checked elements
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::string worst_at;  // "<input>[<element>]"

  bool passed() const { return std::isfinite(worst) && worst <= tolerance; }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// `f` is generic over the scalar type: given inputs it returns a scalar loss.
/// The analytic gradient comes from one f32 backward pass; the numeric one
/// perturbs every element of the f64 copy of each input.
template <typename F>
GradcheckResult check_gradients(std::string name, const std::vector<Tensor<double>>& inputs, F&& f,
                                double tolerance, double h = kFiniteDifferenceStep) {
  GradcheckResult result;
  result.name = std::move(name);
  result.tolerance = tolerance;

  std::vector<Tensor<float>> single;
  for (const auto& x : inputs) single.push_back(tensor_cast<float>(x, true));
  auto loss = f(std::as_const(single));
  backward(loss);

  std::vector<Tensor<double>> probe;
  for (const auto& x : inputs) probe.push_back(tensor_cast<double>(x, false));
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    auto d = probe[i].data();
    const auto analytic = single[i].has_grad() ? single[i].grad() : std::span<const float>();
    for (std::size_t k = 0; k < d.size(); ++k) {
      const double saved = d[k];
      d[k] = saved + h;
      const double up = f(std::as_const(probe)).item();
      d[k] = saved - h;
      const double down = f(std::as_const(probe)).item();
      d[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : static_cast<double>(analytic[k]);
      const double err = relative_error(a, numeric);
      ++result.checked;
      if (!std::isnan(result.worst) && (std::isnan(err) || err > result.worst)) {
        result.worst = err;
        result.worst_at = "input" + std::to_string(i) + "[" + std::to_string(k) + "]";
      }
    }
  }
  return result;
}

/// Every primitive, each loss, and two end-to-end toy models (2x2 grid with a
/// single window; 4x4 grid with shifted windows).
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed = 0);

/// End-to-end gradient of the combined objective over every model parameter
/// on a toy model with a grid of grid_side x grid_side patches.
GradcheckResult gradcheck_end_to_end(std::size_t grid_side, std::size_t window, std::size_t depth, std::uint64_t seed);

}  // namespace sdmim
