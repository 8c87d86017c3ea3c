#include "sdmim/losses.hpp"

#include "sdmim/error.hpp"
#include "sdmim/ops.hpp"

namespace sdmim {
namespace {

template <typename T>
Tensor<T> mean_abs_error(const Tensor<T>& predicted, const Tensor<T>& targets, const char* name) {
  if (predicted.shape() != targets.shape()) {
    throw ShapeError(std::string(name) + ": prediction " + shape_str(predicted.shape()) + " vs target " +
                     shape_str(targets.shape()));
  }
  return mean(abs(sub(predicted, targets)));
}

}  // namespace

template <typename T>
Tensor<T> l1_masked(const Tensor<T>& predicted, const Tensor<T>& targets) {
  return mean_abs_error(predicted, targets, "l1_masked");
}

template <typename T>
Tensor<T> l1_whole_image(const Tensor<T>& predicted, const Tensor<T>& targets) {
  return mean_abs_error(predicted, targets, "l1_whole_image");
}

template <typename T>
Tensor<T> distill_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits, bool stop_gradient) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("distill_loss: student " + shape_str(student_logits.shape()) + " vs teacher " +
                     shape_str(teacher_logits.shape()));
  }
  const std::size_t rows = student_logits.size() / student_logits.cols();
  auto teacher = softmax_rows(stop_gradient ? teacher_logits.detach() : teacher_logits);
  auto log_student = log_clamped(softmax_rows(student_logits), static_cast<T>(kLogFloor));
  return scale(sum(mul(teacher, log_student)), T(-1) / static_cast<T>(rows));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& l1, const Tensor<T>& distill, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha", "must lie in [0, 1]");
  return add(scale(l1, static_cast<T>(alpha)), scale(distill, static_cast<T>(1.0 - alpha)));
}

template Tensor<float> l1_masked<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> l1_masked<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> l1_whole_image<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> l1_whole_image<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> distill_loss<float>(const Tensor<float>&, const Tensor<float>&, bool);
template Tensor<double> distill_loss<double>(const Tensor<double>&, const Tensor<double>&, bool);
template Tensor<float> total_loss<float>(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> total_loss<double>(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace sdmim
