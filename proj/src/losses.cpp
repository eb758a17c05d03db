#include "bnn/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace bnn {

std::string_view to_string(DistillPhase phase) {
  switch (phase) {
    case DistillPhase::hard_only: return "hard_only";
    case DistillPhase::soft_only: return "soft_only";
    case DistillPhase::combined: return "combined";
  }
  return "unknown";
}

DistillPhase parse_distill_phase(std::string_view name) {
  if (name == "hard_only") return DistillPhase::hard_only;
  if (name == "soft_only") return DistillPhase::soft_only;
  if (name == "combined") return DistillPhase::combined;
  throw std::invalid_argument("unknown distillation phase '" + std::string(name) + "'");
}

double DistillConfig::effective_alpha() const {
  switch (phase) {
    case DistillPhase::hard_only: return 0.0;
    case DistillPhase::soft_only: return 1.0;
    case DistillPhase::combined: return alpha;
  }
  return alpha;
}

void DistillConfig::validate() const {
  if (!(temperature >= 1.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("temperature must be >= 1, got " + std::to_string(temperature));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
}

template <typename T>
LossResult<T> hard_loss(const BasicTensor<T>& logits, std::span<const std::size_t> labels, T scaling) {
  LossResult<T> r = softmax_xent(scale_layer(logits, scaling), labels);
  for (T& g : r.grad.data()) g *= scaling;
  return r;
}

template <typename T>
LossResult<T> soft_loss(const BasicTensor<T>& student, const BasicTensor<T>& teacher, T temperature) {
  if (student.shape() != teacher.shape()) {
    throw ShapeError("soft_loss: student " + shape_str(student.shape()) + " vs teacher " +
                     shape_str(teacher.shape()));
  }
  if (!(temperature >= T(1))) throw std::invalid_argument("soft_loss: temperature must be >= 1");
  const T inv_t = T(1) / temperature;
  BasicTensor<T> zs = student, zt = teacher;
  for (T& v : zs.data()) v *= inv_t;
  for (T& v : zt.data()) v *= inv_t;
  LossResult<T> r = softmax_xent(zs, softmax(zt));
  // d/dz_s of T^2 * CE(z_s / T) = T * dCE/d(z_s / T)
  r.loss *= temperature * temperature;
  for (T& g : r.grad.data()) g *= temperature;
  return r;
}

template <typename T>
LossResult<T> combined_loss(const BasicTensor<T>& student, const BasicTensor<T>* teacher,
                            std::span<const std::size_t> labels, T scaling, const DistillConfig& cfg) {
  cfg.validate();
  const double alpha = cfg.effective_alpha();
  if (alpha == 0.0) return hard_loss(student, labels, scaling);
  if (teacher == nullptr) throw std::invalid_argument("combined_loss: soft term requires teacher logits");
  const T temperature = static_cast<T>(cfg.temperature);
  if (alpha == 1.0) return soft_loss(student, *teacher, temperature);

  LossResult<T> soft = soft_loss(student, *teacher, temperature);
  const LossResult<T> hard = hard_loss(student, labels, scaling);
  const T a = static_cast<T>(alpha), b = static_cast<T>(1.0 - alpha);
  soft.loss = a * soft.loss + b * hard.loss;
  auto g = soft.grad.data();
  auto h = hard.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = a * g[i] + b * h[i];
  return soft;
}

#define BNN_INSTANTIATE(T)                                                                          \
  template LossResult<T> hard_loss(const BasicTensor<T>&, std::span<const std::size_t>, T);         \
  template LossResult<T> soft_loss(const BasicTensor<T>&, const BasicTensor<T>&, T);                \
  template LossResult<T> combined_loss(const BasicTensor<T>&, const BasicTensor<T>*,                \
                                       std::span<const std::size_t>, T, const DistillConfig&);
BNN_INSTANTIATE(float)
BNN_INSTANTIATE(double)
#undef BNN_INSTANTIATE

}  // namespace bnn
