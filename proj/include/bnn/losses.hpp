#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "bnn/ops.hpp"

namespace bnn {

enum class DistillPhase { hard_only, soft_only, combined };

std::string_view to_string(DistillPhase phase);
DistillPhase parse_distill_phase(std::string_view name);

struct DistillConfig {
  double temperature = 4.0;
  double alpha = 0.5;  // weight of the soft term
  DistillPhase phase = DistillPhase::hard_only;
  /// Soft-target cache file; empty means a live teacher supplies the logits.
  std::string teacher_cache;

  /// Alpha actually used by the phase (1 for soft_only, 0 for hard_only).
  double effective_alpha() const;

  /// Throws std::invalid_argument on T < 1 or alpha outside [0, 1].
  void validate() const;
};

/// softmax_xent(scale_layer(logits, scaling), labels), gradient w.r.t. the raw logits.
template <typename T>
LossResult<T> hard_loss(const BasicTensor<T>& logits, std::span<const std::size_t> labels, T scaling = T(1));

/// T^2 * CE(softmax(teacher / T), softmax(student / T)), mean over the batch.
template <typename T>
LossResult<T> soft_loss(const BasicTensor<T>& student, const BasicTensor<T>& teacher, T temperature);

/// alpha * soft_loss + (1 - alpha) * hard_loss with alpha = cfg.effective_alpha().
/// The teacher logits may be absent when alpha is 0.
template <typename T>
LossResult<T> combined_loss(const BasicTensor<T>& student, const BasicTensor<T>* teacher,
                            std::span<const std::size_t> labels, T scaling, const DistillConfig& cfg);

}  // namespace bnn
