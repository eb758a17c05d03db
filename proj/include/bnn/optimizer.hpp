#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "bnn/model.hpp"

namespace bnn {

enum class OptimizerKind { adam, sgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;  // sgd only

  void validate() const;
};

/// Adam (bias-corrected) or SGD with momentum. Each step moves parameter p by
/// lr * p.lr_scale * direction and then clips latent weights into [-1, 1].
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {});

  /// The parameter list must keep the same order and sizes across calls.
  void step(std::span<const ParamRef> params, double lr);

  std::uint64_t step_count() const noexcept { return steps_; }
  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline void optimizer_step(Optimizer& opt, std::span<const ParamRef> params, double lr) { opt.step(params, lr); }

}  // namespace bnn
