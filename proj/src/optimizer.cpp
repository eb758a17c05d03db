#include "bnn/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bnn {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

void OptimizerConfig::validate() const {
  if (kind == OptimizerKind::adam) {
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("adam betas must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be positive");
  } else if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("sgd momentum must lie in [0, 1)");
  }
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::step(std::span<const ParamRef> params, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive");
  if (m_.empty()) {
    for (const ParamRef& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      if (config_.kind == OptimizerKind::adam) v_.emplace_back(p.value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("optimizer parameter list changed between steps");
  ++steps_;

  const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.epsilon;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef& p = params[i];
    if (p.value.size() != m_[i].size() || p.grad.size() != p.value.size()) {
      throw std::invalid_argument("optimizer: size mismatch for " + p.name);
    }
    const double step = lr * p.lr_scale;
    auto& m = m_[i];
    if (config_.kind == OptimizerKind::adam) {
      auto& v = v_[i];
      for (std::size_t j = 0; j < m.size(); ++j) {
        const double g = p.grad[j];
        m[j] = b1 * m[j] + (1.0 - b1) * g;
        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
        const double mhat = m[j] / c1, vhat = v[j] / c2;
        p.value[j] = static_cast<float>(p.value[j] - step * mhat / (std::sqrt(vhat) + eps));
      }
    } else {
      for (std::size_t j = 0; j < m.size(); ++j) {
        m[j] = config_.momentum * m[j] + p.grad[j];
        p.value[j] = static_cast<float>(p.value[j] - step * m[j]);
      }
    }
    if (p.latent != nullptr) clip_latent(*p.latent);
  }
}

}  // namespace bnn
