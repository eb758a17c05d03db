#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bnn/arch.hpp"
#include "bnn/binarize.hpp"
#include "bnn/ops.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

/// Weight of a conv/dense layer: latent (binarized on use) or real-valued.
using WeightSlot = std::variant<LatentWeight, Tensor>;

const Tensor& weight_values(const WeightSlot& w);
Tensor& weight_values(WeightSlot& w);

struct ConvStage {
  std::size_t layer = 0;
  BinaryBlockConfig cfg;
  WeightSlot weight = Tensor{};
  BatchNormState<float> bn;
  Tensor grad_weight;
  std::vector<float> grad_gamma, grad_beta;
  BinaryBlockCache<float> cache;
};

struct DenseStage {
  std::size_t layer = 0;
  BinaryDenseConfig cfg;
  WeightSlot weight = Tensor{};
  Tensor bias;  // present only on layers without batchnorm
  BatchNormState<float> bn;
  Tensor grad_weight, grad_bias;
  std::vector<float> grad_gamma, grad_beta;
  BinaryDenseCache<float> cache;
  Shape input_shape;
};

struct PoolStage {
  std::size_t layer = 0;
  PoolParams params;
  std::vector<std::size_t> argmax;
  Shape input_shape;
};

struct DropoutStage {
  std::size_t layer = 0;
  double ratio = 0.0;
  Tensor mask;
};

using Stage = std::variant<ConvStage, DenseStage, PoolStage, DropoutStage>;

/// Trainable parameter as seen by the optimizer.
struct ParamRef {
  std::string name;
  std::span<float> value;
  std::span<const float> grad;
  double lr_scale = 1.0;
  LatentWeight* latent = nullptr;  // clipped after every update when set
};

/// Any persisted tensor (weights, biases, BN parameters and running stats).
struct NamedTensorView {
  std::string name;
  Shape shape;
  std::span<float> data;
};

struct LatentView {
  std::string name;
  std::size_t layer = 0;
  const LatentWeight* weight = nullptr;
};

class Model {
 public:
  /// Allocates parameters for `spec`: conv/dense weights uniform in
  /// [-gamma, gamma] with the Glorot gamma, BN gamma = 1 and beta = 0.
  static Model build(const ArchSpec& spec, Rng& rng);

  /// Same layout as build() with all weights zero; used by deserialization.
  static Model skeleton(const ArchSpec& spec);

  const ArchSpec& spec() const noexcept { return spec_; }
  const std::vector<Stage>& stages() const noexcept { return stages_; }

  /// Raw logits (before the scaling layer). Train mode caches activations for
  /// backward() and updates BN running statistics.
  Tensor forward(const Tensor& batch, Mode mode, Rng& rng);

  /// Inference-mode logits; leaves the model untouched.
  Tensor infer_logits(const Tensor& batch) const;

  /// Back-propagates d(loss)/d(logits) from the last train-mode forward and
  /// overwrites every parameter gradient.
  void backward(const Tensor& grad_logits);

  std::vector<ParamRef> parameters();
  std::vector<NamedTensorView> named_tensors();
  std::vector<LatentView> latent_weights() const;

  /// Number of trainable scalars (weights, biases, BN gamma/beta).
  std::size_t parameter_count() const;

  /// Layer label of the first stage whose output was non-finite during the
  /// last forward pass, if any.
  const std::optional<std::string>& first_nonfinite_layer() const noexcept { return nonfinite_; }

  /// Bitwise equality of spec and every persisted tensor.
  bool bit_equal(const Model& other) const;

 private:
  explicit Model(ArchSpec spec) : spec_(std::move(spec)) {}
  void allocate(Rng* rng);

  ArchSpec spec_;
  std::vector<Stage> stages_;
  std::optional<std::string> nonfinite_;
};

/// "layers.<index>" prefix used in parameter names.
std::string layer_label(std::size_t layer);

}  // namespace bnn
