#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "bnn/model.hpp"
#include "bnn/xnor.hpp"

namespace bnn {

inline constexpr std::uint32_t kDeployFormatVersion = 1;

enum class TailKind : std::uint8_t { threshold = 0, batchnorm = 1, none = 2 };

/// How a conv or dense layer finishes: folded BN+sign thresholds, or float
/// batchnorm followed by relu / identity, or nothing (bias-only dense).
struct LayerTail {
  TailKind kind = TailKind::none;
  std::vector<ThresholdUnit> thresholds;
  BatchNormState<float> bn;
  bool relu = false;
};

struct DeployedConv {
  std::size_t layer = 0;
  ConvParams conv;
  std::optional<PoolParams> pool;
  float pad_value = 0.0f;
  bool xnor = false;
  PackedBitTensor packed;  // xnor layers, O x kh x kw x C
  Tensor weights;          // float layers, O x C x kh x kw (already binarized if the layer binarizes weights)
  LayerTail tail;
};

struct DeployedDense {
  std::size_t layer = 0;
  bool xnor = false;
  PackedBitTensor packed;  // xnor layers, K x D
  Tensor weights;          // float layers, D x K
  Tensor bias;
  LayerTail tail;
};

struct DeployedPool {
  std::size_t layer = 0;
  PoolParams params;
};

/// Dropout is the identity at inference; kept so the layer list mirrors the model.
struct DeployedDropout {
  std::size_t layer = 0;
};

using DeployedStage = std::variant<DeployedConv, DeployedDense, DeployedPool, DeployedDropout>;

struct DeployedModel {
  ArchSpec spec;
  std::vector<DeployedStage> stages;

  std::size_t xnor_layer_count() const;
};

/// Packs every layer whose weights are binarized and whose input is +-1 for
/// XNOR execution and folds its BN+sign tail into thresholds. Other layers
/// keep float weights.
DeployedModel export_model(const Model& model);

/// Raw logits of the deployed network.
Tensor deployed_logits(const DeployedModel& model, const Tensor& batch);

/// softmax(scale(logits)) of the deployed network.
Tensor run_inference(const DeployedModel& model, const Tensor& batch);

/// The same probabilities computed by the float model in inference mode.
Tensor reference_inference(const Model& model, const Tensor& batch);

std::vector<std::size_t> argmax_rows(const Tensor& matrix);

/// "BNNX" container: magic, u32 version, u64-length-prefixed canonical ArchSpec
/// JSON, u32 stage count, then per stage a kind byte and, for conv/dense, the
/// packed words or f32 weights, the tail record and (dense) the bias.
std::vector<unsigned char> encode_deployed(const DeployedModel& model);
DeployedModel decode_deployed(std::span<const unsigned char> bytes);

void save_deployed(const DeployedModel& model, const std::filesystem::path& path);
DeployedModel load_deployed(const std::filesystem::path& path);

/// Byte equality of the encoded forms.
bool bit_equal(const DeployedModel& a, const DeployedModel& b);

}  // namespace bnn
