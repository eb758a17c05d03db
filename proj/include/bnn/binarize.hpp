#pragma once

#include <cstddef>
#include <optional>

#include "bnn/ops.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

/// +1 where x >= 0, else -1 (sign(0) = +1). NaN passes through.
template <typename T>
inline T sign_value(T x) {
  if (x != x) return x;
  return x >= T(0) ? T(1) : T(-1);
}

template <typename T>
BasicTensor<T> binarize_sign(const BasicTensor<T>& x);

/// Straight-through estimator: passes grad_out where |input| <= 1, else 0.
template <typename T>
BasicTensor<T> ste_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& pre_binarization);

/// Glorot range sqrt(1.5 / (fan_in + fan_out)), shared by init and LR scaling.
double glorot_gamma(std::size_t fan_in, std::size_t fan_out);

/// Per-layer learning-rate multiplier for binary layers: 1 / glorot_gamma.
double glorot_lr_scale(std::size_t fan_in, std::size_t fan_out);

/// Real-valued hidden state of a binary weight tensor. Values live in [-1, 1]
/// and are binarized by sign on every forward pass. lr_scale is fixed at
/// construction.
template <typename T>
class BasicLatentWeight {
 public:
  BasicLatentWeight(BasicTensor<T> value, std::size_t fan_in, std::size_t fan_out);
  BasicLatentWeight(BasicTensor<T> value, std::size_t fan_in, std::size_t fan_out, double lr_scale);

  BasicTensor<T>& value() noexcept { return value_; }
  const BasicTensor<T>& value() const noexcept { return value_; }
  std::size_t fan_in() const noexcept { return fan_in_; }
  std::size_t fan_out() const noexcept { return fan_out_; }
  double lr_scale() const noexcept { return lr_scale_; }

  bool operator==(const BasicLatentWeight&) const = default;

 private:
  BasicTensor<T> value_;
  std::size_t fan_in_;
  std::size_t fan_out_;
  double lr_scale_;
};

using LatentWeight = BasicLatentWeight<float>;

/// Clamps every element of the hidden state into [-1, 1].
template <typename T>
void clip_latent(BasicLatentWeight<T>& w);

/// True when every element is inside [-1, 1].
template <typename T>
bool latent_in_range(const BasicTensor<T>& values);

struct BinaryBlockConfig {
  ConvParams conv;
  bool binarize_weights = true;
  bool binarize_activations = true;
  bool has_bn = true;
  /// ReLU output when activations are not binarized (float teacher nets).
  bool relu = false;
  /// Optional pooling between the convolution and the normalization.
  std::optional<PoolParams> pool;
  /// Value for spatially padded input cells. Binary-input blocks use -1.
  double pad_value = 0.0;
};

template <typename T>
struct BinaryBlockCache {
  BasicTensor<T> input;
  BasicTensor<T> effective_weight;  // sign(latent) or the raw values
  Shape conv_out_shape;
  std::vector<std::size_t> pool_argmax;
  BasicTensor<T> pre_activation;  // BN output (or conv/pool output without BN)
  BatchNormCache<T> bn;
};

template <typename T>
struct BinaryBlockResult {
  BasicTensor<T> output;
  BinaryBlockCache<T> cache;
};

/// conv2d(input, sign(latent) or latent) -> [maxpool] -> [batchnorm] ->
/// sign / relu / identity.
template <typename T>
BinaryBlockResult<T> binary_conv_block(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                       BatchNormState<T>& bn, const BinaryBlockConfig& cfg, Mode mode);

template <typename T>
BinaryBlockResult<T> binary_conv_block(const BasicTensor<T>& input,
                                       const BasicLatentWeight<T>& weights, BatchNormState<T>& bn,
                                       const BinaryBlockConfig& cfg, Mode mode) {
  return binary_conv_block(input, weights.value(), bn, cfg, mode);
}

template <typename T>
struct BinaryBlockGrads {
  BasicTensor<T> grad_input;
  BasicTensor<T> grad_weight;  // w.r.t. the latent values (STE-masked when binarized)
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;
};

template <typename T>
BinaryBlockGrads<T> binary_conv_block_backward(const BasicTensor<T>& grad_out,
                                               const BinaryBlockCache<T>& cache,
                                               const BasicTensor<T>& weights,
                                               const BatchNormState<T>& bn,
                                               const BinaryBlockConfig& cfg);

/// Fully connected counterpart: dense(input, sign(W) or W, bias) -> [batchnorm]
/// -> sign / relu / identity.
struct BinaryDenseConfig {
  bool binarize_weights = true;
  bool binarize_activations = true;
  bool has_bn = true;
  bool relu = false;
};

template <typename T>
struct BinaryDenseCache {
  BasicTensor<T> input;
  BasicTensor<T> effective_weight;
  BasicTensor<T> pre_activation;
  BatchNormCache<T> bn;
};

template <typename T>
struct BinaryDenseResult {
  BasicTensor<T> output;
  BinaryDenseCache<T> cache;
};

template <typename T>
BinaryDenseResult<T> binary_dense_block(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                        const BasicTensor<T>& bias, BatchNormState<T>& bn,
                                        const BinaryDenseConfig& cfg, Mode mode);

template <typename T>
struct BinaryDenseGrads {
  BasicTensor<T> grad_input;
  BasicTensor<T> grad_weight;
  BasicTensor<T> grad_bias;
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;
};

template <typename T>
BinaryDenseGrads<T> binary_dense_block_backward(const BasicTensor<T>& grad_out,
                                                const BinaryDenseCache<T>& cache,
                                                const BasicTensor<T>& weights, bool has_bias,
                                                const BatchNormState<T>& bn,
                                                const BinaryDenseConfig& cfg);

}  // namespace bnn
