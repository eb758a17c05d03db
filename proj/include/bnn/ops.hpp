#pragma once

// Dense layer primitives with explicit forward/backward passes. Every op is a
// pure function of its arguments (batchnorm additionally updates the state it
// is handed in train mode). Templates are instantiated for float and double.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

using Rng = std::mt19937_64;

enum class Mode { train, infer };

struct ConvParams {
  std::size_t out_channels = 1;
  std::size_t in_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  /// Throws ShapeError if the output would be empty.
  std::size_t out_h(std::size_t in_h) const;
  std::size_t out_w(std::size_t in_w) const;
  std::size_t kernel_volume() const { return in_channels * kernel_h * kernel_w; }

  bool operator==(const ConvParams&) const = default;
};

/// Unfolds one CHW image into a (C*KH*KW) x (OH*OW) matrix. Cells that fall
/// into the padding take `pad_value`.
template <typename T>
void im2col(const T* image, std::size_t height, std::size_t width, const ConvParams& p,
            T pad_value, T* col);

/// Cross-correlation (no kernel flip). input NCHW, weight OIHW -> N x O x OH x OW.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const ConvParams& params, T pad_value = T{0});

template <typename T>
struct ConvGrads {
  BasicTensor<T> grad_input;
  BasicTensor<T> grad_weight;
};

/// Padded cells are constants and receive no gradient.
template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, const ConvParams& params,
                             T pad_value = T{0});

struct PoolParams {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t pad = 0;

  std::size_t out_dim(std::size_t in) const;
  bool operator==(const PoolParams&) const = default;
};

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  /// Flat index into the input of the winning cell for each output element.
  std::vector<std::size_t> argmax;
};

/// Padded cells count as -inf; ties go to the lowest flat input index.
template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& input, const PoolParams& params);

template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& grad_out,
                                  std::span<const std::size_t> argmax, const Shape& input_shape);

/// input N x D, weight D x K, bias K (an empty bias means none) -> N x K.
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                     const BasicTensor<T>& bias);

template <typename T>
struct DenseGrads {
  BasicTensor<T> grad_input;
  BasicTensor<T> grad_weight;
  BasicTensor<T> grad_bias;  // empty when the forward had no bias
};

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, bool has_bias);

template <typename T>
struct BatchNormState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  /// gamma = 1, beta = 0, running stats at (0, 1).
  static BatchNormState fresh(std::size_t channels, T momentum = T(0.1), T epsilon = T(1e-5));
  std::size_t channels() const { return gamma.size(); }
  bool operator==(const BatchNormState&) const = default;
};

/// 1 / sqrt(var + eps), the single definition shared by every inference path.
template <typename T>
inline T bn_inv_std(T var, T eps) {
  return T(1) / std::sqrt(var + eps);
}

/// Inference-mode normalization of one value. The xnor runtime folds BN+sign
/// against exactly this expression, so its evaluation order is fixed.
template <typename T>
inline T bn_infer_value(T x, T gamma, T beta, T mean, T inv_std) {
  const T centered = x - mean;
  const T normalized = centered * inv_std;
  const T scaled = gamma * normalized;
  return scaled + beta;
}

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::infer;
  Shape shape;
  BasicTensor<T> normalized;
  std::vector<T> inv_std;
};

template <typename T>
struct BatchNormResult {
  BasicTensor<T> output;
  BatchNormCache<T> cache;
};

/// Per-channel normalization over N (and H, W for rank-4 input). In train mode
/// the batch statistics (biased variance) are used and the running stats move
/// as running = (1 - momentum) * running + momentum * batch.
template <typename T>
BatchNormResult<T> batchnorm(const BasicTensor<T>& input, BatchNormState<T>& state, Mode mode);

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> grad_input;
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BatchNormCache<T>& cache,
                                     const BatchNormState<T>& state);

/// Fixed, non-trainable logit multiplier. Backward is the same map.
template <typename T>
BasicTensor<T> scale_layer(const BasicTensor<T>& logits, T factor);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input);

/// Row-wise softmax of an N x K tensor, max-subtracted.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
struct LossResult {
  T loss = T(0);
  BasicTensor<T> grad;
};

/// Mean cross-entropy against class indices; grad = (softmax - onehot) / N.
template <typename T>
LossResult<T> softmax_xent(const BasicTensor<T>& logits, std::span<const std::size_t> labels);

/// Mean cross-entropy against probability rows (each summing to 1 within 1e-6).
template <typename T>
LossResult<T> softmax_xent(const BasicTensor<T>& logits, const BasicTensor<T>& target_probs);

template <typename T>
struct DropoutResult {
  BasicTensor<T> output;
  BasicTensor<T> mask;  // 0 or 1/(1-ratio) per element; all ones in infer mode
};

/// Inverted dropout.
template <typename T>
DropoutResult<T> dropout(const BasicTensor<T>& input, double ratio, Mode mode, Rng& rng);

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& mask);

}  // namespace bnn
