#pragma once

// Bit-packed +-1 arithmetic: bit 1 encodes +1, bit 0 encodes -1, 64 elements
// per little-endian word along the innermost dimension, pad bits zero.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bnn/ops.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

class PackedBitTensor {
 public:
  PackedBitTensor() = default;
  /// All -1 (zero words) tensor of the given logical shape.
  explicit PackedBitTensor(Shape logical_shape);
  PackedBitTensor(Shape logical_shape, std::vector<std::uint64_t> words);

  const Shape& logical_shape() const noexcept { return shape_; }
  std::size_t inner() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t words_per_inner() const noexcept { return (inner() + 63) / 64; }
  /// Rows along dim 0; each row covers all remaining dims.
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t row_words() const noexcept;
  /// Logical +-1 elements per row.
  std::size_t row_length() const noexcept;

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> words() noexcept { return words_; }
  const std::uint64_t* row(std::size_t r) const noexcept { return words_.data() + r * row_words(); }

  bool operator==(const PackedBitTensor&) const = default;

 private:
  Shape shape_;
  std::vector<std::uint64_t> words_;
};

/// Throws std::invalid_argument if any element is not exactly +1 or -1.
template <typename T>
PackedBitTensor pack(const BasicTensor<T>& t);

template <typename T = float>
BasicTensor<T> unpack(const PackedBitTensor& p);

/// True when every bit beyond each inner run's logical length is zero.
bool pad_bits_clear(const PackedBitTensor& p);

/// n - 2 * popcount(a ^ b) over `words` words.
std::int64_t xnor_dot(const std::uint64_t* a, const std::uint64_t* b, std::size_t words, std::size_t n);
std::int64_t xnor_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b, std::size_t n);

/// Row-major M x N integer matrix.
struct IntMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<std::int32_t> values;

  std::int32_t operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool operator==(const IntMatrix&) const = default;
};

/// C[i][j] = xnor_dot(A row i, B row j). Row layouts must match.
IntMatrix xnor_gemm(const PackedBitTensor& a, const PackedBitTensor& b);

/// Raw form: m x n dots of `words`-word rows with `length` logical elements.
void xnor_gemm(std::size_t m, std::size_t n, std::size_t words, std::size_t length, const std::uint64_t* a,
               const std::uint64_t* b, std::int32_t* c);

/// BN followed by sign as one comparison: +1 iff x >= tau (direction +1) or
/// x < tau (direction -1).
struct ThresholdUnit {
  float tau = 0.0f;
  std::int8_t direction = 1;

  float apply(float x) const noexcept {
    const bool positive = direction > 0 ? x >= tau : x < tau;
    return positive ? 1.0f : -1.0f;
  }
  bool operator==(const ThresholdUnit&) const = default;
};

/// Exact fold of sign(bn_infer_value(x)) over all finite floats x. A channel
/// with gamma = 0 becomes constant sign(beta) via tau = -inf / +inf.
std::vector<ThresholdUnit> fold_bn_sign(const BatchNormState<float>& bn);

/// Conv weights O x C x kh x kw (+-1) packed as O x kh x kw x C.
PackedBitTensor pack_conv_weights(const Tensor& weights);

/// Binary convolution of a +-1 N x C x H x W input with -1 spatial padding.
/// Returns the integer pre-activations as N x O x OH x OW floats.
Tensor binconv_preactivation(const Tensor& input, const PackedBitTensor& weights, const ConvParams& params);

struct BinaryConvLayer {
  ConvParams conv;
  PackedBitTensor weights;
  std::optional<PoolParams> pool;
  std::vector<ThresholdUnit> thresholds;  // empty: emit pre-activations
};

/// binconv_preactivation -> [maxpool on integers] -> thresholds.
Tensor binconv_infer(const Tensor& input, const BinaryConvLayer& layer);

/// Dense weights D x K (+-1) packed as K x D.
PackedBitTensor pack_dense_weights(const Tensor& weights);

/// N x D +-1 input times packed K x D weights -> N x K pre-activations, then thresholds if given.
Tensor bindense_infer(const Tensor& input, const PackedBitTensor& weights,
                      std::span<const ThresholdUnit> thresholds);

}  // namespace bnn
