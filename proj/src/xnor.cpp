#include "bnn/xnor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace bnn {

namespace {

std::size_t ceil64(std::size_t n) { return (n + 63) / 64; }

std::uint64_t tail_mask(std::size_t n) {
  const std::size_t r = n % 64;
  return r == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << r) - 1;
}

}  // namespace

PackedBitTensor::PackedBitTensor(Shape logical_shape) : shape_(std::move(logical_shape)) {
  if (shape_.empty() || shape_numel(shape_) == 0) throw ShapeError("packed tensor needs a non-empty shape");
  words_.assign(shape_numel(shape_) / inner() * words_per_inner(), 0);
}

PackedBitTensor::PackedBitTensor(Shape logical_shape, std::vector<std::uint64_t> words)
    : PackedBitTensor(std::move(logical_shape)) {
  if (words.size() != words_.size()) {
    throw ShapeError("packed tensor " + shape_str(shape_) + " needs " + std::to_string(words_.size()) +
                     " words, got " + std::to_string(words.size()));
  }
  words_ = std::move(words);
}

std::size_t PackedBitTensor::row_words() const noexcept {
  if (shape_.size() < 2) return words_per_inner();
  return shape_numel(shape_) / shape_[0] / inner() * words_per_inner();
}

std::size_t PackedBitTensor::row_length() const noexcept {
  if (shape_.size() < 2) return inner();
  return shape_numel(shape_) / shape_[0];
}

template <typename T>
PackedBitTensor pack(const BasicTensor<T>& t) {
  PackedBitTensor p(t.shape());
  const std::size_t inner = p.inner(), wpi = p.words_per_inner();
  const std::size_t outer = t.size() / inner;
  auto words = p.words();
  const T* src = t.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    std::uint64_t* dst = words.data() + o * wpi;
    for (std::size_t i = 0; i < inner; ++i) {
      const T v = src[o * inner + i];
      if (v == T(1)) {
        dst[i / 64] |= std::uint64_t{1} << (i % 64);
      } else if (v != T(-1)) {
        throw std::invalid_argument("pack: element " + std::to_string(o * inner + i) + " is " + std::to_string(v) +
                                    ", expected +1 or -1");
      }
    }
  }
  return p;
}

template <typename T>
BasicTensor<T> unpack(const PackedBitTensor& p) {
  BasicTensor<T> t(p.logical_shape());
  const std::size_t inner = p.inner(), wpi = p.words_per_inner();
  const std::size_t outer = t.size() / inner;
  auto words = p.words();
  T* dst = t.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    const std::uint64_t* src = words.data() + o * wpi;
    for (std::size_t i = 0; i < inner; ++i) {
      dst[o * inner + i] = (src[i / 64] >> (i % 64)) & 1 ? T(1) : T(-1);
    }
  }
  return t;
}

bool pad_bits_clear(const PackedBitTensor& p) {
  if (p.inner() % 64 == 0) return true;
  const std::uint64_t mask = tail_mask(p.inner());
  const std::size_t wpi = p.words_per_inner();
  auto words = p.words();
  for (std::size_t w = wpi - 1; w < words.size(); w += wpi) {
    if (words[w] & ~mask) return false;
  }
  return true;
}

std::int64_t xnor_dot(const std::uint64_t* a, const std::uint64_t* b, std::size_t words, std::size_t n) {
  std::int64_t mismatches = 0;
  for (std::size_t w = 0; w < words; ++w) mismatches += std::popcount(a[w] ^ b[w]);
  return static_cast<std::int64_t>(n) - 2 * mismatches;
}

std::int64_t xnor_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b, std::size_t n) {
  if (a.size() != b.size() || a.size() != ceil64(n)) {
    throw std::invalid_argument("xnor_dot: rows of " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " words for length " + std::to_string(n));
  }
  return xnor_dot(a.data(), b.data(), a.size(), n);
}

void xnor_gemm(std::size_t m, std::size_t n, std::size_t words, std::size_t length, const std::uint64_t* a,
               const std::uint64_t* b, std::int32_t* c) {
  const auto len = static_cast<std::int32_t>(length);
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const std::uint64_t* a0 = a + i * words;
    const std::uint64_t* a1 = a0 + words;
    const std::uint64_t* a2 = a1 + words;
    const std::uint64_t* a3 = a2 + words;
    for (std::size_t j = 0; j < n; ++j) {
      const std::uint64_t* bj = b + j * words;
      std::uint64_t s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (std::size_t w = 0; w < words; ++w) {
        const std::uint64_t bw = bj[w];
        s0 += static_cast<std::uint64_t>(std::popcount(a0[w] ^ bw));
        s1 += static_cast<std::uint64_t>(std::popcount(a1[w] ^ bw));
        s2 += static_cast<std::uint64_t>(std::popcount(a2[w] ^ bw));
        s3 += static_cast<std::uint64_t>(std::popcount(a3[w] ^ bw));
      }
      c[(i + 0) * n + j] = len - 2 * static_cast<std::int32_t>(s0);
      c[(i + 1) * n + j] = len - 2 * static_cast<std::int32_t>(s1);
      c[(i + 2) * n + j] = len - 2 * static_cast<std::int32_t>(s2);
      c[(i + 3) * n + j] = len - 2 * static_cast<std::int32_t>(s3);
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] = static_cast<std::int32_t>(xnor_dot(a + i * words, b + j * words, words, length));
    }
  }
}

IntMatrix xnor_gemm(const PackedBitTensor& a, const PackedBitTensor& b) {
  if (a.logical_shape().size() < 2 || b.logical_shape().size() < 2) {
    throw ShapeError("xnor_gemm: operands must have rank >= 2");
  }
  const Shape ra(a.logical_shape().begin() + 1, a.logical_shape().end());
  const Shape rb(b.logical_shape().begin() + 1, b.logical_shape().end());
  if (ra != rb) throw ShapeError("xnor_gemm: row layouts " + shape_str(ra) + " and " + shape_str(rb) + " differ");
  IntMatrix out{a.rows(), b.rows(), std::vector<std::int32_t>(a.rows() * b.rows())};
  xnor_gemm(a.rows(), b.rows(), a.row_words(), a.row_length(), a.words().data(), b.words().data(),
            out.values.data());
  return out;
}

namespace {

std::uint32_t order_key(float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  return (u & 0x80000000u) ? ~u : (u | 0x80000000u);
}

float from_key(std::uint32_t k) {
  const std::uint32_t u = (k & 0x80000000u) ? (k & 0x7fffffffu) : ~k;
  return std::bit_cast<float>(u);
}

}  // namespace

std::vector<ThresholdUnit> fold_bn_sign(const BatchNormState<float>& bn) {
  const std::size_t channels = bn.channels();
  std::vector<ThresholdUnit> out(channels);
  constexpr float kMax = std::numeric_limits<float>::max();
  constexpr float kInf = std::numeric_limits<float>::infinity();
  for (std::size_t c = 0; c < channels; ++c) {
    const float g = bn.gamma[c], b = bn.beta[c], mu = bn.running_mean[c];
    if (!std::isfinite(g) || !std::isfinite(b) || !std::isfinite(mu) || !(bn.running_var[c] >= 0.0f)) {
      throw std::invalid_argument("fold_bn_sign: channel " + std::to_string(c) + " has non-finite statistics");
    }
    const float inv = bn_inv_std(bn.running_var[c], bn.epsilon);
    const auto positive = [&](float x) { return bn_infer_value(x, g, b, mu, inv) >= 0.0f; };
    ThresholdUnit& u = out[c];
    if (g == 0.0f) {
      u = {positive(0.0f) ? -kInf : kInf, 1};
      continue;
    }
    // Bisect for the first key where the large-x outcome starts.
    const bool rising = g > 0.0f;
    const auto after = [&](float x) { return positive(x) == rising; };
    u.direction = rising ? 1 : -1;
    if (!after(kMax)) {
      u.tau = kInf;
    } else if (after(-kMax)) {
      u.tau = -kInf;
    } else {
      std::uint32_t lo = order_key(-kMax), hi = order_key(kMax);  // after(lo) false, after(hi) true
      while (hi - lo > 1) {
        const std::uint32_t mid = lo + (hi - lo) / 2;
        (after(from_key(mid)) ? hi : lo) = mid;
      }
      u.tau = from_key(hi);
      if (!after(u.tau) || after(from_key(lo))) {
        throw std::logic_error("fold_bn_sign: threshold search failed for channel " + std::to_string(c));
      }
    }
    for (float x : {u.tau, std::nextafter(u.tau, -kInf), std::nextafter(u.tau, kInf), mu, 0.0f, 1.0f, -1.0f}) {
      if (!std::isfinite(x)) continue;
      if (u.apply(x) != (positive(x) ? 1.0f : -1.0f)) {
        throw std::logic_error("fold_bn_sign: folded channel " + std::to_string(c) + " disagrees at x = " +
                               std::to_string(x));
      }
    }
  }
  return out;
}

PackedBitTensor pack_conv_weights(const Tensor& weights) {
  if (weights.rank() != 4) throw ShapeError("pack_conv_weights: expected O x C x kh x kw");
  const std::size_t o = weights.dim(0), c = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
  Tensor t({o, kh, kw, c});
  for (std::size_t a = 0; a < o; ++a)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < kh; ++y)
        for (std::size_t x = 0; x < kw; ++x) t(a, y, x, ch) = weights(a, ch, y, x);
  return pack(t);
}

Tensor binconv_preactivation(const Tensor& input, const PackedBitTensor& weights, const ConvParams& p) {
  if (input.rank() != 4 || input.dim(1) != p.in_channels) {
    throw ShapeError("binconv: input " + shape_str(input.shape()) + " does not have " +
                     std::to_string(p.in_channels) + " channels");
  }
  if (weights.logical_shape() != Shape{p.out_channels, p.kernel_h, p.kernel_w, p.in_channels}) {
    throw ShapeError("binconv: packed weights " + shape_str(weights.logical_shape()) + " do not match the layer");
  }
  const std::size_t n = input.dim(0), c = p.in_channels, h = input.dim(2), w = input.dim(3);
  const std::size_t oh = p.out_h(h), ow = p.out_w(w), o = p.out_channels;
  const std::size_t wpc = ceil64(c);
  const std::size_t row_words = p.kernel_h * p.kernel_w * wpc;
  const std::size_t length = p.kernel_h * p.kernel_w * c;
  const std::size_t pixels = h * w, positions = oh * ow;

  std::vector<std::uint64_t> packed(pixels * wpc), cols(positions * row_words), lane(pixels);
  std::vector<std::int32_t> acc(o * positions);
  Tensor out({n, o, oh, ow});
  for (std::size_t s = 0; s < n; ++s) {
    // Channel bits of every pixel, one 64-channel word at a time.
    const float* img = input.raw() + s * c * pixels;
    bool bad = false;
    for (std::size_t word = 0; word < wpc; ++word) {
      std::fill(lane.begin(), lane.end(), 0);
      for (std::size_t ch = word * 64; ch < std::min(c, word * 64 + 64); ++ch) {
        const float* plane = img + ch * pixels;
        const std::size_t shift = ch % 64;
        for (std::size_t px = 0; px < pixels; ++px) {
          const float v = plane[px];
          lane[px] |= static_cast<std::uint64_t>(v == 1.0f) << shift;
          bad |= (v != 1.0f) & (v != -1.0f);
        }
      }
      for (std::size_t px = 0; px < pixels; ++px) packed[px * wpc + word] = lane[px];
    }
    if (bad) {
      const auto it = std::find_if(img, img + c * pixels, [](float v) { return v != 1.0f && v != -1.0f; });
      throw std::invalid_argument("binconv: input element is " + std::to_string(*it) + ", expected +1 or -1");
    }
    // Packed im2col; out-of-image taps stay all -1.
    std::uint64_t* dst = cols.data();
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        for (std::size_t ky = 0; ky < p.kernel_h; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(y * p.stride_h + ky) - static_cast<std::ptrdiff_t>(p.pad_h);
          for (std::size_t kx = 0; kx < p.kernel_w; ++kx, dst += wpc) {
            const auto ix =
                static_cast<std::ptrdiff_t>(x * p.stride_w + kx) - static_cast<std::ptrdiff_t>(p.pad_w);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w)) {
              std::fill(dst, dst + wpc, 0);
            } else {
              const std::uint64_t* src = packed.data() + (static_cast<std::size_t>(iy) * w + ix) * wpc;
              std::copy(src, src + wpc, dst);
            }
          }
        }
      }
    }
    xnor_gemm(o, positions, row_words, length, weights.words().data(), cols.data(), acc.data());
    std::copy(acc.begin(), acc.end(), out.raw() + s * o * positions);
  }
  return out;
}

namespace {

void apply_thresholds(Tensor& x, std::span<const ThresholdUnit> units) {
  const std::size_t channels = x.dim(1);
  if (units.size() != channels) {
    throw ShapeError("thresholds: " + std::to_string(units.size()) + " units for " + std::to_string(channels) +
                     " channels");
  }
  const std::size_t inner = x.size() / x.dim(0) / channels;
  float* v = x.raw();
  for (std::size_t s = 0; s < x.dim(0); ++s)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < inner; ++i, ++v) *v = units[c].apply(*v);
}

}  // namespace

Tensor binconv_infer(const Tensor& input, const BinaryConvLayer& layer) {
  Tensor x = binconv_preactivation(input, layer.weights, layer.conv);
  if (layer.pool) x = maxpool2d(x, *layer.pool).output;
  if (!layer.thresholds.empty()) apply_thresholds(x, layer.thresholds);
  return x;
}

PackedBitTensor pack_dense_weights(const Tensor& weights) {
  if (weights.rank() != 2) throw ShapeError("pack_dense_weights: expected D x K");
  const std::size_t d = weights.dim(0), k = weights.dim(1);
  Tensor t({k, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) t(j, i) = weights(i, j);
  return pack(t);
}

Tensor bindense_infer(const Tensor& input, const PackedBitTensor& weights, std::span<const ThresholdUnit> thresholds) {
  if (input.rank() != 2 || weights.logical_shape().size() != 2 || input.dim(1) != weights.inner()) {
    throw ShapeError("bindense: input " + shape_str(input.shape()) + " vs packed weights " +
                     shape_str(weights.logical_shape()));
  }
  const IntMatrix r = xnor_gemm(pack(input), weights);
  Tensor x({r.rows, r.cols});
  for (std::size_t i = 0; i < r.values.size(); ++i) x[i] = static_cast<float>(r.values[i]);
  if (!thresholds.empty()) apply_thresholds(x, thresholds);
  return x;
}

template PackedBitTensor pack(const BasicTensor<float>&);
template PackedBitTensor pack(const BasicTensor<double>&);
template BasicTensor<float> unpack(const PackedBitTensor&);
template BasicTensor<double> unpack(const PackedBitTensor&);

}  // namespace bnn
