#include "bnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bnn/gemm.hpp"

namespace bnn {
namespace {

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                         const char* axis) {
  if (kernel == 0 || stride == 0) throw ShapeError("conv kernel and stride must be positive");
  if (in + 2 * pad < kernel) {
    throw ShapeError(std::string("conv ") + axis + ": kernel " + std::to_string(kernel) +
                     " exceeds padded input " + std::to_string(in + 2 * pad) +
                     " (zero-size output)");
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
void check_conv_shapes(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                       const ConvParams& p) {
  if (input.rank() != 4) throw ShapeError("conv2d input must be NCHW, got " + shape_str(input.shape()));
  if (weight.rank() != 4) throw ShapeError("conv2d weight must be OIHW, got " + shape_str(weight.shape()));
  const Shape expect_w{p.out_channels, p.in_channels, p.kernel_h, p.kernel_w};
  if (weight.shape() != expect_w) {
    throw ShapeError("conv2d weight " + shape_str(weight.shape()) + " does not match params " +
                     shape_str(expect_w));
  }
  if (input.dim(1) != p.in_channels) {
    throw ShapeError("conv2d input " + shape_str(input.shape()) + " has " +
                     std::to_string(input.dim(1)) + " channels, weight expects " +
                     std::to_string(p.in_channels));
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t height, std::size_t width, const ConvParams& p,
                T* image) {
  const std::size_t oh = p.out_h(height);
  const std::size_t ow = p.out_w(width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < p.in_channels; ++c) {
    for (std::size_t ky = 0; ky < p.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < p.kernel_w; ++kx, ++row) {
        const T* src = col + row * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * p.stride_h + ky) -
                                    static_cast<std::ptrdiff_t>(p.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * p.stride_w + kx) -
                                      static_cast<std::ptrdiff_t>(p.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
            image[(c * height + iy) * width + ix] += src[y * ow + x];
          }
        }
      }
    }
  }
}

// Channel layout for batchnorm: rank 2 is N x C, rank 4 is N x C x (H*W).
struct ChannelLayout {
  std::size_t batch;
  std::size_t channels;
  std::size_t inner;
};

ChannelLayout channel_layout(const Shape& shape) {
  if (shape.size() == 2) return {shape[0], shape[1], 1};
  if (shape.size() == 4) return {shape[0], shape[1], shape[2] * shape[3]};
  throw ShapeError("batchnorm expects N x D or NCHW input, got " + shape_str(shape));
}

template <typename T>
void check_logits(const BasicTensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("logits must be N x K, got " + shape_str(logits.shape()));
}

}  // namespace

std::size_t ConvParams::out_h(std::size_t in_h) const {
  return conv_out_dim(in_h, kernel_h, stride_h, pad_h, "height");
}

std::size_t ConvParams::out_w(std::size_t in_w) const {
  return conv_out_dim(in_w, kernel_w, stride_w, pad_w, "width");
}

template <typename T>
void im2col(const T* image, std::size_t height, std::size_t width, const ConvParams& p,
            T pad_value, T* col) {
  const std::size_t oh = p.out_h(height);
  const std::size_t ow = p.out_w(width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < p.in_channels; ++c) {
    for (std::size_t ky = 0; ky < p.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < p.kernel_w; ++kx, ++row) {
        T* dst = col + row * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * p.stride_h + ky) -
                                    static_cast<std::ptrdiff_t>(p.pad_h);
          T* drow = dst + y * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(drow, drow + ow, pad_value);
            continue;
          }
          const T* srow = image + (c * height + iy) * width;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * p.stride_w + kx) -
                                      static_cast<std::ptrdiff_t>(p.pad_w);
            drow[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) ? pad_value : srow[ix];
          }
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const ConvParams& p, T pad_value) {
  check_conv_shapes(input, weight, p);
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = p.out_h(h), ow = p.out_w(w);
  const std::size_t plane = oh * ow;
  const std::size_t kvol = p.kernel_volume();

  BasicTensor<T> out({n, p.out_channels, oh, ow});
  std::vector<T> col(kvol * plane);
  for (std::size_t s = 0; s < n; ++s) {
    im2col(input.raw() + s * p.in_channels * h * w, h, w, p, pad_value, col.data());
    gemm(Trans::no, Trans::no, p.out_channels, plane, kvol, weight.raw(), col.data(),
         out.raw() + s * p.out_channels * plane, false);
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, const ConvParams& p, T pad_value) {
  check_conv_shapes(input, weight, p);
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = p.out_h(h), ow = p.out_w(w);
  const Shape expect_out{n, p.out_channels, oh, ow};
  if (grad_out.shape() != expect_out) {
    throw ShapeError("conv2d_backward grad_out " + shape_str(grad_out.shape()) + ", expected " +
                     shape_str(expect_out));
  }
  const std::size_t plane = oh * ow;
  const std::size_t kvol = p.kernel_volume();

  ConvGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape())};
  std::vector<T> col(kvol * plane);
  std::vector<T> grad_col(kvol * plane);
  for (std::size_t s = 0; s < n; ++s) {
    const T* gout = grad_out.raw() + s * p.out_channels * plane;
    im2col(input.raw() + s * p.in_channels * h * w, h, w, p, pad_value, col.data());
    // dW += dY * col^T
    gemm(Trans::no, Trans::yes, p.out_channels, kvol, plane, gout, col.data(),
         g.grad_weight.raw(), true);
    // dcol = W^T * dY
    gemm(Trans::yes, Trans::no, kvol, plane, p.out_channels, weight.raw(), gout, grad_col.data(),
         false);
    col2im_add(grad_col.data(), h, w, p, g.grad_input.raw() + s * p.in_channels * h * w);
  }
  return g;
}

std::size_t PoolParams::out_dim(std::size_t in) const {
  if (kernel == 0 || stride == 0) throw ShapeError("maxpool kernel and stride must be positive");
  if (pad >= kernel) throw ShapeError("maxpool pad must be smaller than the kernel");
  if (kernel > in + 2 * pad) {
    throw ShapeError("maxpool kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& input, const PoolParams& p) {
  if (input.rank() != 4) throw ShapeError("maxpool2d input must be NCHW, got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = p.out_dim(h), ow = p.out_dim(w);

  PoolResult<T> r{BasicTensor<T>({n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  const auto ih = static_cast<std::ptrdiff_t>(h);
  const auto iw = static_cast<std::ptrdiff_t>(w);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(y * p.stride) - static_cast<std::ptrdiff_t>(p.pad);
      const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(p.kernel), ih);
      for (std::size_t x = 0; x < ow; ++x, ++o) {
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(x * p.stride) - static_cast<std::ptrdiff_t>(p.pad);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(p.kernel), iw);
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = std::numeric_limits<std::size_t>::max();
        for (std::ptrdiff_t yy = std::max<std::ptrdiff_t>(y0, 0); yy < y1; ++yy) {
          for (std::ptrdiff_t xx = std::max<std::ptrdiff_t>(x0, 0); xx < x1; ++xx) {
            const std::size_t idx = base + static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx);
            if (best_idx == std::numeric_limits<std::size_t>::max() || input[idx] > best) {
              best = input[idx];
              best_idx = idx;
            }
          }
        }
        r.output[o] = best;
        r.argmax[o] = best_idx;
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& grad_out, std::span<const std::size_t> argmax,
                                  const Shape& input_shape) {
  if (grad_out.size() != argmax.size()) {
    throw ShapeError("maxpool2d_backward: grad_out " + shape_str(grad_out.shape()) +
                     " does not match the recorded argmax map");
  }
  BasicTensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_out[i];
  return grad;
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                     const BasicTensor<T>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(0)) {
    throw ShapeError("dense: input " + shape_str(input.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t n = input.dim(0), d = input.dim(1), k = weight.dim(1);
  if (!bias.empty() && bias.shape() != Shape{k}) {
    throw ShapeError("dense: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(k) + " outputs");
  }
  BasicTensor<T> out({n, k});
  gemm(Trans::no, Trans::no, n, k, d, input.raw(), weight.raw(), out.raw(), false);
  if (!bias.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) out[i * k + j] += bias[j];
    }
  }
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, bool has_bias) {
  const std::size_t n = input.dim(0), d = input.dim(1), k = weight.dim(1);
  if (grad_out.shape() != Shape{n, k}) {
    throw ShapeError("dense_backward: grad_out " + shape_str(grad_out.shape()) + ", expected " +
                     shape_str({n, k}));
  }
  DenseGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape()), {}};
  gemm(Trans::no, Trans::yes, n, d, k, grad_out.raw(), weight.raw(), g.grad_input.raw(), false);
  gemm(Trans::yes, Trans::no, d, k, n, input.raw(), grad_out.raw(), g.grad_weight.raw(), false);
  if (has_bias) {
    g.grad_bias = BasicTensor<T>({k});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) g.grad_bias[j] += grad_out[i * k + j];
    }
  }
  return g;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::fresh(std::size_t channels, T momentum, T epsilon) {
  BatchNormState s;
  s.gamma.assign(channels, T(1));
  s.beta.assign(channels, T(0));
  s.running_mean.assign(channels, T(0));
  s.running_var.assign(channels, T(1));
  s.momentum = momentum;
  s.epsilon = epsilon;
  return s;
}

template <typename T>
BatchNormResult<T> batchnorm(const BasicTensor<T>& input, BatchNormState<T>& state, Mode mode) {
  const ChannelLayout L = channel_layout(input.shape());
  if (L.channels != state.channels()) {
    throw ShapeError("batchnorm: input " + shape_str(input.shape()) + " has " +
                     std::to_string(L.channels) + " channels, state has " +
                     std::to_string(state.channels()));
  }
  if (!(state.epsilon > T(0))) throw std::invalid_argument("batchnorm epsilon must be positive");

  BatchNormResult<T> r{BasicTensor<T>(input.shape()), {}};
  r.cache.mode = mode;
  r.cache.shape = input.shape();
  r.cache.normalized = BasicTensor<T>(input.shape());
  r.cache.inv_std.resize(L.channels);
  const std::size_t count = L.batch * L.inner;

  for (std::size_t c = 0; c < L.channels; ++c) {
    T mean, inv_std;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < L.batch; ++b) {
        const T* x = input.raw() + (b * L.channels + c) * L.inner;
        for (std::size_t i = 0; i < L.inner; ++i) sum += x[i];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < L.batch; ++b) {
        const T* x = input.raw() + (b * L.channels + c) * L.inner;
        for (std::size_t i = 0; i < L.inner; ++i) {
          const double d = x[i] - mu;
          sq += d * d;
        }
      }
      const T var = static_cast<T>(sq / static_cast<double>(count));
      mean = static_cast<T>(mu);
      inv_std = bn_inv_std(var, state.epsilon);
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * var;
    } else {
      mean = state.running_mean[c];
      inv_std = bn_inv_std(state.running_var[c], state.epsilon);
    }
    r.cache.inv_std[c] = inv_std;
    for (std::size_t b = 0; b < L.batch; ++b) {
      const std::size_t off = (b * L.channels + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        const T x = input[off + i];
        r.cache.normalized[off + i] = (x - mean) * inv_std;
        r.output[off + i] = mode == Mode::infer
                                ? bn_infer_value(x, state.gamma[c], state.beta[c], mean, inv_std)
                                : state.gamma[c] * r.cache.normalized[off + i] + state.beta[c];
      }
    }
  }
  return r;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BatchNormCache<T>& cache,
                                     const BatchNormState<T>& state) {
  if (grad_out.shape() != cache.shape) {
    throw ShapeError("batchnorm_backward: grad_out " + shape_str(grad_out.shape()) +
                     " does not match forward input " + shape_str(cache.shape));
  }
  const ChannelLayout L = channel_layout(cache.shape);
  const std::size_t count = L.batch * L.inner;
  BatchNormGrads<T> g{BasicTensor<T>(cache.shape), std::vector<T>(L.channels, T(0)),
                      std::vector<T>(L.channels, T(0))};

  for (std::size_t c = 0; c < L.channels; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < L.batch; ++b) {
      const std::size_t off = (b * L.channels + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += static_cast<double>(grad_out[off + i]) * cache.normalized[off + i];
      }
    }
    g.grad_beta[c] = static_cast<T>(sum_g);
    g.grad_gamma[c] = static_cast<T>(sum_gx);
    const double gamma = state.gamma[c];
    const double inv_std = cache.inv_std[c];
    for (std::size_t b = 0; b < L.batch; ++b) {
      const std::size_t off = (b * L.channels + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        if (cache.mode == Mode::infer) {
          g.grad_input[off + i] = static_cast<T>(grad_out[off + i] * gamma * inv_std);
        } else {
          const double m = static_cast<double>(count);
          const double dxhat = grad_out[off + i] * gamma;
          g.grad_input[off + i] = static_cast<T>(
              inv_std / m * (m * dxhat - gamma * sum_g - cache.normalized[off + i] * gamma * sum_gx));
        }
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> scale_layer(const BasicTensor<T>& logits, T factor) {
  if (!(factor > T(0)) || !std::isfinite(factor)) {
    throw std::invalid_argument("scale_layer factor must be positive and finite");
  }
  BasicTensor<T> out = logits;
  for (T& v : out.data()) v *= factor;
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input) {
  if (grad_out.shape() != input.shape()) throw ShapeError("relu_backward shape mismatch");
  BasicTensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(input[i] > T(0))) g[i] = T(0);
  }
  return g;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  check_logits(logits);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.raw() + i * k;
    T* q = p.raw() + i * k;
    const T zmax = *std::max_element(z, z + k);
    T sum = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      q[j] = std::exp(z[j] - zmax);
      sum += q[j];
    }
    for (std::size_t j = 0; j < k; ++j) q[j] /= sum;
  }
  return p;
}

namespace {

// log-sum-exp per row, max-subtracted.
template <typename T>
std::vector<T> row_lse(const BasicTensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<T> lse(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.raw() + i * k;
    const T zmax = *std::max_element(z, z + k);
    T sum = T(0);
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    lse[i] = zmax + std::log(sum);
  }
  return lse;
}

}  // namespace

template <typename T>
LossResult<T> softmax_xent(const BasicTensor<T>& logits, std::span<const std::size_t> labels) {
  check_logits(logits);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  const std::vector<T> lse = row_lse(logits);
  LossResult<T> r{T(0), softmax(logits)};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw std::out_of_range("softmax_xent: label out of range");
    total += lse[i] - logits[i * k + labels[i]];
    r.grad[i * k + labels[i]] -= T(1);
  }
  for (T& g : r.grad.data()) g /= static_cast<T>(n);
  r.loss = static_cast<T>(total / static_cast<double>(n));
  return r;
}

template <typename T>
LossResult<T> softmax_xent(const BasicTensor<T>& logits, const BasicTensor<T>& target_probs) {
  check_logits(logits);
  if (target_probs.shape() != logits.shape()) {
    throw ShapeError("softmax_xent: targets " + shape_str(target_probs.shape()) +
                     " do not match logits " + shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += target_probs[i * k + j];
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument("softmax_xent: target row " + std::to_string(i) +
                                  " sums to " + std::to_string(s));
    }
  }
  const std::vector<T> lse = row_lse(logits);
  LossResult<T> r{T(0), softmax(logits)};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const T p = target_probs[i * k + j];
      if (p != T(0)) total -= static_cast<double>(p) * (logits[i * k + j] - lse[i]);
      r.grad[i * k + j] = (r.grad[i * k + j] - p) / static_cast<T>(n);
    }
  }
  r.loss = static_cast<T>(total / static_cast<double>(n));
  return r;
}

template <typename T>
DropoutResult<T> dropout(const BasicTensor<T>& input, double ratio, Mode mode, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("dropout ratio must be in [0, 1)");
  DropoutResult<T> r{input, BasicTensor<T>(input.shape(), T(1))};
  if (mode == Mode::infer || ratio == 0.0) return r;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - ratio));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < input.size(); ++i) {
    r.mask[i] = u(rng) < ratio ? T(0) : keep_scale;
    r.output[i] = input[i] * r.mask[i];
  }
  return r;
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& mask) {
  if (grad_out.shape() != mask.shape()) throw ShapeError("dropout_backward shape mismatch");
  BasicTensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
  return g;
}

#define BNN_INSTANTIATE_OPS(T)                                                                   \
  template void im2col<T>(const T*, std::size_t, std::size_t, const ConvParams&, T, T*);          \
  template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                    const ConvParams&, T);                                        \
  template ConvGrads<T> conv2d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                           const BasicTensor<T>&, const ConvParams&, T);          \
  template PoolResult<T> maxpool2d<T>(const BasicTensor<T>&, const PoolParams&);                  \
  template BasicTensor<T> maxpool2d_backward<T>(const BasicTensor<T>&,                            \
                                                std::span<const std::size_t>, const Shape&);      \
  template BasicTensor<T> dense<T>(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                   const BasicTensor<T>&);                                        \
  template DenseGrads<T> dense_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                           const BasicTensor<T>&, bool);                          \
  template struct BatchNormState<T>;                                                              \
  template BatchNormResult<T> batchnorm<T>(const BasicTensor<T>&, BatchNormState<T>&, Mode);      \
  template BatchNormGrads<T> batchnorm_backward<T>(const BasicTensor<T>&,                         \
                                                   const BatchNormCache<T>&,                      \
                                                   const BatchNormState<T>&);                     \
  template BasicTensor<T> scale_layer<T>(const BasicTensor<T>&, T);                               \
  template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                         \
  template BasicTensor<T> relu_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> softmax<T>(const BasicTensor<T>&);                                      \
  template LossResult<T> softmax_xent<T>(const BasicTensor<T>&, std::span<const std::size_t>);    \
  template LossResult<T> softmax_xent<T>(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template DropoutResult<T> dropout<T>(const BasicTensor<T>&, double, Mode, Rng&);                \
  template BasicTensor<T> dropout_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&);

BNN_INSTANTIATE_OPS(float)
BNN_INSTANTIATE_OPS(double)

#undef BNN_INSTANTIATE_OPS

}  // namespace bnn
