#include "bnn/binarize.hpp"

#include <algorithm>
#include <cmath>

namespace bnn {
namespace {

template <typename T>
BasicTensor<T> activate(const BasicTensor<T>& pre, bool binarize, bool use_relu) {
  if (binarize) return binarize_sign(pre);
  if (use_relu) return relu(pre);
  return pre;
}

template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& pre,
                                   bool binarize, bool use_relu) {
  if (binarize) return ste_backward(grad_out, pre);
  if (use_relu) return relu_backward(grad_out, pre);
  return grad_out;
}

}  // namespace

template <typename T>
BasicTensor<T> binarize_sign(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (T& v : out.data()) v = sign_value(v);
  return out;
}

template <typename T>
BasicTensor<T> ste_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& pre_binarization) {
  if (grad_out.shape() != pre_binarization.shape()) {
    throw ShapeError("ste_backward: grad " + shape_str(grad_out.shape()) + " vs input " +
                     shape_str(pre_binarization.shape()));
  }
  BasicTensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(std::abs(pre_binarization[i]) <= T(1))) g[i] = T(0);
  }
  return g;
}

double glorot_gamma(std::size_t fan_in, std::size_t fan_out) {
  if (fan_in + fan_out == 0) throw std::invalid_argument("glorot_gamma: zero fan");
  return std::sqrt(1.5 / static_cast<double>(fan_in + fan_out));
}

double glorot_lr_scale(std::size_t fan_in, std::size_t fan_out) {
  return 1.0 / glorot_gamma(fan_in, fan_out);
}

template <typename T>
BasicLatentWeight<T>::BasicLatentWeight(BasicTensor<T> value, std::size_t fan_in, std::size_t fan_out)
    : BasicLatentWeight(std::move(value), fan_in, fan_out, glorot_lr_scale(fan_in, fan_out)) {}

template <typename T>
BasicLatentWeight<T>::BasicLatentWeight(BasicTensor<T> value, std::size_t fan_in,
                                        std::size_t fan_out, double lr_scale)
    : value_(std::move(value)), fan_in_(fan_in), fan_out_(fan_out), lr_scale_(lr_scale) {
  if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("latent weight fans must be positive");
  if (!(lr_scale > 0.0) || !std::isfinite(lr_scale)) {
    throw std::invalid_argument("latent weight lr_scale must be positive");
  }
  if (!latent_in_range(value_)) throw std::invalid_argument("latent weight values must lie in [-1, 1]");
}

template <typename T>
void clip_latent(BasicLatentWeight<T>& w) {
  for (T& v : w.value().data()) v = std::clamp(v, T(-1), T(1));
}

template <typename T>
bool latent_in_range(const BasicTensor<T>& values) {
  return std::all_of(values.data().begin(), values.data().end(),
                     [](T v) { return v >= T(-1) && v <= T(1); });
}

template <typename T>
BinaryBlockResult<T> binary_conv_block(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                       BatchNormState<T>& bn, const BinaryBlockConfig& cfg,
                                       Mode mode) {
  BinaryBlockResult<T> r;
  BinaryBlockCache<T>& c = r.cache;
  c.input = input;
  c.effective_weight = cfg.binarize_weights ? binarize_sign(weights) : weights;

  BasicTensor<T> x = conv2d(input, c.effective_weight, cfg.conv, static_cast<T>(cfg.pad_value));
  c.conv_out_shape = x.shape();
  if (cfg.pool) {
    PoolResult<T> pooled = maxpool2d(x, *cfg.pool);
    c.pool_argmax = std::move(pooled.argmax);
    x = std::move(pooled.output);
  }
  if (cfg.has_bn) {
    BatchNormResult<T> normed = batchnorm(x, bn, mode);
    c.bn = std::move(normed.cache);
    x = std::move(normed.output);
  }
  c.pre_activation = std::move(x);
  r.output = activate(c.pre_activation, cfg.binarize_activations, cfg.relu);
  return r;
}

template <typename T>
BinaryBlockGrads<T> binary_conv_block_backward(const BasicTensor<T>& grad_out,
                                               const BinaryBlockCache<T>& cache,
                                               const BasicTensor<T>& weights,
                                               const BatchNormState<T>& bn,
                                               const BinaryBlockConfig& cfg) {
  BinaryBlockGrads<T> g;
  BasicTensor<T> grad =
      activation_backward(grad_out, cache.pre_activation, cfg.binarize_activations, cfg.relu);
  if (cfg.has_bn) {
    BatchNormGrads<T> bg = batchnorm_backward(grad, cache.bn, bn);
    grad = std::move(bg.grad_input);
    g.grad_gamma = std::move(bg.grad_gamma);
    g.grad_beta = std::move(bg.grad_beta);
  }
  if (cfg.pool) grad = maxpool2d_backward(grad, cache.pool_argmax, cache.conv_out_shape);
  ConvGrads<T> cg = conv2d_backward(grad, cache.input, cache.effective_weight, cfg.conv,
                                    static_cast<T>(cfg.pad_value));
  g.grad_input = std::move(cg.grad_input);
  g.grad_weight = cfg.binarize_weights ? ste_backward(cg.grad_weight, weights)
                                       : std::move(cg.grad_weight);
  return g;
}

template <typename T>
BinaryDenseResult<T> binary_dense_block(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                        const BasicTensor<T>& bias, BatchNormState<T>& bn,
                                        const BinaryDenseConfig& cfg, Mode mode) {
  BinaryDenseResult<T> r;
  BinaryDenseCache<T>& c = r.cache;
  c.input = input;
  c.effective_weight = cfg.binarize_weights ? binarize_sign(weights) : weights;
  BasicTensor<T> x = dense(input, c.effective_weight, bias);
  if (cfg.has_bn) {
    BatchNormResult<T> normed = batchnorm(x, bn, mode);
    c.bn = std::move(normed.cache);
    x = std::move(normed.output);
  }
  c.pre_activation = std::move(x);
  r.output = activate(c.pre_activation, cfg.binarize_activations, cfg.relu);
  return r;
}

template <typename T>
BinaryDenseGrads<T> binary_dense_block_backward(const BasicTensor<T>& grad_out,
                                                const BinaryDenseCache<T>& cache,
                                                const BasicTensor<T>& weights, bool has_bias,
                                                const BatchNormState<T>& bn,
                                                const BinaryDenseConfig& cfg) {
  BinaryDenseGrads<T> g;
  BasicTensor<T> grad =
      activation_backward(grad_out, cache.pre_activation, cfg.binarize_activations, cfg.relu);
  if (cfg.has_bn) {
    BatchNormGrads<T> bg = batchnorm_backward(grad, cache.bn, bn);
    grad = std::move(bg.grad_input);
    g.grad_gamma = std::move(bg.grad_gamma);
    g.grad_beta = std::move(bg.grad_beta);
  }
  DenseGrads<T> dg = dense_backward(grad, cache.input, cache.effective_weight, has_bias);
  g.grad_input = std::move(dg.grad_input);
  g.grad_bias = std::move(dg.grad_bias);
  g.grad_weight = cfg.binarize_weights ? ste_backward(dg.grad_weight, weights)
                                       : std::move(dg.grad_weight);
  return g;
}

#define BNN_INSTANTIATE_BINARIZE(T)                                                              \
  template BasicTensor<T> binarize_sign<T>(const BasicTensor<T>&);                               \
  template BasicTensor<T> ste_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template class BasicLatentWeight<T>;                                                           \
  template void clip_latent<T>(BasicLatentWeight<T>&);                                           \
  template bool latent_in_range<T>(const BasicTensor<T>&);                                       \
  template BinaryBlockResult<T> binary_conv_block<T>(const BasicTensor<T>&,                      \
                                                     const BasicTensor<T>&, BatchNormState<T>&,  \
                                                     const BinaryBlockConfig&, Mode);            \
  template BinaryBlockGrads<T> binary_conv_block_backward<T>(                                    \
      const BasicTensor<T>&, const BinaryBlockCache<T>&, const BasicTensor<T>&,                  \
      const BatchNormState<T>&, const BinaryBlockConfig&);                                       \
  template BinaryDenseResult<T> binary_dense_block<T>(const BasicTensor<T>&,                     \
                                                      const BasicTensor<T>&,                     \
                                                      const BasicTensor<T>&, BatchNormState<T>&, \
                                                      const BinaryDenseConfig&, Mode);           \
  template BinaryDenseGrads<T> binary_dense_block_backward<T>(                                   \
      const BasicTensor<T>&, const BinaryDenseCache<T>&, const BasicTensor<T>&, bool,            \
      const BatchNormState<T>&, const BinaryDenseConfig&);

BNN_INSTANTIATE_BINARIZE(float)
BNN_INSTANTIATE_BINARIZE(double)

#undef BNN_INSTANTIATE_BINARIZE

}  // namespace bnn
