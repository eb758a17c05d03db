#include "bnn/model.hpp"

#include <cstring>

namespace bnn {
namespace {

template <typename... F>
struct overloaded : F... {
  using F::operator()...;
};
template <typename... F>
overloaded(F...) -> overloaded<F...>;

Tensor init_uniform(Shape shape, double gamma, Rng* rng) {
  Tensor t(std::move(shape));
  if (rng == nullptr) return t;
  std::uniform_real_distribution<float> u(static_cast<float>(-gamma), static_cast<float>(gamma));
  for (float& v : t.data()) v = u(*rng);
  return t;
}

WeightSlot make_weight(Shape shape, std::size_t fan_in, std::size_t fan_out, bool latent, Rng* rng) {
  Tensor values = init_uniform(std::move(shape), glorot_gamma(fan_in, fan_out), rng);
  if (latent) return LatentWeight(std::move(values), fan_in, fan_out);
  return values;
}

Tensor flatten_batch(const Tensor& x) {
  std::size_t per_sample = x.size() / x.dim(0);
  return x.reshaped({x.dim(0), per_sample});
}

std::string stage_label(const Stage& s) {
  return std::visit(
      overloaded{[](const ConvStage& c) { return layer_label(c.layer) + " (conv)"; },
                 [](const DenseStage& d) { return layer_label(d.layer) + " (dense)"; },
                 [](const PoolStage& p) { return layer_label(p.layer) + " (maxpool)"; },
                 [](const DropoutStage& d) { return layer_label(d.layer) + " (dropout)"; }},
      s);
}

std::span<float> vec_span(std::vector<float>& v) { return {v.data(), v.size()}; }

}  // namespace

std::string layer_label(std::size_t layer) { return "layers." + std::to_string(layer); }

const Tensor& weight_values(const WeightSlot& w) {
  if (const auto* l = std::get_if<LatentWeight>(&w)) return l->value();
  return std::get<Tensor>(w);
}

Tensor& weight_values(WeightSlot& w) {
  if (auto* l = std::get_if<LatentWeight>(&w)) return l->value();
  return std::get<Tensor>(w);
}

Model Model::build(const ArchSpec& spec, Rng& rng) {
  Model m(spec);
  m.allocate(&rng);
  return m;
}

Model Model::skeleton(const ArchSpec& spec) {
  Model m(spec);
  m.allocate(nullptr);
  return m;
}

void Model::allocate(Rng* rng) {
  const std::vector<Shape> shapes = propagate_shapes(spec_);
  const auto& layers = spec_.layers;
  const auto momentum = static_cast<float>(spec_.bn_momentum);
  const auto eps = static_cast<float>(spec_.bn_epsilon);

  Shape cur{spec_.input.channels, spec_.input.height, spec_.input.width};
  bool input_binary = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::conv: {
        ConvStage s;
        s.layer = i;
        const std::size_t k = *l.kernel;
        s.cfg.conv = ConvParams{*l.channels, cur[0], k, k, *l.stride, *l.stride, l.pad(), l.pad()};
        s.cfg.binarize_weights = *l.binarize_weights;
        s.cfg.binarize_activations = *l.binarize_activations;
        s.cfg.relu = *l.relu;
        s.cfg.has_bn = true;
        s.cfg.pad_value = input_binary ? -1.0 : 0.0;
        const std::size_t fan_in = cur[0] * k * k;
        const std::size_t fan_out = *l.channels * k * k;
        s.weight = make_weight({*l.channels, cur[0], k, k}, fan_in, fan_out, *l.binarize_weights, rng);
        s.bn = BatchNormState<float>::fresh(*l.channels, momentum, eps);
        // Conv -> maxpool pairs pool the raw conv output before normalization.
        if (i + 1 < layers.size() && layers[i + 1].kind == LayerKind::maxpool) {
          const LayerSpec& p = layers[i + 1];
          s.cfg.pool = PoolParams{*p.kernel, *p.stride, p.pad()};
          ++i;
        }
        input_binary = *l.binarize_activations;
        stages_.emplace_back(std::move(s));
        break;
      }
      case LayerKind::maxpool: {
        PoolStage s;
        s.layer = i;
        s.params = PoolParams{*l.kernel, *l.stride, l.pad()};
        stages_.emplace_back(std::move(s));
        break;
      }
      case LayerKind::dense: {
        DenseStage s;
        s.layer = i;
        const std::size_t d = shape_numel(cur);
        const std::size_t k = *l.channels;
        s.cfg.binarize_weights = *l.binarize_weights;
        s.cfg.binarize_activations = *l.binarize_activations;
        s.cfg.relu = *l.relu;
        s.cfg.has_bn = *l.binarize_activations || *l.relu;
        s.weight = make_weight({d, k}, d, k, *l.binarize_weights, rng);
        if (s.cfg.has_bn) {
          s.bn = BatchNormState<float>::fresh(k, momentum, eps);
        } else {
          s.bias = Tensor({k});
        }
        input_binary = *l.binarize_activations;
        stages_.emplace_back(std::move(s));
        break;
      }
      case LayerKind::dropout: {
        DropoutStage s;
        s.layer = i;
        s.ratio = spec_.dropout_ratio;
        stages_.emplace_back(std::move(s));
        break;
      }
      case LayerKind::scaling:
      case LayerKind::softmax:
        break;
    }
    cur = shapes[i];
  }
}

Tensor Model::forward(const Tensor& batch, Mode mode, Rng& rng) {
  nonfinite_.reset();
  Tensor x = reshape_input(spec_, batch);
  for (Stage& stage : stages_) {
    std::visit(overloaded{
                   [&](ConvStage& s) {
                     auto r = binary_conv_block(x, weight_values(s.weight), s.bn, s.cfg, mode);
                     x = std::move(r.output);
                     s.cache = std::move(r.cache);
                   },
                   [&](DenseStage& s) {
                     s.input_shape = x.shape();
                     auto r = binary_dense_block(flatten_batch(x), weight_values(s.weight), s.bias,
                                                 s.bn, s.cfg, mode);
                     x = std::move(r.output);
                     s.cache = std::move(r.cache);
                   },
                   [&](PoolStage& s) {
                     s.input_shape = x.shape();
                     auto r = maxpool2d(x, s.params);
                     x = std::move(r.output);
                     s.argmax = std::move(r.argmax);
                   },
                   [&](DropoutStage& s) {
                     auto r = dropout(x, s.ratio, mode, rng);
                     x = std::move(r.output);
                     s.mask = std::move(r.mask);
                   }},
               stage);
    if (!nonfinite_ && !all_finite(x)) nonfinite_ = stage_label(stage);
  }
  return x;
}

Tensor Model::infer_logits(const Tensor& batch) const {
  Tensor x = reshape_input(spec_, batch);
  Rng unused(0);
  for (const Stage& stage : stages_) {
    std::visit(overloaded{
                   [&](const ConvStage& s) {
                     BatchNormState<float> bn = s.bn;
                     x = binary_conv_block(x, weight_values(s.weight), bn, s.cfg, Mode::infer).output;
                   },
                   [&](const DenseStage& s) {
                     BatchNormState<float> bn = s.bn;
                     x = binary_dense_block(flatten_batch(x), weight_values(s.weight), s.bias, bn,
                                            s.cfg, Mode::infer)
                             .output;
                   },
                   [&](const PoolStage& s) { x = maxpool2d(x, s.params).output; },
                   [&](const DropoutStage& s) { x = dropout(x, s.ratio, Mode::infer, unused).output; }},
               stage);
  }
  return x;
}

void Model::backward(const Tensor& grad_logits) {
  Tensor g = grad_logits;
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
    std::visit(overloaded{
                   [&](ConvStage& s) {
                     auto r = binary_conv_block_backward(g, s.cache, weight_values(s.weight), s.bn, s.cfg);
                     g = std::move(r.grad_input);
                     s.grad_weight = std::move(r.grad_weight);
                     s.grad_gamma = std::move(r.grad_gamma);
                     s.grad_beta = std::move(r.grad_beta);
                   },
                   [&](DenseStage& s) {
                     auto r = binary_dense_block_backward(g, s.cache, weight_values(s.weight),
                                                          !s.bias.empty(), s.bn, s.cfg);
                     g = r.grad_input.reshaped(s.input_shape);
                     s.grad_weight = std::move(r.grad_weight);
                     s.grad_bias = std::move(r.grad_bias);
                     s.grad_gamma = std::move(r.grad_gamma);
                     s.grad_beta = std::move(r.grad_beta);
                   },
                   [&](PoolStage& s) { g = maxpool2d_backward(g, s.argmax, s.input_shape); },
                   [&](DropoutStage& s) { g = dropout_backward(g, s.mask); }},
               *it);
  }
}

std::vector<ParamRef> Model::parameters() {
  std::vector<ParamRef> out;
  auto add_weight = [&](std::size_t layer, WeightSlot& w, const Tensor& grad) {
    LatentWeight* latent = std::get_if<LatentWeight>(&w);
    Tensor& values = weight_values(w);
    out.push_back({layer_label(layer) + ".weight", values.data(), grad.data(),
                   latent ? latent->lr_scale() : 1.0, latent});
  };
  auto add_bn = [&](std::size_t layer, BatchNormState<float>& bn, const std::vector<float>& gg,
                    const std::vector<float>& gb) {
    out.push_back({layer_label(layer) + ".bn.gamma", vec_span(bn.gamma), gg, 1.0, nullptr});
    out.push_back({layer_label(layer) + ".bn.beta", vec_span(bn.beta), gb, 1.0, nullptr});
  };
  for (Stage& stage : stages_) {
    if (auto* c = std::get_if<ConvStage>(&stage)) {
      add_weight(c->layer, c->weight, c->grad_weight);
      add_bn(c->layer, c->bn, c->grad_gamma, c->grad_beta);
    } else if (auto* d = std::get_if<DenseStage>(&stage)) {
      add_weight(d->layer, d->weight, d->grad_weight);
      if (!d->bias.empty()) {
        out.push_back({layer_label(d->layer) + ".bias", d->bias.data(), d->grad_bias.data(), 1.0, nullptr});
      }
      if (d->cfg.has_bn) add_bn(d->layer, d->bn, d->grad_gamma, d->grad_beta);
    }
  }
  return out;
}

std::vector<NamedTensorView> Model::named_tensors() {
  std::vector<NamedTensorView> out;
  auto add_bn = [&](std::size_t layer, BatchNormState<float>& bn) {
    const Shape c{bn.channels()};
    const std::string p = layer_label(layer) + ".bn.";
    out.push_back({p + "gamma", c, vec_span(bn.gamma)});
    out.push_back({p + "beta", c, vec_span(bn.beta)});
    out.push_back({p + "running_mean", c, vec_span(bn.running_mean)});
    out.push_back({p + "running_var", c, vec_span(bn.running_var)});
  };
  for (Stage& stage : stages_) {
    if (auto* c = std::get_if<ConvStage>(&stage)) {
      Tensor& w = weight_values(c->weight);
      out.push_back({layer_label(c->layer) + ".weight", w.shape(), w.data()});
      add_bn(c->layer, c->bn);
    } else if (auto* d = std::get_if<DenseStage>(&stage)) {
      Tensor& w = weight_values(d->weight);
      out.push_back({layer_label(d->layer) + ".weight", w.shape(), w.data()});
      if (!d->bias.empty()) out.push_back({layer_label(d->layer) + ".bias", d->bias.shape(), d->bias.data()});
      if (d->cfg.has_bn) add_bn(d->layer, d->bn);
    }
  }
  return out;
}

std::vector<LatentView> Model::latent_weights() const {
  std::vector<LatentView> out;
  for (const Stage& stage : stages_) {
    if (const auto* c = std::get_if<ConvStage>(&stage)) {
      if (const auto* l = std::get_if<LatentWeight>(&c->weight)) {
        out.push_back({layer_label(c->layer) + ".weight", c->layer, l});
      }
    } else if (const auto* d = std::get_if<DenseStage>(&stage)) {
      if (const auto* l = std::get_if<LatentWeight>(&d->weight)) {
        out.push_back({layer_label(d->layer) + ".weight", d->layer, l});
      }
    }
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Stage& stage : stages_) {
    if (const auto* c = std::get_if<ConvStage>(&stage)) {
      n += weight_values(c->weight).size() + 2 * c->bn.channels();
    } else if (const auto* d = std::get_if<DenseStage>(&stage)) {
      n += weight_values(d->weight).size() + d->bias.size() + (d->cfg.has_bn ? 2 * d->bn.channels() : 0);
    }
  }
  return n;
}

bool Model::bit_equal(const Model& other) const {
  if (!(spec_ == other.spec_)) return false;
  auto a = const_cast<Model&>(*this).named_tensors();
  auto b = const_cast<Model&>(other).named_tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].shape != b[i].shape) return false;
    if (std::memcmp(a[i].data.data(), b[i].data.data(), a[i].data.size_bytes()) != 0) return false;
  }
  return true;
}

}  // namespace bnn
