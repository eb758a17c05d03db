#include "bnn/arch.hpp"

#include <cmath>

#include <json.hpp>

#include "bnn/ops.hpp"

namespace bnn {

using nlohmann::json;

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::scaling: return "scaling";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (LayerKind k : {LayerKind::conv, LayerKind::maxpool, LayerKind::dense, LayerKind::dropout,
                      LayerKind::scaling, LayerKind::softmax}) {
    if (to_string(k) == name) return k;
  }
  throw SpecError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv(std::size_t channels, std::size_t kernel, std::size_t stride,
                          bool binarize_weights, bool binarize_activations, bool relu) {
  LayerSpec s;
  s.kind = LayerKind::conv;
  s.channels = channels;
  s.kernel = kernel;
  s.stride = stride;
  s.binarize_weights = binarize_weights;
  s.binarize_activations = binarize_activations;
  s.relu = relu;
  return s;
}

LayerSpec LayerSpec::maxpool(std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t channels, bool binarize_weights, bool binarize_activations,
                           bool relu) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.channels = channels;
  s.binarize_weights = binarize_weights;
  s.binarize_activations = binarize_activations;
  s.relu = relu;
  return s;
}

LayerSpec LayerSpec::dropout() { return LayerSpec{LayerKind::dropout, {}, {}, {}, {}, {}, {}}; }
LayerSpec LayerSpec::scaling() { return LayerSpec{LayerKind::scaling, {}, {}, {}, {}, {}, {}}; }
LayerSpec LayerSpec::softmax() { return LayerSpec{LayerKind::softmax, {}, {}, {}, {}, {}, {}}; }

std::size_t LayerSpec::pad() const {
  if (!kernel) return 0;
  return kind == LayerKind::conv ? *kernel / 2 : (*kernel - 1) / 2;
}

namespace {

void check_fields(const LayerSpec& l, std::size_t index) {
  const std::string where = "layer " + std::to_string(index) + " (" + std::string(to_string(l.kind)) + ")";
  const bool has_kernel = l.kernel.has_value() && l.stride.has_value();
  const bool has_flags = l.binarize_weights.has_value() && l.binarize_activations.has_value() &&
                         l.relu.has_value();
  const bool no_kernel = !l.kernel && !l.stride;
  const bool no_flags = !l.binarize_weights && !l.binarize_activations && !l.relu;
  bool ok = false;
  switch (l.kind) {
    case LayerKind::conv: ok = l.channels && has_kernel && has_flags; break;
    case LayerKind::maxpool: ok = !l.channels && has_kernel && no_flags; break;
    case LayerKind::dense: ok = l.channels && no_kernel && has_flags; break;
    default: ok = !l.channels && no_kernel && no_flags; break;
  }
  if (!ok) throw SpecError(where + ": fields do not match the layer kind");
  if (l.channels && *l.channels == 0) throw SpecError(where + ": channels must be positive");
  if (l.kernel && (*l.kernel == 0 || *l.stride == 0)) {
    throw SpecError(where + ": kernel and stride must be positive");
  }
  if (l.relu.value_or(false) && l.binarize_activations.value_or(false)) {
    throw SpecError(where + ": relu and binarized activations are exclusive");
  }
}

std::vector<Shape> propagate_unchecked(const ArchSpec& spec) {
  std::vector<Shape> shapes;
  Shape cur{spec.input.channels, spec.input.height, spec.input.width};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    try {
      switch (l.kind) {
        case LayerKind::conv: {
          if (cur.size() != 3) throw SpecError("conv after a dense layer");
          ConvParams p{*l.channels, cur[0], *l.kernel, *l.kernel, *l.stride, *l.stride, l.pad(), l.pad()};
          cur = Shape{*l.channels, p.out_h(cur[1]), p.out_w(cur[2])};
          break;
        }
        case LayerKind::maxpool: {
          if (cur.size() != 3) throw SpecError("maxpool after a dense layer");
          PoolParams p{*l.kernel, *l.stride, l.pad()};
          cur = Shape{cur[0], p.out_dim(cur[1]), p.out_dim(cur[2])};
          break;
        }
        case LayerKind::dense: cur = Shape{*l.channels}; break;
        default: break;
      }
    } catch (const ShapeError& e) {
      throw SpecError("layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) +
                      "): " + e.what());
    }
    shapes.push_back(cur);
  }
  return shapes;
}

}  // namespace

void validate(const ArchSpec& spec) {
  if (spec.input.channels == 0 || spec.input.height == 0 || spec.input.width == 0) {
    throw SpecError("input shape must be positive");
  }
  if (spec.num_classes == 0) throw SpecError("num_classes must be positive");
  if (!(spec.scaling_factor > 0.0) || !std::isfinite(spec.scaling_factor)) {
    throw SpecError("scaling_factor must be positive and finite");
  }
  if (!(spec.dropout_ratio >= 0.0 && spec.dropout_ratio < 1.0)) {
    throw SpecError("dropout_ratio must be in [0, 1)");
  }
  if (!(spec.bn_momentum > 0.0 && spec.bn_momentum < 1.0)) throw SpecError("bn_momentum must be in (0, 1)");
  if (!(spec.bn_epsilon > 0.0)) throw SpecError("bn_epsilon must be positive");

  const auto& L = spec.layers;
  for (std::size_t i = 0; i < L.size(); ++i) check_fields(L[i], i);
  if (L.size() < 3) throw SpecError("architecture needs at least Dense -> Scaling -> Softmax");

  const LayerSpec& last_dense = L[L.size() - 3];
  if (last_dense.kind != LayerKind::dense || L[L.size() - 2].kind != LayerKind::scaling ||
      L.back().kind != LayerKind::softmax) {
    throw SpecError("architecture must end with Dense(num_classes) -> Scaling -> Softmax");
  }
  if (*last_dense.channels != spec.num_classes) {
    throw SpecError("final dense has " + std::to_string(*last_dense.channels) +
                    " outputs but num_classes is " + std::to_string(spec.num_classes));
  }
  if (*last_dense.binarize_weights) throw SpecError("final dense layer must keep real weights");
  if (*last_dense.binarize_activations || *last_dense.relu) {
    throw SpecError("final dense layer must emit raw logits");
  }
  for (std::size_t i = 0; i + 2 < L.size(); ++i) {
    if (L[i].kind == LayerKind::scaling || L[i].kind == LayerKind::softmax) {
      throw SpecError("scaling/softmax may only appear at the end");
    }
  }
  for (const LayerSpec& l : L) {
    if (l.kind == LayerKind::conv) {
      if (*l.binarize_weights) throw SpecError("first conv layer must keep real weights");
      break;
    }
  }
  propagate_unchecked(spec);
}

std::vector<Shape> propagate_shapes(const ArchSpec& spec) {
  validate(spec);
  return propagate_unchecked(spec);
}

std::size_t parameter_count(const ArchSpec& spec) {
  const std::vector<Shape> shapes = propagate_shapes(spec);
  std::size_t n = 0;
  Shape cur{spec.input.channels, spec.input.height, spec.input.width};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind == LayerKind::conv) {
      n += *l.channels * cur[0] * *l.kernel * *l.kernel + 2 * *l.channels;
    } else if (l.kind == LayerKind::dense) {
      const bool bn = *l.binarize_activations || l.relu.value_or(false);
      n += shape_numel(cur) * *l.channels + (bn ? 2 : 1) * *l.channels;
    }
    cur = shapes[i];
  }
  return n;
}

namespace {

json layer_to_json(const LayerSpec& l) {
  json j;
  j["kind"] = std::string(to_string(l.kind));
  if (l.channels) j["channels"] = *l.channels;
  if (l.kernel) j["kernel"] = *l.kernel;
  if (l.stride) j["stride"] = *l.stride;
  if (l.binarize_weights) j["binarize_weights"] = *l.binarize_weights;
  if (l.binarize_activations) j["binarize_activations"] = *l.binarize_activations;
  if (l.relu) j["relu"] = *l.relu;
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  if (j.contains("channels")) l.channels = j["channels"].get<std::size_t>();
  if (j.contains("kernel")) l.kernel = j["kernel"].get<std::size_t>();
  if (j.contains("stride")) l.stride = j["stride"].get<std::size_t>();
  if (j.contains("binarize_weights")) l.binarize_weights = j["binarize_weights"].get<bool>();
  if (j.contains("binarize_activations")) l.binarize_activations = j["binarize_activations"].get<bool>();
  if (j.contains("relu")) l.relu = j["relu"].get<bool>();
  return l;
}

}  // namespace

std::string to_canonical_json(const ArchSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["input"] = {{"channels", spec.input.channels}, {"height", spec.input.height}, {"width", spec.input.width}};
  j["num_classes"] = spec.num_classes;
  j["scaling_factor"] = spec.scaling_factor;
  j["dropout_ratio"] = spec.dropout_ratio;
  j["bn_momentum"] = spec.bn_momentum;
  j["bn_epsilon"] = spec.bn_epsilon;
  json layers = json::array();
  for (const LayerSpec& l : spec.layers) layers.push_back(layer_to_json(l));
  j["layers"] = std::move(layers);
  return j.dump();
}

ArchSpec arch_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    ArchSpec s;
    s.name = j.value("name", std::string{});
    const json& in = j.at("input");
    s.input = {in.at("channels").get<std::size_t>(), in.at("height").get<std::size_t>(),
               in.at("width").get<std::size_t>()};
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.scaling_factor = j.value("scaling_factor", 1.0);
    s.dropout_ratio = j.value("dropout_ratio", 0.0);
    s.bn_momentum = j.value("bn_momentum", 0.1);
    s.bn_epsilon = j.value("bn_epsilon", 1e-5);
    for (const json& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
    return s;
  } catch (const json::exception& e) {
    throw SpecError(std::string("malformed architecture JSON: ") + e.what());
  }
}

std::size_t scale_channels(std::size_t channels, double width_multiplier) {
  if (!(width_multiplier > 0.0)) throw SpecError("width_multiplier must be positive");
  const double eighths = std::round(static_cast<double>(channels) * width_multiplier / 8.0);
  return std::max<std::size_t>(8, static_cast<std::size_t>(eighths) * 8);
}

ArchSpec table1_spec(std::size_t resolution, std::size_t num_classes, double width_multiplier,
                     std::size_t input_channels, double dropout_ratio, double scaling_factor) {
  const auto w = [&](std::size_t c) { return scale_channels(c, width_multiplier); };
  ArchSpec s;
  s.name = "table1";
  s.input = {input_channels, resolution, resolution};
  s.num_classes = num_classes;
  s.scaling_factor = scaling_factor;
  s.dropout_ratio = dropout_ratio;
  s.layers.push_back(LayerSpec::conv(w(128), 7, 2, false));
  s.layers.push_back(LayerSpec::maxpool(3, 2));
  for (int i = 0; i < 3; ++i) s.layers.push_back(LayerSpec::conv(w(384), 3, 1, true));
  s.layers.push_back(LayerSpec::maxpool(2, 2));
  for (int i = 0; i < 6; ++i) s.layers.push_back(LayerSpec::conv(w(512), 3, 1, true));
  s.layers.push_back(LayerSpec::maxpool(2, 2));
  s.layers.push_back(LayerSpec::dropout());
  s.layers.push_back(LayerSpec::dense(w(4096), true, true));
  s.layers.push_back(LayerSpec::dense(num_classes, false, false));
  s.layers.push_back(LayerSpec::scaling());
  s.layers.push_back(LayerSpec::softmax());
  validate(s);
  return s;
}

ArchSpec alexnet_like_spec(std::size_t resolution, std::size_t num_classes, double width_multiplier,
                           std::size_t input_channels, double dropout_ratio, double scaling_factor) {
  const auto w = [&](std::size_t c) { return scale_channels(c, width_multiplier); };
  ArchSpec s;
  s.name = "alexnet_like";
  s.input = {input_channels, resolution, resolution};
  s.num_classes = num_classes;
  s.scaling_factor = scaling_factor;
  s.dropout_ratio = dropout_ratio;
  s.layers.push_back(LayerSpec::conv(w(96), 11, 4, false));
  s.layers.push_back(LayerSpec::maxpool(3, 2));
  s.layers.push_back(LayerSpec::conv(w(256), 5, 1, true));
  s.layers.push_back(LayerSpec::maxpool(3, 2));
  s.layers.push_back(LayerSpec::conv(w(384), 3, 1, true));
  s.layers.push_back(LayerSpec::conv(w(384), 3, 1, true));
  s.layers.push_back(LayerSpec::conv(w(256), 3, 1, true));
  s.layers.push_back(LayerSpec::maxpool(3, 2));
  s.layers.push_back(LayerSpec::dense(w(4096), true, true));
  s.layers.push_back(LayerSpec::dropout());
  s.layers.push_back(LayerSpec::dense(w(4096), true, true));
  s.layers.push_back(LayerSpec::dropout());
  s.layers.push_back(LayerSpec::dense(num_classes, false, false));
  s.layers.push_back(LayerSpec::scaling());
  s.layers.push_back(LayerSpec::softmax());
  validate(s);
  return s;
}

ArchSpec float_teacher_spec(std::size_t resolution, std::size_t num_classes,
                            std::size_t input_channels, double width_multiplier) {
  const auto w = [&](std::size_t c) { return scale_channels(c, width_multiplier); };
  ArchSpec s;
  s.name = "float_teacher";
  s.input = {input_channels, resolution, resolution};
  s.num_classes = num_classes;
  s.layers.push_back(LayerSpec::conv(w(32), 3, 1, false, false, true));
  s.layers.push_back(LayerSpec::maxpool(2, 2));
  s.layers.push_back(LayerSpec::conv(w(64), 3, 1, false, false, true));
  s.layers.push_back(LayerSpec::maxpool(2, 2));
  s.layers.push_back(LayerSpec::conv(w(128), 3, 1, false, false, true));
  s.layers.push_back(LayerSpec::maxpool(2, 2));
  s.layers.push_back(LayerSpec::dense(w(256), false, false, true));
  s.layers.push_back(LayerSpec::dense(num_classes, false, false));
  s.layers.push_back(LayerSpec::scaling());
  s.layers.push_back(LayerSpec::softmax());
  validate(s);
  return s;
}

ArchSpec binary_mlp_spec(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                         std::size_t num_classes) {
  ArchSpec s;
  s.name = "binary_mlp";
  s.input = {input_dim, 1, 1};
  s.num_classes = num_classes;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    s.layers.push_back(LayerSpec::dense(hidden[i], i > 0, true));
  }
  s.layers.push_back(LayerSpec::dense(num_classes, false, false));
  s.layers.push_back(LayerSpec::scaling());
  s.layers.push_back(LayerSpec::softmax());
  validate(s);
  return s;
}

bool accepts_sample_shape(const ArchSpec& spec, const Shape& sample) {
  const Shape want{spec.input.channels, spec.input.height, spec.input.width};
  if (sample == want) return true;
  return spec.input.height == 1 && spec.input.width == 1 && !sample.empty() &&
         shape_numel(sample) == spec.input.channels;
}

Tensor reshape_input(const ArchSpec& spec, const Tensor& batch) {
  const Shape want{spec.input.channels, spec.input.height, spec.input.width};
  const Shape sample = batch.rank() == 0 ? Shape{} : Shape(batch.shape().begin() + 1, batch.shape().end());
  if (batch.rank() < 2 || !accepts_sample_shape(spec, sample)) {
    throw ShapeError("input " + shape_str(batch.shape()) + " does not match N x " + shape_str(want));
  }
  if (sample == want) return batch;
  return batch.reshaped({batch.dim(0), want[0], want[1], want[2]});
}

}  // namespace bnn
