#include "bnn/deploy.hpp"

#include <algorithm>

#include "bnn/binary_io.hpp"

namespace bnn {

namespace {

template <typename... F>
struct overloaded : F... {
  using F::operator()...;
};
template <typename... F>
overloaded(F...) -> overloaded<F...>;

LayerTail make_tail(bool has_bn, bool sign, bool relu, const BatchNormState<float>& bn) {
  LayerTail t;
  if (!has_bn) return t;
  if (sign) {
    t.kind = TailKind::threshold;
    t.thresholds = fold_bn_sign(bn);
  } else {
    t.kind = TailKind::batchnorm;
    t.bn = bn;
    t.relu = relu;
  }
  return t;
}

void apply_tail(Tensor& x, const LayerTail& t) {
  switch (t.kind) {
    case TailKind::none:
      return;
    case TailKind::threshold: {
      const std::size_t channels = x.dim(1), inner = x.size() / x.dim(0) / channels;
      float* v = x.raw();
      for (std::size_t s = 0; s < x.dim(0); ++s)
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t i = 0; i < inner; ++i, ++v) *v = t.thresholds[c].apply(*v);
      return;
    }
    case TailKind::batchnorm: {
      BatchNormState<float> bn = t.bn;
      x = batchnorm(x, bn, Mode::infer).output;
      if (t.relu) x = relu(x);
      return;
    }
  }
}

}  // namespace

std::size_t DeployedModel::xnor_layer_count() const {
  std::size_t n = 0;
  for (const auto& s : stages) {
    if (const auto* c = std::get_if<DeployedConv>(&s)) n += c->xnor;
    if (const auto* d = std::get_if<DeployedDense>(&s)) n += d->xnor;
  }
  return n;
}

DeployedModel export_model(const Model& model) {
  DeployedModel out{model.spec(), {}};
  bool input_binary = false;
  for (const Stage& stage : model.stages()) {
    std::visit(overloaded{
                   [&](const ConvStage& s) {
                     DeployedConv c;
                     c.layer = s.layer;
                     c.conv = s.cfg.conv;
                     c.pool = s.cfg.pool;
                     c.pad_value = static_cast<float>(s.cfg.pad_value);
                     const Tensor& w = weight_values(s.weight);
                     const Tensor eff = s.cfg.binarize_weights ? binarize_sign(w) : w;
                     c.xnor = input_binary && s.cfg.binarize_weights && s.cfg.pad_value == -1.0;
                     if (c.xnor) {
                       c.packed = pack_conv_weights(eff);
                     } else {
                       c.weights = eff;
                     }
                     c.tail = make_tail(s.cfg.has_bn, s.cfg.binarize_activations, s.cfg.relu, s.bn);
                     input_binary = s.cfg.binarize_activations;
                     out.stages.emplace_back(std::move(c));
                   },
                   [&](const DenseStage& s) {
                     DeployedDense d;
                     d.layer = s.layer;
                     const Tensor& w = weight_values(s.weight);
                     const Tensor eff = s.cfg.binarize_weights ? binarize_sign(w) : w;
                     d.xnor = input_binary && s.cfg.binarize_weights && s.cfg.has_bn;
                     if (d.xnor) {
                       d.packed = pack_dense_weights(eff);
                     } else {
                       d.weights = eff;
                     }
                     d.bias = s.bias;
                     d.tail = make_tail(s.cfg.has_bn, s.cfg.binarize_activations, s.cfg.relu, s.bn);
                     input_binary = s.cfg.binarize_activations;
                     out.stages.emplace_back(std::move(d));
                   },
                   [&](const PoolStage& s) { out.stages.emplace_back(DeployedPool{s.layer, s.params}); },
                   [&](const DropoutStage& s) { out.stages.emplace_back(DeployedDropout{s.layer}); }},
               stage);
  }
  return out;
}

Tensor deployed_logits(const DeployedModel& model, const Tensor& batch) {
  Tensor x = reshape_input(model.spec, batch);
  for (const DeployedStage& stage : model.stages) {
    std::visit(overloaded{
                   [&](const DeployedConv& c) {
                     if (c.xnor) {
                       x = binconv_preactivation(x, c.packed, c.conv);
                     } else {
                       x = conv2d(x, c.weights, c.conv, c.pad_value);
                     }
                     if (c.pool) x = maxpool2d(x, *c.pool).output;
                     apply_tail(x, c.tail);
                   },
                   [&](const DeployedDense& d) {
                     const Tensor flat = x.reshaped({x.dim(0), x.size() / x.dim(0)});
                     x = d.xnor ? bindense_infer(flat, d.packed, {}) : dense(flat, d.weights, d.bias);
                     apply_tail(x, d.tail);
                   },
                   [&](const DeployedPool& p) { x = maxpool2d(x, p.params).output; },
                   [&](const DeployedDropout&) {}},
               stage);
  }
  return x;
}

Tensor run_inference(const DeployedModel& model, const Tensor& batch) {
  return softmax(scale_layer(deployed_logits(model, batch), static_cast<float>(model.spec.scaling_factor)));
}

Tensor reference_inference(const Model& model, const Tensor& batch) {
  return softmax(scale_layer(model.infer_logits(batch), static_cast<float>(model.spec().scaling_factor)));
}

std::vector<std::size_t> argmax_rows(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("argmax_rows expects a matrix, got " + shape_str(m.shape()));
  std::vector<std::size_t> out(m.dim(0));
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    const float* row = m.raw() + i * m.dim(1);
    out[i] = static_cast<std::size_t>(std::max_element(row, row + m.dim(1)) - row);
  }
  return out;
}

namespace {

constexpr std::string_view kMagic = "BNNX";

enum StageTag : std::uint8_t { kConv = 0, kDense = 1, kPool = 2, kDropout = 3 };

void put_shape(ByteWriter& w, const Shape& s) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.size()));
  for (std::size_t d : s) w.put<std::uint64_t>(d);
}

void put_floats(ByteWriter& w, std::span<const float> v) {
  w.put<std::uint64_t>(v.size());
  w.put_array<float>(v);
}

void put_weights(ByteWriter& w, bool xnor, const PackedBitTensor& packed, const Tensor& weights) {
  w.put<std::uint8_t>(xnor ? 1 : 0);
  if (xnor) {
    put_shape(w, packed.logical_shape());
    w.put<std::uint64_t>(packed.words().size());
    w.put_array<std::uint64_t>(packed.words());
  } else {
    put_shape(w, weights.shape());
    put_floats(w, weights.data());
  }
}

void put_tail(ByteWriter& w, const LayerTail& t) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.kind));
  if (t.kind == TailKind::threshold) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.thresholds.size()));
    for (const ThresholdUnit& u : t.thresholds) {
      w.put<float>(u.tau);
      w.put<std::int8_t>(u.direction);
    }
  } else if (t.kind == TailKind::batchnorm) {
    w.put<std::uint8_t>(t.relu ? 1 : 0);
    w.put<float>(t.bn.epsilon);
    put_floats(w, t.bn.gamma);
    put_floats(w, t.bn.beta);
    put_floats(w, t.bn.running_mean);
    put_floats(w, t.bn.running_var);
  }
}

[[noreturn]] void inconsistent(const std::string& what) { throw FormatError(FormatErrc::inconsistent, what); }

Shape get_shape(ByteReader& r) {
  Shape s(r.get<std::uint8_t>());
  for (auto& d : s) d = r.get<std::uint64_t>();
  return s;
}

std::vector<float> get_floats(ByteReader& r, std::size_t expected, const std::string& what) {
  const auto n = r.get<std::uint64_t>();
  if (n != expected) inconsistent(what + ": " + std::to_string(n) + " values, expected " + std::to_string(expected));
  std::vector<float> v(n);
  r.get_array<float>(std::span<float>(v));
  return v;
}

void get_weights(ByteReader& r, bool want_xnor, PackedBitTensor& packed, Tensor& weights, const std::string& what) {
  const bool xnor = r.get<std::uint8_t>() != 0;
  if (xnor != want_xnor) inconsistent(what + ": execution kind differs from the architecture");
  const Shape shape = get_shape(r);
  if (xnor) {
    if (shape != packed.logical_shape()) inconsistent(what + ": packed shape " + shape_str(shape));
    const auto n = r.get<std::uint64_t>();
    if (n != packed.words().size()) inconsistent(what + ": word count " + std::to_string(n));
    r.get_array<std::uint64_t>(packed.words());
    if (!pad_bits_clear(packed)) inconsistent(what + ": nonzero pad bits");
  } else {
    if (shape != weights.shape()) inconsistent(what + ": weight shape " + shape_str(shape));
    const auto v = get_floats(r, weights.size(), what);
    std::copy(v.begin(), v.end(), weights.data().begin());
  }
}

void get_tail(ByteReader& r, LayerTail& t, const std::string& what) {
  const auto kind = r.get<std::uint8_t>();
  if (kind != static_cast<std::uint8_t>(t.kind)) inconsistent(what + ": tail kind " + std::to_string(kind));
  if (t.kind == TailKind::threshold) {
    const auto n = r.get<std::uint32_t>();
    if (n != t.thresholds.size()) inconsistent(what + ": " + std::to_string(n) + " thresholds");
    for (ThresholdUnit& u : t.thresholds) {
      u.tau = r.get<float>();
      u.direction = r.get<std::int8_t>();
      if (u.direction != 1 && u.direction != -1) inconsistent(what + ": threshold direction must be +-1");
    }
  } else if (t.kind == TailKind::batchnorm) {
    t.relu = r.get<std::uint8_t>() != 0;
    t.bn.epsilon = r.get<float>();
    const std::size_t c = t.bn.channels();
    t.bn.gamma = get_floats(r, c, what + " gamma");
    t.bn.beta = get_floats(r, c, what + " beta");
    t.bn.running_mean = get_floats(r, c, what + " running_mean");
    t.bn.running_var = get_floats(r, c, what + " running_var");
  }
}

}  // namespace

std::vector<unsigned char> encode_deployed(const DeployedModel& model) {
  ByteWriter w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kDeployFormatVersion);
  const std::string spec = to_canonical_json(model.spec);
  w.put<std::uint64_t>(spec.size());
  w.put_bytes(spec);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.stages.size()));
  for (const DeployedStage& stage : model.stages) {
    std::visit(overloaded{[&](const DeployedConv& c) {
                            w.put<std::uint8_t>(kConv);
                            put_weights(w, c.xnor, c.packed, c.weights);
                            put_tail(w, c.tail);
                          },
                          [&](const DeployedDense& d) {
                            w.put<std::uint8_t>(kDense);
                            put_weights(w, d.xnor, d.packed, d.weights);
                            put_tail(w, d.tail);
                            put_floats(w, d.bias.empty() ? std::span<const float>{} : d.bias.data());
                          },
                          [&](const DeployedPool&) { w.put<std::uint8_t>(kPool); },
                          [&](const DeployedDropout&) { w.put<std::uint8_t>(kDropout); }},
               stage);
  }
  return w.bytes();
}

DeployedModel decode_deployed(std::span<const unsigned char> bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kMagic.size()) throw FormatError(FormatErrc::truncated, "file shorter than the magic");
  if (r.get_bytes(kMagic.size()) != kMagic) throw FormatError(FormatErrc::bad_magic, "expected BNNX");
  const auto version = r.get<std::uint32_t>();
  if (version != kDeployFormatVersion) {
    throw FormatError(FormatErrc::version_mismatch, "deployment format version " + std::to_string(version));
  }
  const auto spec_len = r.get<std::uint64_t>();
  if (spec_len > r.remaining()) throw FormatError(FormatErrc::truncated, "spec blob exceeds file");
  ArchSpec spec;
  try {
    spec = arch_from_json(r.get_bytes(spec_len));
    validate(spec);
  } catch (const SpecError& e) {
    inconsistent(e.what());
  }

  // The architecture JSON fixes the layer structure; the file only supplies values.
  DeployedModel model = export_model(Model::skeleton(spec));
  const auto count = r.get<std::uint32_t>();
  if (count != model.stages.size()) inconsistent("stage count " + std::to_string(count));
  for (DeployedStage& stage : model.stages) {
    const auto tag = r.get<std::uint8_t>();
    std::visit(overloaded{[&](DeployedConv& c) {
                            const std::string what = layer_label(c.layer);
                            if (tag != kConv) inconsistent(what + ": expected a conv record");
                            get_weights(r, c.xnor, c.packed, c.weights, what);
                            get_tail(r, c.tail, what);
                          },
                          [&](DeployedDense& d) {
                            const std::string what = layer_label(d.layer);
                            if (tag != kDense) inconsistent(what + ": expected a dense record");
                            get_weights(r, d.xnor, d.packed, d.weights, what);
                            get_tail(r, d.tail, what);
                            const auto bias = get_floats(r, d.bias.empty() ? 0 : d.bias.size(), what + " bias");
                            std::copy(bias.begin(), bias.end(), d.bias.data().begin());
                          },
                          [&](DeployedPool& p) {
                            if (tag != kPool) inconsistent(layer_label(p.layer) + ": expected a maxpool record");
                          },
                          [&](DeployedDropout& d) {
                            if (tag != kDropout) inconsistent(layer_label(d.layer) + ": expected a dropout record");
                          }},
               stage);
  }
  if (!r.at_end()) inconsistent("trailing bytes after the last stage");
  return model;
}

void save_deployed(const DeployedModel& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_deployed(model));
}

DeployedModel load_deployed(const std::filesystem::path& path) { return decode_deployed(read_file_bytes(path)); }

bool bit_equal(const DeployedModel& a, const DeployedModel& b) { return encode_deployed(a) == encode_deployed(b); }

}  // namespace bnn
