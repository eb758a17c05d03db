#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class LayerKind { conv, maxpool, dense, dropout, scaling, softmax };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// One row of an architecture table. Which optional fields are present
/// depends on the kind: conv uses all of them, maxpool only kernel/stride,
/// dense channels and the flags, the rest none.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::optional<std::size_t> channels;
  std::optional<std::size_t> kernel;
  std::optional<std::size_t> stride;
  std::optional<bool> binarize_weights;
  std::optional<bool> binarize_activations;
  /// ReLU activation for real-valued hidden layers (teacher nets).
  std::optional<bool> relu;

  static LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t stride,
                        bool binarize_weights, bool binarize_activations = true, bool relu = false);
  static LayerSpec maxpool(std::size_t kernel, std::size_t stride);
  static LayerSpec dense(std::size_t channels, bool binarize_weights, bool binarize_activations,
                         bool relu = false);
  static LayerSpec dropout();
  static LayerSpec scaling();
  static LayerSpec softmax();

  /// "same"-style padding: floor(k/2) for conv, floor((k-1)/2) for maxpool.
  std::size_t pad() const;

  bool operator==(const LayerSpec&) const = default;
};

struct InputShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  bool operator==(const InputShape&) const = default;
};

struct ArchSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  InputShape input;
  std::size_t num_classes = 10;
  double scaling_factor = 1.0;
  /// Dropout entries are active only when this is > 0.
  double dropout_ratio = 0.0;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  bool operator==(const ArchSpec&) const = default;
};

/// Throws SpecError naming the first violated rule.
void validate(const ArchSpec& spec);

/// Per-sample output shape of every layer ({C, H, W} or {D}); validates first.
std::vector<Shape> propagate_shapes(const ArchSpec& spec);

/// Trainable scalars a model built from `spec` holds (weights, biases, BN
/// gamma/beta), computed without allocating it.
std::size_t parameter_count(const ArchSpec& spec);

/// True when samples of shape `sample` match the input exactly or, for a
/// C x 1 x 1 input, hold exactly C values (flattened row-major).
bool accepts_sample_shape(const ArchSpec& spec, const Shape& sample);

/// Reshapes an N x sample batch to N x C x H x W; throws ShapeError when
/// accepts_sample_shape rejects the sample shape.
Tensor reshape_input(const ArchSpec& spec, const Tensor& batch);

/// Canonical JSON text: sorted keys, no insignificant whitespace.
std::string to_canonical_json(const ArchSpec& spec);
ArchSpec arch_from_json(std::string_view text);

/// Width scaling rule: round(c * m) to the nearest multiple of 8, at least 8.
std::size_t scale_channels(std::size_t channels, double width_multiplier);

/// The 13-layer wide-early-layer network: real 7x7/2 stem, three 3x3 binary
/// convs at 384, six at 512, binary Dense 4096, real classifier, scaling, softmax.
ArchSpec table1_spec(std::size_t resolution, std::size_t num_classes, double width_multiplier,
                     std::size_t input_channels = 3, double dropout_ratio = 0.2,
                     double scaling_factor = 1.0);

/// Binarized BVLC-Alexnet layout: conv 96/11x11/4, 256/5x5, 384, 384, 256,
/// dense 4096, 4096, classes.
ArchSpec alexnet_like_spec(std::size_t resolution, std::size_t num_classes, double width_multiplier,
                           std::size_t input_channels = 3, double dropout_ratio = 0.5,
                           double scaling_factor = 1.0);

/// Small all-real ReLU CNN used as the distillation teacher.
ArchSpec float_teacher_spec(std::size_t resolution, std::size_t num_classes,
                            std::size_t input_channels = 3, double width_multiplier = 1.0);

/// Binary MLP over a flat feature vector: binary hidden layers, real classifier.
ArchSpec binary_mlp_spec(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                         std::size_t num_classes);

}  // namespace bnn
