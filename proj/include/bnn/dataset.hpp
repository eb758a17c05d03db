#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

using Checksum = std::array<unsigned char, 32>;

std::string to_hex(const Checksum& checksum);

enum class DatasetErrc { bad_magic, truncated, count_mismatch, format, io };

std::string_view to_string(DatasetErrc code);

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  DatasetErrc code() const noexcept { return code_; }

 private:
  DatasetErrc code_;
};

struct Dataset {
  Tensor images;  // N x C x H x W, values in [0, 1]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 10;
  std::string split;
  Checksum checksum{};

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
};

/// SHA-256 over the image dims (u64 LE), pixel values (f32 LE) and labels (u32 LE).
Checksum dataset_checksum(const Tensor& images, std::span<const std::size_t> labels);

/// Validates N > 0, label range and image/label agreement, then stamps the checksum.
Dataset make_dataset(Tensor images, std::vector<std::size_t> labels, std::size_t num_classes,
                     std::string split);

/// IDX image/label pair (magic 0x00000803 / 0x00000801, big-endian dims,
/// u8 pixels scaled by 1/255).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::string split = "");

/// CIFAR-10 binary batches: 3073-byte records (label byte + 3072 channel-major
/// R, G, B pixel bytes of a 32x32 image).
Dataset load_cifar10(std::span<const std::filesystem::path> batch_files, std::string split = "");

/// Writers for the same formats (pixels quantized as round(v * 255)).
void write_idx(const Dataset& data, const std::filesystem::path& images,
               const std::filesystem::path& labels);
void write_cifar10(const Dataset& data, const std::filesystem::path& batch_file);

Dataset subset(const Dataset& data, std::size_t begin, std::size_t count, std::string split);

/// Stacks the selected samples into an N x C x H x W batch.
Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<std::size_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

struct SyntheticImageOptions {
  std::size_t samples = 10000;
  std::size_t num_classes = 10;
  std::size_t channels = 3;
  std::size_t resolution = 32;
  std::uint64_t seed = 1;
  /// Seed for the per-class prototypes; train and test splits share it.
  std::uint64_t prototype_seed = 20240601;
  double noise = 0.25;
  std::size_t max_shift = 3;
};

/// Deterministic class-conditional image dataset: each class is a smooth
/// random colour pattern, samples are randomly shifted, contrast-jittered and
/// noised copies blended with a distractor class.
Dataset make_synthetic_images(const SyntheticImageOptions& options, std::string split);

}  // namespace bnn
