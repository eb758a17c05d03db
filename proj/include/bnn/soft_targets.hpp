#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "bnn/dataset.hpp"
#include "bnn/model.hpp"

namespace bnn {

/// Raw teacher logits for every sample of a dataset, bound to it by checksum.
struct SoftTargetCache {
  std::size_t samples = 0;
  std::size_t classes = 0;
  std::vector<float> logits;  // samples x classes, row-major
  Checksum checksum{};

  /// Logit rows for the given sample indices as an N x classes tensor.
  Tensor rows(std::span<const std::size_t> indices) const;

  bool operator==(const SoftTargetCache&) const = default;
};

/// Teacher logits in inference mode over `data` in canonical order.
SoftTargetCache generate_soft_targets(const Model& teacher, const Dataset& data, std::size_t batch_size = 256);

/// "SOFT" file: u32 version 1, u64 sample count, u32 class count, 32 checksum
/// bytes, then f32 logits.
void save_soft_targets(const SoftTargetCache& cache, const std::filesystem::path& path);
SoftTargetCache load_soft_targets(const std::filesystem::path& path);

/// Loads and rejects the file (FormatErrc::checksum_mismatch) unless it was
/// generated from exactly `data`.
SoftTargetCache load_soft_targets(const std::filesystem::path& path, const Dataset& data);

}  // namespace bnn
