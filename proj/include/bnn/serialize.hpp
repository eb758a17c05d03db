#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "bnn/binary_io.hpp"
#include "bnn/model.hpp"

namespace bnn {

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// "BNNM" container: magic, u32 version, u64-length-prefixed canonical ArchSpec
/// JSON, then one record per persisted tensor in layer order
/// (u16 name length, name, u8 dtype, u8 rank, u64 dims, raw values).
std::vector<unsigned char> encode_model(const Model& model);
Model decode_model(std::span<const unsigned char> bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace bnn
