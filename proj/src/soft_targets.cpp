#include "bnn/soft_targets.hpp"

#include <algorithm>
#include <numeric>

#include "bnn/binary_io.hpp"

namespace bnn {

namespace {

constexpr std::string_view kMagic = "SOFT";
constexpr std::uint32_t kVersion = 1;

}  // namespace

Tensor SoftTargetCache::rows(std::span<const std::size_t> indices) const {
  Tensor out({indices.size(), classes});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= samples) throw std::out_of_range("soft target row out of range");
    const float* src = logits.data() + indices[i] * classes;
    std::copy(src, src + classes, out.raw() + i * classes);
  }
  return out;
}

SoftTargetCache generate_soft_targets(const Model& teacher, const Dataset& data, std::size_t batch_size) {
  SoftTargetCache cache;
  cache.samples = data.size();
  cache.classes = teacher.spec().num_classes;
  cache.checksum = data.checksum;
  cache.logits.resize(cache.samples * cache.classes);
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - begin);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor logits = teacher.infer_logits(gather_images(data, idx));
    std::copy(logits.data().begin(), logits.data().end(), cache.logits.begin() + begin * cache.classes);
  }
  return cache;
}

void save_soft_targets(const SoftTargetCache& cache, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(cache.samples);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cache.classes));
  w.put_bytes(std::string_view(reinterpret_cast<const char*>(cache.checksum.data()), cache.checksum.size()));
  w.put_array<float>(cache.logits);
  write_file_bytes(path, w.bytes());
}

SoftTargetCache load_soft_targets(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (r.remaining() < kMagic.size()) throw FormatError(FormatErrc::truncated, "file shorter than the magic");
  if (r.get_bytes(kMagic.size()) != kMagic) throw FormatError(FormatErrc::bad_magic, "expected SOFT");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError(FormatErrc::version_mismatch, "soft target version " + std::to_string(version));
  }
  SoftTargetCache cache;
  cache.samples = r.get<std::uint64_t>();
  cache.classes = r.get<std::uint32_t>();
  const std::string sum = r.get_bytes(cache.checksum.size());
  std::copy(sum.begin(), sum.end(), cache.checksum.begin());
  if (cache.classes == 0 || cache.samples > r.remaining() / sizeof(float) / cache.classes) {
    throw FormatError(FormatErrc::truncated, "logit payload shorter than the header implies");
  }
  cache.logits.resize(cache.samples * cache.classes);
  r.get_array<float>(std::span<float>(cache.logits));
  if (!r.at_end()) throw FormatError(FormatErrc::inconsistent, "trailing bytes after the logits");
  return cache;
}

SoftTargetCache load_soft_targets(const std::filesystem::path& path, const Dataset& data) {
  SoftTargetCache cache = load_soft_targets(path);
  if (cache.checksum != data.checksum) {
    throw FormatError(FormatErrc::checksum_mismatch, "cache was generated from dataset " +
                                                         to_hex(cache.checksum) + ", not " + to_hex(data.checksum));
  }
  if (cache.samples != data.size()) {
    throw FormatError(FormatErrc::inconsistent, "cache has " + std::to_string(cache.samples) +
                                                    " rows for " + std::to_string(data.size()) + " samples");
  }
  return cache;
}

}  // namespace bnn
