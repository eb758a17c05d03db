#include "bnn/dataset.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "bnn/binary_io.hpp"

namespace bnn {

std::string to_hex(const Checksum& checksum) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (unsigned char b : checksum) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 15]);
  }
  return out;
}

std::string_view to_string(DatasetErrc code) {
  switch (code) {
    case DatasetErrc::bad_magic: return "bad_magic";
    case DatasetErrc::truncated: return "truncated";
    case DatasetErrc::count_mismatch: return "count_mismatch";
    case DatasetErrc::format: return "format";
    case DatasetErrc::io: return "io";
  }
  return "unknown";
}

Checksum dataset_checksum(const Tensor& images, std::span<const std::size_t> labels) {
  ByteWriter w;
  for (std::size_t d : images.shape()) w.put<std::uint64_t>(d);
  w.put_array<float>(images.data());
  for (std::size_t l : labels) w.put<std::uint32_t>(static_cast<std::uint32_t>(l));
  Checksum out{};
  SHA256(w.bytes().data(), w.bytes().size(), out.data());
  return out;
}

Dataset make_dataset(Tensor images, std::vector<std::size_t> labels, std::size_t num_classes,
                     std::string split) {
  if (labels.empty()) throw DatasetError(DatasetErrc::format, "dataset has no samples");
  if (images.rank() != 4) {
    throw DatasetError(DatasetErrc::format, "images must be N x C x H x W, got " + shape_str(images.shape()));
  }
  if (images.dim(0) != labels.size()) {
    throw DatasetError(DatasetErrc::count_mismatch, std::to_string(images.dim(0)) + " images but " +
                                                        std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DatasetError(DatasetErrc::format, "label " + std::to_string(labels[i]) + " at index " +
                                                  std::to_string(i) + " is outside " +
                                                  std::to_string(num_classes) + " classes");
    }
  }
  Dataset d;
  d.checksum = dataset_checksum(images, labels);
  d.images = std::move(images);
  d.labels = std::move(labels);
  d.num_classes = num_classes;
  d.split = std::move(split);
  return d;
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(DatasetErrc::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError(DatasetErrc::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError(DatasetErrc::io, "short write to " + path.string());
}

std::uint32_t read_be32(std::span<const unsigned char> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

unsigned char quantize(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = kCifarPixels + 1;

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::string split) {
  const auto ib = read_all(images);
  if (ib.size() < 16) throw DatasetError(DatasetErrc::truncated, images.string() + ": header shorter than 16 bytes");
  if (read_be32(ib, 0) != kIdxImages) {
    throw DatasetError(DatasetErrc::bad_magic, images.string() + ": expected image magic 0x00000803");
  }
  const std::size_t n = read_be32(ib, 4), rows = read_be32(ib, 8), cols = read_be32(ib, 12);
  if (n == 0 || rows == 0 || cols == 0) throw DatasetError(DatasetErrc::format, images.string() + ": zero dimension");
  const std::size_t pixels = n * rows * cols;
  if (ib.size() - 16 < pixels) {
    throw DatasetError(DatasetErrc::truncated, images.string() + ": payload has " + std::to_string(ib.size() - 16) +
                                                   " bytes, header implies " + std::to_string(pixels));
  }

  const auto lb = read_all(labels);
  if (lb.size() < 8) throw DatasetError(DatasetErrc::truncated, labels.string() + ": header shorter than 8 bytes");
  if (read_be32(lb, 0) != kIdxLabels) {
    throw DatasetError(DatasetErrc::bad_magic, labels.string() + ": expected label magic 0x00000801");
  }
  const std::size_t nl = read_be32(lb, 4);
  if (lb.size() - 8 < nl) {
    throw DatasetError(DatasetErrc::truncated, labels.string() + ": payload has " + std::to_string(lb.size() - 8) +
                                                   " bytes, header implies " + std::to_string(nl));
  }
  if (nl != n) {
    throw DatasetError(DatasetErrc::count_mismatch,
                       std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  }

  Tensor x({n, 1, rows, cols});
  for (std::size_t i = 0; i < pixels; ++i) x[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  std::vector<std::size_t> y(n);
  std::size_t classes = 10;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = lb[8 + i];
    classes = std::max(classes, y[i] + 1);
  }
  return make_dataset(std::move(x), std::move(y), classes, std::move(split));
}

Dataset load_cifar10(std::span<const std::filesystem::path> batch_files, std::string split) {
  if (batch_files.empty()) throw DatasetError(DatasetErrc::io, "no CIFAR-10 batch files given");
  std::vector<std::vector<unsigned char>> blobs;
  std::size_t n = 0;
  for (const auto& path : batch_files) {
    auto bytes = read_all(path);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
      throw DatasetError(DatasetErrc::format, path.string() + ": size " + std::to_string(bytes.size()) +
                                                  " is not a positive multiple of 3073");
    }
    n += bytes.size() / kCifarRecord;
    blobs.push_back(std::move(bytes));
  }
  Tensor x({n, 3, kCifarSide, kCifarSide});
  std::vector<std::size_t> y(n);
  std::size_t i = 0;
  for (const auto& bytes : blobs) {
    for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord, ++i) {
      if (bytes[off] > 9) {
        throw DatasetError(DatasetErrc::format, "record " + std::to_string(i) + " has label byte " +
                                                    std::to_string(bytes[off]));
      }
      y[i] = bytes[off];
      float* dst = x.raw() + i * kCifarPixels;
      for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(bytes[off + 1 + p]) / 255.0f;
    }
  }
  return make_dataset(std::move(x), std::move(y), 10, std::move(split));
}

void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (data.images.dim(1) != 1) throw DatasetError(DatasetErrc::format, "IDX images must have one channel");
  std::vector<unsigned char> ib;
  put_be32(ib, kIdxImages);
  put_be32(ib, static_cast<std::uint32_t>(data.size()));
  put_be32(ib, static_cast<std::uint32_t>(data.images.dim(2)));
  put_be32(ib, static_cast<std::uint32_t>(data.images.dim(3)));
  for (float v : data.images.data()) ib.push_back(quantize(v));
  std::vector<unsigned char> lb;
  put_be32(lb, kIdxLabels);
  put_be32(lb, static_cast<std::uint32_t>(data.size()));
  for (std::size_t l : data.labels) lb.push_back(static_cast<unsigned char>(l));
  write_all(images, ib);
  write_all(labels, lb);
}

void write_cifar10(const Dataset& data, const std::filesystem::path& batch_file) {
  if (data.sample_shape() != Shape{3, kCifarSide, kCifarSide}) {
    throw DatasetError(DatasetErrc::format, "CIFAR-10 samples must be 3x32x32, got " + shape_str(data.sample_shape()));
  }
  std::vector<unsigned char> out;
  out.reserve(data.size() * kCifarRecord);
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back(static_cast<unsigned char>(data.labels[i]));
    const float* src = data.images.raw() + i * kCifarPixels;
    for (std::size_t p = 0; p < kCifarPixels; ++p) out.push_back(quantize(src[p]));
  }
  write_all(batch_file, out);
}

Dataset subset(const Dataset& data, std::size_t begin, std::size_t count, std::string split) {
  if (begin + count > data.size() || count == 0) {
    throw DatasetError(DatasetErrc::format, "subset [" + std::to_string(begin) + ", " +
                                                std::to_string(begin + count) + ") outside " +
                                                std::to_string(data.size()) + " samples");
  }
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
  return make_dataset(gather_images(data, idx), gather_labels(data, idx), data.num_classes, std::move(split));
}

Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices) {
  Shape shape = data.images.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  const std::size_t per = data.images.size() / data.size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const float* src = data.images.raw() + indices[i] * per;
    std::copy(src, src + per, out.raw() + i * per);
  }
  return out;
}

std::vector<std::size_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::size_t> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = data.labels.at(indices[i]);
  return out;
}

Dataset make_synthetic_images(const SyntheticImageOptions& o, std::string split) {
  const std::size_t r = o.resolution, c = o.channels, k = o.num_classes;
  if (r == 0 || c == 0 || k < 2 || o.samples == 0) throw DatasetError(DatasetErrc::format, "bad synthetic options");

  // Class prototypes: a few low-frequency plane waves per channel.
  std::mt19937_64 proto_rng(o.prototype_seed);
  std::uniform_int_distribution<int> freq(-3, 3);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.15, 0.35);
  const std::size_t pad = o.max_shift;
  const std::size_t big = r + 2 * pad;
  std::vector<double> protos(k * c * big * big, 0.5);
  for (std::size_t cls = 0; cls < k; ++cls) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = protos.data() + (cls * c + ch) * big * big;
      for (int wave = 0; wave < 3; ++wave) {
        int fx = freq(proto_rng), fy = freq(proto_rng);
        if (fx == 0 && fy == 0) fx = 1;
        const double ph = phase(proto_rng), a = amp(proto_rng);
        for (std::size_t y = 0; y < big; ++y) {
          for (std::size_t x = 0; x < big; ++x) {
            const double t = 2.0 * std::numbers::pi * (fx * double(x) + fy * double(y)) / double(r);
            p[y * big + x] += a * std::sin(t + ph) / 1.5;
          }
        }
      }
    }
  }

  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> cls_dist(0, k - 1);
  std::uniform_int_distribution<std::size_t> shift(0, 2 * pad);
  std::uniform_real_distribution<double> contrast(0.6, 1.2);
  std::uniform_real_distribution<double> blend(0.0, 0.4);
  std::uniform_real_distribution<double> bright(-0.1, 0.1);
  std::normal_distribution<double> noise(0.0, o.noise);

  Tensor images({o.samples, c, r, r});
  std::vector<std::size_t> labels(o.samples);
  for (std::size_t i = 0; i < o.samples; ++i) {
    const std::size_t cls = cls_dist(rng);
    std::size_t other = cls_dist(rng);
    if (other == cls) other = (cls + 1) % k;
    const std::size_t dy = shift(rng), dx = shift(rng);
    const double g = contrast(rng), b = blend(rng), off = bright(rng);
    labels[i] = cls;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = protos.data() + (cls * c + ch) * big * big;
      const double* q = protos.data() + (other * c + ch) * big * big;
      float* dst = images.raw() + ((i * c + ch) * r) * r;
      for (std::size_t y = 0; y < r; ++y) {
        for (std::size_t x = 0; x < r; ++x) {
          const std::size_t at = (y + dy) * big + (x + dx);
          const double v = 0.5 + g * ((1.0 - b) * p[at] + b * q[at] - 0.5) + off + noise(rng);
          dst[y * r + x] = static_cast<float>(quantize(static_cast<float>(v))) / 255.0f;
        }
      }
    }
  }
  return make_dataset(std::move(images), std::move(labels), k, std::move(split));
}

}  // namespace bnn
