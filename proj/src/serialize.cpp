#include "bnn/serialize.hpp"

#include <fstream>

namespace bnn {

std::string_view to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::bad_magic: return "bad_magic";
    case FormatErrc::version_mismatch: return "version_mismatch";
    case FormatErrc::truncated: return "truncated";
    case FormatErrc::inconsistent: return "inconsistent";
    case FormatErrc::checksum_mismatch: return "checksum_mismatch";
    case FormatErrc::io: return "io";
  }
  return "unknown";
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrc::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrc::io, "short write to " + path.string());
}

namespace {

constexpr std::string_view kMagic = "BNNM";
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

}  // namespace

std::vector<unsigned char> encode_model(const Model& model) {
  ByteWriter w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kModelFormatVersion);
  const std::string spec = to_canonical_json(model.spec());
  w.put<std::uint64_t>(spec.size());
  w.put_bytes(spec);
  for (const NamedTensorView& t : const_cast<Model&>(model).named_tensors()) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put<std::uint8_t>(kDtypeF32);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.put<std::uint64_t>(d);
    w.put_array<float>(t.data);
  }
  return w.bytes();
}

Model decode_model(std::span<const unsigned char> bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kMagic.size()) throw FormatError(FormatErrc::truncated, "file shorter than the magic");
  if (r.get_bytes(kMagic.size()) != kMagic) throw FormatError(FormatErrc::bad_magic, "expected BNNM");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelFormatVersion) {
    throw FormatError(FormatErrc::version_mismatch, "model format version " + std::to_string(version));
  }
  const auto spec_len = r.get<std::uint64_t>();
  if (spec_len > r.remaining()) throw FormatError(FormatErrc::truncated, "spec blob exceeds file");
  ArchSpec spec;
  try {
    spec = arch_from_json(r.get_bytes(spec_len));
    validate(spec);
  } catch (const SpecError& e) {
    throw FormatError(FormatErrc::inconsistent, e.what());
  }

  Model model = Model::skeleton(spec);
  for (NamedTensorView& t : model.named_tensors()) {
    const auto name_len = r.get<std::uint16_t>();
    const std::string name = r.get_bytes(name_len);
    if (name != t.name) {
      throw FormatError(FormatErrc::inconsistent, "expected record '" + t.name + "', found '" + name + "'");
    }
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != t.shape) {
      throw FormatError(FormatErrc::inconsistent, "record '" + name + "' has shape " + shape_str(shape) +
                                                      ", spec implies " + shape_str(t.shape));
    }
    if (dtype == kDtypeF32) {
      r.get_array<float>(t.data);
    } else if (dtype == kDtypeF64) {
      std::vector<double> tmp(t.data.size());
      r.get_array<double>(std::span<double>(tmp));
      std::copy(tmp.begin(), tmp.end(), t.data.begin());
    } else {
      throw FormatError(FormatErrc::inconsistent, "record '" + name + "' has unknown dtype " +
                                                      std::to_string(dtype));
    }
  }
  if (!r.at_end()) throw FormatError(FormatErrc::inconsistent, "trailing bytes after the last record");
  for (const LatentView& v : model.latent_weights()) {
    if (!latent_in_range(v.weight->value())) {
      throw FormatError(FormatErrc::inconsistent, v.name + " has latent values outside [-1, 1]");
    }
  }
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_model(model));
}

Model load_model(const std::filesystem::path& path) { return decode_model(read_file_bytes(path)); }

}  // namespace bnn
