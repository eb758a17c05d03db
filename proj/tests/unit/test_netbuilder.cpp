#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "bnn/arch.hpp"
#include "bnn/model.hpp"
#include "bnn/serialize.hpp"
#include "oracles.hpp"

using namespace bnn;

namespace {

std::vector<std::size_t> conv_channels(const ArchSpec& s) {
  std::vector<std::size_t> out;
  for (const LayerSpec& l : s.layers)
    if (l.kind == LayerKind::conv) out.push_back(*l.channels);
  return out;
}

std::vector<std::size_t> dense_channels(const ArchSpec& s) {
  std::vector<std::size_t> out;
  for (const LayerSpec& l : s.layers)
    if (l.kind == LayerKind::dense) out.push_back(*l.channels);
  return out;
}

std::size_t flatten_dim(const ArchSpec& s) {
  const std::vector<Shape> shapes = propagate_shapes(s);
  for (std::size_t i = 0; i < s.layers.size(); ++i)
    if (s.layers[i].kind == LayerKind::dense) return shape_numel(i == 0 ? Shape{} : shapes[i - 1]);
  return 0;
}

ArchSpec random_small_spec(std::mt19937_64& rng) {
  const std::size_t res = oracle::randint(rng, 16, 24);
  const std::size_t classes = oracle::randint(rng, 2, 12);
  switch (oracle::randint(rng, 0, 2)) {
    case 0: return table1_spec(res, classes, 1.0 / 16, oracle::randint(rng, 1, 3));
    case 1: return float_teacher_spec(res, classes, oracle::randint(rng, 1, 3), 0.25);
    default: return binary_mlp_spec(oracle::randint(rng, 3, 40), {oracle::randint(rng, 1, 30), 16}, classes);
  }
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bnn_netbuilder_" + name);
}

}  // namespace

TEST_CASE("table1 at full width reproduces the layer table") {
  const ArchSpec s = table1_spec(224, 1000, 1.0);
  CHECK(conv_channels(s) == std::vector<std::size_t>{128, 384, 384, 384, 512, 512, 512, 512, 512, 512});
  CHECK(dense_channels(s) == std::vector<std::size_t>{4096, 1000});
  const std::vector<LayerKind> kinds{LayerKind::conv,   LayerKind::maxpool, LayerKind::conv,    LayerKind::conv,
                                     LayerKind::conv,   LayerKind::maxpool, LayerKind::conv,    LayerKind::conv,
                                     LayerKind::conv,   LayerKind::conv,    LayerKind::conv,    LayerKind::conv,
                                     LayerKind::maxpool, LayerKind::dropout, LayerKind::dense,  LayerKind::dense,
                                     LayerKind::scaling, LayerKind::softmax};
  REQUIRE(s.layers.size() == kinds.size());
  for (std::size_t i = 0; i < kinds.size(); ++i) CHECK(s.layers[i].kind == kinds[i]);
  CHECK(*s.layers[0].kernel == 7);
  CHECK(*s.layers[0].stride == 2);
  CHECK(*s.layers[1].kernel == 3);
  CHECK(*s.layers[1].stride == 2);
  CHECK_FALSE(*s.layers[0].binarize_weights);
  CHECK_FALSE(*s.layers[15].binarize_weights);
  for (std::size_t i : {2, 3, 4, 6, 7, 8, 9, 10, 11, 14}) CHECK(*s.layers[i].binarize_weights);
}

TEST_CASE("table1 spatial trace at 224") {
  const ArchSpec s = table1_spec(224, 1000, 1.0);
  const std::vector<Shape> shapes = propagate_shapes(s);
  CHECK(shapes[0] == Shape{128, 112, 112});
  CHECK(shapes[1] == Shape{128, 56, 56});
  CHECK(shapes[4] == Shape{384, 56, 56});
  CHECK(shapes[5] == Shape{384, 28, 28});
  CHECK(shapes[11] == Shape{512, 28, 28});
  CHECK(shapes[12] == Shape{512, 14, 14});
  CHECK(flatten_dim(s) == 100352);
  CHECK(shapes.back() == Shape{1000});
}

TEST_CASE("table1 at 1/16 width and resolution 32") {
  const ArchSpec s = table1_spec(32, 10, 1.0 / 16);
  CHECK(conv_channels(s) == std::vector<std::size_t>{8, 24, 24, 24, 32, 32, 32, 32, 32, 32});
  CHECK(flatten_dim(s) == 128);
  CHECK(dense_channels(s) == std::vector<std::size_t>{256, 10});
}

TEST_CASE("table1 rejects resolutions that do not survive the pooling stages") {
  CHECK_THROWS_AS(table1_spec(4, 10, 1.0 / 16), SpecError);
}

TEST_CASE("alexnet-like channel layout") {
  const ArchSpec full = alexnet_like_spec(227, 1000, 1.0);
  CHECK(conv_channels(full) == std::vector<std::size_t>{96, 256, 384, 384, 256});
  CHECK(dense_channels(full) == std::vector<std::size_t>{4096, 4096, 1000});
  const ArchSpec eighth = alexnet_like_spec(227, 10, 1.0 / 8);
  const auto c = conv_channels(eighth);
  const auto f = conv_channels(full);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == scale_channels(f[i], 1.0 / 8));
  CHECK(c == std::vector<std::size_t>{16, 32, 48, 48, 32});
  CHECK(dense_channels(eighth) == std::vector<std::size_t>{512, 512, 10});
  CHECK_NOTHROW(validate(eighth));
  CHECK_NOTHROW(validate(alexnet_like_spec(64, 10, 1.0 / 8)));
}

TEST_CASE("scale_channels rounds to multiples of 8 with a floor of 8") {
  CHECK(scale_channels(128, 1.0) == 128);
  CHECK(scale_channels(384, 1.0 / 16) == 24);
  CHECK(scale_channels(96, 1.0 / 16) == 8);
  CHECK(scale_channels(10, 0.01) == 8);
  CHECK(scale_channels(100, 1.0) == 104);  // 12.5 eighths rounds away from zero
}

TEST_CASE("spec validation enforces the real first and last layers") {
  ArchSpec s = table1_spec(32, 10, 1.0 / 16);
  s.layers[0].binarize_weights = true;
  CHECK_THROWS_AS(validate(s), SpecError);
  s = table1_spec(32, 10, 1.0 / 16);
  s.layers[15].binarize_weights = true;
  CHECK_THROWS_AS(validate(s), SpecError);
  s = table1_spec(32, 10, 1.0 / 16);
  s.layers.pop_back();
  CHECK_THROWS_AS(validate(s), SpecError);
  s = table1_spec(32, 10, 1.0 / 16);
  s.layers[15].channels = 12;
  CHECK_THROWS_AS(validate(s), SpecError);
}

TEST_CASE("canonical JSON round-trips and is whitespace free") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const ArchSpec s = random_small_spec(rng);
    const std::string text = to_canonical_json(s);
    CHECK(text.find(' ') == std::string::npos);
    CHECK(text.find('\n') == std::string::npos);
    CHECK(arch_from_json(text) == s);
    CHECK(to_canonical_json(arch_from_json(text)) == text);
  }
}

TEST_CASE("parameter count matches the closed form for the full network") {
  const std::size_t stem = 3 * 128 * 49 + 2 * 128;
  const std::size_t block384 = (128 * 384 * 9 + 2 * 384) + 2 * (384 * 384 * 9 + 2 * 384);
  const std::size_t block512 = (384 * 512 * 9 + 2 * 512) + 5 * (512 * 512 * 9 + 2 * 512);
  const std::size_t dense = (100352ull * 4096 + 2 * 4096) + (4096 * 1000 + 1000);
  CHECK(parameter_count(table1_spec(224, 1000, 1.0)) == stem + block384 + block512 + dense);
}

TEST_CASE("built models hold exactly the parameters their ArchSpec implies") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) {
    const ArchSpec s = random_small_spec(rng);
    Rng init(i);
    const Model m = Model::build(s, init);
    CHECK(m.parameter_count() == parameter_count(s));
  }
}

TEST_CASE("build is deterministic and keeps latents inside the Glorot range") {
  const ArchSpec s = table1_spec(32, 10, 1.0 / 16);
  Rng a(42), b(42), c(43);
  Model ma = Model::build(s, a), mb = Model::build(s, b), mc = Model::build(s, c);
  CHECK(ma.bit_equal(mb));
  CHECK_FALSE(ma.bit_equal(mc));
  for (const LatentView& v : ma.latent_weights()) {
    const double g = glorot_gamma(v.weight->fan_in(), v.weight->fan_out());
    for (float x : v.weight->value().data()) CHECK(std::fabs(x) <= g);
    CHECK(latent_in_range(v.weight->value()));
    CHECK(v.weight->lr_scale() == glorot_lr_scale(v.weight->fan_in(), v.weight->fan_out()));
  }
  for (const NamedTensorView& t : ma.named_tensors()) {
    if (t.name.ends_with(".bn.gamma"))
      for (float x : t.data) CHECK(x == 1.0f);
    if (t.name.ends_with(".bn.beta"))
      for (float x : t.data) CHECK(x == 0.0f);
  }
}

TEST_CASE("runtime shapes match propagated shapes") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 8; ++i) {
    const ArchSpec s = random_small_spec(rng);
    Rng init(i);
    Model m = Model::build(s, init);
    const Tensor x = oracle::random_tensor({3, s.input.channels, s.input.height, s.input.width}, rng).cast<float>();
    const Tensor logits = m.forward(x, Mode::train, init);
    CHECK(logits.shape() == Shape{3, s.num_classes});
  }
}

TEST_CASE("vector inputs accept samples of matching size") {
  const ArchSpec mlp = binary_mlp_spec(12, {16}, 3);
  CHECK(accepts_sample_shape(mlp, Shape{12, 1, 1}));
  CHECK(accepts_sample_shape(mlp, Shape{3, 2, 2}));
  CHECK_FALSE(accepts_sample_shape(mlp, Shape{13, 1, 1}));
  const ArchSpec conv = table1_spec(32, 10, 1.0 / 16, 1);
  CHECK(accepts_sample_shape(conv, Shape{1, 32, 32}));
  CHECK_FALSE(accepts_sample_shape(conv, Shape{32, 32, 1}));

  Rng init(1);
  Model m = Model::build(mlp, init);
  const Tensor x({2, 3, 2, 2}, 0.5f);
  CHECK(m.infer_logits(x) == m.infer_logits(x.reshaped({2, 12})));
  CHECK_THROWS_AS(m.infer_logits(Tensor({2, 13})), ShapeError);
}

TEST_CASE("model serialization round-trips bit-exactly") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 10; ++i) {
    const ArchSpec s = random_small_spec(rng);
    Rng init(100 + i);
    const Model m = Model::build(s, init);
    const auto bytes = encode_model(m);
    CHECK(std::memcmp(bytes.data(), "BNNM", 4) == 0);
    const Model back = decode_model(bytes);
    CHECK(back.bit_equal(m));
    CHECK(encode_model(back) == bytes);
  }
  Rng init(9);
  const Model m = Model::build(table1_spec(32, 10, 1.0 / 16), init);
  const auto path = temp_path("roundtrip.bnnm");
  save_model(m, path);
  CHECK(load_model(path).bit_equal(m));
  std::filesystem::remove(path);
}

TEST_CASE("model decoding reports distinct errors") {
  Rng init(5);
  const Model m = Model::build(binary_mlp_spec(8, {16}, 3), init);
  const auto bytes = encode_model(m);
  const auto code_of = [](std::vector<unsigned char> b) {
    try {
      decode_model(b);
    } catch (const FormatError& e) {
      return std::string(to_string(e.code()));
    }
    return std::string("ok");
  };

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of(bad_magic) == "bad_magic");

  auto version = bytes;
  version[4] = 2;
  CHECK(code_of(version) == "version_mismatch");

  CHECK(code_of({bytes.begin(), bytes.end() - 3}) == "truncated");
  CHECK(code_of({bytes.begin(), bytes.begin() + 2}) == "truncated");

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(code_of(trailing) == "inconsistent");

  CHECK_THROWS_AS(load_model(temp_path("does_not_exist.bnnm")), FormatError);
}

TEST_CASE("a spec declaring 10 classes over a 12-column classifier is inconsistent") {
  Rng a(6), b(6);
  const auto ten = encode_model(Model::build(binary_mlp_spec(8, {16}, 10), a));
  const auto twelve = encode_model(Model::build(binary_mlp_spec(8, {16}, 12), b));
  std::uint64_t spec_len = 0;
  std::memcpy(&spec_len, ten.data() + 8, sizeof spec_len);
  const std::size_t header = 16 + spec_len;
  std::vector<unsigned char> forged(ten.begin(), ten.begin() + static_cast<std::ptrdiff_t>(header));
  forged.insert(forged.end(), twelve.begin() + static_cast<std::ptrdiff_t>(header), twelve.end());
  try {
    decode_model(forged);
    FAIL("forged file decoded");
  } catch (const FormatError& e) {
    CHECK(e.code() == FormatErrc::inconsistent);
  }
}
