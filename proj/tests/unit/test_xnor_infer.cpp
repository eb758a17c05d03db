#include <doctest.h>

#include <bit>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "bnn/bench.hpp"
#include "bnn/deploy.hpp"
#include "bnn/serialize.hpp"
#include "bnn/xnor.hpp"
#include "oracles.hpp"

using namespace bnn;

namespace {

Tensor signs(Shape shape, std::mt19937_64& rng) { return oracle::random_signs<float>(std::move(shape), rng); }

// Integer oracle: float matmul of A (M x K) with B^T (B is N x K).
std::vector<std::int64_t> matmul_bt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), n = b.dim(0), k = a.dim(1);
  std::vector<std::int64_t> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += static_cast<double>(a(i, t)) * b(j, t);
      out[i * n + j] = static_cast<std::int64_t>(s);
    }
  return out;
}

BatchNormState<float> random_bn(std::size_t c, std::mt19937_64& rng, double spread = 10.0) {
  auto bn = BatchNormState<float>::fresh(c);
  std::uniform_real_distribution<float> g(-2.0f, 2.0f), b(-1.5f, 1.5f), m(-spread, spread), v(0.01f, 30.0f);
  for (std::size_t i = 0; i < c; ++i) {
    bn.gamma[i] = g(rng);
    bn.beta[i] = b(rng);
    bn.running_mean[i] = m(rng);
    bn.running_var[i] = v(rng);
  }
  return bn;
}

float bn_sign(const BatchNormState<float>& bn, std::size_t c, float x) {
  const float inv = bn_inv_std(bn.running_var[c], bn.epsilon);
  return sign_value(bn_infer_value(x, bn.gamma[c], bn.beta[c], bn.running_mean[c], inv));
}

Tensor sample(const Tensor& batch, std::size_t i) {
  const std::size_t per = batch.size() / batch.dim(0);
  Shape shape = batch.shape();
  shape[0] = 1;
  return Tensor(shape, std::vector<float>(batch.raw() + i * per, batch.raw() + (i + 1) * per));
}

}  // namespace

TEST_CASE("pack examples") {
  const PackedBitTensor p = pack(Tensor({4}, std::vector<float>{-1, 1, 1, -1}));
  REQUIRE(p.words().size() == 1);
  CHECK(p.words()[0] == 6u);

  const PackedBitTensor ones = pack(Tensor({64}, 1.0f));
  CHECK(ones.words()[0] == 0xFFFFFFFFFFFFFFFFull);

  std::mt19937_64 rng(1);
  const Tensor t = signs({130}, rng);
  const PackedBitTensor q = pack(t);
  CHECK(q.words().size() == 3);
  CHECK((q.words()[2] >> 2) == 0u);
  CHECK(pad_bits_clear(q));
  CHECK(unpack(q) == t);

  CHECK_THROWS(pack(Tensor({3}, std::vector<float>{1, 0, -1})));
  CHECK_THROWS(pack(Tensor({1}, 0.5f)));
}

TEST_CASE("pack round-trips arbitrary shapes and keeps pad bits clear") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    Shape shape;
    const std::size_t rank = oracle::randint(rng, 1, 4);
    for (std::size_t r = 0; r < rank; ++r) shape.push_back(oracle::randint(rng, 1, r + 1 == rank ? 200 : 4));
    const Tensor t = signs(shape, rng);
    const PackedBitTensor p = pack(t);
    CHECK(p.words().size() == shape_numel(shape) / shape.back() * ((shape.back() + 63) / 64));
    CHECK(pad_bits_clear(p));
    CHECK(unpack(p) == t);
    CHECK(unpack<double>(p) == t.cast<double>());
  }
}

TEST_CASE("xnor_dot examples") {
  std::mt19937_64 rng(3);
  const Tensor a = signs({64}, rng);
  Tensor neg = a;
  for (float& v : neg.data()) v = -v;
  const PackedBitTensor pa = pack(a), pn = pack(neg);
  CHECK(xnor_dot(pa.words(), pa.words(), 64) == 64);
  CHECK(xnor_dot(pa.words(), pn.words(), 64) == -64);

  const PackedBitTensor x = pack(Tensor({4}, std::vector<float>{1, 1, -1, -1}));
  const PackedBitTensor y = pack(Tensor({4}, std::vector<float>{1, -1, -1, 1}));
  CHECK(x.words()[0] == 0b0011u);
  CHECK(y.words()[0] == 0b1001u);
  CHECK(xnor_dot(x.words(), y.words(), 4) == 0);
}

TEST_CASE("xnor_gemm equals the float matmul of the unpacked matrices") {
  std::mt19937_64 rng(4);
  const Tensor one({1, 130}, 1.0f);
  const IntMatrix single = xnor_gemm(pack(one), pack(one));
  CHECK(single.values == std::vector<std::int32_t>{130});

  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = oracle::randint(rng, 1, 64), n = oracle::randint(rng, 1, 64);
    const std::size_t k = trial % 10 == 0 ? 70 : oracle::randint(rng, 1, 200);
    const Tensor a = signs({m, k}, rng), b = signs({n, k}, rng);
    const IntMatrix c = xnor_gemm(pack(a), pack(b));
    REQUIRE(c.rows == m);
    REQUIRE(c.cols == n);
    const auto ref = matmul_bt(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(c.values[i] == ref[i]);
  }
  CHECK_THROWS(xnor_gemm(pack(Tensor({2, 65}, 1.0f)), pack(Tensor({2, 64}, 1.0f))));
}

TEST_CASE("fold examples") {
  auto bn = BatchNormState<float>::fresh(1);
  bn.running_mean = {2.0f};
  bn.running_var = {1.0f - bn.epsilon};
  const ThresholdUnit up = fold_bn_sign(bn)[0];
  CHECK(up.direction == 1);
  CHECK(up.tau == 2.0f);
  CHECK(up.apply(2.0f) == 1.0f);
  CHECK(up.apply(std::nextafter(2.0f, 0.0f)) == -1.0f);

  // With gamma < 0 the BN output at x = 2 is -0 >= 0, so +1 covers x <= 2;
  // the strict comparison therefore sits one float above 2.
  bn.gamma = {-1.0f};
  const ThresholdUnit down = fold_bn_sign(bn)[0];
  CHECK(down.direction == -1);
  CHECK(down.tau == std::nextafter(2.0f, 3.0f));
  CHECK(down.apply(2.0f) == 1.0f);
  CHECK(down.apply(1.0f) == 1.0f);
  CHECK(down.apply(std::nextafter(2.0f, 3.0f)) == -1.0f);
  CHECK(down.apply(3.0f) == -1.0f);

  bn.gamma = {0.0f};
  bn.beta = {-0.5f};
  const ThresholdUnit neg = fold_bn_sign(bn)[0];
  for (float x : {-1e30f, 0.0f, 1e30f}) CHECK(neg.apply(x) == -1.0f);
  bn.beta = {0.0f};
  const ThresholdUnit pos = fold_bn_sign(bn)[0];
  for (float x : {-1e30f, 0.0f, 1e30f}) CHECK(pos.apply(x) == 1.0f);
}

TEST_CASE("folded thresholds agree with sign(BN(x)) on random inputs") {
  std::mt19937_64 rng(5);
  const auto bn = random_bn(32, rng);
  const auto units = fold_bn_sign(bn);
  REQUIRE(units.size() == 32);
  std::uniform_real_distribution<float> wide(-100.0f, 100.0f);
  std::uniform_int_distribution<int> integer(-600, 600);
  for (std::size_t c = 0; c < 32; ++c) {
    for (int i = 0; i < 10000; ++i) {
      const float x = i % 2 ? wide(rng) : static_cast<float>(integer(rng));
      REQUIRE(units[c].apply(x) == bn_sign(bn, c, x));
    }
    for (float x : {units[c].tau, std::nextafter(units[c].tau, -INFINITY), std::nextafter(units[c].tau, INFINITY)}) {
      if (std::isfinite(x)) CHECK(units[c].apply(x) == bn_sign(bn, c, x));
    }
  }
}

TEST_CASE("all-ones layer yields the kernel volume at interior positions") {
  const Tensor x({1, 5, 6, 6}, 1.0f);
  const Tensor w({3, 5, 3, 3}, 1.0f);
  const ConvParams p{3, 5, 3, 3, 1, 1, 1, 1};
  const Tensor pre = binconv_preactivation(x, pack_conv_weights(w), p);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 1; i < 5; ++i)
      for (std::size_t j = 1; j < 5; ++j) CHECK(pre(0, o, i, j) == 45.0f);
  // A corner window has five padded -1 taps per channel.
  CHECK(pre(0, 0, 0, 0) == 45.0f - 2.0f * 5 * 5);
}

TEST_CASE("binary convolution matches the float block in inference mode") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = oracle::randint(rng, 1, 8), o = oracle::randint(rng, 1, 8);
    const std::size_t k = oracle::randint(rng, 1, 3) * 2 - 1;
    const std::size_t stride = oracle::randint(rng, 1, 2), pad = oracle::randint(rng, 0, k / 2 + 1);
    const std::size_t h = oracle::randint(rng, std::max<std::size_t>(k, 2), 8), w = oracle::randint(rng, std::max<std::size_t>(k, 2), 8);
    const Tensor x = signs({oracle::randint(rng, 1, 3), c, h, w}, rng);
    const Tensor latent = oracle::random_tensor({o, c, k, k}, rng).cast<float>();

    BinaryBlockConfig cfg;
    cfg.conv = ConvParams{o, c, k, k, stride, stride, pad, pad};
    cfg.pad_value = -1.0;
    const std::size_t oh = cfg.conv.out_h(h), ow = cfg.conv.out_w(w);
    if (trial % 3 == 0 && oh >= 2 && ow >= 2) cfg.pool = PoolParams{2, 2, 0};
    auto bn = random_bn(o, rng, 6.0);
    auto bn_copy = bn;
    const Tensor ref = binary_conv_block(x, latent, bn_copy, cfg, Mode::infer).output;

    BinaryConvLayer layer{cfg.conv, pack_conv_weights(binarize_sign(latent)), cfg.pool, fold_bn_sign(bn)};
    const Tensor out = binconv_infer(x, layer);
    REQUIRE(out.shape() == ref.shape());
    CHECK(out == ref);

    const Tensor pre = binconv_preactivation(x, layer.weights, cfg.conv);
    CHECK(bit_identical(pre, conv2d(x, binarize_sign(latent), cfg.conv, -1.0f)));
  }
}

TEST_CASE("binary dense matches the float block in inference mode") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = oracle::randint(rng, 1, 5), d = oracle::randint(rng, 1, 300), k = oracle::randint(rng, 1, 40);
    const Tensor x = signs({n, d}, rng);
    const Tensor latent = oracle::random_tensor({d, k}, rng).cast<float>();
    auto bn = random_bn(k, rng, 8.0);
    auto bn_copy = bn;
    const Tensor ref = binary_dense_block(x, latent, Tensor(), bn_copy, BinaryDenseConfig{}, Mode::infer).output;
    const auto units = fold_bn_sign(bn);
    CHECK(bindense_infer(x, pack_dense_weights(binarize_sign(latent)), units) == ref);
  }
}

TEST_CASE("exported models reproduce the float path exactly") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    Rng init(trial);
    Model m = Model::build(table1_spec(32, 10, 1.0 / 16), init);
    // Move BN statistics off their defaults so the folds are non-trivial.
    for (const NamedTensorView& t : m.named_tensors()) {
      std::uniform_real_distribution<float> u(-1.0f, 1.0f);
      if (t.name.ends_with("running_mean"))
        for (float& v : t.data) v = 4.0f * u(rng);
      if (t.name.ends_with("running_var"))
        for (float& v : t.data) v = 10.0f + 9.0f * u(rng);
      if (t.name.ends_with("bn.gamma"))
        for (float& v : t.data) v = u(rng);
    }
    const DeployedModel dm = export_model(m);
    CHECK(dm.xnor_layer_count() == 10);
    const Tensor batch = oracle::random_tensor({16, 3, 32, 32}, rng, 0, 1).cast<float>();
    const Tensor probs = run_inference(dm, batch);
    const Tensor ref = reference_inference(m, batch);
    CHECK(bit_identical(deployed_logits(dm, batch), m.infer_logits(batch)));
    CHECK(argmax_rows(probs) == argmax_rows(ref));
    for (std::size_t i = 0; i < 16; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 10; ++j) s += probs(i, j);
      CHECK(std::fabs(s - 1.0) < 1e-6);
      const Tensor single = run_inference(dm, sample(batch, i));
      for (std::size_t j = 0; j < 10; ++j) CHECK(single(0, j) == probs(i, j));
    }
  }
}

TEST_CASE("deployed format round-trips and rejects corruption") {
  Rng init(9);
  const Model m = Model::build(table1_spec(32, 10, 1.0 / 16), init);
  const DeployedModel dm = export_model(m);
  const auto bytes = encode_deployed(dm);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "BNNX");
  const DeployedModel back = decode_deployed(bytes);
  CHECK(bit_equal(back, dm));
  CHECK(encode_deployed(back) == bytes);

  const auto code_of = [](std::vector<unsigned char> b) {
    try {
      decode_deployed(b);
    } catch (const FormatError& e) {
      return e.code();
    }
    FAIL("decoded corrupted bytes");
    return FormatErrc::io;
  };
  auto magic = bytes;
  magic[3] = 'M';
  CHECK(code_of(magic) == FormatErrc::bad_magic);
  auto version = bytes;
  version[4] = 9;
  CHECK(code_of(version) == FormatErrc::version_mismatch);
  CHECK(code_of({bytes.begin(), bytes.end() - 1}) == FormatErrc::truncated);
  auto extra = bytes;
  extra.push_back(1);
  CHECK(code_of(extra) == FormatErrc::inconsistent);
}

TEST_CASE("benchmark rows carry the guard and the speedup arithmetic") {
  BenchOptions quick;
  quick.warmup = 1;
  quick.min_iterations = 2;
  quick.min_seconds = 0.0;
  const BenchRow g = bench_gemm(GemmBenchShape{32, 16, 130}, quick);
  CHECK(g.op == "gemm");
  CHECK(g.k == 130);
  CHECK(g.float_ns_per_iter > 0);
  CHECK(g.xnor_ns_per_iter > 0);
  CHECK(g.speedup == doctest::Approx(g.float_ns_per_iter / g.xnor_ns_per_iter));

  const BenchRow c = bench_conv(ConvBenchShape{16, 8, 8, 8, 3, 1}, quick);
  CHECK(c.op == "conv");
  CHECK(c.m == 64);
  CHECK(c.n == 8);
  CHECK(c.k == 144);

  std::ostringstream csv;
  write_bench_csv(csv, {g, c});
  std::istringstream lines(csv.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == kBenchCsvHeader);
  std::size_t rows = 0;
  for (std::string line; std::getline(lines, line);) ++rows;
  CHECK(rows == 2);
}
