#include "bnn/bench.hpp"

#include <chrono>
#include <ostream>
#include <random>
#include <stdexcept>

#include "bnn/gemm.hpp"
#include "bnn/xnor.hpp"

namespace bnn {

namespace {

Tensor random_signs(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::bernoulli_distribution coin(0.5);
  for (float& v : t.data()) v = coin(rng) ? 1.0f : -1.0f;
  return t;
}

template <typename F>
double time_ns(F&& body, const BenchOptions& o) {
  for (std::size_t i = 0; i < o.warmup; ++i) body();
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  std::size_t iters = 0;
  double elapsed = 0.0;
  while (iters < o.min_iterations || elapsed < o.min_seconds) {
    body();
    ++iters;
    elapsed = std::chrono::duration<double>(clock::now() - start).count();
  }
  return elapsed * 1e9 / static_cast<double>(iters);
}

}  // namespace

BenchRow bench_conv(const ConvBenchShape& s, const BenchOptions& o) {
  std::mt19937_64 rng(o.seed);
  const Tensor input = random_signs({1, s.channels, s.height, s.width}, rng);
  const Tensor weights = random_signs({s.out_channels, s.channels, s.kernel, s.kernel}, rng);
  const ConvParams p{s.out_channels, s.channels, s.kernel, s.kernel, s.stride, s.stride, s.kernel / 2, s.kernel / 2};
  const PackedBitTensor packed = pack_conv_weights(weights);

  const Tensor ref = conv2d(input, weights, p, -1.0f);
  if (!(binconv_preactivation(input, packed, p) == ref)) {
    throw std::logic_error("bench_conv: xnor and float convolutions disagree");
  }

  volatile float sink = 0.0f;
  BenchRow row{"conv", p.out_h(s.height) * p.out_w(s.width), s.out_channels, p.kernel_volume(), 0, 0, 0};
  row.float_ns_per_iter = time_ns([&] { sink = sink + conv2d(input, weights, p, -1.0f)[0]; }, o);
  row.xnor_ns_per_iter = time_ns([&] { sink = sink + binconv_preactivation(input, packed, p)[0]; }, o);
  row.speedup = row.float_ns_per_iter / row.xnor_ns_per_iter;
  return row;
}

BenchRow bench_gemm(const GemmBenchShape& s, const BenchOptions& o) {
  std::mt19937_64 rng(o.seed);
  const Tensor a = random_signs({s.m, s.k}, rng);
  const Tensor bt = random_signs({s.n, s.k}, rng);  // B stored transposed, one row per output column
  const PackedBitTensor pa = pack(a), pb = pack(bt);
  std::vector<float> c(s.m * s.n);
  std::vector<std::int32_t> ci(s.m * s.n);

  gemm(Trans::no, Trans::yes, s.m, s.n, s.k, a.raw(), bt.raw(), c.data(), false);
  xnor_gemm(s.m, s.n, pa.row_words(), s.k, pa.words().data(), pb.words().data(), ci.data());
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i] != static_cast<float>(ci[i])) throw std::logic_error("bench_gemm: xnor and float GEMM disagree");
  }

  BenchRow row{"gemm", s.m, s.n, s.k, 0, 0, 0};
  row.float_ns_per_iter =
      time_ns([&] { gemm(Trans::no, Trans::yes, s.m, s.n, s.k, a.raw(), bt.raw(), c.data(), false); }, o);
  row.xnor_ns_per_iter = time_ns(
      [&] { xnor_gemm(s.m, s.n, pa.row_words(), s.k, pa.words().data(), pb.words().data(), ci.data()); }, o);
  row.speedup = row.float_ns_per_iter / row.xnor_ns_per_iter;
  return row;
}

std::vector<ConvBenchShape> default_conv_shapes() {
  return {
      {64, 16, 16, 64, 1, 1},    // K = 64
      {64, 16, 16, 64, 3, 1},    // K = 576
      {128, 16, 16, 128, 3, 1},  // K = 1152
      {256, 8, 8, 256, 3, 1},    // K = 2304
      {512, 8, 8, 512, 3, 1},    // K = 4608
  };
}

std::vector<GemmBenchShape> default_gemm_shapes() {
  return {{256, 256, 64}, {256, 256, 1024}, {256, 256, 4096}};
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << kBenchCsvHeader << '\n';
  for (const BenchRow& r : rows) {
    out << r.op << ',' << r.m << ',' << r.n << ',' << r.k << ',' << r.float_ns_per_iter << ','
        << r.xnor_ns_per_iter << ',' << r.speedup << '\n';
  }
}

}  // namespace bnn
