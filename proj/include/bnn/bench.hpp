#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace bnn {

/// Convolution benchmark shape: a batch-1 C x H x W input, O filters of k x k,
/// "same" padding. Equivalent GEMM: M = output positions, N = O, K = C * k * k.
struct ConvBenchShape {
  std::size_t channels = 64;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t out_channels = 64;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

/// Plain GEMM benchmark: M x K times K x N.
struct GemmBenchShape {
  std::size_t m = 64, n = 64, k = 64;
};

struct BenchRow {
  std::string op;  // "conv" or "gemm"
  std::size_t m = 0, n = 0, k = 0;
  double float_ns_per_iter = 0.0;
  double xnor_ns_per_iter = 0.0;
  double speedup = 0.0;  // float_ns / xnor_ns
};

struct BenchOptions {
  std::size_t warmup = 2;
  /// Each path is repeated until both this many iterations and min_seconds have elapsed.
  std::size_t min_iterations = 5;
  double min_seconds = 0.2;
  std::uint64_t seed = 7;
};

/// Times the float conv (im2col + GEMM on +-1 values) against the packed XNOR
/// conv, after checking both produce identical integer outputs.
BenchRow bench_conv(const ConvBenchShape& shape, const BenchOptions& options = {});

/// Float GEMM versus xnor_gemm on pre-packed operands, same equality guard.
BenchRow bench_gemm(const GemmBenchShape& shape, const BenchOptions& options = {});

std::vector<ConvBenchShape> default_conv_shapes();
std::vector<GemmBenchShape> default_gemm_shapes();

inline constexpr const char* kBenchCsvHeader = "op,M,N,K,float_ns_per_iter,xnor_ns_per_iter,speedup";

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace bnn
