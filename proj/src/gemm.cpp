#include "bnn/gemm.hpp"

#include <algorithm>
#include <vector>

namespace bnn {
namespace {

constexpr std::size_t kRowTile = 4;

template <typename T>
constexpr std::size_t col_tile() {
  return 128 / sizeof(T);
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  constexpr std::size_t blk = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += blk) {
    for (std::size_t c0 = 0; c0 < cols; c0 += blk) {
      const std::size_t r1 = std::min(rows, r0 + blk);
      const std::size_t c1 = std::min(cols, c0 + blk);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = src[r * cols + c];
      }
    }
  }
  return out;
}

// B (K x N) is repacked into column panels of width NR, each panel stored as
// K consecutive rows of NR values, zero-padded past N.
template <typename T>
std::vector<T> pack_panels(const T* b, std::size_t k, std::size_t n) {
  constexpr std::size_t nr = col_tile<T>();
  const std::size_t panels = (n + nr - 1) / nr;
  std::vector<T> out(panels * k * nr, T{0});
  for (std::size_t p = 0; p < panels; ++p) {
    const std::size_t j0 = p * nr;
    const std::size_t width = std::min(nr, n - j0);
    T* dst = out.data() + p * k * nr;
    for (std::size_t kk = 0; kk < k; ++kk) {
      std::copy_n(b + kk * n + j0, width, dst + kk * nr);
    }
  }
  return out;
}

template <typename T>
void kernel_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate) {
  constexpr std::size_t nr = col_tile<T>();
  const std::vector<T> panels = pack_panels(b, k, n);
  const std::size_t num_panels = (n + nr - 1) / nr;

  for (std::size_t p = 0; p < num_panels; ++p) {
    const T* panel = panels.data() + p * k * nr;
    const std::size_t j0 = p * nr;
    const std::size_t width = std::min(nr, n - j0);

    std::size_t i0 = 0;
    for (; i0 + kRowTile <= m; i0 += kRowTile) {
      T acc[kRowTile][nr] = {};
      const T* a0 = a + (i0 + 0) * k;
      const T* a1 = a + (i0 + 1) * k;
      const T* a2 = a + (i0 + 2) * k;
      const T* a3 = a + (i0 + 3) * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T* brow = panel + kk * nr;
        const T v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
        for (std::size_t j = 0; j < nr; ++j) {
          acc[0][j] += v0 * brow[j];
          acc[1][j] += v1 * brow[j];
          acc[2][j] += v2 * brow[j];
          acc[3][j] += v3 * brow[j];
        }
      }
      for (std::size_t r = 0; r < kRowTile; ++r) {
        T* crow = c + (i0 + r) * n + j0;
        if (accumulate) {
          for (std::size_t j = 0; j < width; ++j) crow[j] += acc[r][j];
        } else {
          for (std::size_t j = 0; j < width; ++j) crow[j] = acc[r][j];
        }
      }
    }
    for (; i0 < m; ++i0) {
      T acc[nr] = {};
      const T* arow = a + i0 * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T* brow = panel + kk * nr;
        const T v = arow[kk];
        for (std::size_t j = 0; j < nr; ++j) acc[j] += v * brow[j];
      }
      T* crow = c + i0 * n + j0;
      if (accumulate) {
        for (std::size_t j = 0; j < width; ++j) crow[j] += acc[j];
      } else {
        for (std::size_t j = 0; j < width; ++j) crow[j] = acc[j];
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T{0});
    return;
  }
  std::vector<T> a_buf, b_buf;
  if (trans_a == Trans::yes) {
    a_buf = transposed(a, k, m);
    a = a_buf.data();
  }
  if (trans_b == Trans::yes) {
    b_buf = transposed(b, n, k);
    b = b_buf.data();
  }
  kernel_nn(m, n, k, a, b, c, accumulate);
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*, bool);

}  // namespace bnn
