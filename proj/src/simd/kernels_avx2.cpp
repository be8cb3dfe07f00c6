// Compiled with -mavx2 -mfma. Nothing in this file may run before the
// dispatcher has confirmed CPU support.

#include "eformer/simd/kernels.hpp"

#include <immintrin.h>

namespace eformer::simd {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_avx2(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_avx2(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scal_avx2(std::size_t n, double alpha, double* x) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

// 4x8 register tile: 8 accumulators, two B loads and four A broadcasts per
// inner step.
inline void tile_4x8(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                     bool accumulate) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * n);
    const __m256d b1 = _mm256_loadu_pd(b + p * n + 4);
    __m256d a0 = _mm256_broadcast_sd(a + p);
    c00 = _mm256_fmadd_pd(a0, b0, c00);
    c01 = _mm256_fmadd_pd(a0, b1, c01);
    a0 = _mm256_broadcast_sd(a + k + p);
    c10 = _mm256_fmadd_pd(a0, b0, c10);
    c11 = _mm256_fmadd_pd(a0, b1, c11);
    a0 = _mm256_broadcast_sd(a + 2 * k + p);
    c20 = _mm256_fmadd_pd(a0, b0, c20);
    c21 = _mm256_fmadd_pd(a0, b1, c21);
    a0 = _mm256_broadcast_sd(a + 3 * k + p);
    c30 = _mm256_fmadd_pd(a0, b0, c30);
    c31 = _mm256_fmadd_pd(a0, b1, c31);
  }
  auto store = [&](double* dst, __m256d v) {
    if (accumulate) v = _mm256_add_pd(v, _mm256_loadu_pd(dst));
    _mm256_storeu_pd(dst, v);
  };
  store(c, c00);
  store(c + 4, c01);
  store(c + n, c10);
  store(c + n + 4, c11);
  store(c + 2 * n, c20);
  store(c + 2 * n + 4, c21);
  store(c + 3 * n, c30);
  store(c + 3 * n + 4, c31);
}

inline void tile_1x4(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                     bool accumulate) {
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    acc = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), _mm256_loadu_pd(b + p * n), acc);
  }
  if (accumulate) acc = _mm256_add_pd(acc, _mm256_loadu_pd(c));
  _mm256_storeu_pd(c, acc);
}

inline void tile_1x1(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                     bool accumulate) {
  double s = 0.0;
  for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p * n];
  *c = accumulate ? *c + s : s;
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, bool accumulate) {
  const std::size_t m4 = m - m % 4;
  const std::size_t n8 = n - n % 8;
  for (std::size_t i = 0; i < m4; i += 4) {
    for (std::size_t j = 0; j < n8; j += 8) {
      tile_4x8(n, k, a + i * k, b + j, c + i * n + j, accumulate);
    }
  }
  // Ragged column strip for the 4-row blocks, then the leftover rows.
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t j = i < m4 ? n8 : 0;
    for (; j + 4 <= n; j += 4) tile_1x4(n, k, a + i * k, b + j, c + i * n + j, accumulate);
    for (; j < n; ++j) tile_1x1(n, k, a + i * k, b + j, c + i * n + j, accumulate);
  }
}

}  // namespace

namespace detail {
const KernelTable& avx2_table() {
  static const KernelTable table{dot_avx2, axpy_avx2, add_avx2, mul_avx2, scal_avx2, gemm_nn_avx2};
  return table;
}
}  // namespace detail

}  // namespace eformer::simd
