#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "eformer/simd/kernels.hpp"

namespace eformer::simd {

#if defined(EFORMER_HAVE_AVX2)
namespace detail {
const KernelTable& avx2_table();
}
#endif

namespace {

bool cpu_has_avx2() {
#if defined(EFORMER_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("EFORMER_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Backend::Scalar;
    if (v == "avx2" && cpu_has_avx2()) return Backend::Avx2;
  }
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& active() {
  static std::atomic<Backend> backend{initial_backend()};
  return backend;
}

}  // namespace

const KernelTable* avx2_kernels() {
#if defined(EFORMER_HAVE_AVX2)
  if (cpu_has_avx2()) return &detail::avx2_table();
#endif
  return nullptr;
}

bool backend_available(Backend b) {
  return b == Backend::Scalar || avx2_kernels() != nullptr;
}

Backend active_backend() { return active().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (!backend_available(b)) {
    throw std::invalid_argument("SIMD backend not available: " + std::string(backend_name(b)));
  }
  active().store(b, std::memory_order_relaxed);
}

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
  }
  return "unknown";
}

const KernelTable& kernels() {
  if (active_backend() == Backend::Avx2) {
    if (const KernelTable* t = avx2_kernels()) return *t;
  }
  return scalar_kernels();
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    }
    return;
  }
  // Transposed operands are packed to row-major so both backends only
  // implement the NN case.
  std::vector<double> pa;
  std::vector<double> pb;
  if (trans_a) {
    pa.resize(m * k);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) pa[i * k + p] = a[p * m + i];
    a = pa.data();
  }
  if (trans_b) {
    pb.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) pb[p * n + j] = b[j * k + p];
    b = pb.data();
  }
  kernels().gemm_nn(m, n, k, a, b, c, accumulate);
}

}  // namespace eformer::simd
