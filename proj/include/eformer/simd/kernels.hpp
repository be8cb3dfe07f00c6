#pragma once

// Dense double-precision inner loops used by the tensor core.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant. The active backend is chosen once at startup from CPU
// features (override with EFORMER_SIMD=scalar|avx2) and can be switched at
// runtime for equivalence testing. Results of the two backends agree to
// rounding, not bit-exactly: FMA contraction and lane-parallel partial sums
// change the accumulation order.

#include <cstddef>
#include <string_view>

namespace eformer::simd {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  // out = a + b
  void (*add)(std::size_t n, const double* a, const double* b, double* out);
  // out = a * b
  void (*mul)(std::size_t n, const double* a, const double* b, double* out);
  // x *= alpha
  void (*scal)(std::size_t n, double alpha, double* x);
  // Row-major C[m,n] (+)= A[m,k] * B[k,n], all contiguous.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
};

const KernelTable& scalar_kernels();
// Null when the build or the CPU lacks AVX2.
const KernelTable* avx2_kernels();

bool backend_available(Backend b);
Backend active_backend();
// Throws std::invalid_argument if the backend is unavailable.
void set_backend(Backend b);
std::string_view backend_name(Backend b);

const KernelTable& kernels();

// Row-major C[m,n] (+)= op(A) * op(B) where op transposes when requested.
// A is stored [m,k] (or [k,m] when trans_a); B is [k,n] (or [n,k]).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

// Restores the previously active backend on scope exit.
class BackendGuard {
 public:
  explicit BackendGuard(Backend b) : saved_(active_backend()) { set_backend(b); }
  ~BackendGuard() { set_backend(saved_); }
  BackendGuard(const BackendGuard&) = delete;
  BackendGuard& operator=(const BackendGuard&) = delete;

 private:
  Backend saved_;
};

}  // namespace eformer::simd
