// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision inner loops used by the tensor core. Every kernel has
// a scalar reference implementation and, on x86-64, an AVX2/FMA variant; the
// variant is chosen once at startup from CPUID and can be overridden with the
// NISER_SIMD environment variable ("scalar" or "avx2").
#pragma once

#include <cstddef>
#include <string_view>

namespace niser::simd {

enum class Backend { kScalar, kAvx2 };

struct KernelTable {
  /// sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  /// y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// z[i] += x[i] * y[i]
  void (*mul_acc)(const double* x, const double* y, double* z, std::size_t n);
  /// sum_i x[i]^2
  double (*sum_squares)(const double* x, std::size_t n);
};

namespace scalar {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void mul_acc(const double* x, const double* y, double* z, std::size_t n);
double sum_squares(const double* x, std::size_t n);
}  // namespace scalar

#if defined(NISER_HAVE_AVX2)
namespace avx2 {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void mul_acc(const double* x, const double* y, double* z, std::size_t n);
double sum_squares(const double* x, std::size_t n);
}  // namespace avx2
#endif

/// True if the AVX2 variant was compiled in and the CPU supports AVX2+FMA.
bool avx2_available();

/// Kernel table for an explicit backend. Falls back to scalar when the
/// requested backend is unavailable.
const KernelTable& table_for(Backend backend);

/// Currently active kernels.
const KernelTable& kernels();
Backend active_backend();

/// Switches the active backend (tests and benchmarks). Not thread-safe with
/// respect to concurrently running kernels.
void set_backend(Backend backend);

std::string_view backend_name(Backend backend);

// Row-major GEMM helpers built on the active kernels. All accumulate into C.

/// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
/// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
/// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);

}  // namespace niser::simd
