// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <string>

#include "niser/simd/kernels.hpp"

namespace niser::simd {

namespace {

constexpr KernelTable kScalarTable{&scalar::dot, &scalar::axpy, &scalar::mul_acc,
                                   &scalar::sum_squares};
#if defined(NISER_HAVE_AVX2)
constexpr KernelTable kAvx2Table{&avx2::dot, &avx2::axpy, &avx2::mul_acc, &avx2::sum_squares};
#endif

bool cpu_has_avx2() {
#if defined(NISER_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("NISER_SIMD")) {
    if (std::string(env) == "scalar") return Backend::kScalar;
  }
  return cpu_has_avx2() ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& active() {
  static std::atomic<Backend> backend{initial_backend()};
  return backend;
}

}  // namespace

bool avx2_available() {
  static const bool available = cpu_has_avx2();
  return available;
}

const KernelTable& table_for(Backend backend) {
#if defined(NISER_HAVE_AVX2)
  if (backend == Backend::kAvx2 && avx2_available()) return kAvx2Table;
#else
  (void)backend;
#endif
  return kScalarTable;
}

const KernelTable& kernels() { return table_for(active().load(std::memory_order_relaxed)); }

Backend active_backend() {
  const Backend b = active().load(std::memory_order_relaxed);
  return (b == Backend::kAvx2 && !avx2_available()) ? Backend::kScalar : b;
}

void set_backend(Backend backend) { active().store(backend, std::memory_order_relaxed); }

std::string_view backend_name(Backend backend) {
  return backend == Backend::kAvx2 ? "avx2" : "scalar";
}

void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto axpy = kernels().axpy;
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      if (arow[p] != 0.0) axpy(arow[p], b + p * n, crow, n);
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto dot = kernels().dot;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += dot(arow, b + j * k, k);
  }
}

void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto axpy = kernels().axpy;
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (arow[i] != 0.0) axpy(arow[i], brow, c + i * n, n);
    }
  }
}

}  // namespace niser::simd
