#pragma once

// Dense float64 inner loops used by the tensor ops.
//
// Every kernel has a scalar reference implementation and optional SIMD
// variants (AVX2+FMA on x86-64, NEON on aarch64). The active table is picked
// once at first use from CPU features and can be pinned with the
// BLOCKPOOL_SIMD environment variable ("scalar", "avx2", "neon", "auto").
// Variants agree with the scalar reference up to summation order; a given
// table is deterministic run to run.

#include <cstddef>
#include <string_view>

namespace blockpool::kernels {

struct KernelTable {
  const char* name;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[i] = max(y[i], x[i]); returns nothing, ties keep y
  void (*vmax)(const double* x, double* y, std::size_t n);

  // Row-major matrix products. When `accumulate` is false C is overwritten.
  //   nn: C[m×n] (+)= A[m×k] · B[k×n]
  //   nt: C[m×n] (+)= A[m×k] · B[n×k]^T
  //   tn: C[m×n] (+)= A[k×m]^T · B[k×n]
  void (*matmul_nn)(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate);
  void (*matmul_nt)(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate);
  void (*matmul_tn)(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate);
};

const KernelTable& scalar_table();
// nullptr when the variant is not compiled in or the CPU lacks the feature.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// The table selected for this process.
const KernelTable& active();

// Re-selects the active table by name ("scalar", "avx2", "neon", "auto").
// Returns false if the requested variant is unavailable; the active table is
// left unchanged in that case.
bool select(std::string_view name);

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline void vmax(const double* x, double* y, std::size_t n) {
  active().vmax(x, y, n);
}
inline void matmul_nn(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n,
                      bool accumulate) {
  active().matmul_nn(a, b, c, m, k, n, accumulate);
}
inline void matmul_nt(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n,
                      bool accumulate) {
  active().matmul_nt(a, b, c, m, k, n, accumulate);
}
inline void matmul_tn(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n,
                      bool accumulate) {
  active().matmul_tn(a, b, c, m, k, n, accumulate);
}

}  // namespace blockpool::kernels
