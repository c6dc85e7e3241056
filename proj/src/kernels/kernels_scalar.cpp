#include "kernels_impl.hpp"

namespace hitlsep::kernels {
namespace {

void gemm_scalar(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k,
                 const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
                 std::size_t ldc, bool accumulate) {
  const bool at = ta == Transpose::Yes;
  const bool bt = tb == Transpose::Yes;
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0f;
    }
    for (std::size_t p = 0; p < k; ++p) {
      const float av = at ? a[p * lda + i] : a[i * lda + p];
      if (av == 0.0f) continue;
      if (bt) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      } else {
        const float* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void axpy_scalar(std::size_t n, float alpha, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double sum_squares_scalar(std::size_t n, const double* x) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return s;
}

void multiply_scalar(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void moments_scalar(std::size_t n, const float* x, double* sum, double* sum_sq) {
  double s = 0.0;
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    s += v;
    q += v * v;
  }
  *sum = s;
  *sum_sq = q;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", gemm_scalar, axpy_scalar, sum_squares_scalar,
                                 multiply_scalar, moments_scalar};
  return table;
}

}  // namespace hitlsep::kernels
