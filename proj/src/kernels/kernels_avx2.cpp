// Compiled with -mavx2 -mfma. Only reachable through the dispatch table after
// a CPUID check, so nothing here may be inlined into portable code.

#include <immintrin.h>

#include <vector>

#include "kernels_impl.hpp"

namespace hitlsep::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

// C rows [i, i+4) x cols [j, j+16), broadcast-A form (B not transposed).
template <bool TransA>
inline void block_4x16(std::size_t i, std::size_t j, std::size_t k, const float* a,
                       std::size_t lda, const float* b, std::size_t ldb, float* c,
                       std::size_t ldc, bool accumulate) {
  __m256 acc[4][2];
  for (int r = 0; r < 4; ++r) {
    if (accumulate) {
      acc[r][0] = _mm256_loadu_ps(c + (i + r) * ldc + j);
      acc[r][1] = _mm256_loadu_ps(c + (i + r) * ldc + j + 8);
    } else {
      acc[r][0] = _mm256_setzero_ps();
      acc[r][1] = _mm256_setzero_ps();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * ldb + j);
    const __m256 b1 = _mm256_loadu_ps(b + p * ldb + j + 8);
    for (int r = 0; r < 4; ++r) {
      const float av = TransA ? a[p * lda + i + r] : a[(i + r) * lda + p];
      const __m256 va = _mm256_set1_ps(av);
      acc[r][0] = _mm256_fmadd_ps(va, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(va, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < 4; ++r) {
    _mm256_storeu_ps(c + (i + r) * ldc + j, acc[r][0]);
    _mm256_storeu_ps(c + (i + r) * ldc + j + 8, acc[r][1]);
  }
}

template <bool TransA>
void gemm_broadcast(std::size_t m, std::size_t n, std::size_t k, const float* a,
                    std::size_t lda, const float* b, std::size_t ldb, float* c,
                    std::size_t ldc, bool accumulate) {
  const std::size_t m4 = m - m % 4;
  const std::size_t n16 = n - n % 16;
  for (std::size_t i = 0; i < m4; i += 4) {
    for (std::size_t j = 0; j < n16; j += 16) {
      block_4x16<TransA>(i, j, k, a, lda, b, ldb, c, ldc, accumulate);
    }
  }
  // Remaining rows (all columns) and remaining columns (blocked rows).
  auto row_tail = [&](std::size_t i, std::size_t j0) {
    float* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = j0; j < n; ++j) crow[j] = 0.0f;
    }
    for (std::size_t p = 0; p < k; ++p) {
      const float av = TransA ? a[p * lda + i] : a[i * lda + p];
      const __m256 va = _mm256_set1_ps(av);
      const float* brow = b + p * ldb;
      std::size_t j = j0;
      for (; j + 8 <= n; j += 8) {
        _mm256_storeu_ps(crow + j,
                         _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), _mm256_loadu_ps(crow + j)));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  };
  for (std::size_t i = 0; i < m4; ++i) {
    if (n16 < n) row_tail(i, n16);
  }
  for (std::size_t i = m4; i < m; ++i) row_tail(i, 0);
}

// B transposed: C[i,j] = sum_p A(i,p) * B[j,p]; contiguous dot products in p.
void gemm_dot(bool trans_a, std::size_t m, std::size_t n, std::size_t k, const float* a,
              std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t ldc,
              bool accumulate) {
  std::vector<float> arow;
  if (trans_a) arow.resize(k);
  for (std::size_t i = 0; i < m; ++i) {
    const float* ai = a + i * lda;
    if (trans_a) {
      for (std::size_t p = 0; p < k; ++p) arow[p] = a[p * lda + i];
      ai = arow.data();
    }
    for (std::size_t j = 0; j < n; ++j) {
      const float* bj = b + j * ldb;
      __m256 acc0 = _mm256_setzero_ps();
      __m256 acc1 = _mm256_setzero_ps();
      std::size_t p = 0;
      for (; p + 16 <= k; p += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(ai + p), _mm256_loadu_ps(bj + p), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(ai + p + 8), _mm256_loadu_ps(bj + p + 8), acc1);
      }
      for (; p + 8 <= k; p += 8) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(ai + p), _mm256_loadu_ps(bj + p), acc0);
      }
      float s = hsum(_mm256_add_ps(acc0, acc1));
      for (; p < k; ++p) s += ai[p] * bj[p];
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + s : s;
    }
  }
}

void gemm_avx2(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k,
               const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
               std::size_t ldc, bool accumulate) {
  const bool at = ta == Transpose::Yes;
  if (tb == Transpose::Yes) {
    gemm_dot(at, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else if (at) {
    gemm_broadcast<true>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    gemm_broadcast<false>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  }
}

void axpy_avx2(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double sum_squares_avx2(std::size_t n, const double* x) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d v0 = _mm256_loadu_pd(x + i);
    const __m256d v1 = _mm256_loadu_pd(x + i + 4);
    acc0 = _mm256_fmadd_pd(v0, v0, acc0);
    acc1 = _mm256_fmadd_pd(v1, v1, acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * x[i];
  return s;
}

void multiply_avx2(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void moments_avx2(std::size_t n, const float* x, double* sum, double* sum_sq) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  __m256d q0 = _mm256_setzero_pd();
  __m256d q1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
    const __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
    s0 = _mm256_add_pd(s0, lo);
    s1 = _mm256_add_pd(s1, hi);
    q0 = _mm256_fmadd_pd(lo, lo, q0);
    q1 = _mm256_fmadd_pd(hi, hi, q1);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  double q = hsum(_mm256_add_pd(q0, q1));
  for (; i < n; ++i) {
    const double v = x[i];
    s += v;
    q += v * v;
  }
  *sum = s;
  *sum_sq = q;
}

}  // namespace

const KernelTable& avx2_table_unchecked() {
  static const KernelTable table{"avx2", gemm_avx2, axpy_avx2, sum_squares_avx2, multiply_avx2,
                                 moments_avx2};
  return table;
}

}  // namespace hitlsep::kernels
