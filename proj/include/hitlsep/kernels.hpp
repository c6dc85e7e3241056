#pragma once

// Data-parallel inner loops used by the model and the DSP layer.
//
// Every kernel has a portable scalar reference and, where the build and the
// host CPU allow it, an AVX2/FMA variant. The active table is chosen once at
// startup; HITLSEP_KERNELS=scalar|avx2 in the environment overrides detection.

#include <cstddef>
#include <string_view>

namespace hitlsep::kernels {

enum class Transpose { No, Yes };

/// Row-major single precision GEMM: C = op(A) * op(B) (+ C when accumulate).
/// op(A) is M x K, op(B) is K x N, C is M x N.
using GemmFn = void (*)(Transpose ta, Transpose tb, std::size_t m, std::size_t n,
                        std::size_t k, const float* a, std::size_t lda, const float* b,
                        std::size_t ldb, float* c, std::size_t ldc, bool accumulate);

/// y += alpha * x
using AxpyFn = void (*)(std::size_t n, float alpha, const float* x, float* y);

/// Sum of squares in double precision.
using SumSquaresFn = double (*)(std::size_t n, const double* x);

/// out[i] = a[i] * b[i]
using MultiplyFn = void (*)(std::size_t n, const double* a, const double* b, double* out);

/// Sum over i of (x[i] - mean)^2 and sum of x[i], single precision input,
/// double accumulation. Used by batch normalization.
using MomentsFn = void (*)(std::size_t n, const float* x, double* sum, double* sum_sq);

struct KernelTable {
  std::string_view name;
  GemmFn gemm;
  AxpyFn axpy;
  SumSquaresFn sum_squares;
  MultiplyFn multiply;
  MomentsFn moments;
};

const KernelTable& scalar_table();

/// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

/// The table selected for this process.
const KernelTable& active();

}  // namespace hitlsep::kernels
