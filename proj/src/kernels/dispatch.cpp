#include <cstdlib>
#include <string_view>

#include "kernels_impl.hpp"

namespace hitlsep::kernels {
namespace {

bool cpu_has_avx2() {
#if HITLSEP_HAVE_AVX2 && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& select() {
  const KernelTable* simd = avx2_table();
  if (const char* forced = std::getenv("HITLSEP_KERNELS")) {
    const std::string_view want{forced};
    if (want == "scalar") return scalar_table();
    if (want == "avx2" && simd != nullptr) return *simd;
  }
  return simd != nullptr ? *simd : scalar_table();
}

}  // namespace

const KernelTable* avx2_table() {
#if HITLSEP_HAVE_AVX2
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2_table_unchecked() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace hitlsep::kernels
