#pragma once

#include "hitlsep/kernels.hpp"

namespace hitlsep::kernels {

#if HITLSEP_HAVE_AVX2
const KernelTable& avx2_table_unchecked();
#endif

}  // namespace hitlsep::kernels
