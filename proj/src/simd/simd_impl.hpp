#pragma once

#include <cstddef>

// Internal: per-level kernel tables. simd.cpp owns dispatch; the AVX2
// definitions live in simd_avx2.cpp which is compiled with -mavx2 -mfma.

namespace bima::simd::detail {

struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t);
  double (*sum_sq)(const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*mul)(const double*, const double*, double*, std::size_t);
  void (*soft_threshold)(const double*, double, double*, std::size_t);
  void (*threshold_mask_mul)(const double*, double, const double*, double*,
                             std::size_t);
  void (*scale)(double, double*, std::size_t);
};

const KernelTable& scalar_table();

#if defined(BIMA_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

}  // namespace bima::simd::detail
