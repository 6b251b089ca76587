// AVX2/FMA variants of the double-precision kernels. This translation unit
// is compiled with -mavx2 -mfma; it must only be reached through the runtime
// dispatcher after a CPUID check.

#include "simd_impl.hpp"

#if defined(BIMA_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>

namespace bima::simd::detail {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4),
                           acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc = std::fma(a[i], b[i], acc);
  return acc;
}

double sum_sq_avx2(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256d v0 = _mm256_loadu_pd(a + i);
    __m256d v1 = _mm256_loadu_pd(a + i + 4);
    acc0 = _mm256_fmadd_pd(v0, v0, acc0);
    acc1 = _mm256_fmadd_pd(v1, v1, acc1);
  }
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(a + i);
    acc0 = _mm256_fmadd_pd(v, v, acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc = std::fma(a[i], a[i], acc);
  return acc;
}

void axpy_avx2(double c, const double* x, double* y, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(vc, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] = std::fma(c, x[i], y[i]);
}

void mul_avx2(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i,
                     _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void soft_threshold_avx2(const double* x, double nu, double* out,
                         std::size_t n) {
  const __m256d vnu = _mm256_set1_pd(nu);
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    __m256d sign = _mm256_and_pd(v, sign_mask);
    __m256d shrunk = _mm256_sub_pd(_mm256_andnot_pd(sign_mask, v), vnu);
    // keep +0.0 (not -0.0) below the threshold, matching the scalar path
    __m256d keep = _mm256_cmp_pd(shrunk, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i,
                     _mm256_and_pd(keep, _mm256_or_pd(shrunk, sign)));
  }
  for (; i < n; ++i) {
    const double a = std::fabs(x[i]) - nu;
    out[i] = a > 0.0 ? std::copysign(a, x[i]) : 0.0;
  }
}

void threshold_mask_mul_avx2(const double* latent, double nu, const double* g,
                             double* out, std::size_t n) {
  const __m256d vnu = _mm256_set1_pd(nu);
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d mag = _mm256_andnot_pd(sign_mask, _mm256_loadu_pd(latent + i));
    __m256d keep = _mm256_cmp_pd(mag, vnu, _CMP_GE_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(keep, _mm256_loadu_pd(g + i)));
  }
  for (; i < n; ++i) out[i] = std::fabs(latent[i]) >= nu ? g[i] : 0.0;
}

void scale_avx2(double c, double* x, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= c;
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table = {
      dot_avx2,           sum_sq_avx2,
      axpy_avx2,          mul_avx2,
      soft_threshold_avx2, threshold_mask_mul_avx2,
      scale_avx2,
  };
  return table;
}

}  // namespace bima::simd::detail

#endif  // BIMA_HAVE_AVX2
