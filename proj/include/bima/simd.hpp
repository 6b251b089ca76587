#pragma once

#include <cstddef>

// Vectorized double-precision kernels for the sampler inner loops.
//
// Every kernel has a scalar reference implementation and, on x86, an AVX2
// variant. The variant is picked once at startup from CPUID; set the
// environment variable BIMA_SIMD=scalar (or call force_level) to pin the
// scalar path. Elementwise kernels produce bit-identical results on both
// paths; reductions (dot, sum_sq) may differ in the last few ulps because
// the AVX2 path sums in four lanes.

namespace bima::simd {

enum class Level { Scalar, Avx2 };

// Level currently dispatched to.
Level active_level();

// Pin the dispatch level (tests use this to compare paths). Requesting Avx2
// on a machine without it throws.
void force_level(Level level);

const char* level_name(Level level);

// sum_i a[i] * b[i]
double dot(const double* a, const double* b, std::size_t n);

// sum_i a[i]^2
double sum_sq(const double* a, std::size_t n);

// y[i] += a * x[i]
void axpy(double a, const double* x, double* y, std::size_t n);

// out[i] = a[i] * b[i]
void mul(const double* a, const double* b, double* out, std::size_t n);

// out[i] = sign(x[i]) * max(|x[i]| - nu, 0)
void soft_threshold(const double* x, double nu, double* out, std::size_t n);

// out[i] = (|latent[i]| >= nu) ? g[i] : 0
void threshold_mask_mul(const double* latent, double nu, const double* g,
                        double* out, std::size_t n);

// x[i] *= c
void scale(double c, double* x, std::size_t n);

}  // namespace bima::simd
