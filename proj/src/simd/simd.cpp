#include "bima/simd.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "simd_impl.hpp"

namespace bima::simd {
namespace detail {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc = std::fma(a[i], b[i], acc);
  return acc;
}

double sum_sq_scalar(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc = std::fma(a[i], a[i], acc);
  return acc;
}

void axpy_scalar(double c, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(c, x[i], y[i]);
}

void mul_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void soft_threshold_scalar(const double* x, double nu, double* out,
                           std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::fabs(x[i]) - nu;
    out[i] = a > 0.0 ? std::copysign(a, x[i]) : 0.0;
  }
}

void threshold_mask_mul_scalar(const double* latent, double nu,
                               const double* g, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    out[i] = std::fabs(latent[i]) >= nu ? g[i] : 0.0;
}

void scale_scalar(double c, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= c;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table = {
      dot_scalar,           sum_sq_scalar,
      axpy_scalar,          mul_scalar,
      soft_threshold_scalar, threshold_mask_mul_scalar,
      scale_scalar,
  };
  return table;
}

}  // namespace detail

namespace {

bool avx2_available() {
#if defined(BIMA_HAVE_AVX2) && defined(__x86_64__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

struct Dispatch {
  Level level;
  const detail::KernelTable* table;
};

Dispatch make_dispatch(Level level) {
  if (level == Level::Avx2) {
#if defined(BIMA_HAVE_AVX2)
    if (avx2_available()) return {Level::Avx2, &detail::avx2_table()};
#endif
    throw std::runtime_error("AVX2 kernels unavailable on this machine");
  }
  return {Level::Scalar, &detail::scalar_table()};
}

Dispatch initial_dispatch() {
  if (const char* env = std::getenv("BIMA_SIMD")) {
    if (std::strcmp(env, "scalar") == 0) return make_dispatch(Level::Scalar);
    if (std::strcmp(env, "avx2") == 0) return make_dispatch(Level::Avx2);
  }
  return avx2_available() ? make_dispatch(Level::Avx2)
                          : make_dispatch(Level::Scalar);
}

Dispatch& dispatch() {
  static Dispatch d = initial_dispatch();
  return d;
}

}  // namespace

Level active_level() { return dispatch().level; }

void force_level(Level level) { dispatch() = make_dispatch(level); }

const char* level_name(Level level) {
  return level == Level::Avx2 ? "avx2" : "scalar";
}

double dot(const double* a, const double* b, std::size_t n) {
  return dispatch().table->dot(a, b, n);
}

double sum_sq(const double* a, std::size_t n) {
  return dispatch().table->sum_sq(a, n);
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  dispatch().table->axpy(a, x, y, n);
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  dispatch().table->mul(a, b, out, n);
}

void soft_threshold(const double* x, double nu, double* out, std::size_t n) {
  dispatch().table->soft_threshold(x, nu, out, n);
}

void threshold_mask_mul(const double* latent, double nu, const double* g,
                        double* out, std::size_t n) {
  dispatch().table->threshold_mask_mul(latent, nu, g, out, n);
}

void scale(double c, double* x, std::size_t n) {
  dispatch().table->scale(c, x, n);
}

}  // namespace bima::simd
