#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "bima/covkernel.hpp"
#include "bima/rng.hpp"

using namespace bima;

namespace {

// half-integer closed forms
double matern_half(double t) { return std::exp(-t); }
double matern_three_halves(double t) {
  const double a = std::sqrt(3.0) * t;
  return (1.0 + a) * std::exp(-a);
}
double matern_five_halves(double t) {
  const double a = std::sqrt(5.0) * t;
  return (1.0 + a + a * a / 3.0) * std::exp(-a);
}

}  // namespace

TEST_CASE("matern_c reference values") {
  CHECK(matern_c(0.0, 0.7) == 1.0);
  CHECK(matern_c(1.0, 0.5) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(matern_c(1.0, 1.5) ==
        doctest::Approx((1.0 + std::sqrt(3.0)) * std::exp(-std::sqrt(3.0)))
            .epsilon(1e-12));
}

TEST_CASE("matern_c against high-precision oracle") {
  // values computed with 50-digit arithmetic (mpmath besselk)
  struct Ref {
    double u, t, c;
  };
  const Ref refs[] = {
      {0.2, 1e-6, 0.99681495057944470122},
      {0.2, 0.001, 0.94952048934848744172},
      {0.2, 0.1, 0.68247992408131121084},
      {0.2, 0.5, 0.41244078189324639594},
      {0.2, 1.0, 0.26026378109618809392},
      {0.2, 2.0, 0.11735672490635777942},
      {0.2, 5.0, 0.013834860926644309248},
      {0.2, 10.0, 0.00048222202582267041651},
      {0.2, 50.0, 3.1043744986728049967e-15},
      {0.7, 1e-6, 0.99999999371544121745},
      {0.7, 0.1, 0.94869562937208582498},
      {0.7, 1.0, 0.40618184037575694002},
      {0.7, 10.0, 0.00001429811766735618948},
      {1.0, 0.001, 0.99999282288481386095},
      {1.0, 0.5, 0.73191447646146275539},
      {1.0, 2.0, 0.13966747401529314286},
      {1.0, 50.0, 2.0693417847482554197e-30},
      {2.0, 0.1, 0.99024858575465736788},
      {2.0, 1.0, 0.50751950913211172587},
      {2.0, 10.0, 1.2659087224584456221e-7},
  };
  for (const auto& r : refs)
    CHECK(matern_c(r.t, r.u) == doctest::Approx(r.c).epsilon(1e-12));
}

TEST_CASE("matern_c matches half-integer closed forms to 1e-10") {
  // log-spaced grid over [1e-6, 50]
  for (int k = 0; k < 200; ++k) {
    const double t =
        1e-6 * std::pow(50.0 / 1e-6, static_cast<double>(k) / 199.0);
    CHECK(matern_c(t, 0.5) ==
          doctest::Approx(matern_half(t)).epsilon(1e-10));
    CHECK(matern_c(t, 1.5) ==
          doctest::Approx(matern_three_halves(t)).epsilon(1e-10));
    CHECK(matern_c(t, 2.5) ==
          doctest::Approx(matern_five_halves(t)).epsilon(1e-10));
  }
}

TEST_CASE("matern_c basic contracts") {
  SUBCASE("decreasing in t, finite up to 1e3") {
    for (const double u : {0.2, 0.5, 1.0, 2.5}) {
      double prev = matern_c(0.0, u);
      CHECK(prev == 1.0);
      for (const double t : {1e-4, 0.01, 0.3, 1.0, 3.0, 10.0, 100.0, 1e3}) {
        const double c = matern_c(t, u);
        CHECK(std::isfinite(c));
        CHECK(c <= prev);
        CHECK(c >= 0.0);
        prev = c;
      }
    }
  }
  SUBCASE("invalid arguments") {
    CHECK_THROWS_AS(matern_c(-1.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(matern_c(std::nan(""), 0.5), std::invalid_argument);
    CHECK_THROWS_AS(matern_c(1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(matern_c(1.0, -0.5), std::invalid_argument);
  }
}

TEST_CASE("kernel_eval") {
  SUBCASE("modified SE basics") {
    const KernelSpec spec = KernelSpec::make_modified_se(0.01, 10.0);
    const std::vector<double> origin{0.0};
    CHECK(kernel_eval(origin, origin, spec) == doctest::Approx(1.0));

    const KernelSpec pure = KernelSpec::make_modified_se(0.0, 10.0);
    const std::vector<double> s2{0.1};
    CHECK(kernel_eval(origin, s2, pure) ==
          doctest::Approx(std::exp(-0.1)).epsilon(1e-12));

    // at s = s2 the value is exp(-2 a |s|^2)
    const std::vector<double> s{0.3, 0.4};
    const std::vector<double> s_copy{0.3, 0.4};
    CHECK(kernel_eval(s, s_copy, spec) ==
          doctest::Approx(std::exp(-2.0 * 0.01 * 0.25)).epsilon(1e-12));
  }
  SUBCASE("matern takes squared distance over rho") {
    const KernelSpec spec = KernelSpec::make_matern(0.5, 2.0);
    const std::vector<double> a{0.0, 0.0};
    const std::vector<double> b{1.0, 1.0};  // squared distance 2
    CHECK(kernel_eval(a, b, spec) ==
          doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(kernel_eval(a, a, spec) == 1.0);
  }
  SUBCASE("symmetry is bit exact") {
    const KernelSpec matern = KernelSpec::make_matern(0.2, 2.0);
    const KernelSpec modse = KernelSpec::make_modified_se(0.01, 10.0);
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
      std::vector<double> s(3), s2(3);
      for (int k = 0; k < 3; ++k) {
        s[k] = rng.uniform();
        s2[k] = rng.uniform();
      }
      CHECK(kernel_eval(s, s2, matern) == kernel_eval(s2, s, matern));
      CHECK(kernel_eval(s, s2, modse) == kernel_eval(s2, s, modse));
    }
  }
  SUBCASE("dimension mismatch") {
    const KernelSpec spec = KernelSpec::make_matern(0.5, 2.0);
    const std::vector<double> a{0.0, 0.0};
    const std::vector<double> b{1.0};
    CHECK_THROWS_AS(kernel_eval(a, b, spec), std::invalid_argument);
  }
  SUBCASE("per-region override") {
    KernelSpec spec = KernelSpec::make_matern(0.5, 2.0);
    spec.per_region[2] = {0.5, 8.0};
    const std::vector<double> a{0.0};
    const std::vector<double> b{2.0};  // squared distance 4
    CHECK(kernel_eval(a, b, spec, 1) ==
          doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
    CHECK(kernel_eval(a, b, spec, 2) ==
          doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  }
}

TEST_CASE("kernel spec validation") {
  CHECK_THROWS_AS(KernelSpec::make_matern(0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(KernelSpec::make_matern(1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(KernelSpec::make_modified_se(0.1, 0.0),
                  std::invalid_argument);
  CHECK_NOTHROW(KernelSpec::make_modified_se(0.0, 1.0));
}
