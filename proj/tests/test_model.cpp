#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "bima/basis.hpp"
#include "bima/model.hpp"
#include "bima/rng.hpp"
#include "bima/simd.hpp"
#include "oracles.hpp"

using namespace bima;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct Fixture {
  MediationDataset data;
  std::vector<RegionBasis> bases;
};

Fixture make_fixture(int n, int nx, int ny, int q, std::uint64_t seed) {
  Fixture f;
  f.data.grid = make_grid_2d(nx, ny, 2, 1);
  f.data.n = n;
  f.data.q = q;
  Rng rng(seed);
  const int p = f.data.grid.p();
  f.data.Y.resize(n);
  f.data.X.resize(n);
  f.data.C.resize(static_cast<std::size_t>(n) * q);
  f.data.M.resize(static_cast<std::size_t>(n) * p);
  for (auto& v : f.data.Y) v = rng.normal();
  for (auto& v : f.data.X) v = rng.normal();
  for (auto& v : f.data.C) v = rng.normal();
  for (auto& v : f.data.M) v = 2.0 * rng.normal();
  f.bases = build_bases(f.data.grid, KernelSpec::make_matern(0.5, 2.0), 0.99);
  return f;
}

OutcomeState random_outcome_state(const Fixture& f, double nu, Rng& rng) {
  OutcomeState s;
  s.theta_beta.resize(f.bases.size());
  for (std::size_t b = 0; b < f.bases.size(); ++b) {
    s.theta_beta[b].resize(f.bases[b].L);
    for (auto& v : s.theta_beta[b]) v = rng.normal();
  }
  s.gamma = rng.normal();
  s.xi.resize(f.data.q);
  for (auto& v : s.xi) v = rng.normal();
  s.sigma2_Y = 0.5 + rng.uniform();
  s.sigma2_beta = 0.5 + rng.uniform();
  s.nu_beta = nu;
  return s;
}

MediatorState random_mediator_state(const Fixture& f, double nu, Rng& rng) {
  MediatorState s;
  s.theta_alpha.resize(f.bases.size());
  for (std::size_t b = 0; b < f.bases.size(); ++b) {
    s.theta_alpha[b].resize(f.bases[b].L);
    for (auto& v : s.theta_alpha[b]) v = rng.normal();
  }
  s.theta_zeta.assign(f.data.q, s.theta_alpha);
  for (auto& zeta : s.theta_zeta)
    for (auto& block : zeta)
      for (auto& v : block) v = 0.5 * rng.normal();
  s.theta_eta.assign(f.data.n, s.theta_alpha);
  for (auto& eta : s.theta_eta)
    for (auto& block : eta)
      for (auto& v : block) v = 0.3 * rng.normal();
  s.sigma2_M = 0.5 + rng.uniform();
  s.sigma2_alpha = 0.5 + rng.uniform();
  s.sigma2_eta = 0.5 + rng.uniform();
  s.sigma2_zeta = 0.5 + rng.uniform();
  s.nu_alpha = nu;
  return s;
}

// direct-summation outcome log density plus explicit priors; written
// independently of the library path (plain loops over densities)
double outcome_logpost_oracle(const OutcomeState& s, const MediationDataset& d,
                              const std::vector<RegionBasis>& bases,
                              const PriorConfig& prior) {
  const int p = d.grid.p();
  const auto beta = eval_field(bases, s.theta_beta, s.nu_beta, d.grid);
  auto normal_logpdf = [](double x, double mu, double var) {
    return -0.5 * (kLog2Pi + std::log(var)) -
           0.5 * (x - mu) * (x - mu) / var;
  };
  double lp = 0.0;
  for (int i = 0; i < d.n; ++i) {
    double mean = s.gamma * d.X[i];
    for (int k = 0; k < d.q; ++k)
      mean += s.xi[k] * d.C[static_cast<std::size_t>(i) * d.q + k];
    for (int j = 0; j < p; ++j)
      mean += beta[j] * d.M[static_cast<std::size_t>(i) * p + j] / p;
    lp += normal_logpdf(d.Y[i], mean, s.sigma2_Y);
  }
  if (prior.include_priors) {
    for (std::size_t b = 0; b < bases.size(); ++b)
      for (int l = 0; l < bases[b].L; ++l)
        lp += normal_logpdf(s.theta_beta[b][l], 0.0,
                            s.sigma2_beta * bases[b].eigvals[l]);
    lp += normal_logpdf(s.gamma, 0.0, prior.sigma_gamma0_sq);
    for (int k = 0; k < d.q; ++k)
      lp += normal_logpdf(s.xi[k], 0.0, prior.sigma_gamma0_sq);
    lp += -(prior.ig_shape + 1.0) * std::log(s.sigma2_Y) -
          prior.ig_rate / s.sigma2_Y;
    lp += -(prior.ig_shape + 1.0) * std::log(s.sigma2_beta) -
          prior.ig_rate / s.sigma2_beta;
  }
  return lp;
}

}  // namespace

TEST_CASE("intensity_measure") {
  const VoxelGrid g4 = make_grid_1d(4);
  CHECK(intensity_measure(std::vector<double>{2, 2, 2, 2}, g4) ==
        std::vector<double>{0.5, 0.5, 0.5, 0.5});
  CHECK(intensity_measure(std::vector<double>{0, 0, 0, 0}, g4) ==
        std::vector<double>{0, 0, 0, 0});
  const VoxelGrid g2 = make_grid_1d(2);
  CHECK(intensity_measure(std::vector<double>{1, -3}, g2) ==
        std::vector<double>{0.5, -1.5});
  CHECK_THROWS_AS(intensity_measure(std::vector<double>{1.0}, g4),
                  std::invalid_argument);
}

TEST_CASE("empirical inner product via intensity_measure") {
  Fixture f = make_fixture(3, 6, 4, 1, 21);
  Rng rng(4);
  std::vector<double> beta(f.data.grid.p());
  for (auto& v : beta) v = rng.normal();
  for (int i = 0; i < f.data.n; ++i) {
    const auto mi = intensity_measure(f.data.M_row(i), f.data.grid);
    const double via_measure =
        simd::dot(beta.data(), mi.data(), beta.size());
    const double direct =
        simd::dot(beta.data(), f.data.M_row(i).data(), beta.size()) /
        f.data.grid.p();
    CHECK(via_measure == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("outcome_logpost basics") {
  Fixture f = make_fixture(8, 4, 4, 2, 31);
  // zero residuals: set Y to the model mean with all coefficients zero
  OutcomeState s;
  s.theta_beta.assign(f.bases.size(), {});
  for (std::size_t b = 0; b < f.bases.size(); ++b)
    s.theta_beta[b].assign(f.bases[b].L, 0.0);
  s.gamma = 0.0;
  s.xi.assign(f.data.q, 0.0);
  s.sigma2_Y = 1.7;
  s.sigma2_beta = 1.0;
  s.nu_beta = 0.3;
  for (auto& y : f.data.Y) y = 0.0;

  const PriorConfig flat = PriorConfig::flat();
  SUBCASE("gaussian log density at the mean") {
    CHECK(outcome_logpost(s, f.data, f.bases, flat) ==
          doctest::Approx(-0.5 * f.data.n * (kLog2Pi + std::log(1.7)))
              .epsilon(1e-12));
  }
  SUBCASE("doubling the variance at zero residuals") {
    const double lp1 = outcome_logpost(s, f.data, f.bases, flat);
    s.sigma2_Y *= 2.0;
    const double lp2 = outcome_logpost(s, f.data, f.bases, flat);
    CHECK(lp1 - lp2 ==
          doctest::Approx(0.5 * f.data.n * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("invalid variance") {
    s.sigma2_Y = 0.0;
    CHECK_THROWS_AS(outcome_logpost(s, f.data, f.bases, flat),
                    std::invalid_argument);
  }
}

TEST_CASE("outcome_logpost matches the direct-summation oracle") {
  Fixture f = make_fixture(5, 4, 2, 2, 77);
  Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const OutcomeState s = random_outcome_state(f, 0.4, rng);
    const PriorConfig prior;
    CHECK(outcome_logpost(s, f.data, f.bases, prior) ==
          doctest::Approx(outcome_logpost_oracle(s, f.data, f.bases, prior))
              .epsilon(1e-10));
    const PriorConfig flat = PriorConfig::flat();
    CHECK(outcome_logpost(s, f.data, f.bases, flat) ==
          doctest::Approx(outcome_logpost_oracle(s, f.data, f.bases, flat))
              .epsilon(1e-10));
  }
}

TEST_CASE("translation property of the outcome likelihood") {
  // adding c to Y and c to the mean via gamma (X == 1) leaves it unchanged
  Fixture f = make_fixture(7, 4, 2, 1, 55);
  for (auto& x : f.data.X) x = 1.0;
  Rng rng(12);
  OutcomeState s = random_outcome_state(f, 0.2, rng);
  const PriorConfig flat = PriorConfig::flat();
  const double lp1 = outcome_logpost(s, f.data, f.bases, flat);
  const double c = 3.21;
  for (auto& y : f.data.Y) y += c;
  s.gamma += c;
  const double lp2 = outcome_logpost(s, f.data, f.bases, flat);
  CHECK(lp1 == doctest::Approx(lp2).epsilon(1e-12));
}

TEST_CASE("outcome_grad_theta") {
  SUBCASE("zero state, zero data, positive nu gives the zero gradient") {
    Fixture f = make_fixture(6, 4, 2, 1, 99);
    for (auto& y : f.data.Y) y = 0.0;
    for (auto& m : f.data.M) m = 0.0;
    OutcomeState s;
    s.theta_beta.assign(f.bases.size(), {});
    for (std::size_t b = 0; b < f.bases.size(); ++b)
      s.theta_beta[b].assign(f.bases[b].L, 0.0);
    s.xi.assign(f.data.q, 0.0);
    s.nu_beta = 0.5;
    for (int r = 1; r <= 2; ++r) {
      const auto g = outcome_grad_theta(s, f.data, f.bases, r);
      for (const double v : g) CHECK(v == 0.0);
    }
  }

  SUBCASE("finite differences away from kinks") {
    Fixture f = make_fixture(6, 4, 4, 2, 13);
    Rng rng(14);
    const PriorConfig prior;
    int checked = 0;
    for (int rep = 0; rep < 40 && checked < 25; ++rep) {
      OutcomeState s = random_outcome_state(f, 0.35, rng);
      // skip states with a latent value near the threshold
      bool near_kink = false;
      for (std::size_t b = 0; b < f.bases.size(); ++b) {
        const auto latent = eval_region_latent(f.bases[b], s.theta_beta[b]);
        for (const double v : latent)
          if (std::fabs(std::fabs(v) - s.nu_beta) < 1e-4) near_kink = true;
      }
      if (near_kink) continue;
      ++checked;
      for (int r = 1; r <= 2; ++r) {
        const int b = r - 1;
        const auto grad = outcome_grad_theta(s, f.data, f.bases, r, prior);
        auto fd = oracles::finite_diff_grad(
            [&](const std::vector<double>& th) {
              OutcomeState s2 = s;
              s2.theta_beta[b] = th;
              return outcome_logpost(s2, f.data, f.bases, prior);
            },
            s.theta_beta[b]);
        for (std::size_t l = 0; l < grad.size(); ++l) {
          const double scale = std::max(1.0, std::fabs(fd[l]));
          CHECK(std::fabs(grad[l] - fd[l]) / scale < 1e-5);
        }
      }
    }
    CHECK(checked >= 20);
  }

  SUBCASE("nu = 0 reduces to the linear-model gradient") {
    Fixture f = make_fixture(9, 4, 2, 1, 42);
    Rng rng(15);
    OutcomeState s = random_outcome_state(f, 0.0, rng);
    const PriorConfig prior;
    const int p = f.data.grid.p();
    for (int r = 1; r <= 2; ++r) {
      const int b = r - 1;
      const auto grad = outcome_grad_theta(s, f.data, f.bases, r, prior);
      // closed form: W' e / s2 - D^-1 theta / s2b with W = (M/p) Q_r
      const auto beta = eval_field(f.bases, s.theta_beta, 0.0, f.data.grid);
      const auto& vox = f.data.grid.region_voxels[r - 1];
      std::vector<double> expected(f.bases[b].L, 0.0);
      for (int i = 0; i < f.data.n; ++i) {
        double e = f.data.Y[i] - s.gamma * f.data.X[i];
        for (int k = 0; k < f.data.q; ++k)
          e -= s.xi[k] * f.data.C[static_cast<std::size_t>(i) * f.data.q + k];
        for (int j = 0; j < p; ++j)
          e -= beta[j] * f.data.M[static_cast<std::size_t>(i) * p + j] / p;
        for (std::size_t j = 0; j < vox.size(); ++j) {
          const double w =
              f.data.M[static_cast<std::size_t>(i) * p + vox[j]] / p;
          for (int l = 0; l < f.bases[b].L; ++l)
            expected[l] += e * w *
                           f.bases[b]
                               .Q[static_cast<std::size_t>(j) * f.bases[b].L +
                                  l] /
                           s.sigma2_Y;
        }
      }
      for (int l = 0; l < f.bases[b].L; ++l)
        expected[l] -=
            s.theta_beta[b][l] / (s.sigma2_beta * f.bases[b].eigvals[l]);
      for (int l = 0; l < f.bases[b].L; ++l)
        CHECK(grad[l] == doctest::Approx(expected[l]).epsilon(1e-8));
    }
  }
}

TEST_CASE("mediator_logpost basics and oracle") {
  Fixture f = make_fixture(5, 4, 2, 2, 101);
  SUBCASE("all parameters zero, M zero") {
    for (auto& m : f.data.M) m = 0.0;
    MediatorState s;
    s.theta_alpha.assign(f.bases.size(), {});
    for (std::size_t b = 0; b < f.bases.size(); ++b)
      s.theta_alpha[b].assign(f.bases[b].L, 0.0);
    s.theta_zeta.assign(f.data.q, s.theta_alpha);
    s.theta_eta.assign(f.data.n, s.theta_alpha);
    s.sigma2_M = 2.2;
    s.nu_alpha = 0.1;
    const double np = static_cast<double>(f.data.n) * f.data.grid.p();
    CHECK(mediator_logpost(s, f.data, f.bases, PriorConfig::flat()) ==
          doctest::Approx(-0.5 * np * (kLog2Pi + std::log(2.2)))
              .epsilon(1e-12));
  }
  SUBCASE("likelihood is invariant to a constant shifted into eta") {
    // adding c to every M and the same c to the mean through eta leaves the
    // likelihood unchanged; use a basis whose first column is constant? not
    // guaranteed, so shift through the latent eta field directly by probing
    // the residual invariance with matched datasets
    Rng rng(3);
    MediatorState s = random_mediator_state(f, 0.2, rng);
    const PriorConfig flat = PriorConfig::flat();
    const double lp1 = mediator_logpost(s, f.data, f.bases, flat);
    // shift M by the field generated by bumping eta coefficients of subject 0
    MediatorState s2 = s;
    s2.theta_eta[0][0][0] += 1.25;
    const auto field1 = eval_field(f.bases, s.theta_eta[0], 0.0, f.data.grid);
    const auto field2 = eval_field(f.bases, s2.theta_eta[0], 0.0, f.data.grid);
    MediationDataset d2 = f.data;
    const int p = f.data.grid.p();
    for (int j = 0; j < p; ++j)
      d2.M[j] += field2[j] - field1[j];  // subject 0 row
    const double lp2 = mediator_logpost(s2, d2, f.bases, flat);
    CHECK(lp1 == doctest::Approx(lp2).epsilon(1e-10));
  }
  SUBCASE("direct-summation oracle") {
    Rng rng(5);
    for (int rep = 0; rep < 5; ++rep) {
      const MediatorState s = random_mediator_state(f, 0.3, rng);
      const int p = f.data.grid.p();
      const auto alpha = eval_field(f.bases, s.theta_alpha, 0.3, f.data.grid);
      std::vector<std::vector<double>> zeta(f.data.q);
      for (int k = 0; k < f.data.q; ++k)
        zeta[k] = eval_field(f.bases, s.theta_zeta[k], 0.0, f.data.grid);
      double expected = 0.0;
      for (int i = 0; i < f.data.n; ++i) {
        const auto eta = eval_field(f.bases, s.theta_eta[i], 0.0, f.data.grid);
        for (int j = 0; j < p; ++j) {
          double mu = alpha[j] * f.data.X[i] + eta[j];
          for (int k = 0; k < f.data.q; ++k)
            mu += zeta[k][j] *
                  f.data.C[static_cast<std::size_t>(i) * f.data.q + k];
          const double e = f.data.M[static_cast<std::size_t>(i) * p + j] - mu;
          expected += -0.5 * (kLog2Pi + std::log(s.sigma2_M)) -
                      0.5 * e * e / s.sigma2_M;
        }
      }
      CHECK(mediator_logpost(s, f.data, f.bases, PriorConfig::flat()) ==
            doctest::Approx(expected).epsilon(1e-10));
    }
  }
}

TEST_CASE("mediator_grad_theta_alpha") {
  Fixture f = make_fixture(6, 4, 2, 2, 202);
  Rng rng(6);
  const PriorConfig prior;

  SUBCASE("zero exposure leaves only the prior term") {
    for (auto& x : f.data.X) x = 0.0;
    MediatorState s = random_mediator_state(f, 0.2, rng);
    for (int r = 1; r <= 2; ++r) {
      const int b = r - 1;
      const auto grad = mediator_grad_theta_alpha(s, f.data, f.bases, r, prior);
      for (int l = 0; l < f.bases[b].L; ++l)
        CHECK(grad[l] ==
              doctest::Approx(-s.theta_alpha[b][l] /
                              (s.sigma2_alpha * f.bases[b].eigvals[l]))
                  .epsilon(1e-10));
    }
  }

  SUBCASE("finite differences away from kinks") {
    int checked = 0;
    for (int rep = 0; rep < 30 && checked < 12; ++rep) {
      MediatorState s = random_mediator_state(f, 0.35, rng);
      bool near_kink = false;
      for (std::size_t b = 0; b < f.bases.size(); ++b) {
        const auto latent = eval_region_latent(f.bases[b], s.theta_alpha[b]);
        for (const double v : latent)
          if (std::fabs(std::fabs(v) - s.nu_alpha) < 1e-4) near_kink = true;
      }
      if (near_kink) continue;
      ++checked;
      for (int r = 1; r <= 2; ++r) {
        const int b = r - 1;
        const auto grad =
            mediator_grad_theta_alpha(s, f.data, f.bases, r, prior);
        auto fd = oracles::finite_diff_grad(
            [&](const std::vector<double>& th) {
              MediatorState s2 = s;
              s2.theta_alpha[b] = th;
              return mediator_logpost(s2, f.data, f.bases, prior);
            },
            s.theta_alpha[b]);
        for (std::size_t l = 0; l < grad.size(); ++l) {
          const double scale = std::max(1.0, std::fabs(fd[l]));
          CHECK(std::fabs(grad[l] - fd[l]) / scale < 1e-5);
        }
      }
    }
    CHECK(checked >= 10);
  }
}

TEST_CASE("eta constraint residual measure") {
  Fixture f = make_fixture(6, 4, 2, 1, 303);
  Rng rng(7);
  MediatorState s = random_mediator_state(f, 0.2, rng);
  CHECK(eta_constraint_residual(s, f.data) > 0.0);
  for (auto& eta : s.theta_eta)
    for (auto& block : eta)
      for (auto& v : block) v = 0.0;
  CHECK(eta_constraint_residual(s, f.data) == 0.0);
}

TEST_CASE("dataset validation") {
  Fixture f = make_fixture(5, 4, 2, 2, 404);
  CHECK_NOTHROW(f.data.validate());
  MediationDataset bad = f.data;
  bad.Y[0] = std::nan("");
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  MediationDataset small = f.data;
  small.n = 3;  // below q + 2 with q = 2... n=3 < 4
  small.Y.resize(3);
  small.X.resize(3);
  small.C.resize(6);
  small.M.resize(static_cast<std::size_t>(3) * f.data.grid.p());
  CHECK_THROWS_AS(small.validate(), std::invalid_argument);
}
