#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "bima/basis.hpp"
#include "bima/sampler.hpp"
#include "bima/simgen.hpp"

using namespace bima;

TEST_CASE("make_pattern support fractions and amplitude floor") {
  SimDesign design;
  design.grid_nx = 20;
  design.grid_ny = 20;
  design.nu_true = 0.5;
  const VoxelGrid grid = design.make_grid();

  SUBCASE("sparse support fraction in [0.04, 0.08]") {
    design.pattern = PatternKind::Sparse;
    Rng rng(1);
    const auto [alpha0, beta0] = make_pattern(grid, design, rng);
    int support = 0;
    for (const double v : beta0)
      if (v != 0.0) ++support;
    const double frac = static_cast<double>(support) / grid.p();
    CHECK(frac >= 0.04);
    CHECK(frac <= 0.08);
  }
  SUBCASE("dense covers more than sparse") {
    design.pattern = PatternKind::Dense;
    Rng rng(1);
    const auto [alpha0, beta0] = make_pattern(grid, design, rng);
    int support = 0;
    for (const double v : beta0)
      if (v != 0.0) ++support;
    const double frac = static_cast<double>(support) / grid.p();
    CHECK(frac >= 0.18);
    CHECK(frac <= 0.35);
  }
  SUBCASE("amplitude floor of 2 nu inside both supports") {
    design.pattern = PatternKind::Sparse;
    Rng rng(2);
    const auto [alpha0, beta0] = make_pattern(grid, design, rng);
    for (const double v : alpha0)
      if (v != 0.0) CHECK(std::fabs(v) >= 2.0 * design.nu_true - 1e-12);
    for (const double v : beta0)
      if (v != 0.0) CHECK(std::fabs(v) >= 2.0 * design.nu_true - 1e-12);
  }
  SUBCASE("alpha and beta supports overlap on at least half of each") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      Rng rng(seed);
      design.pattern = PatternKind::Sparse;
      const auto [alpha0, beta0] = make_pattern(grid, design, rng);
      int na = 0, nb = 0, nboth = 0;
      for (int j = 0; j < grid.p(); ++j) {
        const bool a = alpha0[j] != 0.0;
        const bool b = beta0[j] != 0.0;
        na += a;
        nb += b;
        nboth += a && b;
      }
      CHECK(nboth >= na / 2);
      CHECK(nboth >= nb / 2);
    }
  }
  SUBCASE("deterministic in the seed") {
    Rng r1(7), r2(7);
    const auto p1 = make_pattern(grid, design, r1);
    const auto p2 = make_pattern(grid, design, r2);
    CHECK(p1.first == p2.first);
    CHECK(p1.second == p2.second);
  }
}

TEST_CASE("generate") {
  SimDesign design;
  design.n = 50;
  design.seed = 11;

  SUBCASE("noiseless identity") {
    SimDesign quiet = design;
    quiet.sigma_Y = 0.0;
    quiet.sigma_M = 0.0;
    quiet.eta_scale = 0.0;
    auto [data, truth] = generate(quiet);
    const int p = data.grid.p();
    for (int i = 0; i < data.n; ++i) {
      double y = quiet.gamma0 * data.X[i];
      for (int k = 0; k < quiet.q; ++k)
        y += quiet.xi0[k] * data.C[static_cast<std::size_t>(i) * quiet.q + k];
      for (int j = 0; j < p; ++j)
        y += truth.beta0[j] * data.M[static_cast<std::size_t>(i) * p + j] / p;
      CHECK(data.Y[i] == doctest::Approx(y).epsilon(1e-12));
    }
    // eta identically zero
    for (const double v : truth.eta) CHECK(v == 0.0);
  }
  SUBCASE("generated eta satisfies the orthogonality constraint") {
    auto [data, truth] = generate(design);
    const int p = data.grid.p();
    // field-level residual: sum_i X_i eta_i(s_j) = 0 for all j (the
    // coefficients are residualized, and fields are linear in them)
    for (int j = 0; j < p; j += 17) {
      double sx = 0.0;
      std::vector<double> sc(design.q, 0.0);
      for (int i = 0; i < data.n; ++i) {
        const double e = truth.eta[static_cast<std::size_t>(i) * p + j];
        sx += data.X[i] * e;
        for (int k = 0; k < design.q; ++k)
          sc[k] += data.C[static_cast<std::size_t>(i) * design.q + k] * e;
      }
      CHECK(std::fabs(sx) < 1e-8);
      for (const double v : sc) CHECK(std::fabs(v) < 1e-8);
    }
  }
  SUBCASE("mediator noise variance moment check") {
    SimDesign big = design;
    big.n = 300;
    big.grid_nx = 20;
    big.grid_ny = 20;
    big.sigma_M = 1.5;
    big.eta_scale = 0.0;
    big.zeta_scale = 0.0;
    auto [data, truth] = generate(big);
    const int p = data.grid.p();
    // residuals M - alpha0 X are pure noise here
    double ss = 0.0;
    for (int i = 0; i < data.n; ++i)
      for (int j = 0; j < p; ++j) {
        const double e = data.M[static_cast<std::size_t>(i) * p + j] -
                         truth.alpha0[j] * data.X[i];
        ss += e * e;
      }
    const double var = ss / (static_cast<double>(data.n) * p);
    CHECK(var == doctest::Approx(1.5 * 1.5).epsilon(0.02));
  }
  SUBCASE("bit-identical reproduction") {
    auto [d1, t1] = generate(design);
    auto [d2, t2] = generate(design);
    CHECK(d1.Y == d2.Y);
    CHECK(d1.M == d2.M);
    CHECK(t1.alpha0 == t2.alpha0);
    CHECK(t1.eta == t2.eta);
  }
  SUBCASE("svme truth is the product and support is rich") {
    auto [data, truth] = generate(design);
    for (std::size_t j = 0; j < truth.svme0.size(); ++j)
      CHECK(truth.svme0[j] ==
            doctest::Approx(truth.alpha0[j] * truth.beta0[j]));
    CHECK(!truth.support().empty());
  }
  SUBCASE("binary exposure mode") {
    SimDesign bin = design;
    bin.x_binary = true;
    auto [data, truth] = generate(bin);
    for (const double x : data.X) CHECK((x == 0.0 || x == 1.0));
  }
}

TEST_CASE("truth self-consistency under refit at nu_true") {
  // noiseless data refit with nu = nu_true recovers the truth up to basis
  // truncation error (10% relative L2 on the svme field)
  SimDesign design;
  design.n = 150;
  design.grid_nx = 20;
  design.grid_ny = 20;
  design.sigma_Y = 1e-3;
  design.sigma_M = 1e-3;
  design.eta_scale = 0.0;
  design.zeta_scale = 0.0;
  design.seed = 13;
  design.pattern = PatternKind::Dense;
  auto [data, truth] = generate(design);
  const auto bases =
      build_bases(data.grid, design.kernel, 0.9, design.basis_frac);

  // project the latent (shifted) truth onto the basis and re-evaluate
  auto refit_field = [&](const std::vector<double>& field0, double nu) {
    RegionCoeffs theta(bases.size());
    for (std::size_t b = 0; b < bases.size(); ++b) {
      const RegionBasis& B = bases[b];
      const auto& vox = data.grid.region_voxels[B.region - 1];
      theta[b].assign(B.L, 0.0);
      for (int j = 0; j < B.p_r; ++j) {
        double latent = field0[vox[j]];
        if (latent > 0.0)
          latent += nu;
        else if (latent < 0.0)
          latent -= nu;
        for (int l = 0; l < B.L; ++l)
          theta[b][l] += latent * B.Q[static_cast<std::size_t>(j) * B.L + l];
      }
    }
    return eval_field(bases, theta, nu, data.grid);
  };
  const auto alpha_hat = refit_field(truth.alpha0, design.nu_true);
  const auto beta_hat = refit_field(truth.beta0, design.nu_true);
  double num = 0.0, den = 0.0;
  for (int j = 0; j < data.grid.p(); ++j) {
    const double e = alpha_hat[j] * beta_hat[j] - truth.svme0[j];
    num += e * e;
    den += truth.svme0[j] * truth.svme0[j];
  }
  CHECK(std::sqrt(num / den) <= 0.10);
}

TEST_CASE("score_replication") {
  SUBCASE("perfect recovery scores 0/100/100/0") {
    SimTruth truth;
    truth.alpha0 = {1.0, 0.0, 2.0, 0.0};
    truth.beta0 = {1.0, 0.0, 1.0, 0.0};
    truth.svme0 = {1.0, 0.0, 2.0, 0.0};
    MediationReport report;
    report.svme_selected_mean = truth.svme0;
    report.svme_mean = truth.svme0;
    report.selected = {0, 2};
    const auto summary = score_replication({report}, {truth});
    CHECK(summary.fdr_mean == 0.0);
    CHECK(summary.tpr_mean == 100.0);
    CHECK(summary.acc_mean == 100.0);
    CHECK(summary.mse_mean == 0.0);
  }
  SUBCASE("hand-counted toy") {
    SimTruth truth;
    truth.alpha0 = truth.beta0 = truth.svme0 =
        {1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    MediationReport report;
    report.svme_mean = report.svme_selected_mean =
        {1.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    report.selected = {0, 2};
    const auto score = score_one(report, truth);
    CHECK(score.fdr == doctest::Approx(0.5));
    CHECK(score.tpr == doctest::Approx(0.5));
    CHECK(score.acc == doctest::Approx(0.8));
    // mse over the truth support {0, 1}: (1-1)^2 and (0-1)^2 -> 0.5
    CHECK(score.mse_activation == doctest::Approx(0.5));
  }
  SUBCASE("length mismatch throws") {
    CHECK_THROWS_AS(score_replication({}, {}), std::invalid_argument);
  }
}
