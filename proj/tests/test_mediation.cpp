#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "bima/mediation.hpp"
#include "bima/rng.hpp"
#include "bima/stgp.hpp"

using namespace bima;

namespace {

// minimal identity-like basis fixture: each region one voxel pair with a
// trivially orthonormal 2x2 identity basis, so theta == latent field
struct TinyFixture {
  VoxelGrid grid;
  std::vector<RegionBasis> bases;
  int L_total = 0;
};

TinyFixture make_tiny(int p) {
  TinyFixture f;
  f.grid = make_grid_1d(p);
  RegionBasis b;
  b.region = 1;
  b.p_r = p;
  b.L = p;
  b.Q.assign(static_cast<std::size_t>(p) * p, 0.0);
  for (int j = 0; j < p; ++j) b.Q[static_cast<std::size_t>(j) * p + j] = 1.0;
  b.eigvals.assign(p, 1.0);
  b.cutoff_frac = 1.0;
  f.bases = {b};
  f.L_total = p;
  return f;
}

ChainTrace make_trace(const std::string& model,
                      const std::vector<std::vector<double>>& theta,
                      double nu, const std::vector<double>& gamma = {}) {
  ChainTrace t;
  t.model = model;
  t.nu = nu;
  t.L = {static_cast<int>(theta.front().size())};
  t.regions = {1};
  t.theta = theta;
  t.gamma = gamma;
  if (model == "outcome" && gamma.empty())
    t.gamma.assign(theta.size(), 0.0);
  t.xi.assign(theta.size(), {});
  return t;
}

}  // namespace

TEST_CASE("svme_draws is the elementwise field product") {
  TinyFixture f = make_tiny(4);
  // nu = 0.5; latent thetas give fields after thresholding
  ChainTrace outcome = make_trace(
      "outcome", {{1.5, 0.2, -1.0, 0.0}, {0.0, 0.0, 0.0, 0.0}}, 0.5,
      {2.0, 1.0});
  ChainTrace mediator =
      make_trace("mediator", {{2.5, 1.0, 1.0, 3.0}, {1.0, 1.0, 1.0, 1.0}},
                 0.5);
  const auto draws = svme_draws(outcome, f.bases, mediator, f.bases, f.grid);
  REQUIRE(draws.size() == 2);
  // draw 0: beta = (1.0, 0, -0.5, 0), alpha = (2.0, 0.5, 0.5, 2.5)
  CHECK(draws[0][0] == doctest::Approx(2.0));
  CHECK(draws[0][1] == 0.0);
  CHECK(draws[0][2] == doctest::Approx(-0.25));
  CHECK(draws[0][3] == 0.0);
  // draw 1: beta identically zero
  for (const double v : draws[1]) CHECK(v == 0.0);

  // single-draw recomputation oracle through eval_field
  const auto beta =
      eval_field(f.bases, {{1.5, 0.2, -1.0, 0.0}}, 0.5, f.grid);
  const auto alpha =
      eval_field(f.bases, {{2.5, 1.0, 1.0, 3.0}}, 0.5, f.grid);
  for (int j = 0; j < 4; ++j)
    CHECK(draws[0][j] == doctest::Approx(alpha[j] * beta[j]));
}

TEST_CASE("constant fields multiply") {
  TinyFixture f = make_tiny(3);
  ChainTrace outcome = make_trace("outcome", {{3.0, 3.0, 3.0}}, 0.0, {0.5});
  ChainTrace mediator = make_trace("mediator", {{2.0, 2.0, 2.0}}, 0.0);
  const auto draws = svme_draws(outcome, f.bases, mediator, f.bases, f.grid);
  for (const double v : draws[0]) CHECK(v == doctest::Approx(6.0));
}

TEST_CASE("empty traces raise") {
  TinyFixture f = make_tiny(2);
  ChainTrace outcome = make_trace("outcome", {{0.0, 0.0}}, 0.0, {0.0});
  ChainTrace mediator;
  mediator.model = "mediator";
  mediator.nu = 0.0;
  mediator.L = {2};
  CHECK_THROWS_AS(svme_draws(outcome, f.bases, mediator, f.bases, f.grid),
                  std::invalid_argument);
}

TEST_CASE("nie_nde") {
  const VoxelGrid grid = make_grid_1d(4);
  const std::vector<double> svme{1.0, 2.0, -0.5, 0.5};
  SUBCASE("x == x2 gives zero") {
    const auto [nie, nde] = nie_nde(svme, 3.0, 1.0, 1.0, grid);
    CHECK(nie == 0.0);
    CHECK(nde == 0.0);
  }
  SUBCASE("constant field with unit contrast") {
    const std::vector<double> c{2.5, 2.5, 2.5, 2.5};
    const auto [nie, nde] = nie_nde(c, 0.0, 1.0, 0.0, grid);
    CHECK(nie == doctest::Approx(2.5));
    CHECK(nde == 0.0);
  }
  SUBCASE("general values") {
    const auto [nie, nde] = nie_nde(svme, 0.27, 2.0, -1.0, grid);
    CHECK(nie == doctest::Approx(3.0 / 4.0 * 3.0));
    CHECK(nde == doctest::Approx(0.81));
  }
}

TEST_CASE("pip") {
  CHECK(pip(std::vector<double>{0.0, 0.0, 1.2, -0.3}) == doctest::Approx(0.5));
  CHECK(pip(std::vector<double>{0.0, 0.0}) == 0.0);
  CHECK(pip(std::vector<double>{1.0, -2.0, 0.5}) == 1.0);
  CHECK_THROWS_AS(pip(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("select_fdr") {
  SUBCASE("hand-counted 2x2") {
    // truth {1,2}, selection {1,3}: FDR 1/2, TPR 1/2
    const SelectionMetrics m = selection_metrics({1, 3}, {1, 2}, 5);
    CHECK(m.fdr == doctest::Approx(0.5));
    CHECK(m.tpr == doctest::Approx(0.5));
    CHECK(m.acc == doctest::Approx(3.0 / 5.0));
  }
  SUBCASE("indicator pips achieve FDR 0, TPR 1") {
    const std::vector<double> pips{0.0, 1.0, 1.0, 0.0, 0.0};
    const std::vector<int> truth{1, 2};
    const auto sel = select_fdr(pips, truth, 0.1);
    CHECK(sel.selected == truth);
    CHECK(*sel.achieved_fdr == 0.0);
    const SelectionMetrics m = selection_metrics(sel.selected, truth, 5);
    CHECK(m.tpr == 1.0);
  }
  SUBCASE("brute-force threshold scan agreement") {
    Rng rng(31);
    for (int rep = 0; rep < 50; ++rep) {
      const int p = 30;
      std::vector<double> pips(p);
      for (auto& v : pips)
        v = std::round(rng.uniform() * 10.0) / 10.0;  // heavy ties
      std::vector<int> truth;
      for (int j = 0; j < p; ++j)
        if (rng.uniform() < 0.3) truth.push_back(j);
      const double target = 0.25;
      const auto sel = select_fdr(pips, truth, target);

      // oracle: smallest threshold among unique pip values with fdr <= target,
      // else the largest nonempty
      auto fdr_of = [&](double t) {
        int fp = 0, n_sel = 0;
        for (int j = 0; j < p; ++j)
          if (pips[j] > t) {
            ++n_sel;
            if (!std::binary_search(truth.begin(), truth.end(), j)) ++fp;
          }
        return n_sel == 0 ? std::make_pair(-1.0, 0)
                          : std::make_pair(double(fp) / n_sel, n_sel);
      };
      std::vector<double> uniq(pips);
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      double best_t = -1.0;
      for (const double t : uniq) {
        const auto [fdr, n_sel] = fdr_of(t);
        if (n_sel > 0 && fdr <= target && (best_t < 0.0 || t < best_t))
          best_t = t;
      }
      if (best_t < 0.0) {
        // fallback: most selective nonempty
        for (const double t : uniq) {
          const auto [fdr, n_sel] = fdr_of(t);
          if (n_sel > 0) best_t = std::max(best_t, t);
        }
      }
      if (best_t >= 0.0) {
        CHECK(sel.threshold == doctest::Approx(best_t));
      } else {
        CHECK(sel.selected.empty());
      }
    }
  }
  SUBCASE("selection is nested as the threshold grows") {
    Rng rng(32);
    std::vector<double> pips(40);
    for (auto& v : pips) v = rng.uniform();
    std::vector<int> prev;
    bool first = true;
    for (double t = 0.0; t <= 1.0; t += 0.05) {
      std::vector<int> sel;
      for (int j = 0; j < 40; ++j)
        if (pips[j] > t) sel.push_back(j);
      if (!first)
        CHECK(std::includes(prev.begin(), prev.end(), sel.begin(), sel.end()));
      prev = sel;
      first = false;
    }
  }
  SUBCASE("fixed-threshold mode ignores truth") {
    const std::vector<double> pips{0.05, 0.2, 0.8, 0.0};
    const auto sel = select_fdr(pips, std::nullopt, 0.1, 0.1, true);
    CHECK(sel.threshold == 0.1);
    CHECK(sel.selected == std::vector<int>{1, 2});
    CHECK_FALSE(sel.achieved_fdr.has_value());
  }
}

TEST_CASE("region_summary") {
  SUBCASE("all-zero region") {
    const VoxelGrid grid = make_grid_2d(4, 2, 2, 1);
    std::vector<double> svme(8, 0.0), pips(8, 0.3);
    const auto table = region_summary(svme, pips, {}, grid);
    REQUIRE(table.size() == 2);
    CHECK(table[0].nie == 0.0);
    CHECK(table[0].nie_pos == 0.0);
    CHECK(table[0].nie_neg == 0.0);
    CHECK(table[0].avg_pip == doctest::Approx(0.3));
    CHECK(table[0].n_active == 0);
  }
  SUBCASE("one region, values (+2, -1), p = 2") {
    const VoxelGrid grid = make_grid_1d(2);
    const std::vector<double> svme{2.0, -1.0};
    const std::vector<double> pips{0.9, 0.8};
    const auto table = region_summary(svme, pips, {0, 1}, grid);
    REQUIRE(table.size() == 1);
    CHECK(table[0].nie == doctest::Approx(0.5));
    CHECK(table[0].nie_pos == doctest::Approx(1.0));
    CHECK(table[0].nie_neg == doctest::Approx(-0.5));
    CHECK(table[0].n_active == 2);
    CHECK(table[0].nie ==
          doctest::Approx(table[0].nie_pos + table[0].nie_neg));
  }
}

TEST_CASE("selection_metrics") {
  SUBCASE("perfect selection") {
    const SelectionMetrics m = selection_metrics({1, 2, 3}, {1, 2, 3}, 10);
    CHECK(m.fdr == 0.0);
    CHECK(m.tpr == 1.0);
    CHECK(m.acc == 1.0);
  }
  SUBCASE("empty selection, nonempty truth") {
    const SelectionMetrics m = selection_metrics({}, {0, 1, 2, 3}, 10);
    CHECK(m.fdr == 0.0);
    CHECK(m.tpr == 0.0);
    CHECK(m.acc == doctest::Approx(0.6));
  }
  SUBCASE("random sets against brute-force counting") {
    Rng rng(33);
    for (int rep = 0; rep < 30; ++rep) {
      const int p = 25;
      std::vector<int> sel, truth;
      for (int j = 0; j < p; ++j) {
        if (rng.uniform() < 0.4) sel.push_back(j);
        if (rng.uniform() < 0.3) truth.push_back(j);
      }
      const SelectionMetrics m = selection_metrics(sel, truth, p);
      int tp = 0, fp = 0, fn = 0, tn = 0;
      for (int j = 0; j < p; ++j) {
        const bool in_sel = std::find(sel.begin(), sel.end(), j) != sel.end();
        const bool in_truth =
            std::find(truth.begin(), truth.end(), j) != truth.end();
        tp += in_sel && in_truth;
        fp += in_sel && !in_truth;
        fn += !in_sel && in_truth;
        tn += !in_sel && !in_truth;
      }
      if (!sel.empty()) CHECK(m.fdr == doctest::Approx(double(fp) / sel.size()));
      if (!truth.empty())
        CHECK(m.tpr == doctest::Approx(double(tp) / truth.size()));
      CHECK(m.acc == doctest::Approx(double(tp + tn) / p));
    }
  }
}

TEST_CASE("build_report and the effect decomposition") {
  TinyFixture f = make_tiny(6);
  Rng rng(34);
  const int T = 40;
  std::vector<std::vector<double>> otheta(T), mtheta(T);
  std::vector<double> gammas(T);
  for (int t = 0; t < T; ++t) {
    otheta[t].resize(6);
    mtheta[t].resize(6);
    for (int j = 0; j < 6; ++j) {
      otheta[t][j] = rng.normal();
      mtheta[t][j] = rng.normal();
    }
    gammas[t] = 0.3 + 0.05 * rng.normal();
  }
  ChainTrace outcome = make_trace("outcome", otheta, 0.3, gammas);
  ChainTrace mediator = make_trace("mediator", mtheta, 0.3);

  ReportOptions options;
  options.x = 2.0;
  options.xprime = 0.5;
  const auto report = build_report(outcome, f.bases, mediator, f.bases,
                                   f.grid, options);

  // decomposition: per draw, nie + nde equals the total effect computed
  // independently from the fields
  const auto draws = svme_draws(outcome, f.bases, mediator, f.bases, f.grid);
  for (int t = 0; t < T; ++t) {
    const auto [nie, nde] =
        nie_nde(draws[t], gammas[t], options.x, options.xprime, f.grid);
    double total = gammas[t] * (options.x - options.xprime);
    for (int j = 0; j < 6; ++j)
      total += draws[t][j] * (options.x - options.xprime) / 6.0;
    CHECK(nie + nde == doctest::Approx(total).epsilon(1e-12));
  }

  // report invariant: nie_mean = mean over draws; with x - x' = 1.5 the
  // mean svme identity picks up the contrast factor
  double expected_nie = 0.0;
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < 6; ++j)
      expected_nie += draws[t][j] * 1.5 / 6.0 / T;
  CHECK(report.nie_mean == doctest::Approx(expected_nie).epsilon(1e-12));
  for (int j = 0; j < 6; ++j) {
    CHECK(report.pip[j] >= 0.0);
    CHECK(report.pip[j] <= 1.0);
    CHECK(report.svme_lo[j] <= report.svme_mean[j] + 1e-12);
    CHECK(report.svme_hi[j] >= report.svme_mean[j] - 1e-12);
  }
}

TEST_CASE("pip collapses under a huge threshold on noise") {
  TinyFixture f = make_tiny(5);
  Rng rng(35);
  const int T = 50;
  std::vector<std::vector<double>> otheta(T), mtheta(T);
  for (int t = 0; t < T; ++t) {
    otheta[t].resize(5);
    mtheta[t].resize(5);
    for (int j = 0; j < 5; ++j) {
      otheta[t][j] = rng.normal();
      mtheta[t][j] = rng.normal();
    }
  }
  // nu = 100 x data scale: every latent value is below threshold
  ChainTrace outcome = make_trace("outcome", otheta, 100.0,
                                  std::vector<double>(T, 0.0));
  ChainTrace mediator = make_trace("mediator", mtheta, 100.0);
  const auto draws = svme_draws(outcome, f.bases, mediator, f.bases, f.grid);
  const auto pips = pip_all(draws);
  for (const double v : pips) CHECK(v == 0.0);
}
