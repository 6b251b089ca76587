#pragma once

#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "bima/basis.hpp"
#include "bima/grid.hpp"
#include "bima/sampler.hpp"

namespace bima {

struct RegionEffectRow {
  int region = 0;
  double nie = 0.0;      // (1/p) sum over region voxels
  double nie_pos = 0.0;  // positive part
  double nie_neg = 0.0;  // negative part
  double avg_pip = 0.0;
  int n_active = 0;
};

struct MediationReport {
  std::vector<double> svme_mean;           // p
  std::vector<double> svme_lo, svme_hi;    // 95% equal-tailed
  std::vector<double> pip;                 // p
  std::vector<double> svme_selected_mean;  // PIP-gated posterior mean map
  double nie_mean = 0.0, nie_lo = 0.0, nie_hi = 0.0;
  double nde_mean = 0.0, nde_lo = 0.0, nde_hi = 0.0;
  std::vector<int> selected;  // ascending voxel indices
  double threshold = 0.0;
  std::optional<double> achieved_fdr;
  std::vector<RegionEffectRow> region_table;
  double x = 1.0, xprime = 0.0;
};

// Per-draw SVME fields alpha_t(s) beta_t(s), T x p. Traces are paired by
// draw index after truncating the longer one.
std::vector<std::vector<double>> svme_draws(
    const ChainTrace& outcome, std::span<const RegionBasis> outcome_bases,
    const ChainTrace& mediator, std::span<const RegionBasis> mediator_bases,
    const VoxelGrid& grid);

// NIE = (x - x2)/p * sum_j svme[j]; NDE = gamma (x - x2).
std::pair<double, double> nie_nde(std::span<const double> svme_row,
                                  double gamma, double x, double x2,
                                  const VoxelGrid& grid);

// Fraction of draws where the voxel's SVME is exactly nonzero.
double pip(std::span<const double> svme_draws_col);
std::vector<double> pip_all(const std::vector<std::vector<double>>& draws);

struct FdrSelection {
  double threshold = 0.0;
  std::vector<int> selected;
  std::optional<double> achieved_fdr;
};

// With truth: smallest PIP threshold whose realized FDR meets the target
// (falling back to the most selective nonempty rule). Without truth: fixed
// threshold t0.
FdrSelection select_fdr(std::span<const double> pip,
                        const std::optional<std::vector<int>>& truth_support,
                        double target_fdr, double fixed_t0 = 0.1,
                        bool use_fixed = false);

std::vector<RegionEffectRow> region_summary(std::span<const double> svme_map,
                                            std::span<const double> pip,
                                            const std::vector<int>& selected,
                                            const VoxelGrid& grid);

struct SelectionMetrics {
  double fdr = 0.0, tpr = 0.0, acc = 0.0;
};
SelectionMetrics selection_metrics(const std::vector<int>& selected,
                                   const std::vector<int>& truth_support,
                                   int p);

struct ReportOptions {
  double x = 1.0;
  double xprime = 0.0;
  bool fdr_mode = false;    // true: tune threshold against truth
  double target_fdr = 0.1;
  double pip_t0 = 0.1;      // fixed-threshold mode
  std::optional<std::vector<int>> truth_support;
};

MediationReport build_report(const ChainTrace& outcome,
                             std::span<const RegionBasis> outcome_bases,
                             const ChainTrace& mediator,
                             std::span<const RegionBasis> mediator_bases,
                             const VoxelGrid& grid,
                             const ReportOptions& options);

}  // namespace bima
