#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "bima/covkernel.hpp"
#include "bima/grid.hpp"
#include "bima/mediation.hpp"
#include "bima/model.hpp"
#include "bima/rng.hpp"

namespace bima {

enum class PatternKind { Dense, Sparse, Custom };

// Synthetic mediation design. The default grid is 20x20 in 4 regions;
// 64x64 in 4 regions matches the high-dimensional setting.
struct SimDesign {
  int n = 200;
  int grid_nx = 20, grid_ny = 20;
  int grid_rx = 2, grid_ry = 2;
  PatternKind pattern = PatternKind::Sparse;
  std::vector<double> custom_alpha0, custom_beta0;  // Pattern::Custom
  double sigma_Y = 0.1;
  double sigma_M = 1.0;
  double nu_true = 0.5;
  double gamma0 = 1.0;
  std::vector<double> xi0 = {0.5, -0.5};
  double eta_scale = 1.0;
  double zeta_scale = 0.5;
  int q = 2;
  std::uint64_t seed = 0;
  bool x_binary = false;
  double dense_frac = 0.25;   // target support fraction per region
  double sparse_frac = 0.06;
  KernelSpec kernel = KernelSpec::make_matern(0.2, 2.0);
  double basis_frac = 0.2;  // truncation for the generated zeta/eta surfaces

  VoxelGrid make_grid() const { return make_grid_2d(grid_nx, grid_ny, grid_rx, grid_ry); }
  void validate() const;
};

struct SimTruth {
  std::vector<double> alpha0, beta0, svme0;  // p
  double gamma0 = 0.0;
  std::vector<double> xi0;
  std::vector<double> eta;  // n x p individual effect field values
  std::vector<int> support() const;  // voxels with svme0 != 0
};

// Sparse piecewise-smooth truth fields: one disk per region, amplitudes at
// least 2 nu_true on the support, exact zero outside, alpha and beta disks
// overlapping on at least half of each support.
std::pair<std::vector<double>, std::vector<double>> make_pattern(
    const VoxelGrid& grid, const SimDesign& design, Rng& rng);

// Draws a full dataset from the two structural models; the generated
// individual effects are residualized against (X, C) coefficient-wise so
// the identifiability constraint holds exactly in the truth.
std::pair<MediationDataset, SimTruth> generate(const SimDesign& design);

struct ReplicationScore {
  double fdr = 0.0, tpr = 0.0, acc = 0.0, mse_activation = 0.0;
};
ReplicationScore score_one(const MediationReport& report,
                           const SimTruth& truth);

// Mean (sd) across replications, all values scaled by 100.
struct ScoreSummary {
  double fdr_mean = 0, fdr_sd = 0;
  double tpr_mean = 0, tpr_sd = 0;
  double acc_mean = 0, acc_sd = 0;
  double mse_mean = 0, mse_sd = 0;
  int replications = 0;
};
ScoreSummary score_replication(const std::vector<MediationReport>& reports,
                               const std::vector<SimTruth>& truths);

}  // namespace bima
