#pragma once

#include <span>
#include <vector>

#include "bima/basis.hpp"
#include "bima/grid.hpp"

namespace bima {

// T_nu(x) = (x - sgn(x) nu) I(|x| > nu)
inline double soft_threshold(double x, double nu) {
  const double a = (x < 0.0 ? -x : x) - nu;
  if (a <= 0.0) return 0.0;
  return x < 0.0 ? -a : a;
}

// Piecewise subgradient dT_nu(x) = I(|x| >= nu); the boundary carries 1.
inline double soft_threshold_grad(double x, double nu) {
  return (x < 0.0 ? -x : x) >= nu ? 1.0 : 0.0;
}

// Per-region coefficient vectors for one spatially varying field.
using RegionCoeffs = std::vector<std::vector<double>>;

// Latent surface Q_r theta_r on one region (length p_r).
std::vector<double> eval_region_latent(const RegionBasis& basis,
                                       std::span<const double> theta);

// Full-grid field values T_nu(Q theta) in voxel order.
std::vector<double> eval_field(std::span<const RegionBasis> bases,
                               const RegionCoeffs& theta, double nu,
                               const VoxelGrid& grid);

// Sparse field cache: values plus the latent surface it came from.
struct ThresholdedField {
  double nu = 0.0;
  std::vector<double> values;  // length p, exact zeros off-support
  std::vector<double> latent;  // length p

  static ThresholdedField build(std::span<const RegionBasis> bases,
                                const RegionCoeffs& theta, double nu,
                                const VoxelGrid& grid);
};

}  // namespace bima
