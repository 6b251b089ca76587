#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bima/covkernel.hpp"
#include "bima/grid.hpp"

namespace bima {

struct DegenerateKernelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Truncated orthonormal eigenbasis of one region's kernel matrix.
// Q has orthonormal columns (re-orthonormalized with QR after the
// eigendecomposition); eigvals are the matching eigenvalues, nonincreasing
// and strictly positive.
struct RegionBasis {
  int region = 0;  // 1-based
  int p_r = 0;
  int L = 0;
  std::vector<double> Q;        // p_r x L, row-major
  std::vector<double> eigvals;  // length L
  double cutoff_frac = 0.0;     // eigenvalue mass captured / total

  std::span<const double> row(int j) const {
    return {Q.data() + static_cast<std::size_t>(j) * L,
            static_cast<std::size_t>(L)};
  }
};

// Basis with L chosen as the smallest count capturing cutoff_frac of the
// positive eigenvalue mass. Eigenvalues below 1e-12 x max are dropped as
// numerical nulls before the scan. Throws DegenerateKernelError when no
// positive eigenvalue remains.
RegionBasis build_region_basis(const VoxelGrid& grid, int region,
                               const KernelSpec& spec, double cutoff_frac);

// Basis with a fixed component count (capped at the positive-eigenvalue
// rank); cutoff_frac records the mass actually captured.
RegionBasis build_region_basis_count(const VoxelGrid& grid, int region,
                                     const KernelSpec& spec, int count);

// All regions. count_frac_of_region > 0 switches to fixed counts of
// ceil(count_frac_of_region * p_r) per region, the simulation-mode rule.
std::vector<RegionBasis> build_bases(const VoxelGrid& grid,
                                     const KernelSpec& spec,
                                     double cutoff_frac,
                                     double count_frac_of_region = 0.0);

int total_basis_size(std::span<const RegionBasis> bases);

struct FitKernelOptions {
  int max_locations = 500;  // subsample cap for the empirical correlation
  std::uint64_t seed = 0;
};

// Grid search: the (u, rho) whose implied Matern correlation is closest in
// Frobenius distance to the empirical correlation of the given points.
// Ties break toward smaller rho, then smaller u.
std::pair<double, double> fit_kernel_params(
    const std::vector<double>& coords, int dim,
    const std::vector<double>& empirical_corr,
    const std::vector<std::pair<double, double>>& grid_points);

// Empirical correlation of image columns over subjects, restricted to one
// region and subsampled to at most opts.max_locations voxels. Returns the
// local voxel positions used alongside the matrix.
struct EmpiricalCorr {
  std::vector<int> voxels;      // local indices within the region
  std::vector<double> coords;   // |voxels| x dim
  std::vector<double> corr;     // |voxels| x |voxels|
};
EmpiricalCorr empirical_correlation(const VoxelGrid& grid, int region,
                                    const std::vector<double>& M, int n,
                                    const FitKernelOptions& opts = {});

}  // namespace bima
