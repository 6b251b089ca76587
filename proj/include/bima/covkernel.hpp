#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "bima/grid.hpp"

namespace bima {

struct MaternParams {
  double u = 0.2;
  double rho = 2.0;
};

struct ModifiedSEParams {
  double a = 0.01;
  double b = 10.0;
};

// Covariance kernel family plus optional per-region Matern overrides.
struct KernelSpec {
  enum class Family { Matern, ModifiedSE };

  Family family = Family::Matern;
  MaternParams matern;
  ModifiedSEParams modse;
  std::map<int, MaternParams> per_region;  // region id -> (u, rho)

  static KernelSpec make_matern(double u, double rho);
  static KernelSpec make_modified_se(double a, double b);

  MaternParams matern_for_region(int region) const;
  void validate() const;
  std::string describe() const;
};

// Normalized Matern correlation C_u(t); C_u(0) = 1, strictly decreasing.
double matern_c(double t, double u);

// Kernel value between two points. Matern takes squared distance over rho
// as its argument; ModifiedSE is exp(-a(|s|^2+|s2|^2) - b|s-s2|^2).
double kernel_eval(std::span<const double> s, std::span<const double> s2,
                   const KernelSpec& spec, int region = 0);

// Dense p_r x p_r kernel matrix over one region's voxels (row-major).
std::vector<double> kernel_matrix(const VoxelGrid& grid, int region,
                                  const KernelSpec& spec);

}  // namespace bima
