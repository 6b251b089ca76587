#include "bima/stgp.hpp"

#include <stdexcept>

#include "bima/simd.hpp"

namespace bima {

std::vector<double> eval_region_latent(const RegionBasis& basis,
                                       std::span<const double> theta) {
  if (static_cast<int>(theta.size()) != basis.L)
    throw std::invalid_argument("eval_region_latent: theta size mismatch");
  std::vector<double> latent(basis.p_r);
  for (int j = 0; j < basis.p_r; ++j)
    latent[j] = simd::dot(basis.row(j).data(), theta.data(), theta.size());
  return latent;
}

std::vector<double> eval_field(std::span<const RegionBasis> bases,
                               const RegionCoeffs& theta, double nu,
                               const VoxelGrid& grid) {
  if (theta.size() != bases.size())
    throw std::invalid_argument("eval_field: region count mismatch");
  if (nu < 0.0) throw std::invalid_argument("eval_field: nu must be >= 0");
  std::vector<double> values(grid.p(), 0.0);
  for (std::size_t b = 0; b < bases.size(); ++b) {
    const RegionBasis& basis = bases[b];
    const auto latent = eval_region_latent(basis, theta[b]);
    std::vector<double> thr(latent.size());
    simd::soft_threshold(latent.data(), nu, thr.data(), latent.size());
    const auto& vox = grid.region_voxels[basis.region - 1];
    for (std::size_t j = 0; j < vox.size(); ++j) values[vox[j]] = thr[j];
  }
  return values;
}

ThresholdedField ThresholdedField::build(std::span<const RegionBasis> bases,
                                         const RegionCoeffs& theta, double nu,
                                         const VoxelGrid& grid) {
  ThresholdedField field;
  field.nu = nu;
  field.values.assign(grid.p(), 0.0);
  field.latent.assign(grid.p(), 0.0);
  if (theta.size() != bases.size())
    throw std::invalid_argument("ThresholdedField: region count mismatch");
  for (std::size_t b = 0; b < bases.size(); ++b) {
    const RegionBasis& basis = bases[b];
    const auto latent = eval_region_latent(basis, theta[b]);
    std::vector<double> thr(latent.size());
    simd::soft_threshold(latent.data(), nu, thr.data(), latent.size());
    const auto& vox = grid.region_voxels[basis.region - 1];
    for (std::size_t j = 0; j < vox.size(); ++j) {
      field.values[vox[j]] = thr[j];
      field.latent[vox[j]] = latent[j];
    }
  }
  return field;
}

}  // namespace bima
