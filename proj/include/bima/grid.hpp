#pragma once

#include <span>
#include <vector>

namespace bima {

// Fixed design points on a compact d-dimensional support, partitioned into
// regions. Region ids run 1..R. The measure of every voxel cell is exactly
// 1/p by construction.
struct VoxelGrid {
  int dim = 0;
  std::vector<double> coords;  // p x dim, row-major, points in [0,1]^dim
  std::vector<int> region_of;  // p entries in {1..R}
  int num_regions = 0;
  std::vector<std::vector<int>> region_voxels;  // [R] ascending voxel indices

  int p() const { return static_cast<int>(region_of.size()); }
  double voxel_measure() const { return 1.0 / static_cast<double>(p()); }
  std::span<const double> point(int j) const {
    return {coords.data() + static_cast<std::size_t>(j) * dim,
            static_cast<std::size_t>(dim)};
  }
  int region_size(int region) const {
    return static_cast<int>(region_voxels[region - 1].size());
  }

  // Rebuilds region_voxels and checks the invariants (regions non-empty,
  // coords pairwise distinct, region ids in range). Throws on violation.
  void finalize();
};

// Regular 1-D grid of n cell centers on [0,1], single region.
VoxelGrid make_grid_1d(int n);

// nx x ny grid of cell centers on [0,1]^2 split into rx x ry region blocks.
// Voxels are raster ordered (x fastest).
VoxelGrid make_grid_2d(int nx, int ny, int rx, int ry);

}  // namespace bima
