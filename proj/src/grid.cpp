#include "bima/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace bima {

void VoxelGrid::finalize() {
  const int np = p();
  if (dim <= 0) throw std::invalid_argument("VoxelGrid: dim must be positive");
  if (np <= 0) throw std::invalid_argument("VoxelGrid: empty grid");
  if (coords.size() != static_cast<std::size_t>(np) * dim)
    throw std::invalid_argument("VoxelGrid: coords size mismatch");
  if (num_regions <= 0)
    throw std::invalid_argument("VoxelGrid: num_regions must be positive");

  region_voxels.assign(num_regions, {});
  for (int j = 0; j < np; ++j) {
    const int r = region_of[j];
    if (r < 1 || r > num_regions)
      throw std::invalid_argument("VoxelGrid: region id out of range at voxel " +
                                  std::to_string(j));
    region_voxels[r - 1].push_back(j);
  }
  for (int r = 0; r < num_regions; ++r)
    if (region_voxels[r].empty())
      throw std::invalid_argument("VoxelGrid: region " + std::to_string(r + 1) +
                                  " is empty");

  for (const double c : coords)
    if (!std::isfinite(c))
      throw std::invalid_argument("VoxelGrid: non-finite coordinate");

  // pairwise distinct coords; sort an index permutation lexicographically
  std::vector<int> order(np);
  for (int j = 0; j < np; ++j) order[j] = j;
  auto less = [&](int a, int b) {
    return std::lexicographical_compare(
        coords.begin() + static_cast<std::size_t>(a) * dim,
        coords.begin() + static_cast<std::size_t>(a + 1) * dim,
        coords.begin() + static_cast<std::size_t>(b) * dim,
        coords.begin() + static_cast<std::size_t>(b + 1) * dim);
  };
  std::sort(order.begin(), order.end(), less);
  for (int j = 0; j + 1 < np; ++j)
    if (!less(order[j], order[j + 1]))
      throw std::invalid_argument("VoxelGrid: duplicate design points");
}

VoxelGrid make_grid_1d(int n) {
  if (n <= 0) throw std::invalid_argument("make_grid_1d: n must be positive");
  VoxelGrid g;
  g.dim = 1;
  g.num_regions = 1;
  g.coords.resize(n);
  g.region_of.assign(n, 1);
  for (int i = 0; i < n; ++i) g.coords[i] = (i + 0.5) / n;
  g.finalize();
  return g;
}

VoxelGrid make_grid_2d(int nx, int ny, int rx, int ry) {
  if (nx <= 0 || ny <= 0)
    throw std::invalid_argument("make_grid_2d: grid dims must be positive");
  if (rx <= 0 || ry <= 0 || nx % rx != 0 || ny % ry != 0)
    throw std::invalid_argument(
        "make_grid_2d: region blocks must evenly divide the grid");
  VoxelGrid g;
  g.dim = 2;
  g.num_regions = rx * ry;
  const int p = nx * ny;
  g.coords.resize(static_cast<std::size_t>(p) * 2);
  g.region_of.resize(p);
  const int bx = nx / rx;
  const int by = ny / ry;
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const int j = iy * nx + ix;
      g.coords[2 * static_cast<std::size_t>(j)] = (ix + 0.5) / nx;
      g.coords[2 * static_cast<std::size_t>(j) + 1] = (iy + 0.5) / ny;
      g.region_of[j] = (iy / by) * rx + (ix / bx) + 1;
    }
  }
  g.finalize();
  return g;
}

}  // namespace bima
