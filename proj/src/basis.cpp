#include "bima/basis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bima/rng.hpp"

namespace bima {

namespace {

struct Spectrum {
  Eigen::MatrixXd vectors;      // p_r x m, columns sorted by eigenvalue desc
  Eigen::VectorXd values;       // m positive eigenvalues, nonincreasing
  double total = 0.0;           // positive eigenvalue mass
};

Spectrum positive_spectrum(const VoxelGrid& grid, int region,
                           const KernelSpec& spec) {
  const auto K = kernel_matrix(grid, region, spec);
  const int m = grid.region_size(region);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      Kmat(K.data(), m, m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Kmat);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("build_region_basis: eigendecomposition failed");

  // ascending from Eigen; keep positives above the numerical-null floor
  const Eigen::VectorXd& vals = solver.eigenvalues();
  const double floor = 1e-12 * std::max(vals(m - 1), 0.0);
  std::vector<int> keep;
  for (int i = m - 1; i >= 0; --i)
    if (vals(i) > floor && vals(i) > 0.0) keep.push_back(i);
  if (keep.empty())
    throw DegenerateKernelError(
        "build_region_basis: kernel matrix has no positive eigenvalues");

  Spectrum s;
  s.values.resize(static_cast<int>(keep.size()));
  s.vectors.resize(m, static_cast<int>(keep.size()));
  for (int k = 0; k < static_cast<int>(keep.size()); ++k) {
    s.values(k) = vals(keep[k]);
    s.vectors.col(k) = solver.eigenvectors().col(keep[k]);
  }
  s.total = s.values.sum();
  return s;
}

RegionBasis assemble(int region, const Spectrum& s, int L) {
  // re-orthonormalize the kept eigenvectors; thin-QR Q spans the same space
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(s.vectors.leftCols(L));
  Eigen::MatrixXd Q = qr.householderQ() *
                      Eigen::MatrixXd::Identity(s.vectors.rows(), L);
  // keep each column aligned with its eigenvector (QR may flip signs)
  for (int l = 0; l < L; ++l)
    if (Q.col(l).dot(s.vectors.col(l)) < 0.0) Q.col(l) = -Q.col(l);

  RegionBasis basis;
  basis.region = region;
  basis.p_r = static_cast<int>(s.vectors.rows());
  basis.L = L;
  basis.cutoff_frac = s.values.head(L).sum() / s.total;
  basis.eigvals.assign(s.values.data(), s.values.data() + L);
  basis.Q.resize(static_cast<std::size_t>(basis.p_r) * L);
  for (int j = 0; j < basis.p_r; ++j)
    for (int l = 0; l < L; ++l)
      basis.Q[static_cast<std::size_t>(j) * L + l] = Q(j, l);
  return basis;
}

}  // namespace

RegionBasis build_region_basis(const VoxelGrid& grid, int region,
                               const KernelSpec& spec, double cutoff_frac) {
  if (!(cutoff_frac > 0.0) || cutoff_frac > 1.0)
    throw std::invalid_argument("build_region_basis: cutoff_frac in (0,1]");
  const Spectrum s = positive_spectrum(grid, region, spec);
  const double target = cutoff_frac * s.total;
  double acc = 0.0;
  int L = s.values.size();
  for (int l = 0; l < s.values.size(); ++l) {
    acc += s.values(l);
    if (acc >= target * (1.0 - 1e-12)) {
      L = l + 1;
      break;
    }
  }
  return assemble(region, s, L);
}

RegionBasis build_region_basis_count(const VoxelGrid& grid, int region,
                                     const KernelSpec& spec, int count) {
  if (count <= 0)
    throw std::invalid_argument("build_region_basis_count: count must be > 0");
  const Spectrum s = positive_spectrum(grid, region, spec);
  const int L = std::min<int>(count, s.values.size());
  return assemble(region, s, L);
}

std::vector<RegionBasis> build_bases(const VoxelGrid& grid,
                                     const KernelSpec& spec,
                                     double cutoff_frac,
                                     double count_frac_of_region) {
  std::vector<RegionBasis> bases;
  bases.reserve(grid.num_regions);
  for (int r = 1; r <= grid.num_regions; ++r) {
    if (count_frac_of_region > 0.0) {
      const int count = std::max(
          1, static_cast<int>(std::ceil(count_frac_of_region *
                                        grid.region_size(r))));
      bases.push_back(build_region_basis_count(grid, r, spec, count));
    } else {
      bases.push_back(build_region_basis(grid, r, spec, cutoff_frac));
    }
  }
  return bases;
}

int total_basis_size(std::span<const RegionBasis> bases) {
  int total = 0;
  for (const auto& b : bases) total += b.L;
  return total;
}

std::pair<double, double> fit_kernel_params(
    const std::vector<double>& coords, int dim,
    const std::vector<double>& empirical_corr,
    const std::vector<std::pair<double, double>>& grid_points) {
  if (grid_points.empty())
    throw std::invalid_argument("fit_kernel_params: empty grid");
  const int m = static_cast<int>(coords.size()) / std::max(dim, 1);
  if (dim <= 0 || empirical_corr.size() != static_cast<std::size_t>(m) * m)
    throw std::invalid_argument("fit_kernel_params: shape mismatch");

  // pairwise squared distances, reused across the grid
  std::vector<double> d2(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      double acc = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double d = coords[static_cast<std::size_t>(i) * dim + k] -
                         coords[static_cast<std::size_t>(j) * dim + k];
        acc += d * d;
      }
      d2[static_cast<std::size_t>(i) * m + j] = acc;
      d2[static_cast<std::size_t>(j) * m + i] = acc;
    }

  double best = std::numeric_limits<double>::infinity();
  std::pair<double, double> best_params = grid_points.front();
  bool first = true;
  for (const auto& [u, rho] : grid_points) {
    double dist2 = 0.0;
    for (std::size_t idx = 0; idx < d2.size(); ++idx) {
      const double diff = matern_c(d2[idx] / rho, u) - empirical_corr[idx];
      dist2 += diff * diff;
    }
    bool better;
    if (first) {
      better = true;
      first = false;
    } else {
      const double tol = 1e-12 * std::max(1.0, best);
      if (dist2 < best - tol)
        better = true;
      else if (dist2 <= best + tol)  // tie: smaller rho, then smaller u
        better = rho < best_params.second ||
                 (rho == best_params.second && u < best_params.first);
      else
        better = false;
    }
    if (better) {
      best = std::min(best, dist2);
      best_params = {u, rho};
    }
  }
  return best_params;
}

EmpiricalCorr empirical_correlation(const VoxelGrid& grid, int region,
                                    const std::vector<double>& M, int n,
                                    const FitKernelOptions& opts) {
  const auto& vox = grid.region_voxels[region - 1];
  const int p_r = static_cast<int>(vox.size());
  const int p = grid.p();

  EmpiricalCorr out;
  out.voxels.resize(p_r);
  std::iota(out.voxels.begin(), out.voxels.end(), 0);
  if (p_r > opts.max_locations) {
    // deterministic subsample without replacement
    Rng rng = Rng::derived(opts.seed, static_cast<std::uint64_t>(region));
    for (int i = p_r - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.next_u64() % (i + 1));
      std::swap(out.voxels[i], out.voxels[j]);
    }
    out.voxels.resize(opts.max_locations);
    std::sort(out.voxels.begin(), out.voxels.end());
  }

  const int m = static_cast<int>(out.voxels.size());
  out.coords.resize(static_cast<std::size_t>(m) * grid.dim);
  for (int i = 0; i < m; ++i) {
    const auto pt = grid.point(vox[out.voxels[i]]);
    std::copy(pt.begin(), pt.end(), out.coords.begin() +
                                        static_cast<std::size_t>(i) * grid.dim);
  }

  // column means/sds over subjects
  Eigen::MatrixXd Z(n, m);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < m; ++k)
      Z(i, k) = M[static_cast<std::size_t>(i) * p + vox[out.voxels[k]]];
  Eigen::RowVectorXd mean = Z.colwise().mean();
  Z.rowwise() -= mean;
  Eigen::RowVectorXd sd = (Z.colwise().squaredNorm() / n).cwiseSqrt();
  for (int k = 0; k < m; ++k)
    if (sd(k) <= 0.0) sd(k) = 1.0;
  Z.array().rowwise() /= sd.array();
  Eigen::MatrixXd corr = (Z.transpose() * Z) / n;
  corr.diagonal().setOnes();

  out.corr.resize(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < m; ++k)
      out.corr[static_cast<std::size_t>(i) * m + k] = corr(i, k);
  return out;
}

}  // namespace bima
