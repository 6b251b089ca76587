#include "bima/covkernel.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bima {

KernelSpec KernelSpec::make_matern(double u, double rho) {
  KernelSpec spec;
  spec.family = Family::Matern;
  spec.matern = {u, rho};
  spec.validate();
  return spec;
}

KernelSpec KernelSpec::make_modified_se(double a, double b) {
  KernelSpec spec;
  spec.family = Family::ModifiedSE;
  spec.modse = {a, b};
  spec.validate();
  return spec;
}

MaternParams KernelSpec::matern_for_region(int region) const {
  if (auto it = per_region.find(region); it != per_region.end())
    return it->second;
  return matern;
}

void KernelSpec::validate() const {
  if (family == Family::Matern) {
    if (!(matern.u > 0.0) || !(matern.rho > 0.0))
      throw std::invalid_argument("Matern kernel requires u > 0 and rho > 0");
    for (const auto& [region, params] : per_region)
      if (!(params.u > 0.0) || !(params.rho > 0.0))
        throw std::invalid_argument("Matern override requires u > 0, rho > 0");
  } else {
    if (!(modse.a >= 0.0) || !(modse.b > 0.0))
      throw std::invalid_argument("ModifiedSE kernel requires a >= 0, b > 0");
  }
}

std::string KernelSpec::describe() const {
  std::ostringstream os;
  if (family == Family::Matern)
    os << "matern:u=" << matern.u << ",rho=" << matern.rho;
  else
    os << "modse:a=" << modse.a << ",b=" << modse.b;
  return os.str();
}

double matern_c(double t, double u) {
  if (!(u > 0.0)) throw std::invalid_argument("matern_c: u must be > 0");
  if (!std::isfinite(t) || t < 0.0)
    throw std::invalid_argument("matern_c: t must be finite and >= 0");
  if (t == 0.0) return 1.0;  // limiting value
  const double x = std::sqrt(2.0 * u) * t;
  // K_u underflows for large x; the product underflows to 0 with it
  if (x > 690.0) return 0.0;
  const double k = std::cyl_bessel_k(u, x);
  if (k == 0.0) return 0.0;
  const double c = std::pow(2.0, 1.0 - u) / std::tgamma(u) * std::pow(x, u) * k;
  return c < 1.0 ? c : 1.0;
}

namespace {

double squared_distance(std::span<const double> s, std::span<const double> s2) {
  double acc = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double d = s[k] - s2[k];
    acc += d * d;
  }
  return acc;
}

double squared_norm(std::span<const double> s) {
  double acc = 0.0;
  for (const double v : s) acc += v * v;
  return acc;
}

}  // namespace

double kernel_eval(std::span<const double> s, std::span<const double> s2,
                   const KernelSpec& spec, int region) {
  if (s.size() != s2.size() || s.empty())
    throw std::invalid_argument("kernel_eval: dimension mismatch");
  const double d2 = squared_distance(s, s2);
  if (spec.family == KernelSpec::Family::Matern) {
    const MaternParams mp = spec.matern_for_region(region);
    return matern_c(d2 / mp.rho, mp.u);
  }
  return std::exp(-spec.modse.a * (squared_norm(s) + squared_norm(s2)) -
                  spec.modse.b * d2);
}

std::vector<double> kernel_matrix(const VoxelGrid& grid, int region,
                                  const KernelSpec& spec) {
  if (region < 1 || region > grid.num_regions)
    throw std::invalid_argument("kernel_matrix: region out of range");
  const auto& vox = grid.region_voxels[region - 1];
  const int m = static_cast<int>(vox.size());
  std::vector<double> K(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i) {
    K[static_cast<std::size_t>(i) * m + i] =
        kernel_eval(grid.point(vox[i]), grid.point(vox[i]), spec, region);
    for (int j = i + 1; j < m; ++j) {
      const double v =
          kernel_eval(grid.point(vox[i]), grid.point(vox[j]), spec, region);
      K[static_cast<std::size_t>(i) * m + j] = v;
      K[static_cast<std::size_t>(j) * m + i] = v;
    }
  }
  return K;
}

}  // namespace bima
