#include "bima/model.hpp"

#include <cmath>
#include <stdexcept>

#include "bima/simd.hpp"

namespace bima {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_variance(double v, const char* name) {
  if (!(v > 0.0))
    throw std::invalid_argument(std::string(name) + " must be > 0");
}

double ig_logdens(double x, double shape, double rate) {
  // up to the normalizing constant in (shape, rate)
  return -(shape + 1.0) * std::log(x) - rate / x;
}

// log N(theta | 0, sigma2 * D) summed over regions
double coeff_prior_logdens(const RegionCoeffs& theta,
                           std::span<const RegionBasis> bases, double sigma2) {
  double lp = 0.0;
  for (std::size_t b = 0; b < bases.size(); ++b) {
    const auto& eig = bases[b].eigvals;
    for (std::size_t l = 0; l < eig.size(); ++l) {
      const double var = sigma2 * eig[l];
      lp -= 0.5 * (theta[b][l] * theta[b][l] / var + std::log(var) + kLog2Pi);
    }
  }
  return lp;
}

}  // namespace

void MediationDataset::validate() const {
  if (n <= 0) throw std::invalid_argument("dataset: n must be positive");
  if (q < 0) throw std::invalid_argument("dataset: q must be >= 0");
  if (n < q + 2)
    throw std::invalid_argument("dataset: n must be at least q + 2");
  const auto p = static_cast<std::size_t>(grid.p());
  if (Y.size() != static_cast<std::size_t>(n) ||
      X.size() != static_cast<std::size_t>(n) ||
      C.size() != static_cast<std::size_t>(n) * q ||
      M.size() != static_cast<std::size_t>(n) * p)
    throw std::invalid_argument("dataset: array shape mismatch");
  auto all_finite = [](const std::vector<double>& v) {
    for (const double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  if (!all_finite(Y) || !all_finite(X) || !all_finite(C) || !all_finite(M))
    throw std::invalid_argument("dataset: non-finite entry");
}

std::vector<double> intensity_measure(std::span<const double> M_row,
                                      const VoxelGrid& grid) {
  if (M_row.size() != static_cast<std::size_t>(grid.p()))
    throw std::invalid_argument("intensity_measure: length mismatch");
  std::vector<double> out(M_row.begin(), M_row.end());
  simd::scale(grid.voxel_measure(), out.data(), out.size());
  return out;
}

std::vector<double> outcome_means(const OutcomeState& state,
                                  const MediationDataset& data,
                                  std::span<const RegionBasis> bases) {
  const auto beta =
      eval_field(bases, state.theta_beta, state.nu_beta, data.grid);
  const double inv_p = data.grid.voxel_measure();
  std::vector<double> mean(data.n);
  for (int i = 0; i < data.n; ++i) {
    double m = inv_p * simd::dot(beta.data(), data.M_row(i).data(), beta.size());
    m += state.gamma * data.X[i];
    m += simd::dot(state.xi.data(), data.C_row(i).data(), state.xi.size());
    mean[i] = m;
  }
  return mean;
}

double outcome_logpost(const OutcomeState& state, const MediationDataset& data,
                       std::span<const RegionBasis> bases,
                       const PriorConfig& prior) {
  check_variance(state.sigma2_Y, "sigma2_Y");
  check_variance(state.sigma2_beta, "sigma2_beta");
  const auto mean = outcome_means(state, data, bases);
  double rss = 0.0;
  for (int i = 0; i < data.n; ++i) {
    const double e = data.Y[i] - mean[i];
    rss += e * e;
  }
  double lp = -0.5 * data.n * (kLog2Pi + std::log(state.sigma2_Y)) -
              0.5 * rss / state.sigma2_Y;
  if (prior.include_priors) {
    lp += coeff_prior_logdens(state.theta_beta, bases, state.sigma2_beta);
    const double g2 = state.gamma * state.gamma +
                      simd::sum_sq(state.xi.data(), state.xi.size());
    lp += -0.5 * g2 / prior.sigma_gamma0_sq -
          0.5 * (1 + data.q) * (kLog2Pi + std::log(prior.sigma_gamma0_sq));
    lp += ig_logdens(state.sigma2_Y, prior.ig_shape, prior.ig_rate);
    lp += ig_logdens(state.sigma2_beta, prior.ig_shape, prior.ig_rate);
  }
  return lp;
}

std::vector<double> outcome_grad_theta(const OutcomeState& state,
                                       const MediationDataset& data,
                                       std::span<const RegionBasis> bases,
                                       int region, const PriorConfig& prior) {
  const RegionBasis* basis = nullptr;
  std::size_t bidx = 0;
  for (std::size_t b = 0; b < bases.size(); ++b)
    if (bases[b].region == region) {
      basis = &bases[b];
      bidx = b;
    }
  if (basis == nullptr)
    throw std::invalid_argument("outcome_grad_theta: unknown region");
  if (state.theta_beta[bidx].size() != static_cast<std::size_t>(basis->L))
    throw std::invalid_argument("outcome_grad_theta: theta size mismatch");

  const auto mean = outcome_means(state, data, bases);
  const auto latent = eval_region_latent(*basis, state.theta_beta[bidx]);
  const auto& vox = data.grid.region_voxels[region - 1];
  const double inv_p = data.grid.voxel_measure();
  const int p = data.grid.p();

  // accum[j] = sum_i e_i * M_i(s_j)/p over the region's voxels
  std::vector<double> accum(vox.size(), 0.0);
  for (int i = 0; i < data.n; ++i) {
    const double e = data.Y[i] - mean[i];
    const double* row = data.M.data() + static_cast<std::size_t>(i) * p;
    for (std::size_t j = 0; j < vox.size(); ++j)
      accum[j] += e * row[vox[j]] * inv_p;
  }
  std::vector<double> masked(vox.size());
  simd::threshold_mask_mul(latent.data(), state.nu_beta, accum.data(),
                           masked.data(), accum.size());

  std::vector<double> grad(basis->L, 0.0);
  for (std::size_t j = 0; j < vox.size(); ++j)
    simd::axpy(masked[j] / state.sigma2_Y, basis->row(j).data(), grad.data(),
               grad.size());
  if (prior.include_priors) {
    for (int l = 0; l < basis->L; ++l)
      grad[l] -= state.theta_beta[bidx][l] /
                 (state.sigma2_beta * basis->eigvals[l]);
  }
  return grad;
}

double mediator_logpost(const MediatorState& state,
                        const MediationDataset& data,
                        std::span<const RegionBasis> bases,
                        const PriorConfig& prior) {
  check_variance(state.sigma2_M, "sigma2_M");
  check_variance(state.sigma2_alpha, "sigma2_alpha");
  check_variance(state.sigma2_eta, "sigma2_eta");
  check_variance(state.sigma2_zeta, "sigma2_zeta");

  const int p = data.grid.p();
  const auto alpha =
      eval_field(bases, state.theta_alpha, state.nu_alpha, data.grid);
  std::vector<std::vector<double>> zeta(data.q);
  for (int k = 0; k < data.q; ++k)
    zeta[k] = eval_field(bases, state.theta_zeta[k], 0.0, data.grid);

  double rss = 0.0;
  std::vector<double> mu(p);
  for (int i = 0; i < data.n; ++i) {
    for (int j = 0; j < p; ++j) mu[j] = alpha[j] * data.X[i];
    for (int k = 0; k < data.q; ++k)
      simd::axpy(data.C[static_cast<std::size_t>(i) * data.q + k],
                 zeta[k].data(), mu.data(), mu.size());
    const auto eta_i = eval_field(bases, state.theta_eta[i], 0.0, data.grid);
    for (int j = 0; j < p; ++j) {
      const double e = data.M[static_cast<std::size_t>(i) * p + j] - mu[j] -
                       eta_i[j];
      rss += e * e;
    }
  }
  double lp = -0.5 * static_cast<double>(data.n) * p *
                  (kLog2Pi + std::log(state.sigma2_M)) -
              0.5 * rss / state.sigma2_M;
  if (prior.include_priors) {
    lp += coeff_prior_logdens(state.theta_alpha, bases, state.sigma2_alpha);
    for (int k = 0; k < data.q; ++k)
      lp += coeff_prior_logdens(state.theta_zeta[k], bases, state.sigma2_zeta);
    for (int i = 0; i < data.n; ++i)
      lp += coeff_prior_logdens(state.theta_eta[i], bases, state.sigma2_eta);
    lp += ig_logdens(state.sigma2_M, prior.ig_shape, prior.ig_rate);
    lp += ig_logdens(state.sigma2_alpha, prior.ig_shape, prior.ig_rate);
    lp += ig_logdens(state.sigma2_eta, prior.ig_shape, prior.ig_rate);
    lp += ig_logdens(state.sigma2_zeta, prior.ig_shape, prior.ig_rate);
  }
  return lp;
}

std::vector<double> mediator_grad_theta_alpha(const MediatorState& state,
                                              const MediationDataset& data,
                                              std::span<const RegionBasis> bases,
                                              int region,
                                              const PriorConfig& prior) {
  const RegionBasis* basis = nullptr;
  std::size_t bidx = 0;
  for (std::size_t b = 0; b < bases.size(); ++b)
    if (bases[b].region == region) {
      basis = &bases[b];
      bidx = b;
    }
  if (basis == nullptr)
    throw std::invalid_argument("mediator_grad_theta_alpha: unknown region");
  if (state.theta_alpha[bidx].size() != static_cast<std::size_t>(basis->L))
    throw std::invalid_argument("mediator_grad_theta_alpha: theta mismatch");

  const int p = data.grid.p();
  const auto alpha =
      eval_field(bases, state.theta_alpha, state.nu_alpha, data.grid);
  std::vector<std::vector<double>> zeta(data.q);
  for (int k = 0; k < data.q; ++k)
    zeta[k] = eval_field(bases, state.theta_zeta[k], 0.0, data.grid);
  const auto latent = eval_region_latent(*basis, state.theta_alpha[bidx]);
  const auto& vox = data.grid.region_voxels[region - 1];

  // accum[j] = sum_i X_i * resid_i(s_j) over the region's voxels
  std::vector<double> accum(vox.size(), 0.0);
  for (int i = 0; i < data.n; ++i) {
    const auto eta_i = eval_field(bases, state.theta_eta[i], 0.0, data.grid);
    for (std::size_t j = 0; j < vox.size(); ++j) {
      const int g = vox[j];
      double resid = data.M[static_cast<std::size_t>(i) * p + g] -
                     alpha[g] * data.X[i] - eta_i[g];
      for (int k = 0; k < data.q; ++k)
        resid -= data.C[static_cast<std::size_t>(i) * data.q + k] * zeta[k][g];
      accum[j] += data.X[i] * resid;
    }
  }
  std::vector<double> masked(vox.size());
  simd::threshold_mask_mul(latent.data(), state.nu_alpha, accum.data(),
                           masked.data(), accum.size());

  std::vector<double> grad(basis->L, 0.0);
  for (std::size_t j = 0; j < vox.size(); ++j)
    simd::axpy(masked[j] / state.sigma2_M, basis->row(j).data(), grad.data(),
               grad.size());
  if (prior.include_priors) {
    for (int l = 0; l < basis->L; ++l)
      grad[l] -= state.theta_alpha[bidx][l] /
                 (state.sigma2_alpha * basis->eigvals[l]);
  }
  return grad;
}

double eta_constraint_residual(const MediatorState& state,
                               const MediationDataset& data) {
  double worst = 0.0;
  if (state.theta_eta.empty()) return 0.0;
  const std::size_t R = state.theta_eta.front().size();
  for (std::size_t b = 0; b < R; ++b) {
    const std::size_t L = state.theta_eta.front()[b].size();
    for (std::size_t l = 0; l < L; ++l) {
      double sx = 0.0;
      std::vector<double> sc(data.q, 0.0);
      for (int i = 0; i < data.n; ++i) {
        const double t = state.theta_eta[i][b][l];
        sx += data.X[i] * t;
        for (int k = 0; k < data.q; ++k)
          sc[k] += data.C[static_cast<std::size_t>(i) * data.q + k] * t;
      }
      worst = std::max(worst, std::fabs(sx));
      for (int k = 0; k < data.q; ++k) worst = std::max(worst, std::fabs(sc[k]));
    }
  }
  return worst;
}

}  // namespace bima
