#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "bima/basis.hpp"
#include "bima/grid.hpp"
#include "bima/stgp.hpp"

namespace bima {

// Thrown when a sampler encounters a non-finite log posterior.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Outcome vector, exposure, confounders and voxel intensities for n subjects.
struct MediationDataset {
  int n = 0;
  int q = 0;
  std::vector<double> Y;  // n
  std::vector<double> X;  // n
  std::vector<double> C;  // n x q, row-major
  std::vector<double> M;  // n x p, row-major, intensity function values
  VoxelGrid grid;

  std::span<const double> M_row(int i) const {
    return {M.data() + static_cast<std::size_t>(i) * grid.p(),
            static_cast<std::size_t>(grid.p())};
  }
  std::span<const double> C_row(int i) const {
    return {C.data() + static_cast<std::size_t>(i) * q,
            static_cast<std::size_t>(q)};
  }
  void validate() const;  // finite entries, n >= q + 2
};

// Hyperprior settings shared by both models. flat() zeroes every prior
// contribution, leaving the pure likelihood (useful in tests).
struct PriorConfig {
  double sigma_gamma0_sq = 100.0;  // N(0, sigma_gamma0_sq) on gamma and xi
  double ig_shape = 1.0;           // inverse-gamma hyperpriors
  double ig_rate = 1.0;
  bool include_priors = true;

  static PriorConfig flat() {
    PriorConfig cfg;
    cfg.include_priors = false;
    return cfg;
  }
};

struct OutcomeState {
  RegionCoeffs theta_beta;  // per region, latent basis coefficients
  double gamma = 0.0;
  std::vector<double> xi;  // q
  double sigma2_Y = 1.0;
  double sigma2_beta = 1.0;
  double nu_beta = 0.0;
};

struct MediatorState {
  RegionCoeffs theta_alpha;                    // [R][L_r]
  std::vector<RegionCoeffs> theta_zeta;        // [q][R][L_r]
  std::vector<RegionCoeffs> theta_eta;         // [n][R][L_r]
  double sigma2_M = 1.0;
  double sigma2_alpha = 1.0;
  double sigma2_eta = 1.0;
  double sigma2_zeta = 1.0;
  double nu_alpha = 0.0;
};

// Voxel intensity measure row: M_i(s_j) * lambda(voxel_j) = M_i(s_j)/p.
std::vector<double> intensity_measure(std::span<const double> M_row,
                                      const VoxelGrid& grid);

// Log posterior of the outcome model up to constants in fixed parameters.
double outcome_logpost(const OutcomeState& state, const MediationDataset& data,
                       std::span<const RegionBasis> bases,
                       const PriorConfig& prior = {});

// d/d theta_beta[region] of outcome_logpost (region is 1-based).
std::vector<double> outcome_grad_theta(const OutcomeState& state,
                                       const MediationDataset& data,
                                       std::span<const RegionBasis> bases,
                                       int region,
                                       const PriorConfig& prior = {});

double mediator_logpost(const MediatorState& state,
                        const MediationDataset& data,
                        std::span<const RegionBasis> bases,
                        const PriorConfig& prior = {});

std::vector<double> mediator_grad_theta_alpha(const MediatorState& state,
                                              const MediationDataset& data,
                                              std::span<const RegionBasis> bases,
                                              int region,
                                              const PriorConfig& prior = {});

// Fitted outcome means <beta, M_i>_p + gamma X_i + xi' C_i for all subjects.
std::vector<double> outcome_means(const OutcomeState& state,
                                  const MediationDataset& data,
                                  std::span<const RegionBasis> bases);

// Assumption 2 residual: max over (r,l) and columns of |Xt' theta_eta(.,r,l)|
// with Xt = (X, C).
double eta_constraint_residual(const MediatorState& state,
                               const MediationDataset& data);

}  // namespace bima
