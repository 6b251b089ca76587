#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bima/engine.hpp"
#include "bima/model.hpp"
#include "bima/rng.hpp"

namespace bima {

enum class InitStrategy { GpWorkingModel, LassoThreshold, Zero };
enum class EtaUpdate { Full, FixedZero };

struct SamplerConfig {
  long iters = 10000;
  double burnin_frac = 0.5;
  int thin = 1;
  std::uint64_t seed = 0;
  double nu = 0.0;

  std::vector<double> step_init;      // per region; single value broadcasts
  std::vector<double> target_accept;  // per region; empty -> c/L_r rule
  double target_accept_c = 20.0;      // target_r = clamp(c/L_r, 0.2, 0.4)
  int adapt_window = 100;
  double adapt_kappa = 0.5;
  double adapt_frac_of_burnin = 0.8;  // adaptation stops after this

  double beta_only_frac = 0.0;        // outcome model schedule
  EtaUpdate eta_update = EtaUpdate::Full;
  InitStrategy init = InitStrategy::GpWorkingModel;
  int init_gibbs_iters = 500;         // working-model chain length
  double lasso_lambda_frac = 0.1;     // lambda = frac * lambda_max
  PriorConfig prior;

  void validate() const;
};

// Thinned post-burn-in draws of one chain plus tuning diagnostics.
struct ChainTrace {
  std::string model;       // "outcome" or "mediator"
  std::vector<int> L;      // per-region basis sizes
  std::vector<int> regions;  // region ids, parallel to L
  double nu = 0.0;
  long iters = 0;
  double burnin_frac = 0.0;
  int thin = 1;
  std::uint64_t seed = 0;

  long draws() const { return static_cast<long>(theta.size()); }
  std::vector<std::vector<double>> theta;       // draws x L_total
  std::vector<double> gamma;                    // outcome
  std::vector<std::vector<double>> xi;          // outcome, draws x q
  std::vector<std::vector<double>> theta_zeta;  // mediator, draws x (q L_total)
  std::vector<double> sigma2_obs;               // sigma2_Y / sigma2_M
  std::vector<double> sigma2_coef;              // sigma2_beta / sigma2_alpha
  std::vector<double> sigma2_eta;               // mediator
  std::vector<double> sigma2_zeta;              // mediator
  std::vector<double> eta_constraint_max;       // mediator, per draw

  std::vector<double> accept_rates;  // per region, post-warmup
  std::vector<double> step_final;    // per region
  bool init_fallback = false;        // lasso failed, fell back to Zero
};

// One MALA update for an arbitrary target. Returns the new point and
// whether the proposal was accepted.
std::pair<std::vector<double>, bool> mala_step(
    const std::vector<double>& theta,
    const std::function<double(const std::vector<double>&)>& logpost_fn,
    const std::function<std::vector<double>(const std::vector<double>&)>&
        grad_fn,
    double step, Rng& rng);

// Multiplicative step-size controller toward a target acceptance rate.
double adapt_step(double step, double recent_accept, double target,
                  double kappa = 0.5);

// Conjugate draws exposed at the spec surface; chains use the engine
// equivalents internally.
void gibbs_gamma_xi(OutcomeState& state, const MediationDataset& data,
                    std::span<const RegionBasis> bases,
                    const PriorConfig& prior, Rng& rng);
std::vector<double> gibbs_zeta(MediatorState& state,
                               const MediationDataset& data,
                               std::span<const RegionBasis> bases, int region,
                               int k, Rng& rng);
std::vector<double> gibbs_eta_constrained(MediatorState& state,
                                          const MediationDataset& data,
                                          std::span<const RegionBasis> bases,
                                          int region, int l, Rng& rng);
void gibbs_variances(OutcomeState& state, const MediationDataset& data,
                     std::span<const RegionBasis> bases,
                     const PriorConfig& prior, Rng& rng);
void gibbs_variances(MediatorState& state, const MediationDataset& data,
                     std::span<const RegionBasis> bases,
                     const PriorConfig& prior, Rng& rng);

struct OutcomeInit {
  OutcomeState state;
  bool lasso_fallback = false;
};
OutcomeInit init_outcome(const MediationDataset& data,
                         std::span<const RegionBasis> bases,
                         InitStrategy strategy, double nu,
                         const PriorConfig& prior, Rng& rng,
                         int gibbs_iters = 500, double lasso_lambda_frac = 0.1);
MediatorState init_mediator(const MediationDataset& data,
                            std::span<const RegionBasis> bases,
                            InitStrategy strategy, double nu,
                            const PriorConfig& prior, Rng& rng,
                            bool eta_fixed_zero, int gibbs_iters = 500);

ChainTrace run_outcome_chain(const MediationDataset& data,
                             std::span<const RegionBasis> bases,
                             const SamplerConfig& config);
ChainTrace run_mediator_chain(const MediationDataset& data,
                              std::span<const RegionBasis> bases,
                              const SamplerConfig& config);

// Per-region default MALA target acceptance.
std::vector<double> default_targets(std::span<const RegionBasis> bases,
                                    double c);

// Orthogonal projection of v onto the null space of Xt' where Xt is the
// n x m design (row-major). This is the hyperplane conditioning step of an
// isotropic Gaussian. Throws on a rank-deficient design.
std::vector<double> project_null_space(const std::vector<double>& Xt, int n,
                                       int m, std::vector<double> v);

// Lasso on standardized columns by cyclic coordinate descent; returns the
// coefficients on the original scale plus the unpenalized intercept block
// fit. Used by the LassoThreshold initializer and exposed for tests.
struct LassoFit {
  std::vector<double> beta;       // penalized block
  std::vector<double> unpen;      // unpenalized block (gamma, xi)
  double intercept = 0.0;
  bool converged = false;
};
LassoFit lasso_coordinate_descent(const std::vector<double>& Wpen, int n,
                                  int p_pen,
                                  const std::vector<double>& Wunpen, int p_unp,
                                  const std::vector<double>& y, double lambda,
                                  int max_sweeps = 1000, double tol = 1e-7);

}  // namespace bima
