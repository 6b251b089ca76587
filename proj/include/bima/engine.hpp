#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "bima/model.hpp"
#include "bima/rng.hpp"

namespace bima {

// Incremental-state evaluator for the outcome model. Keeps the residual
// vector and per-region thresholded fields cached so a region-blocked MALA
// step costs O(n * p_r) instead of O(n * p).
class OutcomeEngine {
 public:
  OutcomeEngine(const MediationDataset& data,
                std::span<const RegionBasis> bases, const PriorConfig& prior,
                double nu);

  void set_state(const OutcomeState& state);
  OutcomeState state() const;

  int num_regions() const { return R_; }
  int basis_size(int b) const { return bases_[b].L; }
  double nu() const { return nu_; }

  // One MALA update of region block b (0-based). Returns acceptance.
  bool mala_step(int b, double step, Rng& rng);

  // Exact conjugate update of theta for region b; requires nu == 0.
  void gibbs_theta_nu0(int b, Rng& rng);

  // Joint conjugate draw of (gamma, xi).
  void gibbs_gamma_xi(Rng& rng);

  // sigma2_Y and sigma2_beta inverse-gamma draws.
  void gibbs_variances(Rng& rng);

  double rss() const { return rss_; }
  double loglik() const;
  double logpost() const;
  const std::vector<double>& residuals() const { return e_; }
  std::vector<double> beta_values() const;  // full grid, voxel order

 private:
  std::vector<double> region_grad(int b, const std::vector<double>& resid,
                                  const std::vector<double>& latent,
                                  const std::vector<double>& theta) const;
  void rebuild_caches();
  void ensure_working_design();

  const MediationDataset* data_;
  std::vector<RegionBasis> bases_;
  PriorConfig prior_;
  double nu_;
  int n_, q_, p_, R_;

  std::vector<std::vector<double>> Mt_;  // [R] n x p_r row-major, values / p
  std::vector<double> Xt_;               // n x (q+1) row-major, [X C]
  Eigen::MatrixXd XtX_;
  std::vector<Eigen::MatrixXd> W_;  // [R] n x L_r = Mt_r Q_r (nu=0 Gibbs)
  bool working_design_built_ = false;

  std::vector<std::vector<double>> theta_;   // [R][L_r]
  std::vector<double> gammaxi_;              // q+1
  double s2Y_ = 1.0, s2beta_ = 1.0;

  std::vector<std::vector<double>> latent_;  // [R][p_r]
  std::vector<std::vector<double>> beta_;    // [R][p_r]
  std::vector<double> e_;                    // n
  double rss_ = 0.0;
};

// Incremental-state evaluator for the mediator model. Works in the
// projected coordinates M Q_r; per-iteration cost is O(n L_r + p_r L_r)
// per region with no passes over the n x p data matrix.
class MediatorEngine {
 public:
  MediatorEngine(const MediationDataset& data,
                 std::span<const RegionBasis> bases, const PriorConfig& prior,
                 double nu, bool eta_fixed_zero);

  void set_state(const MediatorState& state);
  MediatorState state() const;

  int num_regions() const { return R_; }
  int basis_size(int b) const { return bases_[b].L; }
  bool eta_fixed_zero() const { return eta_fixed_zero_; }

  bool mala_step_alpha(int b, double step, Rng& rng);
  void gibbs_alpha_nu0(int b, Rng& rng);        // working-model update
  void gibbs_zeta(int b, int k, Rng& rng);      // all coefficients of block
  void gibbs_eta(int b, Rng& rng);              // constrained, all l
  void gibbs_variances(Rng& rng);

  // Unconstrained full conditional of theta_eta(., b, l) across subjects:
  // isotropic Gaussian with the returned mean vector and scalar variance.
  void eta_conditional(int b, int l, std::vector<double>& mean,
                       double& var) const;
  // One constrained draw of theta_eta(., b, l).
  std::vector<double> eta_draw_constrained(int b, int l, Rng& rng);

  double rss() const;  // ||M - fitted||_F^2 over all regions
  double loglik() const;
  double logpost() const;
  double eta_constraint_max() const;
  std::vector<double> alpha_values() const;

  const std::vector<double>& theta_zeta_block(int b, int k) const {
    return theta_zeta_[b][k];
  }
  std::vector<double> eta_column(int b, int l) const;

 private:
  struct AlphaBlockStats {
    std::vector<double> b_pr;  // sum_i X_i (M_i - C zeta - eta) on region
  };
  void refresh_alpha_caches(int b);
  std::vector<double> basis_load(int b) const;  // w = S_XC theta_zeta + Eta'X
  std::vector<double> alpha_grad(int b, const std::vector<double>& sr,
                                 const std::vector<double>& latent,
                                 const std::vector<double>& theta) const;

  const MediationDataset* data_;
  std::vector<RegionBasis> bases_;
  PriorConfig prior_;
  double nu_;
  bool eta_fixed_zero_;
  int n_, q_, p_, R_;

  // data projections, built once
  std::vector<std::vector<double>> Mtil_;   // [R] n x L_r (M_r Q_r)
  std::vector<std::vector<double>> SXM_;    // [R] p_r (M_r' X)
  std::vector<std::vector<double>> SCM_;    // [R] q x p_r (M_r' C_k)
  std::vector<std::vector<double>> QtSXM_;  // [R] L_r
  std::vector<double> Msumsq_;              // [R]
  double Sxx_ = 0.0;
  std::vector<double> SXC_;   // q
  Eigen::MatrixXd CtC_;       // q x q
  std::vector<double> Xt_;    // n x (q+1)
  // (q+1) x (q+1) inverse for the hyperplane projection; built on first
  // eta update so a rank-deficient design only fails when it matters
  mutable Eigen::MatrixXd XtX_inv_;
  mutable bool XtX_inv_built_ = false;
  const Eigen::MatrixXd& xtx_inverse() const;

  // state
  std::vector<std::vector<double>> theta_alpha_;  // [R][L]
  std::vector<std::vector<std::vector<double>>> theta_zeta_;  // [R][q][L]
  std::vector<std::vector<double>> Theta_eta_;    // [R] n x L row-major
  double s2M_ = 1.0, s2alpha_ = 1.0, s2eta_ = 1.0, s2zeta_ = 1.0;

  // caches
  std::vector<std::vector<double>> latent_;  // [R][p_r]
  std::vector<std::vector<double>> alpha_;   // [R][p_r]
  std::vector<std::vector<double>> a_;       // [R][L] = Q' T_nu(Q theta)
};

}  // namespace bima
