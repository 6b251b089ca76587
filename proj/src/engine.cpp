#include "bima/engine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bima/simd.hpp"

namespace bima {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double prior_quad(const std::vector<double>& theta,
                  const std::vector<double>& eigvals, double sigma2) {
  double q = 0.0;
  for (std::size_t l = 0; l < theta.size(); ++l)
    q += theta[l] * theta[l] / eigvals[l];
  return 0.5 * q / sigma2;
}

// log q(to | from) - log q(from | to) style helper is inlined at call sites;
// this draws the proposal noise.
void fill_normal(std::vector<double>& z, Rng& rng) {
  for (auto& v : z) v = rng.normal();
}

}  // namespace

// ---------------------------------------------------------------------------
// OutcomeEngine

OutcomeEngine::OutcomeEngine(const MediationDataset& data,
                             std::span<const RegionBasis> bases,
                             const PriorConfig& prior, double nu)
    : data_(&data),
      bases_(bases.begin(), bases.end()),
      prior_(prior),
      nu_(nu),
      n_(data.n),
      q_(data.q),
      p_(data.grid.p()),
      R_(static_cast<int>(bases.size())) {
  if (nu_ < 0.0) throw std::invalid_argument("OutcomeEngine: nu must be >= 0");
  const double inv_p = data.grid.voxel_measure();
  Mt_.resize(R_);
  for (int b = 0; b < R_; ++b) {
    const auto& vox = data.grid.region_voxels[bases_[b].region - 1];
    const int p_r = static_cast<int>(vox.size());
    Mt_[b].resize(static_cast<std::size_t>(n_) * p_r);
    for (int i = 0; i < n_; ++i) {
      const double* row = data.M.data() + static_cast<std::size_t>(i) * p_;
      double* out = Mt_[b].data() + static_cast<std::size_t>(i) * p_r;
      for (int j = 0; j < p_r; ++j) out[j] = row[vox[j]] * inv_p;
    }
  }
  Xt_.resize(static_cast<std::size_t>(n_) * (q_ + 1));
  for (int i = 0; i < n_; ++i) {
    Xt_[static_cast<std::size_t>(i) * (q_ + 1)] = data.X[i];
    for (int k = 0; k < q_; ++k)
      Xt_[static_cast<std::size_t>(i) * (q_ + 1) + 1 + k] =
          data.C[static_cast<std::size_t>(i) * q_ + k];
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      Xmap(Xt_.data(), n_, q_ + 1);
  XtX_ = Xmap.transpose() * Xmap;

  OutcomeState init;
  init.theta_beta.resize(R_);
  for (int b = 0; b < R_; ++b) init.theta_beta[b].assign(bases_[b].L, 0.0);
  init.xi.assign(q_, 0.0);
  init.nu_beta = nu_;
  set_state(init);
}

void OutcomeEngine::set_state(const OutcomeState& state) {
  if (static_cast<int>(state.theta_beta.size()) != R_)
    throw std::invalid_argument("OutcomeEngine: wrong region count");
  for (int b = 0; b < R_; ++b)
    if (static_cast<int>(state.theta_beta[b].size()) != bases_[b].L)
      throw std::invalid_argument("OutcomeEngine: theta size mismatch");
  if (static_cast<int>(state.xi.size()) != q_)
    throw std::invalid_argument("OutcomeEngine: xi size mismatch");
  if (!(state.sigma2_Y > 0.0) || !(state.sigma2_beta > 0.0))
    throw std::invalid_argument("OutcomeEngine: variances must be > 0");
  theta_ = state.theta_beta;
  gammaxi_.assign(q_ + 1, 0.0);
  gammaxi_[0] = state.gamma;
  for (int k = 0; k < q_; ++k) gammaxi_[1 + k] = state.xi[k];
  s2Y_ = state.sigma2_Y;
  s2beta_ = state.sigma2_beta;
  rebuild_caches();
}

OutcomeState OutcomeEngine::state() const {
  OutcomeState s;
  s.theta_beta = theta_;
  s.gamma = gammaxi_[0];
  s.xi.assign(gammaxi_.begin() + 1, gammaxi_.end());
  s.sigma2_Y = s2Y_;
  s.sigma2_beta = s2beta_;
  s.nu_beta = nu_;
  return s;
}

void OutcomeEngine::rebuild_caches() {
  latent_.resize(R_);
  beta_.resize(R_);
  e_ = data_->Y;
  for (int b = 0; b < R_; ++b) {
    const RegionBasis& B = bases_[b];
    latent_[b] = eval_region_latent(B, theta_[b]);
    beta_[b].resize(B.p_r);
    simd::soft_threshold(latent_[b].data(), nu_, beta_[b].data(), B.p_r);
    for (int i = 0; i < n_; ++i)
      e_[i] -= simd::dot(Mt_[b].data() + static_cast<std::size_t>(i) * B.p_r,
                         beta_[b].data(), B.p_r);
  }
  for (int i = 0; i < n_; ++i)
    e_[i] -= simd::dot(Xt_.data() + static_cast<std::size_t>(i) * (q_ + 1),
                       gammaxi_.data(), q_ + 1);
  rss_ = simd::sum_sq(e_.data(), n_);
}

std::vector<double> OutcomeEngine::region_grad(
    int b, const std::vector<double>& resid, const std::vector<double>& latent,
    const std::vector<double>& theta) const {
  const RegionBasis& B = bases_[b];
  std::vector<double> accum(B.p_r, 0.0);
  for (int i = 0; i < n_; ++i)
    simd::axpy(resid[i], Mt_[b].data() + static_cast<std::size_t>(i) * B.p_r,
               accum.data(), B.p_r);
  std::vector<double> masked(B.p_r);
  simd::threshold_mask_mul(latent.data(), nu_, accum.data(), masked.data(),
                           B.p_r);
  std::vector<double> grad(B.L, 0.0);
  for (int j = 0; j < B.p_r; ++j)
    simd::axpy(masked[j], B.row(j).data(), grad.data(), B.L);
  simd::scale(1.0 / s2Y_, grad.data(), B.L);
  if (prior_.include_priors)
    for (int l = 0; l < B.L; ++l)
      grad[l] -= theta[l] / (s2beta_ * B.eigvals[l]);
  return grad;
}

bool OutcomeEngine::mala_step(int b, double step, Rng& rng) {
  if (!(step > 0.0)) throw std::invalid_argument("mala_step: step must be > 0");
  if (!std::isfinite(rss_))
    throw DivergenceError("mala_step: non-finite log posterior");
  const RegionBasis& B = bases_[b];
  const double half_s2 = 0.5 * step * step;

  const auto grad_cur = region_grad(b, e_, latent_[b], theta_[b]);
  std::vector<double> z(B.L);
  fill_normal(z, rng);
  std::vector<double> theta_star(B.L);
  for (int l = 0; l < B.L; ++l)
    theta_star[l] = theta_[b][l] + half_s2 * grad_cur[l] + step * z[l];

  std::vector<double> latent_star = eval_region_latent(B, theta_star);
  std::vector<double> beta_star(B.p_r);
  simd::soft_threshold(latent_star.data(), nu_, beta_star.data(), B.p_r);
  std::vector<double> dbeta(B.p_r);
  for (int j = 0; j < B.p_r; ++j) dbeta[j] = beta_star[j] - beta_[b][j];

  std::vector<double> e_star(e_);
  for (int i = 0; i < n_; ++i)
    e_star[i] -= simd::dot(Mt_[b].data() + static_cast<std::size_t>(i) * B.p_r,
                           dbeta.data(), B.p_r);
  const double rss_star = simd::sum_sq(e_star.data(), n_);

  double lp_cur = -0.5 * rss_ / s2Y_;
  double lp_star = -0.5 * rss_star / s2Y_;
  if (prior_.include_priors) {
    lp_cur -= prior_quad(theta_[b], bases_[b].eigvals, s2beta_);
    lp_star -= prior_quad(theta_star, bases_[b].eigvals, s2beta_);
  }

  const auto grad_star = region_grad(b, e_star, latent_star, theta_star);
  double fwd = 0.0, rev = 0.0;
  for (int l = 0; l < B.L; ++l) {
    const double df = step * z[l];  // theta_star - theta - half_s2 grad_cur
    const double dr = theta_[b][l] - theta_star[l] - half_s2 * grad_star[l];
    fwd += df * df;
    rev += dr * dr;
  }
  const double log_accept =
      lp_star - lp_cur + (fwd - rev) / (2.0 * step * step);
  if (std::log(rng.uniform()) < log_accept) {
    theta_[b] = std::move(theta_star);
    latent_[b] = std::move(latent_star);
    beta_[b] = std::move(beta_star);
    e_ = std::move(e_star);
    rss_ = rss_star;
    return true;
  }
  return false;
}

void OutcomeEngine::ensure_working_design() {
  if (working_design_built_) return;
  W_.resize(R_);
  for (int b = 0; b < R_; ++b) {
    const RegionBasis& B = bases_[b];
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        Mt(Mt_[b].data(), n_, B.p_r);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        Q(B.Q.data(), B.p_r, B.L);
    W_[b] = Mt * Q;
  }
  working_design_built_ = true;
}

void OutcomeEngine::gibbs_theta_nu0(int b, Rng& rng) {
  if (nu_ != 0.0)
    throw std::logic_error("gibbs_theta_nu0 requires nu == 0");
  ensure_working_design();
  const RegionBasis& B = bases_[b];
  Eigen::Map<Eigen::VectorXd> e(e_.data(), n_);
  Eigen::VectorXd theta_old =
      Eigen::Map<const Eigen::VectorXd>(theta_[b].data(), B.L);
  Eigen::VectorXd e_base = e + W_[b] * theta_old;

  Eigen::MatrixXd A = (W_[b].transpose() * W_[b]) / s2Y_;
  if (prior_.include_priors)
    for (int l = 0; l < B.L; ++l) A(l, l) += 1.0 / (s2beta_ * B.eigvals[l]);
  Eigen::VectorXd rhs = W_[b].transpose() * e_base / s2Y_;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("gibbs_theta_nu0: singular posterior precision");
  Eigen::VectorXd mean = llt.solve(rhs);
  Eigen::VectorXd z(B.L);
  for (int l = 0; l < B.L; ++l) z(l) = rng.normal();
  Eigen::VectorXd theta_new =
      mean + llt.matrixU().solve(z);

  e = e_base - W_[b] * theta_new;
  for (int l = 0; l < B.L; ++l) theta_[b][l] = theta_new(l);
  latent_[b] = eval_region_latent(B, theta_[b]);
  beta_[b] = latent_[b];  // nu == 0
  rss_ = simd::sum_sq(e_.data(), n_);
}

void OutcomeEngine::gibbs_gamma_xi(Rng& rng) {
  const int m = q_ + 1;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      Xmap(Xt_.data(), n_, m);
  Eigen::Map<Eigen::VectorXd> e(e_.data(), n_);
  Eigen::VectorXd gx = Eigen::Map<const Eigen::VectorXd>(gammaxi_.data(), m);
  Eigen::VectorXd ytil = e + Xmap * gx;

  Eigen::MatrixXd A = XtX_ / s2Y_;
  if (prior_.include_priors)
    A.diagonal().array() += 1.0 / prior_.sigma_gamma0_sq;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("gibbs_gamma_xi: singular posterior precision");
  Eigen::VectorXd mean = llt.solve(Xmap.transpose() * ytil / s2Y_);
  Eigen::VectorXd z(m);
  for (int k = 0; k < m; ++k) z(k) = rng.normal();
  Eigen::VectorXd gx_new = mean + llt.matrixU().solve(z);

  e = ytil - Xmap * gx_new;
  for (int k = 0; k < m; ++k) gammaxi_[k] = gx_new(k);
  rss_ = simd::sum_sq(e_.data(), n_);
}

void OutcomeEngine::gibbs_variances(Rng& rng) {
  s2Y_ = rng.inverse_gamma(prior_.ig_shape + 0.5 * n_,
                           prior_.ig_rate + 0.5 * rss_);
  double quad = 0.0;
  int L_total = 0;
  for (int b = 0; b < R_; ++b) {
    L_total += bases_[b].L;
    for (int l = 0; l < bases_[b].L; ++l)
      quad += theta_[b][l] * theta_[b][l] / bases_[b].eigvals[l];
  }
  s2beta_ = rng.inverse_gamma(prior_.ig_shape + 0.5 * L_total,
                              prior_.ig_rate + 0.5 * quad);
}

double OutcomeEngine::loglik() const {
  return -0.5 * n_ * (kLog2Pi + std::log(s2Y_)) - 0.5 * rss_ / s2Y_;
}

double OutcomeEngine::logpost() const {
  return outcome_logpost(state(), *data_, bases_, prior_);
}

std::vector<double> OutcomeEngine::beta_values() const {
  std::vector<double> values(p_, 0.0);
  for (int b = 0; b < R_; ++b) {
    const auto& vox = data_->grid.region_voxels[bases_[b].region - 1];
    for (std::size_t j = 0; j < vox.size(); ++j) values[vox[j]] = beta_[b][j];
  }
  return values;
}

// ---------------------------------------------------------------------------
// MediatorEngine

MediatorEngine::MediatorEngine(const MediationDataset& data,
                               std::span<const RegionBasis> bases,
                               const PriorConfig& prior, double nu,
                               bool eta_fixed_zero)
    : data_(&data),
      bases_(bases.begin(), bases.end()),
      prior_(prior),
      nu_(nu),
      eta_fixed_zero_(eta_fixed_zero),
      n_(data.n),
      q_(data.q),
      p_(data.grid.p()),
      R_(static_cast<int>(bases.size())) {
  if (nu_ < 0.0) throw std::invalid_argument("MediatorEngine: nu must be >= 0");

  Mtil_.resize(R_);
  SXM_.resize(R_);
  SCM_.resize(R_);
  QtSXM_.resize(R_);
  Msumsq_.assign(R_, 0.0);
  for (int b = 0; b < R_; ++b) {
    const RegionBasis& B = bases_[b];
    const auto& vox = data.grid.region_voxels[B.region - 1];
    const int p_r = B.p_r;
    // gather region block of M
    std::vector<double> Mr(static_cast<std::size_t>(n_) * p_r);
    for (int i = 0; i < n_; ++i) {
      const double* row = data.M.data() + static_cast<std::size_t>(i) * p_;
      double* out = Mr.data() + static_cast<std::size_t>(i) * p_r;
      for (int j = 0; j < p_r; ++j) out[j] = row[vox[j]];
    }
    Msumsq_[b] = simd::sum_sq(Mr.data(), Mr.size());

    Mtil_[b].assign(static_cast<std::size_t>(n_) * B.L, 0.0);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        Mmap(Mr.data(), n_, p_r);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        Q(B.Q.data(), p_r, B.L);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>
        Mtil(Mtil_[b].data(), n_, B.L);
    Mtil = Mmap * Q;

    SXM_[b].assign(p_r, 0.0);
    for (int i = 0; i < n_; ++i)
      simd::axpy(data.X[i], Mr.data() + static_cast<std::size_t>(i) * p_r,
                 SXM_[b].data(), p_r);
    SCM_[b].assign(static_cast<std::size_t>(q_) * p_r, 0.0);
    for (int k = 0; k < q_; ++k) {
      double* out = SCM_[b].data() + static_cast<std::size_t>(k) * p_r;
      for (int i = 0; i < n_; ++i)
        simd::axpy(data.C[static_cast<std::size_t>(i) * q_ + k],
                   Mr.data() + static_cast<std::size_t>(i) * p_r, out, p_r);
    }
    QtSXM_[b].assign(B.L, 0.0);
    for (int j = 0; j < p_r; ++j)
      simd::axpy(SXM_[b][j], B.row(j).data(), QtSXM_[b].data(), B.L);
  }

  Sxx_ = simd::sum_sq(data.X.data(), n_);
  SXC_.assign(q_, 0.0);
  CtC_ = Eigen::MatrixXd::Zero(q_, q_);
  for (int i = 0; i < n_; ++i) {
    for (int k = 0; k < q_; ++k) {
      const double c = data.C[static_cast<std::size_t>(i) * q_ + k];
      SXC_[k] += data.X[i] * c;
      for (int k2 = 0; k2 <= k; ++k2)
        CtC_(k, k2) += c * data.C[static_cast<std::size_t>(i) * q_ + k2];
    }
  }
  for (int k = 0; k < q_; ++k)
    for (int k2 = k + 1; k2 < q_; ++k2) CtC_(k, k2) = CtC_(k2, k);

  Xt_.resize(static_cast<std::size_t>(n_) * (q_ + 1));
  for (int i = 0; i < n_; ++i) {
    Xt_[static_cast<std::size_t>(i) * (q_ + 1)] = data.X[i];
    for (int k = 0; k < q_; ++k)
      Xt_[static_cast<std::size_t>(i) * (q_ + 1) + 1 + k] =
          data.C[static_cast<std::size_t>(i) * q_ + k];
  }
  MediatorState init;
  init.theta_alpha.resize(R_);
  for (int b = 0; b < R_; ++b) init.theta_alpha[b].assign(bases_[b].L, 0.0);
  init.theta_zeta.assign(q_, init.theta_alpha);
  init.theta_eta.assign(n_, init.theta_alpha);
  init.nu_alpha = nu_;
  set_state(init);
}

void MediatorEngine::set_state(const MediatorState& state) {
  if (static_cast<int>(state.theta_alpha.size()) != R_)
    throw std::invalid_argument("MediatorEngine: wrong region count");
  if (static_cast<int>(state.theta_zeta.size()) != q_ ||
      static_cast<int>(state.theta_eta.size()) != n_)
    throw std::invalid_argument("MediatorEngine: zeta/eta shape mismatch");
  if (!(state.sigma2_M > 0.0) || !(state.sigma2_alpha > 0.0) ||
      !(state.sigma2_eta > 0.0) || !(state.sigma2_zeta > 0.0))
    throw std::invalid_argument("MediatorEngine: variances must be > 0");

  theta_alpha_ = state.theta_alpha;
  theta_zeta_.assign(R_, {});
  Theta_eta_.assign(R_, {});
  for (int b = 0; b < R_; ++b) {
    const int L = bases_[b].L;
    if (static_cast<int>(state.theta_alpha[b].size()) != L)
      throw std::invalid_argument("MediatorEngine: theta_alpha size mismatch");
    theta_zeta_[b].assign(q_, std::vector<double>(L, 0.0));
    for (int k = 0; k < q_; ++k) {
      if (static_cast<int>(state.theta_zeta[k][b].size()) != L)
        throw std::invalid_argument("MediatorEngine: theta_zeta size mismatch");
      theta_zeta_[b][k] = state.theta_zeta[k][b];
    }
    Theta_eta_[b].assign(static_cast<std::size_t>(n_) * L, 0.0);
    for (int i = 0; i < n_; ++i) {
      if (static_cast<int>(state.theta_eta[i][b].size()) != L)
        throw std::invalid_argument("MediatorEngine: theta_eta size mismatch");
      for (int l = 0; l < L; ++l)
        Theta_eta_[b][static_cast<std::size_t>(i) * L + l] =
            state.theta_eta[i][b][l];
    }
  }
  s2M_ = state.sigma2_M;
  s2alpha_ = state.sigma2_alpha;
  s2eta_ = state.sigma2_eta;
  s2zeta_ = state.sigma2_zeta;

  latent_.resize(R_);
  alpha_.resize(R_);
  a_.resize(R_);
  for (int b = 0; b < R_; ++b) refresh_alpha_caches(b);
}

MediatorState MediatorEngine::state() const {
  MediatorState s;
  s.theta_alpha = theta_alpha_;
  s.theta_zeta.assign(q_, RegionCoeffs(R_));
  for (int k = 0; k < q_; ++k)
    for (int b = 0; b < R_; ++b) s.theta_zeta[k][b] = theta_zeta_[b][k];
  s.theta_eta.assign(n_, RegionCoeffs(R_));
  for (int i = 0; i < n_; ++i)
    for (int b = 0; b < R_; ++b) {
      const int L = bases_[b].L;
      s.theta_eta[i][b].assign(
          Theta_eta_[b].begin() + static_cast<std::size_t>(i) * L,
          Theta_eta_[b].begin() + static_cast<std::size_t>(i + 1) * L);
    }
  s.sigma2_M = s2M_;
  s.sigma2_alpha = s2alpha_;
  s.sigma2_eta = s2eta_;
  s.sigma2_zeta = s2zeta_;
  s.nu_alpha = nu_;
  return s;
}

const Eigen::MatrixXd& MediatorEngine::xtx_inverse() const {
  if (!XtX_inv_built_) {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        Xmap(Xt_.data(), n_, q_ + 1);
    Eigen::MatrixXd XtX = Xmap.transpose() * Xmap;
    Eigen::LLT<Eigen::MatrixXd> llt(XtX);
    // LLT does not reliably flag semidefinite inputs; check the
    // reconstruction instead
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
      const Eigen::MatrixXd inv =
          llt.solve(Eigen::MatrixXd::Identity(q_ + 1, q_ + 1));
      ok = ((XtX * inv - Eigen::MatrixXd::Identity(q_ + 1, q_ + 1))
                .cwiseAbs()
                .maxCoeff() < 1e-6);
      if (ok) XtX_inv_ = inv;
    }
    if (!ok)
      throw std::runtime_error(
          "MediatorEngine: design (X, C) is rank deficient; the individual "
          "effect constraint is not identifiable");
    XtX_inv_built_ = true;
  }
  return XtX_inv_;
}

void MediatorEngine::refresh_alpha_caches(int b) {
  const RegionBasis& B = bases_[b];
  latent_[b] = eval_region_latent(B, theta_alpha_[b]);
  alpha_[b].resize(B.p_r);
  simd::soft_threshold(latent_[b].data(), nu_, alpha_[b].data(), B.p_r);
  a_[b].assign(B.L, 0.0);
  for (int j = 0; j < B.p_r; ++j)
    simd::axpy(alpha_[b][j], B.row(j).data(), a_[b].data(), B.L);
}

std::vector<double> MediatorEngine::basis_load(int b) const {
  const int L = bases_[b].L;
  std::vector<double> w(L, 0.0);
  for (int k = 0; k < q_; ++k)
    simd::axpy(SXC_[k], theta_zeta_[b][k].data(), w.data(), L);
  for (int i = 0; i < n_; ++i)
    simd::axpy(data_->X[i],
               Theta_eta_[b].data() + static_cast<std::size_t>(i) * L, w.data(),
               L);
  return w;
}

std::vector<double> MediatorEngine::alpha_grad(
    int b, const std::vector<double>& sr, const std::vector<double>& latent,
    const std::vector<double>& theta) const {
  const RegionBasis& B = bases_[b];
  std::vector<double> masked(B.p_r);
  simd::threshold_mask_mul(latent.data(), nu_, sr.data(), masked.data(),
                           B.p_r);
  std::vector<double> grad(B.L, 0.0);
  for (int j = 0; j < B.p_r; ++j)
    simd::axpy(masked[j], B.row(j).data(), grad.data(), B.L);
  simd::scale(1.0 / s2M_, grad.data(), B.L);
  if (prior_.include_priors)
    for (int l = 0; l < B.L; ++l)
      grad[l] -= theta[l] / (s2alpha_ * B.eigvals[l]);
  return grad;
}

bool MediatorEngine::mala_step_alpha(int b, double step, Rng& rng) {
  if (!(step > 0.0)) throw std::invalid_argument("mala_step: step must be > 0");
  const RegionBasis& B = bases_[b];
  const double half_s2 = 0.5 * step * step;

  // b_pr = sum_i X_i (M_i - C zeta - eta) over the region; independent of
  // theta_alpha, so it serves both endpoint gradients.
  const auto w = basis_load(b);
  std::vector<double> b_pr(B.p_r);
  for (int j = 0; j < B.p_r; ++j)
    b_pr[j] = SXM_[b][j] - simd::dot(B.row(j).data(), w.data(), B.L);

  auto lik_part = [&](const std::vector<double>& alpha) {
    // alpha-dependent part of -||R||^2 / (2 s2M)
    const double cross = simd::dot(b_pr.data(), alpha.data(), B.p_r);
    const double quad = simd::sum_sq(alpha.data(), B.p_r);
    return (2.0 * cross - Sxx_ * quad) / (2.0 * s2M_);
  };
  auto sr_of = [&](const std::vector<double>& alpha) {
    std::vector<double> sr(B.p_r);
    for (int j = 0; j < B.p_r; ++j) sr[j] = b_pr[j] - Sxx_ * alpha[j];
    return sr;
  };

  const auto sr_cur = sr_of(alpha_[b]);
  const auto grad_cur = alpha_grad(b, sr_cur, latent_[b], theta_alpha_[b]);
  std::vector<double> z(B.L);
  fill_normal(z, rng);
  std::vector<double> theta_star(B.L);
  for (int l = 0; l < B.L; ++l)
    theta_star[l] = theta_alpha_[b][l] + half_s2 * grad_cur[l] + step * z[l];

  std::vector<double> latent_star = eval_region_latent(B, theta_star);
  std::vector<double> alpha_star(B.p_r);
  simd::soft_threshold(latent_star.data(), nu_, alpha_star.data(), B.p_r);

  double lp_cur = lik_part(alpha_[b]);
  double lp_star = lik_part(alpha_star);
  if (prior_.include_priors) {
    lp_cur -= prior_quad(theta_alpha_[b], B.eigvals, s2alpha_);
    lp_star -= prior_quad(theta_star, B.eigvals, s2alpha_);
  }
  if (!std::isfinite(lp_cur))
    throw DivergenceError("mala_step_alpha: non-finite log posterior");

  const auto sr_star = sr_of(alpha_star);
  const auto grad_star = alpha_grad(b, sr_star, latent_star, theta_star);
  double fwd = 0.0, rev = 0.0;
  for (int l = 0; l < B.L; ++l) {
    const double df = step * z[l];
    const double dr = theta_alpha_[b][l] - theta_star[l] - half_s2 * grad_star[l];
    fwd += df * df;
    rev += dr * dr;
  }
  const double log_accept =
      lp_star - lp_cur + (fwd - rev) / (2.0 * step * step);
  if (std::log(rng.uniform()) < log_accept) {
    theta_alpha_[b] = std::move(theta_star);
    latent_[b] = std::move(latent_star);
    alpha_[b] = std::move(alpha_star);
    a_[b].assign(B.L, 0.0);
    for (int j = 0; j < B.p_r; ++j)
      simd::axpy(alpha_[b][j], B.row(j).data(), a_[b].data(), B.L);
    return true;
  }
  return false;
}

void MediatorEngine::gibbs_alpha_nu0(int b, Rng& rng) {
  if (nu_ != 0.0) throw std::logic_error("gibbs_alpha_nu0 requires nu == 0");
  const RegionBasis& B = bases_[b];
  const auto w = basis_load(b);
  for (int l = 0; l < B.L; ++l) {
    const double prec = Sxx_ / s2M_ +
                        (prior_.include_priors
                             ? 1.0 / (s2alpha_ * B.eigvals[l])
                             : 0.0);
    const double mean = (QtSXM_[b][l] - w[l]) / s2M_ / prec;
    theta_alpha_[b][l] = mean + rng.normal() / std::sqrt(prec);
  }
  refresh_alpha_caches(b);
}

void MediatorEngine::gibbs_zeta(int b, int k, Rng& rng) {
  const RegionBasis& B = bases_[b];
  const int L = B.L;
  // projected residual sum_i C_ik (M_i - X alpha - other zeta - eta) in
  // basis coordinates
  std::vector<double> proj(L, 0.0);
  for (int i = 0; i < n_; ++i)
    simd::axpy(data_->C[static_cast<std::size_t>(i) * q_ + k],
               Mtil_[b].data() + static_cast<std::size_t>(i) * L, proj.data(),
               L);
  simd::axpy(-SXC_[k], a_[b].data(), proj.data(), L);
  for (int k2 = 0; k2 < q_; ++k2) {
    if (k2 == k) continue;
    simd::axpy(-CtC_(k2, k), theta_zeta_[b][k2].data(), proj.data(), L);
  }
  for (int i = 0; i < n_; ++i)
    simd::axpy(-data_->C[static_cast<std::size_t>(i) * q_ + k],
               Theta_eta_[b].data() + static_cast<std::size_t>(i) * L,
               proj.data(), L);

  const double scc = CtC_(k, k);
  for (int l = 0; l < L; ++l) {
    const double prec = scc / s2M_ + 1.0 / (s2zeta_ * B.eigvals[l]);
    const double mean = proj[l] / s2M_ / prec;
    theta_zeta_[b][k][l] = mean + rng.normal() / std::sqrt(prec);
  }
}

void MediatorEngine::eta_conditional(int b, int l, std::vector<double>& mean,
                                     double& var) const {
  const RegionBasis& B = bases_[b];
  const int L = B.L;
  const double c = 1.0 / (1.0 / s2M_ + 1.0 / (s2eta_ * B.eigvals[l]));
  var = c;
  mean.resize(n_);
  for (int i = 0; i < n_; ++i) {
    double g = Mtil_[b][static_cast<std::size_t>(i) * L + l] -
               data_->X[i] * a_[b][l];
    for (int k = 0; k < q_; ++k)
      g -= data_->C[static_cast<std::size_t>(i) * q_ + k] *
           theta_zeta_[b][k][l];
    mean[i] = c * g / s2M_;
  }
}

std::vector<double> MediatorEngine::eta_draw_constrained(int b, int l,
                                                         Rng& rng) {
  std::vector<double> v;
  double var = 0.0;
  eta_conditional(b, l, v, var);
  const double sd = std::sqrt(var);
  for (int i = 0; i < n_; ++i) v[i] += sd * rng.normal();

  // hyperplane conditioning: isotropic covariance makes the conditioned draw
  // an orthogonal projection onto the null space of (X, C)'
  const int m = q_ + 1;
  Eigen::VectorXd t = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < n_; ++i)
    for (int k = 0; k < m; ++k)
      t(k) += Xt_[static_cast<std::size_t>(i) * m + k] * v[i];
  Eigen::VectorXd s = xtx_inverse() * t;
  for (int i = 0; i < n_; ++i) {
    double dot = 0.0;
    for (int k = 0; k < m; ++k)
      dot += Xt_[static_cast<std::size_t>(i) * m + k] * s(k);
    v[i] -= dot;
  }

  const int L = bases_[b].L;
  for (int i = 0; i < n_; ++i)
    Theta_eta_[b][static_cast<std::size_t>(i) * L + l] = v[i];
  return v;
}

void MediatorEngine::gibbs_eta(int b, Rng& rng) {
  if (eta_fixed_zero_) return;
  for (int l = 0; l < bases_[b].L; ++l) eta_draw_constrained(b, l, rng);
}

double MediatorEngine::rss() const {
  double total = 0.0;
  for (int b = 0; b < R_; ++b) {
    const RegionBasis& B = bases_[b];
    const int L = B.L;
    // U_i = sum_k C_ik zeta_k + eta_i in basis coordinates
    double u_sumsq = 0.0, mtil_u = 0.0;
    std::vector<double> utx(L, 0.0);
    std::vector<double> u(L);
    for (int i = 0; i < n_; ++i) {
      std::copy(Theta_eta_[b].begin() + static_cast<std::size_t>(i) * L,
                Theta_eta_[b].begin() + static_cast<std::size_t>(i + 1) * L,
                u.begin());
      for (int k = 0; k < q_; ++k)
        simd::axpy(data_->C[static_cast<std::size_t>(i) * q_ + k],
                   theta_zeta_[b][k].data(), u.data(), L);
      u_sumsq += simd::sum_sq(u.data(), L);
      mtil_u += simd::dot(Mtil_[b].data() + static_cast<std::size_t>(i) * L,
                          u.data(), L);
      simd::axpy(data_->X[i], u.data(), utx.data(), L);
    }
    const double sxm_alpha =
        simd::dot(SXM_[b].data(), alpha_[b].data(), B.p_r);
    const double a_utx = simd::dot(a_[b].data(), utx.data(), L);
    const double alpha_sq = simd::sum_sq(alpha_[b].data(), B.p_r);
    total += Msumsq_[b] - 2.0 * sxm_alpha - 2.0 * mtil_u + Sxx_ * alpha_sq +
             2.0 * a_utx + u_sumsq;
  }
  return total;
}

void MediatorEngine::gibbs_variances(Rng& rng) {
  s2M_ = rng.inverse_gamma(
      prior_.ig_shape + 0.5 * static_cast<double>(n_) * p_,
      prior_.ig_rate + 0.5 * rss());

  double quad_alpha = 0.0, quad_zeta = 0.0, quad_eta = 0.0;
  int L_total = 0;
  for (int b = 0; b < R_; ++b) {
    const RegionBasis& B = bases_[b];
    L_total += B.L;
    for (int l = 0; l < B.L; ++l) {
      const double inv_eig = 1.0 / B.eigvals[l];
      quad_alpha += theta_alpha_[b][l] * theta_alpha_[b][l] * inv_eig;
      for (int k = 0; k < q_; ++k)
        quad_zeta += theta_zeta_[b][k][l] * theta_zeta_[b][k][l] * inv_eig;
      if (!eta_fixed_zero_)
        for (int i = 0; i < n_; ++i) {
          const double t = Theta_eta_[b][static_cast<std::size_t>(i) * B.L + l];
          quad_eta += t * t * inv_eig;
        }
    }
  }
  s2alpha_ = rng.inverse_gamma(prior_.ig_shape + 0.5 * L_total,
                               prior_.ig_rate + 0.5 * quad_alpha);
  if (q_ > 0)
    s2zeta_ = rng.inverse_gamma(prior_.ig_shape + 0.5 * q_ * L_total,
                                prior_.ig_rate + 0.5 * quad_zeta);
  if (!eta_fixed_zero_)
    s2eta_ = rng.inverse_gamma(
        prior_.ig_shape + 0.5 * static_cast<double>(n_) * L_total,
        prior_.ig_rate + 0.5 * quad_eta);
}

double MediatorEngine::loglik() const {
  return -0.5 * static_cast<double>(n_) * p_ * (kLog2Pi + std::log(s2M_)) -
         0.5 * rss() / s2M_;
}

double MediatorEngine::logpost() const {
  return mediator_logpost(state(), *data_, bases_, prior_);
}

double MediatorEngine::eta_constraint_max() const {
  double worst = 0.0;
  const int m = q_ + 1;
  for (int b = 0; b < R_; ++b) {
    const int L = bases_[b].L;
    std::vector<double> acc(static_cast<std::size_t>(m) * L, 0.0);
    for (int i = 0; i < n_; ++i)
      for (int k = 0; k < m; ++k)
        simd::axpy(Xt_[static_cast<std::size_t>(i) * m + k],
                   Theta_eta_[b].data() + static_cast<std::size_t>(i) * L,
                   acc.data() + static_cast<std::size_t>(k) * L, L);
    for (const double v : acc) worst = std::max(worst, std::fabs(v));
  }
  return worst;
}

std::vector<double> MediatorEngine::alpha_values() const {
  std::vector<double> values(p_, 0.0);
  for (int b = 0; b < R_; ++b) {
    const auto& vox = data_->grid.region_voxels[bases_[b].region - 1];
    for (std::size_t j = 0; j < vox.size(); ++j) values[vox[j]] = alpha_[b][j];
  }
  return values;
}

std::vector<double> MediatorEngine::eta_column(int b, int l) const {
  const int L = bases_[b].L;
  std::vector<double> col(n_);
  for (int i = 0; i < n_; ++i)
    col[i] = Theta_eta_[b][static_cast<std::size_t>(i) * L + l];
  return col;
}

}  // namespace bima
