#include "bima/sampler.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bima/simd.hpp"

namespace bima {

void SamplerConfig::validate() const {
  if (iters <= 0) throw std::invalid_argument("config: iters must be > 0");
  if (!(burnin_frac > 0.0) || !(burnin_frac < 1.0))
    throw std::invalid_argument("config: burnin_frac must be in (0,1)");
  if (thin < 1) throw std::invalid_argument("config: thin must be >= 1");
  if (nu < 0.0) throw std::invalid_argument("config: nu must be >= 0");
  if (beta_only_frac < 0.0 || beta_only_frac >= 1.0)
    throw std::invalid_argument("config: beta_only_frac must be in [0,1)");
  if (adapt_window <= 0)
    throw std::invalid_argument("config: adapt_window must be > 0");
  for (const double s : step_init)
    if (!(s > 0.0)) throw std::invalid_argument("config: step_init must be > 0");
}

std::pair<std::vector<double>, bool> mala_step(
    const std::vector<double>& theta,
    const std::function<double(const std::vector<double>&)>& logpost_fn,
    const std::function<std::vector<double>(const std::vector<double>&)>&
        grad_fn,
    double step, Rng& rng) {
  if (!(step > 0.0)) throw std::invalid_argument("mala_step: step must be > 0");
  const std::size_t d = theta.size();
  const double half_s2 = 0.5 * step * step;

  const double lp_cur = logpost_fn(theta);
  if (!std::isfinite(lp_cur))
    throw DivergenceError(
        "mala_step: non-finite log posterior at current point");
  const auto grad_cur = grad_fn(theta);

  std::vector<double> z(d), theta_star(d);
  for (std::size_t i = 0; i < d; ++i) {
    z[i] = rng.normal();
    theta_star[i] = theta[i] + half_s2 * grad_cur[i] + step * z[i];
  }
  const double lp_star = logpost_fn(theta_star);
  const auto grad_star = grad_fn(theta_star);

  double fwd = 0.0, rev = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double df = step * z[i];
    const double dr = theta[i] - theta_star[i] - half_s2 * grad_star[i];
    fwd += df * df;
    rev += dr * dr;
  }
  const double log_accept =
      lp_star - lp_cur + (fwd - rev) / (2.0 * step * step);
  if (std::log(rng.uniform()) < log_accept) return {std::move(theta_star), true};
  return {theta, false};
}

double adapt_step(double step, double recent_accept, double target,
                  double kappa) {
  return step * std::exp(kappa * (recent_accept - target));
}

std::vector<double> default_targets(std::span<const RegionBasis> bases,
                                    double c) {
  std::vector<double> targets(bases.size());
  for (std::size_t b = 0; b < bases.size(); ++b)
    targets[b] = std::clamp(c / bases[b].L, 0.2, 0.4);
  return targets;
}

std::vector<double> project_null_space(const std::vector<double>& Xt, int n,
                                       int m, std::vector<double> v) {
  if (static_cast<int>(Xt.size()) != n * m ||
      static_cast<int>(v.size()) != n)
    throw std::invalid_argument("project_null_space: shape mismatch");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      X(Xt.data(), n, m);
  Eigen::LLT<Eigen::MatrixXd> llt(X.transpose() * X);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("project_null_space: rank-deficient design");
  Eigen::Map<Eigen::VectorXd> vv(v.data(), n);
  vv -= X * llt.solve(X.transpose() * vv);
  return v;
}

// --------------------------------------------------------------------------
// spec-surface conjugate updates (engine-backed)

void gibbs_gamma_xi(OutcomeState& state, const MediationDataset& data,
                    std::span<const RegionBasis> bases,
                    const PriorConfig& prior, Rng& rng) {
  OutcomeEngine engine(data, bases, prior, state.nu_beta);
  engine.set_state(state);
  engine.gibbs_gamma_xi(rng);
  const OutcomeState updated = engine.state();
  state.gamma = updated.gamma;
  state.xi = updated.xi;
}

std::vector<double> gibbs_zeta(MediatorState& state,
                               const MediationDataset& data,
                               std::span<const RegionBasis> bases, int region,
                               int k, Rng& rng) {
  MediatorEngine engine(data, bases, PriorConfig{}, state.nu_alpha, false);
  engine.set_state(state);
  int b = -1;
  for (std::size_t i = 0; i < bases.size(); ++i)
    if (bases[i].region == region) b = static_cast<int>(i);
  if (b < 0) throw std::invalid_argument("gibbs_zeta: unknown region");
  engine.gibbs_zeta(b, k, rng);
  state.theta_zeta[k][b] = engine.theta_zeta_block(b, k);
  return state.theta_zeta[k][b];
}

std::vector<double> gibbs_eta_constrained(MediatorState& state,
                                          const MediationDataset& data,
                                          std::span<const RegionBasis> bases,
                                          int region, int l, Rng& rng) {
  MediatorEngine engine(data, bases, PriorConfig{}, state.nu_alpha, false);
  engine.set_state(state);
  int b = -1;
  for (std::size_t i = 0; i < bases.size(); ++i)
    if (bases[i].region == region) b = static_cast<int>(i);
  if (b < 0)
    throw std::invalid_argument("gibbs_eta_constrained: unknown region");
  const auto column = engine.eta_draw_constrained(b, l, rng);
  for (int i = 0; i < data.n; ++i) state.theta_eta[i][b][l] = column[i];
  return column;
}

void gibbs_variances(OutcomeState& state, const MediationDataset& data,
                     std::span<const RegionBasis> bases,
                     const PriorConfig& prior, Rng& rng) {
  OutcomeEngine engine(data, bases, prior, state.nu_beta);
  engine.set_state(state);
  engine.gibbs_variances(rng);
  const OutcomeState updated = engine.state();
  state.sigma2_Y = updated.sigma2_Y;
  state.sigma2_beta = updated.sigma2_beta;
}

void gibbs_variances(MediatorState& state, const MediationDataset& data,
                     std::span<const RegionBasis> bases,
                     const PriorConfig& prior, Rng& rng) {
  MediatorEngine engine(data, bases, prior, state.nu_alpha, false);
  engine.set_state(state);
  engine.gibbs_variances(rng);
  const MediatorState updated = engine.state();
  state.sigma2_M = updated.sigma2_M;
  state.sigma2_alpha = updated.sigma2_alpha;
  state.sigma2_eta = updated.sigma2_eta;
  state.sigma2_zeta = updated.sigma2_zeta;
}

// --------------------------------------------------------------------------
// lasso

LassoFit lasso_coordinate_descent(const std::vector<double>& Wpen, int n,
                                  int p_pen,
                                  const std::vector<double>& Wunpen, int p_unp,
                                  const std::vector<double>& y, double lambda,
                                  int max_sweeps, double tol) {
  if (n <= 0 || p_pen < 0 || p_unp < 0)
    throw std::invalid_argument("lasso: bad shapes");

  // standardize penalized columns; column-major copies for the sweeps
  std::vector<double> cols(static_cast<std::size_t>(p_pen) * n);
  std::vector<double> mean(p_pen, 0.0), sd(p_pen, 0.0);
  for (int j = 0; j < p_pen; ++j) {
    double m = 0.0;
    for (int i = 0; i < n; ++i)
      m += Wpen[static_cast<std::size_t>(i) * p_pen + j];
    m /= n;
    double v = 0.0;
    for (int i = 0; i < n; ++i) {
      const double c = Wpen[static_cast<std::size_t>(i) * p_pen + j] - m;
      cols[static_cast<std::size_t>(j) * n + i] = c;
      v += c * c;
    }
    mean[j] = m;
    sd[j] = std::sqrt(v / n);
    if (sd[j] > 0.0)
      simd::scale(1.0 / sd[j], cols.data() + static_cast<std::size_t>(j) * n,
                  n);
  }
  // centered unpenalized block
  Eigen::MatrixXd U(n, p_unp);
  for (int k = 0; k < p_unp; ++k) {
    double m = 0.0;
    for (int i = 0; i < n; ++i)
      m += Wunpen[static_cast<std::size_t>(i) * p_unp + k];
    m /= n;
    for (int i = 0; i < n; ++i)
      U(i, k) = Wunpen[static_cast<std::size_t>(i) * p_unp + k] - m;
  }
  const double ybar =
      std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  std::vector<double> r(n);
  for (int i = 0; i < n; ++i) r[i] = y[i] - ybar;

  Eigen::LLT<Eigen::MatrixXd> llt;
  if (p_unp > 0) {
    Eigen::MatrixXd UtU = U.transpose() * U;
    UtU.diagonal().array() += 1e-10;  // guard against constant columns
    llt.compute(UtU);
  }

  std::vector<double> b(p_pen, 0.0);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p_unp);
  bool converged = false;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    double max_delta = 0.0;
    if (p_unp > 0) {
      // refit the unpenalized block against the current partial residual
      Eigen::VectorXd rv(n);
      for (int i = 0; i < n; ++i) rv(i) = r[i] + U.row(i).dot(g);
      Eigen::VectorXd g_new = llt.solve(U.transpose() * rv);
      Eigen::VectorXd shift = U * (g_new - g);
      for (int i = 0; i < n; ++i) r[i] -= shift(i);
      max_delta = std::max(max_delta, (g_new - g).cwiseAbs().maxCoeff());
      g = g_new;
    }
    for (int j = 0; j < p_pen; ++j) {
      if (sd[j] == 0.0) continue;
      const double* col = cols.data() + static_cast<std::size_t>(j) * n;
      const double rho = b[j] + simd::dot(col, r.data(), n) / n;
      const double bj = soft_threshold(rho, lambda);
      const double delta = bj - b[j];
      if (delta != 0.0) {
        simd::axpy(-delta, col, r.data(), n);
        b[j] = bj;
      }
      max_delta = std::max(max_delta, std::fabs(delta));
    }
    converged = max_delta < tol;
  }

  LassoFit fit;
  fit.converged = converged;
  fit.beta.assign(p_pen, 0.0);
  double offset = ybar;
  for (int j = 0; j < p_pen; ++j) {
    if (sd[j] > 0.0) fit.beta[j] = b[j] / sd[j];
    offset -= fit.beta[j] * mean[j];
  }
  fit.unpen.assign(g.data(), g.data() + p_unp);
  fit.intercept = offset;
  return fit;
}

// --------------------------------------------------------------------------
// initialization

namespace {

double lasso_lambda_max(const std::vector<double>& Wpen, int n, int p_pen,
                        const std::vector<double>& y) {
  double ybar = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double lmax = 0.0;
  for (int j = 0; j < p_pen; ++j) {
    double m = 0.0;
    for (int i = 0; i < n; ++i)
      m += Wpen[static_cast<std::size_t>(i) * p_pen + j];
    m /= n;
    double v = 0.0, cross = 0.0;
    for (int i = 0; i < n; ++i) {
      const double c = Wpen[static_cast<std::size_t>(i) * p_pen + j] - m;
      v += c * c;
      cross += c * (y[i] - ybar);
    }
    const double s = std::sqrt(v / n);
    if (s > 0.0) lmax = std::max(lmax, std::fabs(cross / s) / n);
  }
  return lmax;
}

OutcomeState zero_outcome_state(std::span<const RegionBasis> bases, int q,
                                double nu) {
  OutcomeState s;
  s.theta_beta.resize(bases.size());
  for (std::size_t b = 0; b < bases.size(); ++b)
    s.theta_beta[b].assign(bases[b].L, 0.0);
  s.xi.assign(q, 0.0);
  s.nu_beta = nu;
  return s;
}

MediatorState zero_mediator_state(std::span<const RegionBasis> bases, int n,
                                  int q, double nu) {
  MediatorState s;
  s.theta_alpha.resize(bases.size());
  for (std::size_t b = 0; b < bases.size(); ++b)
    s.theta_alpha[b].assign(bases[b].L, 0.0);
  s.theta_zeta.assign(q, s.theta_alpha);
  s.theta_eta.assign(n, s.theta_alpha);
  s.nu_alpha = nu;
  return s;
}

}  // namespace

OutcomeInit init_outcome(const MediationDataset& data,
                         std::span<const RegionBasis> bases,
                         InitStrategy strategy, double nu,
                         const PriorConfig& prior, Rng& rng, int gibbs_iters,
                         double lasso_lambda_frac) {
  OutcomeInit out;
  out.state = zero_outcome_state(bases, data.q, nu);
  if (strategy == InitStrategy::Zero) return out;

  if (strategy == InitStrategy::GpWorkingModel) {
    // plain GP prior (nu = 0) working model, all updates conjugate
    OutcomeEngine engine(data, bases, prior, 0.0);
    OutcomeState ws = zero_outcome_state(bases, data.q, 0.0);
    engine.set_state(ws);
    const int keep_from = gibbs_iters / 2;
    OutcomeState accum = zero_outcome_state(bases, data.q, nu);
    double accum_s2Y = 0.0, accum_s2beta = 0.0;
    double accum_gamma = 0.0;
    std::vector<double> accum_xi(data.q, 0.0);
    int kept = 0;
    for (int it = 0; it < gibbs_iters; ++it) {
      for (int b = 0; b < engine.num_regions(); ++b)
        engine.gibbs_theta_nu0(b, rng);
      engine.gibbs_gamma_xi(rng);
      engine.gibbs_variances(rng);
      if (it >= keep_from) {
        const OutcomeState s = engine.state();
        for (std::size_t b = 0; b < bases.size(); ++b)
          for (int l = 0; l < bases[b].L; ++l)
            accum.theta_beta[b][l] += s.theta_beta[b][l];
        accum_gamma += s.gamma;
        for (int k = 0; k < data.q; ++k) accum_xi[k] += s.xi[k];
        accum_s2Y += s.sigma2_Y;
        accum_s2beta += s.sigma2_beta;
        ++kept;
      }
    }
    const double inv = 1.0 / std::max(kept, 1);
    for (std::size_t b = 0; b < bases.size(); ++b)
      for (int l = 0; l < bases[b].L; ++l)
        out.state.theta_beta[b][l] = accum.theta_beta[b][l] * inv;
    out.state.gamma = accum_gamma * inv;
    for (int k = 0; k < data.q; ++k) out.state.xi[k] = accum_xi[k] * inv;
    out.state.sigma2_Y = std::max(accum_s2Y * inv, 1e-8);
    out.state.sigma2_beta = std::max(accum_s2beta * inv, 1e-8);
    return out;
  }

  // LassoThreshold
  const int p = data.grid.p();
  const double inv_p = data.grid.voxel_measure();
  std::vector<double> Wpen(static_cast<std::size_t>(data.n) * p);
  for (int i = 0; i < data.n; ++i)
    for (int j = 0; j < p; ++j)
      Wpen[static_cast<std::size_t>(i) * p + j] =
          data.M[static_cast<std::size_t>(i) * p + j] * inv_p;
  std::vector<double> Wunp(static_cast<std::size_t>(data.n) * (data.q + 1));
  for (int i = 0; i < data.n; ++i) {
    Wunp[static_cast<std::size_t>(i) * (data.q + 1)] = data.X[i];
    for (int k = 0; k < data.q; ++k)
      Wunp[static_cast<std::size_t>(i) * (data.q + 1) + 1 + k] =
          data.C[static_cast<std::size_t>(i) * data.q + k];
  }
  const double lambda =
      lasso_lambda_frac * lasso_lambda_max(Wpen, data.n, p, data.Y);
  const LassoFit fit = lasso_coordinate_descent(Wpen, data.n, p, Wunp,
                                                data.q + 1, data.Y, lambda);
  if (!fit.converged) {
    out.lasso_fallback = true;  // fall back to all-zero coefficients
    return out;
  }
  // shift the nonzero estimate outward by nu to form the latent surface,
  // then project region by region onto the basis
  std::vector<double> latent(p, 0.0);
  for (int j = 0; j < p; ++j) {
    const double bj = fit.beta[j];
    if (bj > 0.0)
      latent[j] = bj + nu;
    else if (bj < 0.0)
      latent[j] = bj - nu;
  }
  for (std::size_t b = 0; b < bases.size(); ++b) {
    const RegionBasis& B = bases[b];
    const auto& vox = data.grid.region_voxels[B.region - 1];
    std::vector<double>& theta = out.state.theta_beta[b];
    for (int j = 0; j < B.p_r; ++j)
      simd::axpy(latent[vox[j]], B.row(j).data(), theta.data(), B.L);
  }
  out.state.gamma = fit.unpen.empty() ? 0.0 : fit.unpen[0];
  for (int k = 0; k < data.q; ++k) out.state.xi[k] = fit.unpen[1 + k];

  // moment-match the variance initializations to the fit
  OutcomeEngine engine(data, bases, prior, nu);
  engine.set_state(out.state);
  out.state.sigma2_Y = std::max(engine.rss() / std::max(data.n - 1, 1), 1e-4);
  double quad = 0.0;
  int L_total = 0;
  for (std::size_t b = 0; b < bases.size(); ++b) {
    L_total += bases[b].L;
    for (int l = 0; l < bases[b].L; ++l)
      quad += out.state.theta_beta[b][l] * out.state.theta_beta[b][l] /
              bases[b].eigvals[l];
  }
  out.state.sigma2_beta = std::max(quad / std::max(L_total, 1), 1e-4);
  return out;
}

MediatorState init_mediator(const MediationDataset& data,
                            std::span<const RegionBasis> bases,
                            InitStrategy strategy, double nu,
                            const PriorConfig& prior, Rng& rng,
                            bool eta_fixed_zero, int gibbs_iters) {
  MediatorState out = zero_mediator_state(bases, data.n, data.q, nu);
  if (strategy == InitStrategy::Zero) return out;
  if (strategy == InitStrategy::LassoThreshold)
    throw std::invalid_argument(
        "init_mediator: lasso initialization applies to the outcome model");

  MediatorEngine engine(data, bases, prior, 0.0, eta_fixed_zero);
  engine.set_state(zero_mediator_state(bases, data.n, data.q, 0.0));
  const int keep_from = gibbs_iters / 2;
  MediatorState accum = zero_mediator_state(bases, data.n, data.q, nu);
  double s2[4] = {0.0, 0.0, 0.0, 0.0};
  int kept = 0;
  for (int it = 0; it < gibbs_iters; ++it) {
    for (int b = 0; b < engine.num_regions(); ++b) engine.gibbs_alpha_nu0(b, rng);
    for (int b = 0; b < engine.num_regions(); ++b)
      for (int k = 0; k < data.q; ++k) engine.gibbs_zeta(b, k, rng);
    if (!eta_fixed_zero)
      for (int b = 0; b < engine.num_regions(); ++b) engine.gibbs_eta(b, rng);
    engine.gibbs_variances(rng);
    if (it >= keep_from) {
      const MediatorState s = engine.state();
      for (std::size_t b = 0; b < bases.size(); ++b)
        for (int l = 0; l < bases[b].L; ++l) {
          accum.theta_alpha[b][l] += s.theta_alpha[b][l];
          for (int k = 0; k < data.q; ++k)
            accum.theta_zeta[k][b][l] += s.theta_zeta[k][b][l];
          for (int i = 0; i < data.n; ++i)
            accum.theta_eta[i][b][l] += s.theta_eta[i][b][l];
        }
      s2[0] += s.sigma2_M;
      s2[1] += s.sigma2_alpha;
      s2[2] += s.sigma2_eta;
      s2[3] += s.sigma2_zeta;
      ++kept;
    }
  }
  const double inv = 1.0 / std::max(kept, 1);
  for (std::size_t b = 0; b < bases.size(); ++b)
    for (int l = 0; l < bases[b].L; ++l) {
      out.theta_alpha[b][l] = accum.theta_alpha[b][l] * inv;
      for (int k = 0; k < data.q; ++k)
        out.theta_zeta[k][b][l] = accum.theta_zeta[k][b][l] * inv;
      for (int i = 0; i < data.n; ++i)
        out.theta_eta[i][b][l] = accum.theta_eta[i][b][l] * inv;
    }
  out.sigma2_M = std::max(s2[0] * inv, 1e-8);
  out.sigma2_alpha = std::max(s2[1] * inv, 1e-8);
  out.sigma2_eta = std::max(s2[2] * inv, 1e-8);
  out.sigma2_zeta = std::max(s2[3] * inv, 1e-8);
  return out;
}

// --------------------------------------------------------------------------
// chain runners

namespace {

struct StepController {
  std::vector<double> steps;
  std::vector<double> targets;
  std::vector<int> window_accepts;
  int window_trials = 0;
  long adapt_end = 0;
  int window = 100;
  double kappa = 0.5;

  void tick(long iter, std::span<const char> accepted) {
    for (std::size_t b = 0; b < steps.size(); ++b)
      window_accepts[b] += accepted[b];
    ++window_trials;
    if (iter < adapt_end && window_trials >= window) {
      for (std::size_t b = 0; b < steps.size(); ++b) {
        const double rate =
            static_cast<double>(window_accepts[b]) / window_trials;
        steps[b] = adapt_step(steps[b], rate, targets[b], kappa);
        window_accepts[b] = 0;
      }
      window_trials = 0;
    }
  }
};

StepController make_controller(const SamplerConfig& config,
                               std::span<const RegionBasis> bases,
                               long burnin) {
  StepController ctl;
  const std::size_t R = bases.size();
  if (config.step_init.empty())
    ctl.steps.assign(R, 0.1);
  else if (config.step_init.size() == 1)
    ctl.steps.assign(R, config.step_init[0]);
  else if (config.step_init.size() == R)
    ctl.steps = config.step_init;
  else
    throw std::invalid_argument("config: step_init size mismatch");
  if (config.target_accept.empty())
    ctl.targets = default_targets(bases, config.target_accept_c);
  else if (config.target_accept.size() == 1)
    ctl.targets.assign(R, config.target_accept[0]);
  else if (config.target_accept.size() == R)
    ctl.targets = config.target_accept;
  else
    throw std::invalid_argument("config: target_accept size mismatch");
  ctl.window_accepts.assign(R, 0);
  ctl.adapt_end =
      static_cast<long>(std::llround(config.adapt_frac_of_burnin * burnin));
  ctl.window = config.adapt_window;
  ctl.kappa = config.adapt_kappa;
  return ctl;
}

std::vector<double> flatten(const RegionCoeffs& theta) {
  std::vector<double> flat;
  for (const auto& block : theta)
    flat.insert(flat.end(), block.begin(), block.end());
  return flat;
}

}  // namespace

ChainTrace run_outcome_chain(const MediationDataset& data,
                             std::span<const RegionBasis> bases,
                             const SamplerConfig& config) {
  config.validate();
  data.validate();
  Rng rng(config.seed);

  OutcomeInit init = init_outcome(data, bases, config.init, config.nu,
                                  config.prior, rng, config.init_gibbs_iters,
                                  config.lasso_lambda_frac);
  OutcomeEngine engine(data, bases, config.prior, config.nu);
  engine.set_state(init.state);

  const long burnin =
      static_cast<long>(std::llround(config.burnin_frac * config.iters));
  const long gibbs_from =
      static_cast<long>(std::llround(config.beta_only_frac * config.iters));
  StepController ctl = make_controller(config, bases, burnin);
  const int R = engine.num_regions();

  ChainTrace trace;
  trace.model = "outcome";
  trace.nu = config.nu;
  trace.iters = config.iters;
  trace.burnin_frac = config.burnin_frac;
  trace.thin = config.thin;
  trace.seed = config.seed;
  trace.init_fallback = init.lasso_fallback;
  for (const auto& b : bases) {
    trace.L.push_back(b.L);
    trace.regions.push_back(b.region);
  }

  std::vector<long> post_accepts(R, 0);
  long post_trials = 0;
  std::vector<char> accepted(R, 0);

  for (long t = 0; t < config.iters; ++t) {
    for (int b = 0; b < R; ++b)
      accepted[b] = engine.mala_step(b, ctl.steps[b], rng) ? 1 : 0;
    ctl.tick(t, accepted);
    if (t >= burnin) {
      ++post_trials;
      for (int b = 0; b < R; ++b) post_accepts[b] += accepted[b];
    }
    if (t >= gibbs_from) {
      engine.gibbs_gamma_xi(rng);
      engine.gibbs_variances(rng);
    }
    if (t >= burnin && (t - burnin) % config.thin == config.thin - 1) {
      const OutcomeState s = engine.state();
      trace.theta.push_back(flatten(s.theta_beta));
      trace.gamma.push_back(s.gamma);
      trace.xi.push_back(s.xi);
      trace.sigma2_obs.push_back(s.sigma2_Y);
      trace.sigma2_coef.push_back(s.sigma2_beta);
    }
  }

  trace.accept_rates.resize(R);
  for (int b = 0; b < R; ++b)
    trace.accept_rates[b] =
        post_trials > 0 ? static_cast<double>(post_accepts[b]) / post_trials
                        : 0.0;
  trace.step_final = ctl.steps;
  return trace;
}

ChainTrace run_mediator_chain(const MediationDataset& data,
                              std::span<const RegionBasis> bases,
                              const SamplerConfig& config) {
  config.validate();
  data.validate();
  Rng rng(config.seed);
  const bool eta_zero = config.eta_update == EtaUpdate::FixedZero;

  MediatorState init =
      init_mediator(data, bases, config.init, config.nu, config.prior, rng,
                    eta_zero, config.init_gibbs_iters);
  MediatorEngine engine(data, bases, config.prior, config.nu, eta_zero);
  engine.set_state(init);

  const long burnin =
      static_cast<long>(std::llround(config.burnin_frac * config.iters));
  StepController ctl = make_controller(config, bases, burnin);
  const int R = engine.num_regions();

  ChainTrace trace;
  trace.model = "mediator";
  trace.nu = config.nu;
  trace.iters = config.iters;
  trace.burnin_frac = config.burnin_frac;
  trace.thin = config.thin;
  trace.seed = config.seed;
  for (const auto& b : bases) {
    trace.L.push_back(b.L);
    trace.regions.push_back(b.region);
  }

  std::vector<long> post_accepts(R, 0);
  long post_trials = 0;
  std::vector<char> accepted(R, 0);

  for (long t = 0; t < config.iters; ++t) {
    for (int b = 0; b < R; ++b)
      accepted[b] = engine.mala_step_alpha(b, ctl.steps[b], rng) ? 1 : 0;
    ctl.tick(t, accepted);
    if (t >= burnin) {
      ++post_trials;
      for (int b = 0; b < R; ++b) post_accepts[b] += accepted[b];
    }
    for (int b = 0; b < R; ++b)
      for (int k = 0; k < data.q; ++k) engine.gibbs_zeta(b, k, rng);
    if (!eta_zero)
      for (int b = 0; b < R; ++b) engine.gibbs_eta(b, rng);
    engine.gibbs_variances(rng);

    if (t >= burnin && (t - burnin) % config.thin == config.thin - 1) {
      const MediatorState s = engine.state();
      trace.theta.push_back(flatten(s.theta_alpha));
      std::vector<double> zeta_flat;
      for (int k = 0; k < data.q; ++k) {
        const auto flat = flatten(s.theta_zeta[k]);
        zeta_flat.insert(zeta_flat.end(), flat.begin(), flat.end());
      }
      trace.theta_zeta.push_back(std::move(zeta_flat));
      trace.sigma2_obs.push_back(s.sigma2_M);
      trace.sigma2_coef.push_back(s.sigma2_alpha);
      trace.sigma2_eta.push_back(s.sigma2_eta);
      trace.sigma2_zeta.push_back(s.sigma2_zeta);
      trace.eta_constraint_max.push_back(engine.eta_constraint_max());
    }
  }

  trace.accept_rates.resize(R);
  for (int b = 0; b < R; ++b)
    trace.accept_rates[b] =
        post_trials > 0 ? static_cast<double>(post_accepts[b]) / post_trials
                        : 0.0;
  trace.step_final = ctl.steps;
  return trace;
}

}  // namespace bima
