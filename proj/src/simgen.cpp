#include "bima/simgen.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bima/basis.hpp"

namespace bima {

void SimDesign::validate() const {
  if (n < q + 2) throw std::invalid_argument("design: n too small");
  if (nu_true < 0.0) throw std::invalid_argument("design: nu_true >= 0");
  if (!(sigma_Y >= 0.0) || !(sigma_M >= 0.0))
    throw std::invalid_argument("design: noise scales must be >= 0");
  if (eta_scale < 0.0) throw std::invalid_argument("design: eta_scale >= 0");
  if (static_cast<int>(xi0.size()) != q)
    throw std::invalid_argument("design: xi0 must have q entries");
  if (pattern == PatternKind::Custom) {
    const std::size_t p = static_cast<std::size_t>(grid_nx) * grid_ny;
    if (custom_alpha0.size() != p || custom_beta0.size() != p)
      throw std::invalid_argument("design: custom fields must have p entries");
  }
  if (!(dense_frac > 0.0) || dense_frac > 0.5 || !(sparse_frac > 0.0) ||
      sparse_frac > 0.5)
    throw std::invalid_argument("design: support fractions must be in (0,0.5]");
}

std::vector<int> SimTruth::support() const {
  std::vector<int> s;
  for (std::size_t j = 0; j < svme0.size(); ++j)
    if (svme0[j] != 0.0) s.push_back(static_cast<int>(j));
  return s;
}

namespace {

struct Disk {
  double cx, cy, radius;
};

// disk profile: peak at the center, rolls off to the floor at the rim,
// exact zero outside
double disk_value(const Disk& d, double x, double y, double floor,
                  double peak) {
  const double dist = std::hypot(x - d.cx, y - d.cy);
  if (dist > d.radius) return 0.0;
  const double frac = dist / d.radius;
  return floor + (peak - floor) * (1.0 - frac * frac);
}

struct RegionBox {
  double x0, x1, y0, y1;
};

RegionBox region_box(const VoxelGrid& grid, int region) {
  RegionBox box{1.0, 0.0, 1.0, 0.0};
  for (const int j : grid.region_voxels[region - 1]) {
    const auto pt = grid.point(j);
    box.x0 = std::min(box.x0, pt[0]);
    box.x1 = std::max(box.x1, pt[0]);
    box.y0 = std::min(box.y0, pt[1]);
    box.y1 = std::max(box.y1, pt[1]);
  }
  return box;
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> make_pattern(
    const VoxelGrid& grid, const SimDesign& design, Rng& rng) {
  if (design.pattern == PatternKind::Custom)
    return {design.custom_alpha0, design.custom_beta0};
  if (grid.dim != 2)
    throw std::invalid_argument("make_pattern: generated shapes need a 2-D grid");

  const double frac = design.pattern == PatternKind::Dense ? design.dense_frac
                                                           : design.sparse_frac;
  const double floor_amp = 2.0 * std::max(design.nu_true, 0.25);
  const double peak_amp = 2.0 * floor_amp;

  const int p = grid.p();
  std::vector<double> alpha0(p, 0.0), beta0(p, 0.0);
  for (int r = 1; r <= grid.num_regions; ++r) {
    const RegionBox box = region_box(grid, r);
    const double w = box.x1 - box.x0;
    const double h = box.y1 - box.y0;
    const double area = w * h;
    const double radius = std::sqrt(frac * area / M_PI);
    // beta disk fully interior, alpha shifted by 0.4 r (about 79% overlap)
    const double shift = 0.4 * radius;
    const double margin = radius + shift;
    if (2.0 * margin >= std::min(w, h))
      throw std::invalid_argument(
          "make_pattern: support shape exceeds region bounds");
    const double cx =
        box.x0 + margin + (w - 2.0 * margin) * rng.uniform();
    const double cy =
        box.y0 + margin + (h - 2.0 * margin) * rng.uniform();
    const double angle = 2.0 * M_PI * rng.uniform();
    const Disk beta_disk{cx, cy, radius};
    const Disk alpha_disk{cx + shift * std::cos(angle),
                          cy + shift * std::sin(angle), radius};
    const double sign = (r % 2 == 0) ? -1.0 : 1.0;
    for (const int j : grid.region_voxels[r - 1]) {
      const auto pt = grid.point(j);
      beta0[j] = sign * disk_value(beta_disk, pt[0], pt[1], floor_amp, peak_amp);
      alpha0[j] =
          sign * disk_value(alpha_disk, pt[0], pt[1], floor_amp, peak_amp);
    }
  }
  return {alpha0, beta0};
}

std::pair<MediationDataset, SimTruth> generate(const SimDesign& design) {
  design.validate();
  Rng rng(design.seed);

  MediationDataset data;
  data.grid = design.make_grid();
  data.n = design.n;
  data.q = design.q;
  const int n = design.n;
  const int q = design.q;
  const int p = data.grid.p();

  SimTruth truth;
  std::tie(truth.alpha0, truth.beta0) = make_pattern(data.grid, design, rng);
  truth.svme0.resize(p);
  for (int j = 0; j < p; ++j) truth.svme0[j] = truth.alpha0[j] * truth.beta0[j];
  truth.gamma0 = design.gamma0;
  truth.xi0 = design.xi0;

  data.X.resize(n);
  for (int i = 0; i < n; ++i)
    data.X[i] = design.x_binary ? (rng.uniform() < 0.5 ? 0.0 : 1.0)
                                : rng.normal();
  data.C.resize(static_cast<std::size_t>(n) * q);
  for (auto& c : data.C) c = rng.normal();

  // truncated-GP surfaces for the confounder and individual effects
  const auto bases =
      build_bases(data.grid, design.kernel, 0.9, design.basis_frac);

  std::vector<std::vector<double>> zeta_fields(q,
                                               std::vector<double>(p, 0.0));
  for (int k = 0; k < q; ++k) {
    RegionCoeffs theta(bases.size());
    for (std::size_t b = 0; b < bases.size(); ++b) {
      theta[b].resize(bases[b].L);
      for (int l = 0; l < bases[b].L; ++l)
        theta[b][l] = design.zeta_scale * std::sqrt(bases[b].eigvals[l]) *
                      rng.normal();
    }
    zeta_fields[k] = eval_field(bases, theta, 0.0, data.grid);
  }

  // eta coefficients: iid truncated-GP draws residualized against (X, C)
  // per basis index so the truth satisfies the orthogonality constraint
  truth.eta.assign(static_cast<std::size_t>(n) * p, 0.0);
  {
    Eigen::MatrixXd Xt(n, q + 1);
    for (int i = 0; i < n; ++i) {
      Xt(i, 0) = data.X[i];
      for (int k = 0; k < q; ++k)
        Xt(i, 1 + k) = data.C[static_cast<std::size_t>(i) * q + k];
    }
    Eigen::MatrixXd XtX = Xt.transpose() * Xt;
    Eigen::LLT<Eigen::MatrixXd> llt(XtX);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("generate: rank-deficient design (X, C)");

    for (std::size_t b = 0; b < bases.size(); ++b) {
      const RegionBasis& B = bases[b];
      const auto& vox = data.grid.region_voxels[B.region - 1];
      Eigen::MatrixXd coeff(n, B.L);
      for (int i = 0; i < n; ++i)
        for (int l = 0; l < B.L; ++l)
          coeff(i, l) = design.eta_scale * std::sqrt(B.eigvals[l]) *
                        rng.normal();
      if (design.eta_scale > 0.0) {
        coeff -= Xt * llt.solve(Xt.transpose() * coeff);
        // field values H = coeff Q'
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                       Eigen::RowMajor>>
            Q(B.Q.data(), B.p_r, B.L);
        Eigen::MatrixXd H = coeff * Q.transpose();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < B.p_r; ++j)
            truth.eta[static_cast<std::size_t>(i) * p + vox[j]] = H(i, j);
      }
    }
  }

  data.M.resize(static_cast<std::size_t>(n) * p);
  for (int i = 0; i < n; ++i) {
    double* row = data.M.data() + static_cast<std::size_t>(i) * p;
    for (int j = 0; j < p; ++j) {
      double mu = truth.alpha0[j] * data.X[i] +
                  truth.eta[static_cast<std::size_t>(i) * p + j];
      for (int k = 0; k < q; ++k)
        mu += zeta_fields[k][j] * data.C[static_cast<std::size_t>(i) * q + k];
      row[j] = mu + design.sigma_M * rng.normal();
    }
  }

  data.Y.resize(n);
  const double inv_p = data.grid.voxel_measure();
  for (int i = 0; i < n; ++i) {
    const double* row = data.M.data() + static_cast<std::size_t>(i) * p;
    double mu = design.gamma0 * data.X[i];
    for (int j = 0; j < p; ++j) mu += truth.beta0[j] * row[j] * inv_p;
    for (int k = 0; k < q; ++k)
      mu += design.xi0[k] * data.C[static_cast<std::size_t>(i) * q + k];
    data.Y[i] = mu + design.sigma_Y * rng.normal();
  }

  data.validate();
  return {std::move(data), std::move(truth)};
}

ReplicationScore score_one(const MediationReport& report,
                           const SimTruth& truth) {
  const auto support = truth.support();
  const int p = static_cast<int>(truth.svme0.size());
  const SelectionMetrics m = selection_metrics(report.selected, support, p);
  ReplicationScore score;
  score.fdr = m.fdr;
  score.tpr = m.tpr;
  score.acc = m.acc;
  double mse = 0.0;
  for (const int j : support) {
    const double d = report.svme_selected_mean[j] - truth.svme0[j];
    mse += d * d;
  }
  score.mse_activation = support.empty() ? 0.0 : mse / support.size();
  return score;
}

ScoreSummary score_replication(const std::vector<MediationReport>& reports,
                               const std::vector<SimTruth>& truths) {
  if (reports.size() != truths.size() || reports.empty())
    throw std::invalid_argument("score_replication: length mismatch");
  const int m = static_cast<int>(reports.size());
  std::vector<ReplicationScore> scores(m);
  for (int i = 0; i < m; ++i) scores[i] = score_one(reports[i], truths[i]);

  auto summarize = [m](auto getter, double& mean, double& sd,
                       const std::vector<ReplicationScore>& s) {
    double sum = 0.0;
    for (const auto& x : s) sum += getter(x);
    mean = 100.0 * sum / m;
    double var = 0.0;
    for (const auto& x : s) {
      const double d = 100.0 * getter(x) - mean;
      var += d * d;
    }
    sd = m > 1 ? std::sqrt(var / (m - 1)) : 0.0;
  };
  ScoreSummary out;
  out.replications = m;
  summarize([](const ReplicationScore& s) { return s.fdr; }, out.fdr_mean,
            out.fdr_sd, scores);
  summarize([](const ReplicationScore& s) { return s.tpr; }, out.tpr_mean,
            out.tpr_sd, scores);
  summarize([](const ReplicationScore& s) { return s.acc; }, out.acc_mean,
            out.acc_sd, scores);
  summarize([](const ReplicationScore& s) { return s.mse_activation; },
            out.mse_mean, out.mse_sd, scores);
  return out;
}

}  // namespace bima
