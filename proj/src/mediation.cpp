#include "bima/mediation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bima/simd.hpp"
#include "bima/stgp.hpp"

namespace bima {

namespace {

// unflatten one trace draw into per-region coefficient blocks
RegionCoeffs unflatten(std::span<const double> flat, std::span<const int> L) {
  RegionCoeffs theta(L.size());
  std::size_t offset = 0;
  for (std::size_t b = 0; b < L.size(); ++b) {
    theta[b].assign(flat.begin() + offset, flat.begin() + offset + L[b]);
    offset += L[b];
  }
  return theta;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * (static_cast<double>(v.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - w) + v[hi] * w;
}

}  // namespace

std::vector<std::vector<double>> svme_draws(
    const ChainTrace& outcome, std::span<const RegionBasis> outcome_bases,
    const ChainTrace& mediator, std::span<const RegionBasis> mediator_bases,
    const VoxelGrid& grid) {
  const long T = std::min(outcome.draws(), mediator.draws());
  if (T < 1) throw std::invalid_argument("svme_draws: empty traces");
  const int p = grid.p();
  std::vector<std::vector<double>> draws(T, std::vector<double>(p));
  for (long t = 0; t < T; ++t) {
    const auto beta = eval_field(
        outcome_bases, unflatten(outcome.theta[t], outcome.L), outcome.nu,
        grid);
    const auto alpha = eval_field(
        mediator_bases, unflatten(mediator.theta[t], mediator.L), mediator.nu,
        grid);
    simd::mul(alpha.data(), beta.data(), draws[t].data(), p);
  }
  return draws;
}

std::pair<double, double> nie_nde(std::span<const double> svme_row,
                                  double gamma, double x, double x2,
                                  const VoxelGrid& grid) {
  double total = 0.0;
  for (const double v : svme_row) total += v;
  const double nie = (x - x2) * grid.voxel_measure() * total;
  const double nde = gamma * (x - x2);
  return {nie, nde};
}

double pip(std::span<const double> svme_draws_col) {
  if (svme_draws_col.empty())
    throw std::invalid_argument("pip: no draws");
  long nonzero = 0;
  for (const double v : svme_draws_col)
    if (v != 0.0) ++nonzero;
  return static_cast<double>(nonzero) /
         static_cast<double>(svme_draws_col.size());
}

std::vector<double> pip_all(const std::vector<std::vector<double>>& draws) {
  if (draws.empty()) throw std::invalid_argument("pip_all: no draws");
  const std::size_t p = draws.front().size();
  std::vector<long> nonzero(p, 0);
  for (const auto& row : draws)
    for (std::size_t j = 0; j < p; ++j)
      if (row[j] != 0.0) ++nonzero[j];
  std::vector<double> out(p);
  for (std::size_t j = 0; j < p; ++j)
    out[j] = static_cast<double>(nonzero[j]) /
             static_cast<double>(draws.size());
  return out;
}

namespace {

std::vector<int> selected_above(std::span<const double> pip, double t) {
  std::vector<int> sel;
  for (std::size_t j = 0; j < pip.size(); ++j)
    if (pip[j] > t) sel.push_back(static_cast<int>(j));
  return sel;
}

double realized_fdr(const std::vector<int>& selected,
                    const std::vector<int>& truth_sorted) {
  if (selected.empty()) return 0.0;
  long fp = 0;
  for (const int j : selected)
    if (!std::binary_search(truth_sorted.begin(), truth_sorted.end(), j)) ++fp;
  return static_cast<double>(fp) / static_cast<double>(selected.size());
}

}  // namespace

FdrSelection select_fdr(std::span<const double> pip,
                        const std::optional<std::vector<int>>& truth_support,
                        double target_fdr, double fixed_t0, bool use_fixed) {
  FdrSelection out;
  if (use_fixed || !truth_support.has_value()) {
    out.threshold = fixed_t0;
    out.selected = selected_above(pip, fixed_t0);
    if (truth_support.has_value()) {
      std::vector<int> truth = *truth_support;
      std::sort(truth.begin(), truth.end());
      out.achieved_fdr = realized_fdr(out.selected, truth);
    }
    return out;
  }
  if (!(target_fdr > 0.0) || !(target_fdr < 1.0))
    throw std::invalid_argument("select_fdr: target_fdr must be in (0,1)");

  std::vector<int> truth = *truth_support;
  std::sort(truth.begin(), truth.end());

  std::vector<double> candidates(pip.begin(), pip.end());
  std::sort(candidates.begin(), candidates.end(), std::greater<>());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());

  // scan from the most selective threshold down; remember the least
  // selective one that satisfies the target and the most selective
  // nonempty fallback
  bool found = false;
  double best_t = 0.0, best_fdr = 0.0;
  bool have_fallback = false;
  double fallback_t = 0.0, fallback_fdr = 0.0;
  for (const double t : candidates) {
    const auto sel = selected_above(pip, t);
    if (sel.empty()) continue;
    const double fdr = realized_fdr(sel, truth);
    if (!have_fallback) {
      have_fallback = true;
      fallback_t = t;
      fallback_fdr = fdr;
    }
    if (fdr <= target_fdr) {
      found = true;
      best_t = t;  // keep overwriting: thresholds shrink along the scan
      best_fdr = fdr;
    }
  }
  if (found) {
    out.threshold = best_t;
    out.achieved_fdr = best_fdr;
    out.selected = selected_above(pip, best_t);
  } else if (have_fallback) {
    out.threshold = fallback_t;
    out.achieved_fdr = fallback_fdr;
    out.selected = selected_above(pip, fallback_t);
  } else {
    out.threshold = candidates.empty() ? 0.0 : candidates.front();
    out.selected = {};
  }
  return out;
}

std::vector<RegionEffectRow> region_summary(std::span<const double> svme_map,
                                            std::span<const double> pip,
                                            const std::vector<int>& selected,
                                            const VoxelGrid& grid) {
  std::vector<char> is_selected(grid.p(), 0);
  for (const int j : selected) is_selected[j] = 1;
  const double inv_p = grid.voxel_measure();
  std::vector<RegionEffectRow> table;
  table.reserve(grid.num_regions);
  for (int r = 1; r <= grid.num_regions; ++r) {
    RegionEffectRow row;
    row.region = r;
    double pip_sum = 0.0;
    const auto& vox = grid.region_voxels[r - 1];
    for (const int j : vox) {
      const double v = svme_map[j];
      if (v > 0.0)
        row.nie_pos += v * inv_p;
      else if (v < 0.0)
        row.nie_neg += v * inv_p;
      pip_sum += pip[j];
      row.n_active += is_selected[j];
    }
    row.nie = row.nie_pos + row.nie_neg;
    row.avg_pip = pip_sum / static_cast<double>(vox.size());
    table.push_back(row);
  }
  return table;
}

SelectionMetrics selection_metrics(const std::vector<int>& selected,
                                   const std::vector<int>& truth_support,
                                   int p) {
  std::vector<int> truth = truth_support;
  std::sort(truth.begin(), truth.end());
  long tp = 0;
  for (const int j : selected)
    if (std::binary_search(truth.begin(), truth.end(), j)) ++tp;
  const long fp = static_cast<long>(selected.size()) - tp;
  const long fn = static_cast<long>(truth.size()) - tp;
  const long tn = p - tp - fp - fn;
  SelectionMetrics m;
  m.fdr = selected.empty()
              ? 0.0
              : static_cast<double>(fp) / static_cast<double>(selected.size());
  m.tpr = truth.empty()
              ? 0.0
              : static_cast<double>(tp) / static_cast<double>(truth.size());
  m.acc = static_cast<double>(tp + tn) / static_cast<double>(p);
  return m;
}

MediationReport build_report(const ChainTrace& outcome,
                             std::span<const RegionBasis> outcome_bases,
                             const ChainTrace& mediator,
                             std::span<const RegionBasis> mediator_bases,
                             const VoxelGrid& grid,
                             const ReportOptions& options) {
  const auto draws =
      svme_draws(outcome, outcome_bases, mediator, mediator_bases, grid);
  const long T = static_cast<long>(draws.size());
  const int p = grid.p();

  MediationReport report;
  report.x = options.x;
  report.xprime = options.xprime;
  report.svme_mean.assign(p, 0.0);
  for (const auto& row : draws)
    simd::axpy(1.0 / static_cast<double>(T), row.data(),
               report.svme_mean.data(), p);

  report.svme_lo.resize(p);
  report.svme_hi.resize(p);
  {
    std::vector<double> col(T);
    for (int j = 0; j < p; ++j) {
      for (long t = 0; t < T; ++t) col[t] = draws[t][j];
      report.svme_lo[j] = quantile(col, 0.025);
      report.svme_hi[j] = quantile(col, 0.975);
    }
  }
  report.pip = pip_all(draws);

  // scalar NIE/NDE over paired draws
  std::vector<double> nie_t(T), nde_t(T);
  for (long t = 0; t < T; ++t) {
    const auto [nie, nde] =
        nie_nde(draws[t], outcome.gamma[t], options.x, options.xprime, grid);
    nie_t[t] = nie;
    nde_t[t] = nde;
  }
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (const double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  report.nie_mean = mean_of(nie_t);
  report.nie_lo = quantile(nie_t, 0.025);
  report.nie_hi = quantile(nie_t, 0.975);
  report.nde_mean = mean_of(nde_t);
  report.nde_lo = quantile(nde_t, 0.025);
  report.nde_hi = quantile(nde_t, 0.975);

  const FdrSelection sel =
      select_fdr(report.pip, options.truth_support, options.target_fdr,
                 options.pip_t0, !options.fdr_mode);
  report.selected = sel.selected;
  report.threshold = sel.threshold;
  report.achieved_fdr = sel.achieved_fdr;

  // PIP-gated map: zero outside the selected set, posterior mean inside
  report.svme_selected_mean.assign(p, 0.0);
  for (const int j : report.selected)
    report.svme_selected_mean[j] = report.svme_mean[j];

  report.region_table = region_summary(report.svme_selected_mean, report.pip,
                                       report.selected, grid);
  return report;
}

}  // namespace bima
