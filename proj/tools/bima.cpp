// Command-line driver: simulate / fit / mediate / sensitivity / evaluate.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "bima/basis.hpp"
#include "bima/io.hpp"
#include "bima/mediation.hpp"
#include "bima/sampler.hpp"
#include "bima/simgen.hpp"

namespace fs = std::filesystem;
using namespace bima;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

int worker_count() {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("BIMA_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return static_cast<int>(n);
}

struct GridArg {
  int nx = 20, ny = 20, rx = 2, ry = 2;
};

GridArg parse_grid(const std::string& text) {
  GridArg g;
  int w = 0, h = 0, r = 0;
  char x1 = 0, x2 = 0;
  std::istringstream is(text);
  if (!(is >> w >> x1 >> h >> x2 >> r) || x1 != 'x' || x2 != 'x' || w <= 0 ||
      h <= 0 || r <= 0)
    throw CLI::ValidationError("--grid", "expected WxHxR, e.g. 20x20x4");
  for (int d = static_cast<int>(std::sqrt(static_cast<double>(r))); d >= 1;
       --d) {
    if (r % d != 0) continue;
    const int rx = r / d, ry = d;
    if (w % rx == 0 && h % ry == 0) {
      g.nx = w;
      g.ny = h;
      g.rx = rx;
      g.ry = ry;
      return g;
    }
  }
  throw CLI::ValidationError("--grid", "region count does not tile the grid");
}

KernelSpec parse_kernel(const std::string& text) {
  // matern:u=0.2,rho=2   |   modse:a=0.01,b=10
  const auto colon = text.find(':');
  const std::string family = text.substr(0, colon);
  std::map<std::string, double> kv;
  if (colon != std::string::npos) {
    std::istringstream is(text.substr(colon + 1));
    std::string item;
    while (std::getline(is, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos)
        throw CLI::ValidationError("--kernel", "expected key=value pairs");
      kv[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
    }
  }
  if (family == "matern")
    return KernelSpec::make_matern(kv.count("u") ? kv["u"] : 0.2,
                                   kv.count("rho") ? kv["rho"] : 2.0);
  if (family == "modse")
    return KernelSpec::make_modified_se(kv.count("a") ? kv["a"] : 0.01,
                                        kv.count("b") ? kv["b"] : 10.0);
  throw CLI::ValidationError("--kernel", "family must be matern or modse");
}

std::vector<double> parse_list(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(std::stod(item));
  if (out.empty()) throw CLI::ValidationError(flag, "empty list");
  return out;
}

PatternKind parse_pattern(const std::string& text) {
  if (text == "dense") return PatternKind::Dense;
  if (text == "sparse") return PatternKind::Sparse;
  throw CLI::ValidationError("--pattern", "must be dense or sparse");
}

InitStrategy parse_init(const std::string& text) {
  if (text == "zero") return InitStrategy::Zero;
  if (text == "gp") return InitStrategy::GpWorkingModel;
  if (text == "lasso") return InitStrategy::LassoThreshold;
  throw CLI::ValidationError("--init", "must be zero, gp or lasso");
}

std::string format_seconds(double s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << s;
  return os.str();
}

// ---------------------------------------------------------------------------

struct FitFlags {
  std::string data_dir;
  std::string bases_dir;
  std::string kernel = "matern:u=0.2,rho=2";
  double cutoff = 0.9;
  double basis_frac = 0.0;
  double nu = 0.5;
  long iters = 10000;
  double burnin = 0.5;
  int thin = 1;
  std::uint64_t seed = 0;
  std::string init = "gp";
  std::string eta = "full";
  double beta_only_frac = 0.0;
  double step0 = 0.1;
  std::string out_dir;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f, bool with_out = true) {
  cmd->add_option("--data", f.data_dir, "dataset directory")->required();
  cmd->add_option("--bases", f.bases_dir, "prebuilt bases directory");
  cmd->add_option("--kernel", f.kernel, "kernel spec, e.g. matern:u=0.2,rho=2");
  cmd->add_option("--cutoff", f.cutoff, "eigenvalue mass cutoff");
  cmd->add_option("--basis-frac", f.basis_frac,
                  "fixed basis count as a fraction of region size (overrides "
                  "--cutoff when > 0)");
  cmd->add_option("--nu", f.nu, "soft threshold");
  cmd->add_option("--iters", f.iters, "MCMC iterations");
  cmd->add_option("--burnin", f.burnin, "burn-in fraction");
  cmd->add_option("--thin", f.thin, "thinning stride");
  cmd->add_option("--seed", f.seed, "RNG seed");
  cmd->add_option("--init", f.init, "initialization: zero|gp|lasso");
  cmd->add_option("--eta", f.eta, "individual effects: full|zero");
  cmd->add_option("--beta-only-frac", f.beta_only_frac,
                  "fraction of iterations updating only the coefficient field");
  cmd->add_option("--step0", f.step0, "initial MALA step size");
  if (with_out)
    cmd->add_option("--out", f.out_dir, "output trace directory")->required();
}

std::vector<RegionBasis> resolve_bases(const FitFlags& f,
                                       const MediationDataset& data,
                                       const fs::path& out_dir,
                                       std::string& bases_path_out) {
  if (!f.bases_dir.empty()) {
    bases_path_out = fs::absolute(f.bases_dir).string();
    return io::load_bases(f.bases_dir);
  }
  const KernelSpec spec = parse_kernel(f.kernel);
  auto bases = build_bases(data.grid, spec, f.cutoff, f.basis_frac);
  const fs::path dir = out_dir / "bases";
  io::save_bases(dir, bases, spec);
  bases_path_out = fs::absolute(dir).string();
  return bases;
}

SamplerConfig make_config(const FitFlags& f, bool mediator_model) {
  SamplerConfig cfg;
  cfg.iters = f.iters;
  cfg.burnin_frac = f.burnin;
  cfg.thin = f.thin;
  cfg.seed = f.seed;
  cfg.nu = f.nu;
  cfg.step_init = {f.step0};
  cfg.beta_only_frac = mediator_model ? 0.0 : f.beta_only_frac;
  if (f.eta == "full")
    cfg.eta_update = EtaUpdate::Full;
  else if (f.eta == "zero")
    cfg.eta_update = EtaUpdate::FixedZero;
  else
    throw CLI::ValidationError("--eta", "must be full or zero");
  cfg.init = parse_init(f.init);
  if (mediator_model && cfg.init == InitStrategy::LassoThreshold)
    throw CLI::ValidationError("--init",
                               "lasso applies to the outcome model only");
  return cfg;
}

int run_fit(const std::string& model, const FitFlags& flags) {
  const auto loaded = io::load_dataset(flags.data_dir);
  const fs::path out(flags.out_dir);
  fs::create_directories(out);
  std::string bases_path;
  const auto bases = resolve_bases(flags, loaded.data, out, bases_path);

  const auto start = std::chrono::steady_clock::now();
  ChainTrace trace;
  if (model == "outcome")
    trace = run_outcome_chain(loaded.data, bases, make_config(flags, false));
  else
    trace = run_mediator_chain(loaded.data, bases, make_config(flags, true));
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();

  io::save_trace(out, trace, bases_path,
                 fs::absolute(flags.data_dir).string());
  std::cout << "fit " << model << ": " << trace.draws() << " draws, accept=[";
  for (std::size_t b = 0; b < trace.accept_rates.size(); ++b)
    std::cout << (b ? " " : "") << std::fixed << std::setprecision(2)
              << trace.accept_rates[b];
  std::cout << "], wall=" << format_seconds(elapsed) << "s -> " << flags.out_dir
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int run_simulate(const SimDesign& design, const std::string& out_dir) {
  auto [data, truth] = generate(design);
  io::save_dataset(out_dir, data, &truth, design.seed);
  std::cout << "simulate: n=" << data.n << " p=" << data.grid.p() << " -> "
            << out_dir << "\n";
  return 0;
}

int run_mediate(const std::string& outcome_dir, const std::string& mediator_dir,
                const std::string& mode, const std::string& truth_dir,
                double x, double xprime, const std::string& out_dir) {
  const auto outcome = io::load_trace(outcome_dir);
  const auto mediator = io::load_trace(mediator_dir);
  if (outcome.trace.model != "outcome" || mediator.trace.model != "mediator")
    throw std::invalid_argument("mediate: traces passed in the wrong order");

  const auto outcome_bases = io::load_bases(outcome.bases_path);
  const auto mediator_bases = io::load_bases(mediator.bases_path);
  const auto grid = io::load_dataset(outcome.data_path).data.grid;

  ReportOptions options;
  options.x = x;
  options.xprime = xprime;
  const auto colon = mode.find(':');
  const std::string kind = mode.substr(0, colon);
  const double value =
      colon == std::string::npos ? 0.1 : std::stod(mode.substr(colon + 1));
  if (kind == "fdr") {
    options.fdr_mode = true;
    options.target_fdr = value;
    if (truth_dir.empty())
      throw std::invalid_argument("mediate: fdr mode requires --truth");
  } else if (kind == "pip") {
    options.fdr_mode = false;
    options.pip_t0 = value;
  } else {
    throw std::invalid_argument("mediate: mode must be fdr:<t> or pip:<t>");
  }
  if (!truth_dir.empty()) {
    const auto truth_data = io::load_dataset(truth_dir);
    if (!truth_data.truth.has_value())
      throw std::invalid_argument("mediate: --truth directory has no truth");
    options.truth_support = truth_data.truth->support();
  }

  const auto report = build_report(outcome.trace, outcome_bases,
                                   mediator.trace, mediator_bases, grid,
                                   options);
  io::write_report(out_dir, report, grid);
  std::cout << "mediate: NIE=" << report.nie_mean << " ("
            << report.nie_lo << "," << report.nie_hi << ")"
            << " NDE=" << report.nde_mean << " selected="
            << report.selected.size() << " -> " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SensitivityRow {
  std::string kind;
  double value = 0.0;
  double train_mse = 0.0;
  double test_mse = 0.0;
};

SensitivityRow fit_and_score(const MediationDataset& train,
                             const MediationDataset& test,
                             const std::vector<RegionBasis>& bases,
                             const FitFlags& flags, double nu,
                             const std::string& kind, double value) {
  SamplerConfig cfg = make_config(flags, false);
  cfg.nu = nu;
  ChainTrace trace = run_outcome_chain(train, bases, cfg);

  // posterior-mean prediction
  const long T = trace.draws();
  std::vector<double> theta_mean(trace.theta.front().size(), 0.0);
  double gamma_mean = 0.0;
  std::vector<double> xi_mean(train.q, 0.0);
  for (long t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < theta_mean.size(); ++i)
      theta_mean[i] += trace.theta[t][i] / T;
    gamma_mean += trace.gamma[t] / T;
    for (int k = 0; k < train.q; ++k) xi_mean[k] += trace.xi[t][k] / T;
  }
  RegionCoeffs theta(bases.size());
  std::size_t off = 0;
  for (std::size_t b = 0; b < bases.size(); ++b) {
    theta[b].assign(theta_mean.begin() + off,
                    theta_mean.begin() + off + bases[b].L);
    off += bases[b].L;
  }
  const auto beta = eval_field(bases, theta, nu, train.grid);

  auto mse = [&](const MediationDataset& d) {
    const double inv_p = d.grid.voxel_measure();
    double acc = 0.0;
    for (int i = 0; i < d.n; ++i) {
      double yhat = gamma_mean * d.X[i];
      const double* row = d.M.data() + static_cast<std::size_t>(i) * d.grid.p();
      for (int j = 0; j < d.grid.p(); ++j) yhat += beta[j] * row[j] * inv_p;
      for (int k = 0; k < d.q; ++k)
        yhat += xi_mean[k] * d.C[static_cast<std::size_t>(i) * d.q + k];
      const double e = d.Y[i] - yhat;
      acc += e * e;
    }
    return acc / d.n;
  };
  return {kind, value, mse(train), mse(test)};
}

int run_sensitivity(const FitFlags& flags, const std::string& nus_text,
                    const std::string& rho_scales_text,
                    const std::string& out_csv) {
  const auto loaded = io::load_dataset(flags.data_dir);
  const MediationDataset& full = loaded.data;
  if (full.n < 4)
    throw std::invalid_argument("sensitivity: need at least 4 subjects");

  // seeded 50/50 split by subject
  std::vector<int> order(full.n);
  for (int i = 0; i < full.n; ++i) order[i] = i;
  Rng rng = Rng::derived(flags.seed, 0x5eedULL);
  for (int i = full.n - 1; i > 0; --i)
    std::swap(order[i], order[rng.next_u64() % (i + 1)]);
  const int n_train = full.n / 2;

  auto subset = [&](int from, int to) {
    MediationDataset d;
    d.grid = full.grid;
    d.q = full.q;
    d.n = to - from;
    const int p = full.grid.p();
    for (int idx = from; idx < to; ++idx) {
      const int i = order[idx];
      d.Y.push_back(full.Y[i]);
      d.X.push_back(full.X[i]);
      for (int k = 0; k < full.q; ++k)
        d.C.push_back(full.C[static_cast<std::size_t>(i) * full.q + k]);
      const double* row = full.M.data() + static_cast<std::size_t>(i) * p;
      d.M.insert(d.M.end(), row, row + p);
    }
    return d;
  };
  const MediationDataset train = subset(0, n_train);
  const MediationDataset test = subset(n_train, full.n);

  std::vector<SensitivityRow> rows;
  const KernelSpec spec = parse_kernel(flags.kernel);
  {
    const auto bases =
        build_bases(full.grid, spec, flags.cutoff, flags.basis_frac);
    for (const double nu : parse_list(nus_text, "--nus"))
      rows.push_back(fit_and_score(train, test, bases, flags, nu, "nu", nu));
  }
  if (!rho_scales_text.empty()) {
    if (spec.family != KernelSpec::Family::Matern)
      throw std::invalid_argument("sensitivity: --rho-scales needs a Matern kernel");
    for (const double scale : parse_list(rho_scales_text, "--rho-scales")) {
      const KernelSpec scaled =
          KernelSpec::make_matern(spec.matern.u, spec.matern.rho * scale);
      const auto bases =
          build_bases(full.grid, scaled, flags.cutoff, flags.basis_frac);
      rows.push_back(fit_and_score(train, test, bases, flags, flags.nu,
                                   "rho_scale", scale));
    }
  }

  std::ofstream csv(out_csv, std::ios::binary);
  if (!csv) throw std::invalid_argument("sensitivity: cannot write " + out_csv);
  csv << "kind,value,train_mse,test_mse\n";
  for (const auto& row : rows)
    csv << row.kind << ',' << row.value << ',' << std::setprecision(17)
        << row.train_mse << ',' << row.test_mse << '\n';
  std::cout << "sensitivity: " << rows.size() << " rows -> " << out_csv << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateFlags {
  int replications = 10;
  SimDesign design;
  std::string pattern = "mix";
  FitFlags fit;
  long outcome_iters = 20000;
  long mediator_iters = 5000;
  double fdr = 0.1;
  std::string out_dir;
};

int run_evaluate(EvaluateFlags ev) {
  if (ev.replications <= 0)
    throw std::invalid_argument("evaluate: replications must be > 0");
  const fs::path out(ev.out_dir);
  fs::create_directories(out);

  struct RepResult {
    MediationReport report;
    SimTruth truth;
  };
  auto run_rep = [&](int rep) {
    SimDesign design = ev.design;
    design.seed = ev.design.seed + static_cast<std::uint64_t>(rep);
    if (ev.pattern == "mix")
      design.pattern = rep % 2 == 0 ? PatternKind::Sparse : PatternKind::Dense;
    else
      design.pattern = parse_pattern(ev.pattern);
    auto [data, truth] = generate(design);

    const KernelSpec spec = parse_kernel(ev.fit.kernel);
    const auto bases =
        build_bases(data.grid, spec, ev.fit.cutoff, ev.fit.basis_frac);

    FitFlags of = ev.fit;
    of.iters = ev.outcome_iters;
    of.seed = design.seed + 1000003;
    of.beta_only_frac = ev.fit.beta_only_frac;
    SamplerConfig ocfg = make_config(of, false);
    ocfg.burnin_frac = 0.5;
    ocfg.thin = std::max(1L, ev.outcome_iters / 2 / 1000);
    ChainTrace otrace = run_outcome_chain(data, bases, ocfg);

    FitFlags mf = ev.fit;
    mf.iters = ev.mediator_iters;
    mf.seed = design.seed + 2000003;
    SamplerConfig mcfg = make_config(mf, true);
    mcfg.burnin_frac = 0.5;
    mcfg.thin = 1;
    ChainTrace mtrace = run_mediator_chain(data, bases, mcfg);

    ReportOptions options;
    options.fdr_mode = true;
    options.target_fdr = ev.fdr;
    options.truth_support = truth.support();
    MediationReport report =
        build_report(otrace, bases, mtrace, bases, data.grid, options);
    return RepResult{std::move(report), std::move(truth)};
  };

  const int workers = std::min(worker_count(), ev.replications);
  std::vector<RepResult> results(ev.replications);
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const int rep = next.fetch_add(1);
        if (rep >= ev.replications) return;
        results[rep] = run_rep(rep);
      }
    });
  for (auto& t : pool) t.join();

  std::vector<MediationReport> reports;
  std::vector<SimTruth> truths;
  for (auto& r : results) {
    reports.push_back(std::move(r.report));
    truths.push_back(std::move(r.truth));
  }
  const ScoreSummary summary = score_replication(reports, truths);

  std::ofstream csv(out / "metrics.csv", std::ios::binary);
  csv << "rep,fdr,tpr,acc,mse_activation\n";
  csv << std::setprecision(17);
  for (int rep = 0; rep < ev.replications; ++rep) {
    const ReplicationScore s = score_one(reports[rep], truths[rep]);
    csv << rep << ',' << 100.0 * s.fdr << ',' << 100.0 * s.tpr << ','
        << 100.0 * s.acc << ',' << 100.0 * s.mse_activation << '\n';
  }
  csv << "mean," << summary.fdr_mean << ',' << summary.tpr_mean << ','
      << summary.acc_mean << ',' << summary.mse_mean << '\n';
  csv << "sd," << summary.fdr_sd << ',' << summary.tpr_sd << ','
      << summary.acc_sd << ',' << summary.mse_sd << '\n';

  std::cout << "evaluate (x100): FDR " << std::fixed << std::setprecision(1)
            << summary.fdr_mean << " (" << summary.fdr_sd << ")  TPR "
            << summary.tpr_mean << " (" << summary.tpr_sd << ")  ACC "
            << summary.acc_mean << " (" << summary.acc_sd << ")  MSE(act) "
            << summary.mse_mean << " (" << summary.mse_sd << ") -> "
            << (out / "metrics.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian image mediation analysis"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  SimDesign design;
  std::string grid_text = "20x20x4", pattern_text = "sparse", sim_out;
  std::string xi0_text;
  sim->add_option("--n", design.n, "subjects");
  sim->add_option("--grid", grid_text, "grid WxHxR");
  sim->add_option("--pattern", pattern_text, "dense|sparse");
  sim->add_option("--sigma-y", design.sigma_Y, "outcome noise sd");
  sim->add_option("--sigma-m", design.sigma_M, "mediator noise sd");
  sim->add_option("--nu-true", design.nu_true, "generative threshold");
  sim->add_option("--gamma0", design.gamma0, "direct effect");
  sim->add_option("--xi0", xi0_text, "confounder effects, comma separated");
  sim->add_option("--eta-scale", design.eta_scale, "individual effect scale");
  sim->add_option("--q", design.q, "confounder count");
  sim->add_option("--seed", design.seed, "RNG seed");
  sim->add_flag("--x-binary", design.x_binary, "Bernoulli(0.5) exposure");
  sim->add_option("--out", sim_out, "output directory")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "fit the outcome or mediator model");
  std::string fit_model;
  FitFlags fit_flags;
  fit->add_option("model", fit_model, "outcome|mediator")
      ->required()
      ->check(CLI::IsMember({"outcome", "mediator"}));
  add_fit_flags(fit, fit_flags);

  // mediate
  auto* med = app.add_subcommand("mediate", "combine traces into a report");
  std::string med_outcome, med_mediator, med_mode = "pip:0.1", med_truth,
              med_out;
  double med_x = 1.0, med_xprime = 0.0;
  med->add_option("--outcome-trace", med_outcome)->required();
  med->add_option("--mediator-trace", med_mediator)->required();
  med->add_option("--mode", med_mode, "fdr:<target> or pip:<t0>");
  med->add_option("--truth", med_truth, "dataset directory with truth");
  med->add_option("--x", med_x);
  med->add_option("--xprime", med_xprime);
  med->add_option("--out", med_out, "report directory")->required();

  // sensitivity
  auto* sens = app.add_subcommand(
      "sensitivity", "2-fold threshold / kernel cross validation");
  FitFlags sens_flags;
  std::string sens_nus = "0.01,0.05,0.1", sens_rho, sens_out;
  add_fit_flags(sens, sens_flags, false);
  sens->add_option("--nus", sens_nus, "threshold grid, comma separated");
  sens->add_option("--rho-scales", sens_rho,
                   "kernel scale factors, comma separated");
  sens->add_option("--out", sens_out, "output CSV")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate",
                                  "replicated simulate/fit/mediate scoring");
  EvaluateFlags ev;
  std::string eval_grid = "20x20x4";
  eval->add_option("--replications", ev.replications);
  eval->add_option("--n", ev.design.n);
  eval->add_option("--grid", eval_grid);
  eval->add_option("--pattern", ev.pattern, "dense|sparse|mix");
  eval->add_option("--sigma-y", ev.design.sigma_Y);
  eval->add_option("--sigma-m", ev.design.sigma_M);
  eval->add_option("--nu-true", ev.design.nu_true);
  eval->add_option("--eta-scale", ev.design.eta_scale);
  eval->add_option("--seed", ev.design.seed);
  eval->add_option("--outcome-iters", ev.outcome_iters);
  eval->add_option("--mediator-iters", ev.mediator_iters);
  eval->add_option("--fdr", ev.fdr, "target FDR");
  eval->add_option("--kernel", ev.fit.kernel);
  eval->add_option("--cutoff", ev.fit.cutoff);
  eval->add_option("--basis-frac", ev.fit.basis_frac);
  eval->add_option("--nu", ev.fit.nu, "fitting threshold");
  eval->add_option("--init", ev.fit.init);
  eval->add_option("--eta", ev.fit.eta, "mediator individual effects");
  eval->add_option("--beta-only-frac", ev.fit.beta_only_frac);
  eval->add_option("--out", ev.out_dir)->required();

  try {
    app.parse(argc, argv);

    if (sim->parsed()) {
      const GridArg g = parse_grid(grid_text);
      design.grid_nx = g.nx;
      design.grid_ny = g.ny;
      design.grid_rx = g.rx;
      design.grid_ry = g.ry;
      design.pattern = parse_pattern(pattern_text);
      if (!xi0_text.empty()) design.xi0 = parse_list(xi0_text, "--xi0");
      if (static_cast<int>(design.xi0.size()) != design.q)
        design.xi0.resize(design.q, 0.0);
      return run_simulate(design, sim_out);
    }
    if (fit->parsed()) return run_fit(fit_model, fit_flags);
    if (med->parsed())
      return run_mediate(med_outcome, med_mediator, med_mode, med_truth, med_x,
                         med_xprime, med_out);
    if (sens->parsed())
      return run_sensitivity(sens_flags, sens_nus, sens_rho, sens_out);
    if (eval->parsed()) {
      const GridArg g = parse_grid(eval_grid);
      ev.design.grid_nx = g.nx;
      ev.design.grid_ny = g.ny;
      ev.design.grid_rx = g.rx;
      ev.design.grid_ry = g.ry;
      return run_evaluate(std::move(ev));
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
