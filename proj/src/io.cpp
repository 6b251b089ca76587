#include "bima/io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace bima::io {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "BIMT serialization assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'B', 'I', 'M', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 0;

void write_exact(std::ofstream& out, const void* data, std::size_t bytes) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw std::runtime_error("tensor write failed");
}

void read_exact(std::ifstream& in, void* data, std::size_t bytes) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (in.gcount() != static_cast<std::streamsize>(bytes))
    throw std::runtime_error("tensor read truncated");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  if (tensor.data.size() != tensor.elements())
    throw std::invalid_argument("write_tensor: dims/data mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_exact(out, kMagic, 4);
  write_exact(out, &kVersion, 4);
  write_exact(out, &kDtypeF64, 1);
  const std::uint8_t ndim = static_cast<std::uint8_t>(tensor.dims.size());
  write_exact(out, &ndim, 1);
  for (const std::uint64_t d : tensor.dims) write_exact(out, &d, 8);
  write_exact(out, tensor.data.data(), tensor.data.size() * 8);
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  read_exact(in, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path.string() + ": not a BIMT tensor");
  std::uint32_t version = 0;
  read_exact(in, &version, 4);
  if (version != kVersion)
    throw std::runtime_error(path.string() + ": unsupported BIMT version");
  std::uint8_t dtype = 0, ndim = 0;
  read_exact(in, &dtype, 1);
  read_exact(in, &ndim, 1);
  if (dtype != kDtypeF64)
    throw std::runtime_error(path.string() + ": unsupported dtype");
  Tensor tensor;
  tensor.dims.resize(ndim);
  for (auto& d : tensor.dims) read_exact(in, &d, 8);
  tensor.data.resize(tensor.elements());
  read_exact(in, tensor.data.data(), tensor.data.size() * 8);
  return tensor;
}

// ---------------------------------------------------------------------------
// dataset

void save_dataset(const std::filesystem::path& dir,
                  const MediationDataset& data, const SimTruth* truth,
                  std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const auto n = static_cast<std::uint64_t>(data.n);
  const auto p = static_cast<std::uint64_t>(data.grid.p());
  const auto q = static_cast<std::uint64_t>(data.q);

  write_tensor(dir / "Y.bimt", {{n}, data.Y});
  write_tensor(dir / "X.bimt", {{n}, data.X});
  write_tensor(dir / "C.bimt", {{n, q}, data.C});
  write_tensor(dir / "M.bimt", {{n, p}, data.M});
  write_tensor(dir / "coords.bimt",
               {{p, static_cast<std::uint64_t>(data.grid.dim)},
                data.grid.coords});
  std::vector<double> region_map(data.grid.region_of.begin(),
                                 data.grid.region_of.end());
  write_tensor(dir / "region_map.bimt", {{p}, region_map});

  json manifest;
  manifest["n"] = data.n;
  manifest["p"] = data.grid.p();
  manifest["q"] = data.q;
  manifest["grid"] = {{"dim", data.grid.dim},
                      {"regions", data.grid.num_regions}};
  manifest["files"] = {{"Y", "Y.bimt"},           {"X", "X.bimt"},
                       {"C", "C.bimt"},           {"M", "M.bimt"},
                       {"coords", "coords.bimt"}, {"region_map", "region_map.bimt"}};
  manifest["seed"] = seed;
  if (truth != nullptr) {
    write_tensor(dir / "truth_alpha0.bimt", {{p}, truth->alpha0});
    write_tensor(dir / "truth_beta0.bimt", {{p}, truth->beta0});
    write_tensor(dir / "truth_svme0.bimt", {{p}, truth->svme0});
    write_tensor(dir / "truth_xi0.bimt",
                 {{static_cast<std::uint64_t>(truth->xi0.size())}, truth->xi0});
    write_tensor(dir / "truth_eta.bimt", {{n, p}, truth->eta});
    manifest["truth"] = {{"alpha0", "truth_alpha0.bimt"},
                         {"beta0", "truth_beta0.bimt"},
                         {"svme0", "truth_svme0.bimt"},
                         {"xi0", "truth_xi0.bimt"},
                         {"eta", "truth_eta.bimt"},
                         {"gamma0", truth->gamma0}};
  }
  write_json(dir / "manifest.json", manifest);
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  LoadedDataset out;
  out.data.n = manifest.at("n").get<int>();
  out.data.q = manifest.at("q").get<int>();
  out.seed = manifest.value("seed", 0ULL);
  const int p = manifest.at("p").get<int>();

  const auto& files = manifest.at("files");
  out.data.Y = read_tensor(dir / files.at("Y").get<std::string>()).data;
  out.data.X = read_tensor(dir / files.at("X").get<std::string>()).data;
  out.data.C = read_tensor(dir / files.at("C").get<std::string>()).data;
  out.data.M = read_tensor(dir / files.at("M").get<std::string>()).data;

  const Tensor coords =
      read_tensor(dir / files.at("coords").get<std::string>());
  const Tensor region_map =
      read_tensor(dir / files.at("region_map").get<std::string>());
  out.data.grid.dim = manifest.at("grid").at("dim").get<int>();
  out.data.grid.num_regions = manifest.at("grid").at("regions").get<int>();
  out.data.grid.coords = coords.data;
  out.data.grid.region_of.resize(region_map.data.size());
  for (std::size_t j = 0; j < region_map.data.size(); ++j)
    out.data.grid.region_of[j] = static_cast<int>(region_map.data[j]);
  out.data.grid.finalize();
  if (out.data.grid.p() != p)
    throw std::runtime_error("dataset manifest p mismatch");
  out.data.validate();

  if (manifest.contains("truth")) {
    SimTruth truth;
    const auto& t = manifest.at("truth");
    truth.alpha0 = read_tensor(dir / t.at("alpha0").get<std::string>()).data;
    truth.beta0 = read_tensor(dir / t.at("beta0").get<std::string>()).data;
    truth.svme0 = read_tensor(dir / t.at("svme0").get<std::string>()).data;
    truth.xi0 = read_tensor(dir / t.at("xi0").get<std::string>()).data;
    truth.eta = read_tensor(dir / t.at("eta").get<std::string>()).data;
    truth.gamma0 = t.at("gamma0").get<double>();
    out.truth = std::move(truth);
  }
  return out;
}

// ---------------------------------------------------------------------------
// bases

void save_bases(const std::filesystem::path& dir,
                const std::vector<RegionBasis>& bases,
                const KernelSpec& spec) {
  std::filesystem::create_directories(dir);
  json meta;
  meta["kernel"] = spec.describe();
  json entries = json::array();
  for (const auto& basis : bases) {
    std::ostringstream qi, ei;
    qi << "q_r" << std::setfill('0') << std::setw(3) << basis.region << ".bimt";
    ei << "eig_r" << std::setfill('0') << std::setw(3) << basis.region
       << ".bimt";
    write_tensor(dir / qi.str(),
                 {{static_cast<std::uint64_t>(basis.p_r),
                   static_cast<std::uint64_t>(basis.L)},
                  basis.Q});
    write_tensor(dir / ei.str(),
                 {{static_cast<std::uint64_t>(basis.L)}, basis.eigvals});
    json entry;
    entry["region"] = basis.region;
    entry["L_r"] = basis.L;
    entry["p_r"] = basis.p_r;
    entry["cutoff_frac"] = basis.cutoff_frac;
    entry["Q"] = qi.str();
    entry["eigvals"] = ei.str();
    if (spec.family == KernelSpec::Family::Matern) {
      const MaternParams mp = spec.matern_for_region(basis.region);
      entry["u"] = mp.u;
      entry["rho"] = mp.rho;
    }
    entries.push_back(entry);
  }
  meta["regions"] = entries;
  write_json(dir / "bases.json", meta);
}

std::vector<RegionBasis> load_bases(const std::filesystem::path& dir) {
  const json meta = read_json(dir / "bases.json");
  std::vector<RegionBasis> bases;
  for (const auto& entry : meta.at("regions")) {
    RegionBasis basis;
    basis.region = entry.at("region").get<int>();
    basis.L = entry.at("L_r").get<int>();
    basis.p_r = entry.at("p_r").get<int>();
    basis.cutoff_frac = entry.at("cutoff_frac").get<double>();
    const Tensor q = read_tensor(dir / entry.at("Q").get<std::string>());
    const Tensor e = read_tensor(dir / entry.at("eigvals").get<std::string>());
    if (q.dims.size() != 2 ||
        q.dims[0] != static_cast<std::uint64_t>(basis.p_r) ||
        q.dims[1] != static_cast<std::uint64_t>(basis.L) ||
        e.data.size() != static_cast<std::size_t>(basis.L))
      throw std::runtime_error("bases: tensor shape mismatch");
    basis.Q = q.data;
    basis.eigvals = e.data;
    bases.push_back(std::move(basis));
  }
  return bases;
}

// ---------------------------------------------------------------------------
// trace

void save_trace(const std::filesystem::path& dir, const ChainTrace& trace,
                const std::string& bases_path, const std::string& data_path) {
  std::filesystem::create_directories(dir);
  const auto T = static_cast<std::uint64_t>(trace.draws());
  std::uint64_t L_total = 0;
  for (const int l : trace.L) L_total += l;

  auto flat2d = [](const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return flat;
  };

  write_tensor(dir / "theta.bimt", {{T, L_total}, flat2d(trace.theta)});
  write_tensor(dir / "sigma2_obs.bimt", {{T}, trace.sigma2_obs});
  write_tensor(dir / "sigma2_coef.bimt", {{T}, trace.sigma2_coef});
  if (trace.model == "outcome") {
    write_tensor(dir / "gamma.bimt", {{T}, trace.gamma});
    const std::uint64_t q = T > 0 ? trace.xi.front().size() : 0;
    write_tensor(dir / "xi.bimt", {{T, q}, flat2d(trace.xi)});
  } else {
    const std::uint64_t qL =
        T > 0 ? trace.theta_zeta.front().size() : 0;
    write_tensor(dir / "theta_zeta.bimt", {{T, qL}, flat2d(trace.theta_zeta)});
    write_tensor(dir / "sigma2_eta.bimt", {{T}, trace.sigma2_eta});
    write_tensor(dir / "sigma2_zeta.bimt", {{T}, trace.sigma2_zeta});
    write_tensor(dir / "eta_constraint_max.bimt",
                 {{T}, trace.eta_constraint_max});
  }

  json meta;
  meta["model"] = trace.model;
  meta["nu"] = format_double(trace.nu);
  meta["iters"] = trace.iters;
  meta["burnin_frac"] = trace.burnin_frac;
  meta["thin"] = trace.thin;
  meta["seed"] = trace.seed;
  meta["draws"] = trace.draws();
  meta["L"] = trace.L;
  meta["regions"] = trace.regions;
  meta["accept_rates"] = trace.accept_rates;
  meta["step_final"] = trace.step_final;
  meta["init_fallback"] = trace.init_fallback;
  meta["bases_path"] = bases_path;
  meta["data_path"] = data_path;
  write_json(dir / "meta.json", meta);
}

LoadedTrace load_trace(const std::filesystem::path& dir) {
  const json meta = read_json(dir / "meta.json");
  LoadedTrace out;
  ChainTrace& trace = out.trace;
  trace.model = meta.at("model").get<std::string>();
  trace.nu = std::stod(meta.at("nu").get<std::string>());
  trace.iters = meta.at("iters").get<long>();
  trace.burnin_frac = meta.at("burnin_frac").get<double>();
  trace.thin = meta.at("thin").get<int>();
  trace.seed = meta.at("seed").get<std::uint64_t>();
  trace.L = meta.at("L").get<std::vector<int>>();
  trace.regions = meta.at("regions").get<std::vector<int>>();
  trace.accept_rates = meta.at("accept_rates").get<std::vector<double>>();
  trace.step_final = meta.at("step_final").get<std::vector<double>>();
  trace.init_fallback = meta.value("init_fallback", false);
  out.bases_path = meta.value("bases_path", "");
  out.data_path = meta.value("data_path", "");

  auto split2d = [](const Tensor& t) {
    std::vector<std::vector<double>> rows;
    if (t.dims.size() != 2) throw std::runtime_error("trace: expected matrix");
    const std::size_t T = t.dims[0], w = t.dims[1];
    rows.resize(T);
    for (std::size_t i = 0; i < T; ++i)
      rows[i].assign(t.data.begin() + i * w, t.data.begin() + (i + 1) * w);
    return rows;
  };

  trace.theta = split2d(read_tensor(dir / "theta.bimt"));
  trace.sigma2_obs = read_tensor(dir / "sigma2_obs.bimt").data;
  trace.sigma2_coef = read_tensor(dir / "sigma2_coef.bimt").data;
  if (trace.model == "outcome") {
    trace.gamma = read_tensor(dir / "gamma.bimt").data;
    trace.xi = split2d(read_tensor(dir / "xi.bimt"));
  } else {
    trace.theta_zeta = split2d(read_tensor(dir / "theta_zeta.bimt"));
    trace.sigma2_eta = read_tensor(dir / "sigma2_eta.bimt").data;
    trace.sigma2_zeta = read_tensor(dir / "sigma2_zeta.bimt").data;
    trace.eta_constraint_max =
        read_tensor(dir / "eta_constraint_max.bimt").data;
  }
  return out;
}

// ---------------------------------------------------------------------------
// report

void write_report(const std::filesystem::path& dir,
                  const MediationReport& report, const VoxelGrid& grid) {
  std::filesystem::create_directories(dir);
  json j;
  j["nie"] = {{"mean", report.nie_mean},
              {"ci", {report.nie_lo, report.nie_hi}}};
  j["nde"] = {{"mean", report.nde_mean},
              {"ci", {report.nde_lo, report.nde_hi}}};
  j["x"] = report.x;
  j["xprime"] = report.xprime;
  j["threshold"] = report.threshold;
  j["n_selected"] = report.selected.size();
  if (report.achieved_fdr.has_value())
    j["achieved_fdr"] = *report.achieved_fdr;
  json regions = json::array();
  for (const auto& row : report.region_table)
    regions.push_back({{"region", row.region},
                       {"nie", row.nie},
                       {"nie_pos", row.nie_pos},
                       {"nie_neg", row.nie_neg},
                       {"avg_pip", row.avg_pip},
                       {"n_active", row.n_active}});
  j["regions"] = regions;
  write_json(dir / "report.json", j);

  {
    std::ofstream csv(dir / "voxels.csv", std::ios::binary);
    csv << "voxel";
    for (int k = 0; k < grid.dim; ++k) csv << ",s" << k + 1;
    csv << ",region,svme_mean,svme_lo,svme_hi,pip,selected\n";
    std::vector<char> is_selected(grid.p(), 0);
    for (const int j2 : report.selected) is_selected[j2] = 1;
    for (int v = 0; v < grid.p(); ++v) {
      csv << v;
      const auto pt = grid.point(v);
      for (const double c : pt) csv << ',' << format_double(c);
      csv << ',' << grid.region_of[v] << ',' << format_double(report.svme_mean[v])
          << ',' << format_double(report.svme_lo[v]) << ','
          << format_double(report.svme_hi[v]) << ','
          << format_double(report.pip[v]) << ',' << int(is_selected[v])
          << '\n';
    }
  }
  {
    std::ofstream csv(dir / "region_table.csv", std::ios::binary);
    csv << "region,nie,nie_pos,nie_neg,avg_pip,n_active\n";
    for (const auto& row : report.region_table)
      csv << row.region << ',' << format_double(row.nie) << ','
          << format_double(row.nie_pos) << ',' << format_double(row.nie_neg)
          << ',' << format_double(row.avg_pip) << ',' << row.n_active << '\n';
  }
  if (grid.dim == 2) {
    // gnuplot splot-compatible: blank line between scanlines
    std::ofstream gp(dir / "svme_grid.dat", std::ios::binary);
    double last_y = grid.point(0)[1];
    for (int v = 0; v < grid.p(); ++v) {
      const auto pt = grid.point(v);
      if (pt[1] != last_y) {
        gp << '\n';
        last_y = pt[1];
      }
      gp << format_double(pt[0]) << ' ' << format_double(pt[1]) << ' '
         << format_double(report.svme_selected_mean[v]) << '\n';
    }
  }
}

}  // namespace bima::io
