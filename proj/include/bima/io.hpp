#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bima/basis.hpp"
#include "bima/mediation.hpp"
#include "bima/model.hpp"
#include "bima/sampler.hpp"
#include "bima/simgen.hpp"

namespace bima::io {

// Raw numeric tensor file: magic "BIMT", u32 LE version = 1, u8 dtype
// (0 = IEEE float64), u8 ndim, ndim x u64 LE dims, then row-major
// little-endian payload.
struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::uint64_t elements() const {
    std::uint64_t n = 1;
    for (const auto d : dims) n *= d;
    return n;
  }
};

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

// Dataset directory: manifest.json plus Y/X/C/M/coords/region_map tensors
// and optional truth files.
void save_dataset(const std::filesystem::path& dir,
                  const MediationDataset& data,
                  const SimTruth* truth = nullptr,
                  std::uint64_t seed = 0);
struct LoadedDataset {
  MediationDataset data;
  std::optional<SimTruth> truth;
  std::uint64_t seed = 0;
};
LoadedDataset load_dataset(const std::filesystem::path& dir);

// Bases directory: per-region Q / eigenvalue tensors with a JSON sidecar.
void save_bases(const std::filesystem::path& dir,
                const std::vector<RegionBasis>& bases,
                const KernelSpec& spec);
std::vector<RegionBasis> load_bases(const std::filesystem::path& dir);

// Trace directory: meta.json plus draw tensors.
void save_trace(const std::filesystem::path& dir, const ChainTrace& trace,
                const std::string& bases_path, const std::string& data_path);
struct LoadedTrace {
  ChainTrace trace;
  std::string bases_path;
  std::string data_path;
};
LoadedTrace load_trace(const std::filesystem::path& dir);

// Report: JSON summary, per-voxel CSV, region CSV, and a gnuplot-style
// grid file for 2-D grids.
void write_report(const std::filesystem::path& dir,
                  const MediationReport& report, const VoxelGrid& grid);

}  // namespace bima::io
