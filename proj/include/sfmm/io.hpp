#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfmm/basis.hpp"
#include "sfmm/dataset.hpp"
#include "sfmm/inference.hpp"
#include "sfmm/mcmc.hpp"

namespace sfmm {

namespace fs = std::filesystem;

// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t file_checksum(const fs::path& path);
std::string hex64(std::uint64_t v);

std::string read_text(const fs::path& path);
// Writes to a sibling temporary file, then renames over the target.
void write_atomic(const fs::path& path, const std::string& bytes);

// Matrix files: "SFMX", u32 version, u64 rows, u64 cols, rows*cols f64 row-major.
void write_matrix(const fs::path& path, const Matrix& m);
Matrix read_matrix(const fs::path& path);
// Comma-separated rows, one matrix row per line.
void write_matrix_csv(const fs::path& path, const Matrix& m);
Matrix read_matrix_csv(const fs::path& path);

enum class DatasetLayout { binary, csv, container };

// Manifest JSON plus per-function matrices (n_meridional rows) or a single container
// ("SFMC", u32 version, u64 count, u64 rows, u64 cols, then each function row-major).
void write_dataset(const FunctionalDataset& data, const fs::path& dir, DatasetLayout layout = DatasetLayout::container);
FunctionalDataset read_dataset(const fs::path& manifest);

struct DatasetSummary {
  std::size_t functions = 0;
  SurfaceGrid grid;
  std::vector<double> serial_levels;
  std::vector<std::pair<std::string, std::pair<double, double>>> covariate_ranges;
  std::string to_string() const;
};
DatasetSummary summarize(const FunctionalDataset& data);

// "SFMB" versioned binary: grid, wavelet spec, retained set, index map, weights, optional rotation.
void write_basis(const fs::path& path, const BasisSystem& basis);
BasisSystem read_basis(const fs::path& path);

// "SFMP" chunked columnar file: JSON metadata block, then one column per parameter
// (u32 name length, name, u64 draw count, f64 values in draw order).
void write_posterior(const fs::path& path, const CoefficientPosterior& posterior);
CoefficientPosterior read_posterior(const fs::path& path);

// location, theta, phi, mean, pw_lo, pw_hi, joint_lo, joint_hi
void write_band_csv(const fs::path& path, const BandSummary& band, const std::vector<std::size_t>& locations,
                    const SurfaceGrid& grid);
// Row-indexed band table for non-spatial summaries (regions, ages).
void write_band_table(const fs::path& path, const std::string& key, const std::vector<double>& keys,
                      const BandSummary& band);

// 8-bit grayscale PNG with nearest-neighbor scaling of a column-stacked surface.
void write_png_heatmap(const fs::path& path, const Vector& values, const SurfaceGrid& grid, int scale = 4);

}  // namespace sfmm
