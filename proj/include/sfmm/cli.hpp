#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sfmm/inference.hpp"
#include "sfmm/mcmc.hpp"
#include "sfmm/select.hpp"
#include "sfmm/simulate.hpp"

namespace sfmm {

inline constexpr const char* kSoftwareVersion = "0.1.0";

struct NamedRegion {
  std::string name;
  Region region;
};

struct RunConfig {
  std::filesystem::path base_dir;  // relative paths resolve against the config file directory
  std::string dataset;             // manifest path; empty means the simulate stage output
  WaveletSpec wavelet;
  std::string basis = "wavelet";   // "wavelet" or "pc"
  double pc_threshold = 0.995;
  double compression_threshold = 0.995;
  double spike_ratio = 100.0;
  std::string formula;             // "selected" uses the select stage winner
  std::string serial_variable = "iop";
  Criterion criterion = Criterion::abic;
  std::string procedure = "joint";  // "joint" or "two_step"
  std::vector<CandidateModel> candidates;
  std::vector<CandidateModel> fixed_candidates;
  std::vector<CandidateModel> random_candidates;
  std::string baseline_random = "value ~ 1";
  ChainConfig chain;
  std::size_t batch = 16;
  double alpha = 0.05;
  std::optional<double> age_min, age_max;
  std::size_t age_points = 71;
  std::vector<double> surface_ages;
  double auc_lo = 7.0, auc_hi = 45.0;
  std::vector<NamedRegion> regions;
  bool png = true;
  std::size_t df_draws = 100;
  SyntheticStudyOptions simulate;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  int workers = 1;
  bool strict = false;
};

RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = ".");
RunConfig load_config(const std::filesystem::path& path);
// Canonical JSON of every field that influences outputs.
std::string canonical_config(const RunConfig& config);

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitConvergence = 4;

int cli_main(int argc, char** argv);

}  // namespace sfmm
