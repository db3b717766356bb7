#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sfmm/basis.hpp"
#include "sfmm/design.hpp"
#include "sfmm/rng.hpp"

namespace sfmm {

struct StudyLayout {
  int n_subjects = 19;
  int n_two_units = 15;  // subjects contributing two eyes; the rest contribute one
  std::vector<double> serial_levels = {7, 10, 15, 20, 25, 30, 35, 40, 45};
  double age_min = 20.0;
  double age_max = 90.0;
};

// Metadata of a glaucoma-like study: subject ages evenly spread over [age_min, age_max].
std::vector<FunctionRecord> study_records(const StudyLayout& layout);

struct PseudoParameters {
  Matrix beta;      // A x K
  Matrix variance;  // (H + 1) x K: random levels, then the residual
};

// N x K basis coefficients; coefficient k uses the stream (seed, k).
Matrix simulate_coefficients(const PseudoParameters& params, const DesignBundle& design, std::uint64_t seed,
                             int workers = 1);

// Pseudo-data: simulated coefficients synthesized to surfaces on the basis grid.
FunctionalDataset simulate_pseudo(const PseudoParameters& params, const DesignBundle& design,
                                  const BasisSystem& basis, const std::vector<FunctionRecord>& records,
                                  std::uint64_t seed, int workers = 1);

// Glaucoma-like study with a known truth supported on the coarsest `support`
// wavelet coefficients; effect sizes and variances decay with scale.
struct SyntheticStudyOptions {
  SurfaceGrid grid{120, 120};
  WaveletSpec wavelet;
  StudyLayout layout;
  std::string formula = "value ~ np(age) + hyper(iop) + (hyper(iop)|eye)";
  std::size_t support = 269;
  double decay = 0.35;       // per unit of scale_m + scale_c
  double sparsity = 0.3;     // probability that a non-intercept effect is exactly zero
  double intercept = 5.0;
  double effect_sd = 1.0;
  double spline_var = 0.3;   // variance of the spline contribution per row
  std::vector<double> unit_var = {0.5, 1.0, 0.5};
  double subject_var = 0.3;
  double residual_var = 0.2;
  double noise_sd = 0.0;     // white noise added in data space
  std::size_t spikes = 0;    // functions receiving a single-location artifact
  double spike_size = 5000.0;
  std::uint64_t seed = 1;
  int workers = 1;
};

struct SyntheticStudy {
  std::vector<FunctionRecord> records;
  ModelSpec model;
  DesignBundle design;
  BasisSystem basis;
  PseudoParameters truth;
  Matrix coefficients;  // simulated N x K before data-space noise
  FunctionalDataset data;
};

SyntheticStudy synthetic_study(const SyntheticStudyOptions& options);

// X beta + sum_h Z_h u_h + e with u_h ~ N(0, q_h I) and e ~ N(0, s I).
Vector simulate_response(const DesignBundle& design, const Vector& beta, std::span<const double> q, double s,
                         Rng& rng);

}  // namespace sfmm
