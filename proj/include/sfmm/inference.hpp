#pragma once

#include <span>
#include <string>
#include <vector>

#include "sfmm/basis.hpp"
#include "sfmm/mcmc.hpp"

namespace sfmm {

struct PosteriorSurface {
  std::string label;
  std::vector<std::size_t> locations;  // column-stacked grid indices
  Matrix draws;                        // G x |locations|
};

struct BandSummary {
  Vector mean, pw_lo, pw_hi, joint_lo, joint_hi;
  double critical = 0.0;                // quantile of the maximum standardized deviation
  std::vector<std::size_t> zero_sd;     // positions with zero posterior sd
};

// G x K draws of one fixed effect across coefficients (posteriors in coefficient order).
Matrix coefficient_draws(const std::vector<CoefficientPosterior>& posteriors, const std::string& fixed_name);
// G x K draws of one variance component ("residual" for s).
Matrix variance_draws(const std::vector<CoefficientPosterior>& posteriors, const std::string& name);

// Draw g at location t equals sum_k draws(g, k) psi_k(t).
PosteriorSurface back_project(const Matrix& coefficient_draws, const BasisSystem& basis,
                              std::span<const std::size_t> targets, const std::string& label = "");

// Coefficient-space draws of the nonparametric term at covariate value x:
// (x - center) b_lin + Z(x) u, minus its average over `reference` (the centering grid).
Matrix np_coefficient_draws(const std::vector<CoefficientPosterior>& posteriors, const DesignBundle& design,
                            std::size_t term, double x, std::span<const double> reference);
// Derivative in x of the (uncentered) nonparametric term: b_lin + Z'(x) u.
Matrix np_derivative_draws(const std::vector<CoefficientPosterior>& posteriors, const DesignBundle& design,
                           std::size_t term, double x);

// 71-point grid over [lo, hi] by default.
std::vector<double> covariate_grid(double lo, double hi, std::size_t n = 71);

BandSummary joint_band(const PosteriorSurface& surface, double alpha = 0.05);

// Integrals of the serial basis columns over [lo, hi].
Vector serial_integrals(const SerialBasis& g, double lo, double hi);

// AUC coefficient draws: nonparametric term at x plus the integral of the serial
// fixed effects over [lo, hi].
Matrix auc_coefficient_draws(const std::vector<CoefficientPosterior>& posteriors, const DesignBundle& design,
                             std::size_t term, const SerialBasis& serial, const std::string& serial_label, double x,
                             std::span<const double> reference, double lo = 7.0, double hi = 45.0);

// DF(t) per draw from the induced variance components at each target location.
PosteriorSurface df_map(const std::vector<CoefficientPosterior>& posteriors, const DesignBundle& design,
                        std::size_t term, const BasisSystem& basis, std::span<const std::size_t> targets);

struct Region {
  enum class Kind { meridional_band, circumferential_average, custom };
  Kind kind = Kind::meridional_band;
  double theta_lo = 0.0;
  double theta_hi = 0.0;  // band is [lo, hi), closed at the grid maximum
  Vector custom;          // per grid location, for custom regions
  bool area_weighted = true;
};

// Per-location weights (sin theta when area weighted) of a band or custom region over the whole grid.
Vector region_weights(const SurfaceGrid& grid, const Region& region);
// Spherical area of a band region: sum of sin(theta) dtheta dphi over its grid cells.
double region_area(const SurfaceGrid& grid, const Region& region);

// Coefficient-space weights c with c' b equal to the region average of the
// synthesized surface (band and custom regions only).
Vector region_coefficient_weights(const BasisSystem& basis, const Region& region);

// Band and custom regions give one value per draw; the circumferential
// average gives one value per meridional row (locations are row indices).
PosteriorSurface aggregate(const PosteriorSurface& surface, const SurfaceGrid& grid, const Region& region);

// Serial correlation over the levels implied by unit-level variances q (one per
// serial column) and residual s.
Matrix serial_correlation(const SerialBasis& g, std::span<const double> q, double s, std::span<const double> levels);

}  // namespace sfmm
