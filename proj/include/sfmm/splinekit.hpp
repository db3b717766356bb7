#pragma once

#include <span>
#include <vector>

#include "sfmm/common.hpp"

namespace sfmm {

// Cubic B-spline basis with boundary knots of multiplicity 4.
struct SplineBasisDef {
  double lower = 0.0;
  double upper = 1.0;
  std::vector<double> interior;

  static SplineBasisDef equally_spaced(double lower, double upper, int n_interior = 5);
  int n_interior() const { return static_cast<int>(interior.size()); }
  int size() const { return n_interior() + 4; }
  std::vector<double> knots() const;
  // Greville abscissae: coefficients reproducing the identity function.
  Vector greville() const;
  void validate() const;
};

// N x (M+4) design of the `deriv`-th derivative (0, 1 or 2).
Matrix bspline_design(std::span<const double> x, const SplineBasisDef& def, int deriv = 0);
Matrix penalty_matrix(const SplineBasisDef& def);

struct DemmlerReinsch {
  Matrix omega;        // (M+4) x (M+4)
  Matrix x_null;       // (M+4) x 2, orthonormal null-space eigenvectors
  Matrix x_lin;        // (M+4) x 2, coefficients of [1, x]
  Matrix z_omega;      // (M+4) x (M+2), orthonormal penalized eigenvectors
  Vector eigenvalues;  // d, length M+2, positive
  Matrix z_map;        // z_omega * diag(d^-1/2)
};

DemmlerReinsch demmler_reinsch(const Matrix& omega, const SplineBasisDef& def);

struct DerivativeDesign {
  Matrix d_lin;  // N x 2, derivative of [1, x]
  Matrix d_z;    // N x (M+2), derivative of B(x) z_map
};
DerivativeDesign derivative_design(std::span<const double> x, const SplineBasisDef& def, const DemmlerReinsch& dr);

// trace{(B'WB + lambda Omega)^-1 B'WB}; W = I when omitted.
double df_lambda(const Matrix& B, const Matrix& omega, double lambda, const Matrix* W = nullptr);

// Reusable spectral form for many lambda values given the gram matrix A = B'WB.
class DfSpectrum {
 public:
  DfSpectrum(const Matrix& gram, const Matrix& omega);
  double operator()(double lambda) const;
  const Vector& kappa() const { return kappa_; }

 private:
  Vector kappa_;
};

}  // namespace sfmm
