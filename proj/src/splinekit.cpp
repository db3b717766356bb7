#include "sfmm/splinekit.hpp"

#include <algorithm>
#include <cmath>

namespace sfmm {

SplineBasisDef SplineBasisDef::equally_spaced(double lower, double upper, int n_interior) {
  if (!(upper > lower)) fail("invalid_knots", "spline boundary must satisfy a < b");
  if (n_interior < 1) fail("invalid_knots", "at least one interior knot is required");
  SplineBasisDef d;
  d.lower = lower;
  d.upper = upper;
  for (int j = 1; j <= n_interior; ++j) d.interior.push_back(lower + (upper - lower) * j / (n_interior + 1.0));
  return d;
}

void SplineBasisDef::validate() const {
  if (!(upper > lower)) fail("invalid_knots", "spline boundary must satisfy a < b");
  if (interior.empty()) fail("invalid_knots", "at least one interior knot is required");
  double prev = lower;
  for (double k : interior) {
    if (!(k > prev)) fail("invalid_knots", "interior knots must increase strictly inside (a, b)");
    prev = k;
  }
  if (!(upper > prev)) fail("invalid_knots", "interior knots must lie below b");
}

std::vector<double> SplineBasisDef::knots() const {
  std::vector<double> t(4, lower);
  t.insert(t.end(), interior.begin(), interior.end());
  t.insert(t.end(), 4, upper);
  return t;
}

Vector SplineBasisDef::greville() const {
  const auto t = knots();
  Vector g(size());
  for (int m = 0; m < size(); ++m) g[m] = (t[m + 1] + t[m + 2] + t[m + 3]) / 3.0;
  return g;
}

namespace {

constexpr int kDegree = 3;

int find_span(const std::vector<double>& t, int n_basis, double x) {
  if (x >= t[n_basis]) return n_basis - 1;
  const auto it = std::upper_bound(t.begin() + kDegree, t.begin() + n_basis + 1, x);
  return static_cast<int>(it - t.begin()) - 1;
}

// Nonzero basis values and derivatives up to `nd` at x (de Boor / Piegl-Tiller).
void basis_derivatives(const std::vector<double>& t, int span, double x, int nd, double out[3][kDegree + 1]) {
  double ndu[kDegree + 1][kDegree + 1];
  double left[kDegree + 1], right[kDegree + 1];
  ndu[0][0] = 1.0;
  for (int j = 1; j <= kDegree; ++j) {
    left[j] = x - t[span + 1 - j];
    right[j] = t[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  for (int j = 0; j <= kDegree; ++j) out[0][j] = ndu[j][kDegree];
  double a[2][kDegree + 1];
  for (int r = 0; r <= kDegree; ++r) {
    int s1 = 0, s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= nd; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = kDegree - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : kDegree - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      out[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double f = kDegree;
  for (int k = 1; k <= nd; ++k) {
    for (int j = 0; j <= kDegree; ++j) out[k][j] *= f;
    f *= kDegree - k;
  }
}

}  // namespace

Matrix bspline_design(std::span<const double> x, const SplineBasisDef& def, int deriv) {
  def.validate();
  if (deriv < 0 || deriv > 2) fail("invalid_derivative", "derivative order must be 0, 1 or 2");
  const auto t = def.knots();
  const int nb = def.size();
  Matrix B = Matrix::Zero(x.size(), nb);
  double vals[3][kDegree + 1];
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= def.lower && x[i] <= def.upper))
      fail("out_of_range", "value " + std::to_string(x[i]) + " outside spline boundary [" + std::to_string(def.lower) +
                               ", " + std::to_string(def.upper) + "]");
    const int span = find_span(t, nb, x[i]);
    basis_derivatives(t, span, x[i], deriv, vals);
    for (int j = 0; j <= kDegree; ++j) B(i, span - kDegree + j) = vals[deriv][j];
  }
  return B;
}

Matrix penalty_matrix(const SplineBasisDef& def) {
  def.validate();
  const auto t = def.knots();
  const int nb = def.size();
  Matrix omega = Matrix::Zero(nb, nb);
  const double gl_x[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
  const double gl_w[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  std::vector<double> pts;
  std::vector<double> wts;
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    const double a = t[i], b = t[i + 1];
    if (!(b > a)) continue;
    for (int q = 0; q < 3; ++q) {
      pts.push_back(0.5 * (a + b) + 0.5 * (b - a) * gl_x[q]);
      wts.push_back(0.5 * (b - a) * gl_w[q]);
    }
  }
  const Matrix d2 = bspline_design(pts, def, 2);
  for (std::size_t q = 0; q < pts.size(); ++q) omega.noalias() += wts[q] * d2.row(q).transpose() * d2.row(q);
  return 0.5 * (omega + omega.transpose());
}

DemmlerReinsch demmler_reinsch(const Matrix& omega, const SplineBasisDef& def) {
  if (omega.rows() != omega.cols() || omega.rows() != def.size())
    fail("dimension_mismatch", "penalty matrix size does not match spline basis");
  if ((omega - omega.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, omega.cwiseAbs().maxCoeff()))
    fail_numeric("non_symmetric_penalty", "penalty matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(omega);
  if (es.info() != Eigen::Success) fail_numeric("eigen_failure", "eigen-decomposition of the penalty failed");
  const Vector ev = es.eigenvalues();
  const double cutoff = 1e-10 * ev.cwiseAbs().maxCoeff();
  int n_null = 0;
  for (Index i = 0; i < ev.size(); ++i)
    if (ev[i] < cutoff) ++n_null;
  if (n_null != 2) fail_numeric("penalty_rank", "penalty null space has dimension " + std::to_string(n_null) + ", expected 2");
  DemmlerReinsch dr;
  dr.omega = omega;
  dr.x_null = es.eigenvectors().leftCols(2);
  dr.z_omega = es.eigenvectors().rightCols(ev.size() - 2);
  dr.eigenvalues = ev.tail(ev.size() - 2);
  dr.z_map = dr.z_omega * dr.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal();
  dr.x_lin.resize(def.size(), 2);
  dr.x_lin.col(0).setOnes();
  dr.x_lin.col(1) = def.greville();
  return dr;
}

DerivativeDesign derivative_design(std::span<const double> x, const SplineBasisDef& def, const DemmlerReinsch& dr) {
  DerivativeDesign out;
  const Matrix d1 = bspline_design(x, def, 1);
  out.d_z = d1 * dr.z_map;
  out.d_lin.resize(x.size(), 2);
  out.d_lin.col(0).setZero();
  out.d_lin.col(1).setOnes();
  return out;
}

DfSpectrum::DfSpectrum(const Matrix& gram, const Matrix& omega) {
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) fail_numeric("singular_system", "B'WB is not positive definite");
  const Matrix L = llt.matrixL();
  // kappa = eig(L^-1 Omega L^-T)
  const Matrix li_omega = L.triangularView<Eigen::Lower>().solve(omega);
  const Matrix m = L.triangularView<Eigen::Lower>().solve(li_omega.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  kappa_ = es.eigenvalues().cwiseMax(0.0);
}

double DfSpectrum::operator()(double lambda) const {
  if (!(lambda > 0.0)) fail("invalid_lambda", "lambda must be positive");
  double df = 0.0;
  for (double k : kappa_) df += 1.0 / (1.0 + lambda * k);
  return df;
}

double df_lambda(const Matrix& B, const Matrix& omega, double lambda, const Matrix* W) {
  const Matrix gram = W ? Matrix(B.transpose() * (*W) * B) : Matrix(B.transpose() * B);
  return DfSpectrum(gram, omega)(lambda);
}

}  // namespace sfmm
