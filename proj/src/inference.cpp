#include "sfmm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

#include "sfmm/stats.hpp"

namespace sfmm {

namespace {

Index common_draws(const std::vector<CoefficientPosterior>& posteriors) {
  if (posteriors.empty()) fail("empty_posterior", "no coefficient posteriors");
  const Index g = static_cast<Index>(posteriors.front().draws());
  for (const auto& p : posteriors)
    if (static_cast<Index>(p.draws()) != g) fail("draw_mismatch", "coefficient posteriors have different draw counts");
  return g;
}

int name_index(const std::vector<std::string>& names, const std::string& name, const std::string& what) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) fail("unknown_parameter", "no " + what + " '" + name + "'");
  return static_cast<int>(it - names.begin());
}

double deg2rad(double d) { return d * M_PI / 180.0; }

// Row of [x - center, Z(x)] for one covariate value.
Vector np_row(const NonparametricTerm& t, double x) {
  const double xs[1] = {x};
  const Matrix z = bspline_design(xs, t.def, 0) * t.dr.z_map;
  Vector r(1 + z.cols());
  r[0] = x - t.center;
  r.tail(z.cols()) = z.row(0).transpose();
  return r;
}

Matrix combine_draws(const std::vector<CoefficientPosterior>& posteriors, const NonparametricTerm& t,
                     std::size_t term, const Vector& row) {
  const Index g = common_draws(posteriors);
  Matrix out(g, static_cast<Index>(posteriors.size()));
  for (std::size_t k = 0; k < posteriors.size(); ++k) {
    const CoefficientPosterior& p = posteriors[k];
    if (term >= p.spline.size()) fail("missing_spline_draws", "posterior has no spline draws for the term");
    const int lin = name_index(p.fixed_names, t.label + ".lin", "fixed effect");
    out.col(static_cast<Index>(k)) = p.b.col(lin) * row[0] + p.spline[term] * row.tail(row.size() - 1);
  }
  return out;
}

}  // namespace

Matrix coefficient_draws(const std::vector<CoefficientPosterior>& posteriors, const std::string& fixed_name) {
  const Index g = common_draws(posteriors);
  Matrix out(g, static_cast<Index>(posteriors.size()));
  for (std::size_t k = 0; k < posteriors.size(); ++k)
    out.col(static_cast<Index>(k)) = posteriors[k].b.col(name_index(posteriors[k].fixed_names, fixed_name, "fixed effect"));
  return out;
}

Matrix variance_draws(const std::vector<CoefficientPosterior>& posteriors, const std::string& name) {
  const Index g = common_draws(posteriors);
  Matrix out(g, static_cast<Index>(posteriors.size()));
  for (std::size_t k = 0; k < posteriors.size(); ++k)
    out.col(static_cast<Index>(k)) =
        posteriors[k].variance.col(name_index(posteriors[k].variance_names, name, "variance component"));
  return out;
}

PosteriorSurface back_project(const Matrix& coefficient_draws, const BasisSystem& basis,
                              std::span<const std::size_t> targets, const std::string& label) {
  if (static_cast<std::size_t>(coefficient_draws.cols()) != basis.size())
    fail("basis_mismatch", "draws have " + std::to_string(coefficient_draws.cols()) + " coefficients, basis has " +
                               std::to_string(basis.size()));
  PosteriorSurface s;
  s.label = label;
  s.locations.assign(targets.begin(), targets.end());
  s.draws = coefficient_draws * basis.basis_rows(targets);
  return s;
}

std::vector<double> covariate_grid(double lo, double hi, std::size_t n) {
  if (n < 2 || !(hi > lo)) fail("invalid_grid", "covariate grid needs n >= 2 and hi > lo");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  g.back() = hi;
  return g;
}

Matrix np_coefficient_draws(const std::vector<CoefficientPosterior>& posteriors, const DesignBundle& design,
                            std::size_t term, double x, std::span<const double> reference) {
  if (term >= design.np_terms.size()) fail("unknown_term", "nonparametric term index out of range");
  const NonparametricTerm& t = design.np_terms[term];
  Vector row = np_row(t, x);
  if (!reference.empty()) {
    // Trapezoid average over the reference grid.
    Vector avg = Vector::Zero(row.size());
    double total = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
      double w = 0.0;
      if (i > 0) w += 0.5 * (reference[i] - reference[i - 1]);
      if (i + 1 < reference.size()) w += 0.5 * (reference[i + 1] - reference[i]);
      if (reference.size() == 1) w = 1.0;
      avg += w * np_row(t, reference[i]);
      total += w;
    }
    row -= avg / total;
  }
  return combine_draws(posteriors, t, term, row);
}

Matrix np_derivative_draws(const std::vector<CoefficientPosterior>& posteriors, const DesignBundle& design,
                           std::size_t term, double x) {
  if (term >= design.np_terms.size()) fail("unknown_term", "nonparametric term index out of range");
  const NonparametricTerm& t = design.np_terms[term];
  const double xs[1] = {x};
  const DerivativeDesign dd = derivative_design(xs, t.def, t.dr);
  Vector row(1 + dd.d_z.cols());
  row[0] = 1.0;
  row.tail(dd.d_z.cols()) = dd.d_z.row(0).transpose();
  return combine_draws(posteriors, t, term, row);
}

BandSummary joint_band(const PosteriorSurface& surface, double alpha) {
  const Matrix& d = surface.draws;
  if (d.rows() < 100) fail("too_few_draws", "bands need at least 100 draws");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("invalid_alpha", "alpha must be in (0, 1)");
  if (!d.allFinite()) fail("non_finite_value", "surface draws contain non-finite values");
  const Index g = d.rows(), l = d.cols();
  BandSummary b;
  b.mean = d.colwise().mean().transpose();
  Vector sd(l);
  b.pw_lo.resize(l);
  b.pw_hi.resize(l);
  std::vector<double> col(static_cast<std::size_t>(g));
  for (Index t = 0; t < l; ++t) {
    for (Index i = 0; i < g; ++i) col[i] = d(i, t);
    sd[t] = std::sqrt((d.col(t).array() - b.mean[t]).square().sum() / static_cast<double>(g - 1));
    b.pw_lo[t] = std::min(quantile(col, alpha / 2.0), b.mean[t]);
    b.pw_hi[t] = std::max(quantile(col, 1.0 - alpha / 2.0), b.mean[t]);
    if (!(sd[t] > 0.0)) b.zero_sd.push_back(static_cast<std::size_t>(t));
  }
  std::vector<double> mx(static_cast<std::size_t>(g), 0.0);
  for (Index t = 0; t < l; ++t) {
    if (!(sd[t] > 0.0)) continue;
    for (Index i = 0; i < g; ++i) mx[i] = std::max(mx[i], std::abs(d(i, t) - b.mean[t]) / sd[t]);
  }
  b.critical = quantile(mx, 1.0 - alpha);
  b.joint_lo = (b.mean - b.critical * sd).cwiseMin(b.pw_lo);
  b.joint_hi = (b.mean + b.critical * sd).cwiseMax(b.pw_hi);
  return b;
}

Vector serial_integrals(const SerialBasis& g, double lo, double hi) {
  if (!(lo > 0.0) || !(hi > lo)) fail("invalid_range", "serial range must satisfy 0 < lo < hi");
  Vector out(g.order());
  for (int c = 0; c < g.order(); ++c) out[c] = integrate([&](double p) { return g.value(c, p); }, lo, hi, 1e-13);
  return out;
}

Matrix auc_coefficient_draws(const std::vector<CoefficientPosterior>& posteriors, const DesignBundle& design,
                             std::size_t term, const SerialBasis& serial, const std::string& serial_label, double x,
                             std::span<const double> reference, double lo, double hi) {
  Matrix out = np_coefficient_draws(posteriors, design, term, x, reference);
  const Vector integrals = serial_integrals(serial, lo, hi);
  const auto names = serial.column_names();
  for (int c = 0; c < serial.order(); ++c) {
    if (names[c] == "G0") continue;
    out += integrals[c] * coefficient_draws(posteriors, serial_label + "." + names[c]);
  }
  return out;
}

PosteriorSurface df_map(const std::vector<CoefficientPosterior>& posteriors, const DesignBundle& design,
                        std::size_t term, const BasisSystem& basis, std::span<const std::size_t> targets) {
  if (term >= design.np_terms.size()) fail("unknown_term", "nonparametric term index out of range");
  const NonparametricTerm& t = design.np_terms[term];
  const std::size_t sb = static_cast<std::size_t>(t.block);
  const Index g_count = common_draws(posteriors);
  if (posteriors.size() != basis.size()) fail("basis_mismatch", "posteriors do not cover the basis");
  const Matrix psi = basis.basis_rows(targets);
  const Matrix psi2 = psi.cwiseProduct(psi);
  const std::size_t h_count = design.blocks.size();
  // Induced variances per level (and residual), each G x L.
  std::vector<Matrix> induced;
  for (std::size_t h = 0; h <= h_count; ++h) {
    Matrix v(g_count, static_cast<Index>(posteriors.size()));
    for (std::size_t k = 0; k < posteriors.size(); ++k) v.col(static_cast<Index>(k)) = posteriors[k].variance.col(h);
    induced.push_back(v * psi2);
  }
  const CovarianceStructure st(design.blocks, design.rows());
  const CovarianceStructure rest = st.without(sb);
  CovarianceFactor factor(rest);
  const bool identity_w = rest.n_levels() == 0;
  std::optional<DfSpectrum> fixed_spectrum;
  if (identity_w) fixed_spectrum.emplace(t.basis.transpose() * t.basis, t.dr.omega);
  PosteriorSurface out;
  out.label = "DF(" + t.label + ")";
  out.locations.assign(targets.begin(), targets.end());
  out.draws.resize(g_count, static_cast<Index>(targets.size()));
  std::vector<double> q;
  for (Index g = 0; g < g_count; ++g) {
    for (Index l = 0; l < static_cast<Index>(targets.size()); ++l) {
      const double qs = induced[sb](g, l), s = induced[h_count](g, l);
      if (!(qs > 0.0)) {
        out.draws(g, l) = 2.0;
        continue;
      }
      if (identity_w) {
        out.draws(g, l) = (*fixed_spectrum)(s / qs);
        continue;
      }
      q.clear();
      for (std::size_t h = 0; h < h_count; ++h)
        if (h != sb) q.push_back(induced[h](g, l));
      factor.factor(q, s);
      const Matrix gram = s * t.basis.transpose() * factor.solve(t.basis);
      out.draws(g, l) = DfSpectrum(0.5 * (gram + gram.transpose()), t.dr.omega)(s / qs);
    }
  }
  return out;
}

Vector region_weights(const SurfaceGrid& grid, const Region& region) {
  Vector w = Vector::Zero(static_cast<Index>(grid.size()));
  if (region.kind == Region::Kind::custom) {
    if (static_cast<std::size_t>(region.custom.size()) != grid.size())
      fail("dimension_mismatch", "custom region weights must cover the grid");
    if ((region.custom.array() < 0.0).any()) fail("invalid_weights", "region weights must be >= 0");
    w = region.custom;
  } else if (region.kind == Region::Kind::meridional_band) {
    if (!(region.theta_hi > region.theta_lo)) fail("invalid_region", "band needs theta_hi > theta_lo");
    for (std::size_t i = 0; i < grid.n_meridional; ++i) {
      const double th = grid.theta(i);
      const bool inside = th >= region.theta_lo && (th < region.theta_hi || (th == region.theta_hi && th >= grid.theta_max));
      if (!inside) continue;
      for (std::size_t j = 0; j < grid.n_circumferential; ++j) w[grid.location(i, j)] = 1.0;
    }
  } else {
    w.setOnes();
  }
  if (region.area_weighted)
    for (std::size_t i = 0; i < grid.n_meridional; ++i)
      for (std::size_t j = 0; j < grid.n_circumferential; ++j)
        w[grid.location(i, j)] *= std::sin(deg2rad(grid.theta(i)));
  return w;
}

double region_area(const SurfaceGrid& grid, const Region& region) {
  Region r = region;
  r.area_weighted = true;
  const double dtheta = deg2rad((grid.theta_max - grid.theta_min) / std::max<double>(1.0, grid.n_meridional - 1.0));
  const double dphi = 2.0 * M_PI / static_cast<double>(grid.n_circumferential);
  return region_weights(grid, r).sum() * dtheta * dphi;
}

Vector region_coefficient_weights(const BasisSystem& basis, const Region& region) {
  if (region.kind == Region::Kind::circumferential_average)
    fail("invalid_region", "coefficient weights need a band or custom region");
  const Vector w = region_weights(basis.grid(), region);
  const double total = w.sum();
  if (!(total > 0.0)) fail("empty_region", "region contains no grid points");
  return basis.basis_rows(basis.all_locations()) * (w / total);
}

PosteriorSurface aggregate(const PosteriorSurface& surface, const SurfaceGrid& grid, const Region& region) {
  PosteriorSurface out;
  const Index l_count = static_cast<Index>(surface.locations.size());
  if (surface.draws.cols() != l_count) fail("dimension_mismatch", "surface draws do not match its locations");
  if (region.kind == Region::Kind::circumferential_average) {
    std::map<std::size_t, std::vector<Index>> rows;
    for (Index l = 0; l < l_count; ++l) rows[surface.locations[l] % grid.n_meridional].push_back(l);
    if (rows.empty()) fail("empty_region", "surface has no locations");
    out.label = surface.label + " [circumferential average]";
    out.draws.resize(surface.draws.rows(), static_cast<Index>(rows.size()));
    Index c = 0;
    for (const auto& [row, cols] : rows) {
      Vector acc = Vector::Zero(surface.draws.rows());
      for (Index l : cols) acc += surface.draws.col(l);
      out.draws.col(c++) = acc / static_cast<double>(cols.size());
      out.locations.push_back(row);
    }
    return out;
  }
  const Vector w = region_weights(grid, region);
  Vector lw(l_count);
  for (Index l = 0; l < l_count; ++l) {
    if (surface.locations[l] >= grid.size()) fail("invalid_location", "surface location outside grid");
    lw[l] = w[static_cast<Index>(surface.locations[l])];
  }
  const double total = lw.sum();
  if (!(total > 0.0)) fail("empty_region", "region contains no surface locations");
  out.label = surface.label + " [region]";
  out.locations = {0};
  out.draws = surface.draws * (lw / total);
  return out;
}

Matrix serial_correlation(const SerialBasis& g, std::span<const double> q, double s, std::span<const double> levels) {
  const Index n = static_cast<Index>(levels.size());
  Matrix c(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j <= i; ++j) c(i, j) = c(j, i) = serial_covariance(g, q, levels[i], levels[j]) + (i == j ? s : 0.0);
  return covariance_to_correlation(c);
}

}  // namespace sfmm
