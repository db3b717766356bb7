#include "sfmm/basis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfmm/parallel.hpp"
#include "sfmm/stats.hpp"

namespace sfmm {

namespace {

Matrix synthesis_from_unit_vectors(const Dwt1dPlan& plan) {
  const std::size_t n = plan.input_size(), k = plan.output_size();
  Matrix s(n, k);
  std::vector<double> e(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    e[c] = 1.0;
    plan.inverse(e.data(), s.col(c).data());
    e[c] = 0.0;
  }
  return s;
}

}  // namespace

TensorWavelet::TensorWavelet(const SurfaceGrid& grid, const WaveletSpec& spec)
    : grid_(grid),
      spec_(spec),
      plan_m_(grid.n_meridional, wavelet_filter(spec.filter), spec.levels, spec.boundary_meridional),
      plan_c_(grid.n_circumferential, wavelet_filter(spec.filter), spec.levels, spec.boundary_circumferential) {
  synth_m_ = synthesis_from_unit_vectors(plan_m_);
  synth_c_ = synthesis_from_unit_vectors(plan_c_);
}

Vector TensorWavelet::analyze(const Matrix& values) const {
  if (static_cast<std::size_t>(values.rows()) != grid_.n_meridional ||
      static_cast<std::size_t>(values.cols()) != grid_.n_circumferential)
    fail("dimension_mismatch", "surface shape does not match grid");
  const std::size_t k1 = size_meridional(), k2 = size_circumferential();
  Matrix cols(k1, values.cols());
  for (Index j = 0; j < values.cols(); ++j) plan_m_.forward(values.col(j).data(), cols.col(j).data());
  Matrix rows_t = cols.transpose();  // n_c x k1
  Matrix out(k2, k1);
  for (std::size_t r = 0; r < k1; ++r) plan_c_.forward(rows_t.col(r).data(), out.col(r).data());
  Matrix c = out.transpose();  // k1 x k2
  return Eigen::Map<const Vector>(c.data(), c.size());
}

Matrix TensorWavelet::synthesize(const Vector& coefficients) const {
  const std::size_t k1 = size_meridional(), k2 = size_circumferential();
  if (static_cast<std::size_t>(coefficients.size()) != k1 * k2)
    fail("dimension_mismatch", "coefficient vector length does not match transform");
  Eigen::Map<const Matrix> c(coefficients.data(), k1, k2);
  Matrix ct = c.transpose();  // k2 x k1
  Matrix tmp(grid_.n_circumferential, k1);
  for (std::size_t r = 0; r < k1; ++r) plan_c_.inverse(ct.col(r).data(), tmp.col(r).data());
  Matrix tmp_t = tmp.transpose();  // k1 x n_c
  Matrix out(grid_.n_meridional, grid_.n_circumferential);
  for (std::size_t j = 0; j < grid_.n_circumferential; ++j) plan_m_.inverse(tmp_t.col(j).data(), out.col(j).data());
  return out;
}

CoefficientIndex TensorWavelet::index(std::size_t k) const {
  const std::size_t k1 = size_meridional();
  const std::size_t r = k % k1, c = k / k1;
  return {plan_m_.scale_of(r), plan_c_.scale_of(c), plan_m_.location_of(r), plan_c_.location_of(c)};
}

std::vector<CoefficientIndex> TensorWavelet::index_map() const {
  std::vector<CoefficientIndex> out(size());
  for (std::size_t k = 0; k < size(); ++k) out[k] = index(k);
  return out;
}

Matrix tensor_transform_dataset(const FunctionalDataset& data, const TensorWavelet& wavelet, int workers) {
  Matrix out(data.size(), wavelet.size());
  std::vector<Vector> rows(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) { rows[i] = wavelet.analyze(data.values[i]); });
  for (std::size_t i = 0; i < data.size(); ++i) out.row(i) = rows[i].transpose();
  return out;
}

TensorCoefficients tensor_transform(const Matrix& values, const SurfaceGrid& grid, const WaveletSpec& spec) {
  const TensorWavelet w(grid, spec);
  if (!values.allFinite()) fail("non_finite_input", "surface contains non-finite values");
  return {w.analyze(values), w.index_map()};
}

Matrix tensor_inverse(const Vector& coefficients, const SurfaceGrid& grid, const WaveletSpec& spec) {
  return TensorWavelet(grid, spec).synthesize(coefficients);
}

BasisSystem::BasisSystem(std::shared_ptr<const TensorWavelet> wavelet, std::vector<std::size_t> retained, Vector weights)
    : wavelet_(std::move(wavelet)), retained_(std::move(retained)), weights_(std::move(weights)) {
  index_map_.reserve(retained_.size());
  for (std::size_t k : retained_) {
    if (k >= wavelet_->size()) fail("invalid_index", "retained index outside transform");
    index_map_.push_back(wavelet_->index(k));
  }
}

std::size_t BasisSystem::size() const {
  return rotation_ ? static_cast<std::size_t>(rotation_->cols()) : retained_.size();
}

Matrix BasisSystem::restrict(const Matrix& full) const {
  Matrix out(full.rows(), retained_.size());
  for (std::size_t k = 0; k < retained_.size(); ++k) out.col(k) = full.col(retained_[k]);
  if (rotation_) return out * *rotation_;
  return out;
}

Vector BasisSystem::analyze(const Matrix& values) const {
  const Vector full = wavelet_->analyze(values);
  Matrix row = full.transpose();
  return restrict(row).row(0).transpose();
}

Matrix BasisSystem::analyze(const FunctionalDataset& data, int workers) const {
  return restrict(tensor_transform_dataset(data, *wavelet_, workers));
}

Matrix BasisSystem::synthesize(const Vector& coefficients) const {
  if (static_cast<std::size_t>(coefficients.size()) != size())
    fail("dimension_mismatch", "coefficient count does not match basis");
  const Vector ret = rotation_ ? Vector(*rotation_ * coefficients) : coefficients;
  Vector full = Vector::Zero(wavelet_->size());
  for (std::size_t k = 0; k < retained_.size(); ++k) full[retained_[k]] = ret[k];
  return wavelet_->synthesize(full);
}

Matrix BasisSystem::basis_rows(std::span<const std::size_t> targets) const {
  const Matrix& sm = wavelet_->synthesis_meridional();
  const Matrix& sc = wavelet_->synthesis_circumferential();
  const std::size_t k1 = wavelet_->size_meridional();
  const std::size_t nm = grid().n_meridional;
  Matrix psi(retained_.size(), targets.size());
  for (std::size_t l = 0; l < targets.size(); ++l) {
    if (targets[l] >= grid().size()) fail("invalid_location", "target location outside grid");
    const std::size_t i = targets[l] % nm, j = targets[l] / nm;
    for (std::size_t k = 0; k < retained_.size(); ++k) {
      const std::size_t r = retained_[k] % k1, c = retained_[k] / k1;
      psi(k, l) = sm(i, r) * sc(j, c);
    }
  }
  if (rotation_) return rotation_->transpose() * psi;
  return psi;
}

std::vector<std::size_t> BasisSystem::all_locations() const {
  std::vector<std::size_t> out(grid().size());
  std::iota(out.begin(), out.end(), 0);
  return out;
}

SpikeFilterResult spike_filter(const Matrix& coefficients, double ratio_threshold) {
  SpikeFilterResult res;
  std::vector<double> col(coefficients.rows());
  for (Index k = 0; k < coefficients.cols(); ++k) {
    for (Index i = 0; i < coefficients.rows(); ++i) col[i] = std::abs(coefficients(i, k));
    const double m = mean(col);
    const double med = median(col);
    if (m > ratio_threshold * med)
      res.dropped.push_back(k);
    else
      res.retained.push_back(k);
  }
  if (res.retained.empty()) res.warnings.push_back("spike filter removed every coefficient");
  return res;
}

namespace {

// Index-order sums so that a full retention reproduces the total bit-for-bit.
double retained_energy(const Matrix& y, Index i, const std::vector<char>& keep) {
  double s = 0.0;
  for (Index k = 0; k < y.cols(); ++k)
    if (keep[k]) s += y(i, k) * y(i, k);
  return s;
}

}  // namespace

CompressionResult compress(const Matrix& y, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) fail("invalid_threshold", "energy threshold must lie in (0, 1]");
  const Index n = y.rows(), K = y.cols();
  Vector total(n);
  for (Index i = 0; i < n; ++i) total[i] = y.row(i).squaredNorm();
  std::vector<char> keep(K, 0);

  // Phase 1: columns by descending total energy until the aggregate reaches the threshold.
  Vector col_energy = y.colwise().squaredNorm().transpose();
  std::vector<Index> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return col_energy[a] > col_energy[b]; });
  const double grand = col_energy.sum();
  double acc = 0.0;
  for (Index k : order) {
    if (acc >= threshold * grand || col_energy[k] == 0.0) break;
    keep[k] = 1;
    acc += col_energy[k];
  }

  // Phase 2: repair per-function deficits, worst relative deficit first.
  Vector kept(n);
  for (Index i = 0; i < n; ++i) kept[i] = retained_energy(y, i, keep);
  std::vector<std::vector<Index>> ranked(n);
  std::vector<std::size_t> cursor(n, 0);
  auto ranking = [&](Index i) -> std::vector<Index>& {
    if (ranked[i].empty()) {
      std::vector<Index>& r = ranked[i];
      for (Index k = 0; k < K; ++k)
        if (y(i, k) != 0.0) r.push_back(k);
      std::stable_sort(r.begin(), r.end(), [&](Index a, Index b) { return std::abs(y(i, a)) > std::abs(y(i, b)); });
    }
    return ranked[i];
  };
  auto deficit = [&](Index i) { return total[i] > 0.0 ? (threshold * total[i] - kept[i]) / total[i] : -1.0; };
  for (;;) {
    Index worst = -1;
    double worst_def = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double d = deficit(i);
      if (d > worst_def) {
        worst_def = d;
        worst = i;
      }
    }
    if (worst < 0) break;
    std::vector<Index>& r = ranking(worst);
    std::size_t& c = cursor[worst];
    while (c < r.size() && keep[r[c]]) ++c;
    if (c == r.size()) {
      kept[worst] = retained_energy(y, worst, keep);
      if (kept[worst] < threshold * total[worst])
        fail("compression_infeasible", "function " + std::to_string(worst) + " cannot reach the energy threshold");
      continue;
    }
    const Index k = r[c];
    keep[k] = 1;
    for (Index i = 0; i < n; ++i) kept[i] += y(i, k) * y(i, k);
    // Resynchronize with the exact index-order sum when the incremental one claims success.
    if (deficit(worst) <= 0.0) kept[worst] = retained_energy(y, worst, keep);
  }

  CompressionResult res;
  for (Index k = 0; k < K; ++k)
    if (keep[k]) res.retained.push_back(k);
  res.retained_fraction.resize(n);
  for (Index i = 0; i < n; ++i)
    res.retained_fraction[i] = total[i] > 0.0 ? retained_energy(y, i, keep) / total[i] : 1.0;
  res.compression_ratio = res.retained.empty() ? 0.0 : static_cast<double>(K) / res.retained.size();
  return res;
}

Vector energy_weights(const Matrix& coefficients) {
  Vector w = coefficients.colwise().squaredNorm().transpose();
  const double total = w.sum();
  if (!(total > 0.0)) fail("zero_energy", "energy weights need at least one nonzero coefficient");
  w /= total;
  return w;
}

Matrix induced_covariance(const Vector& variances, const BasisSystem& basis, std::span<const std::size_t> locations) {
  if (static_cast<std::size_t>(variances.size()) != basis.size())
    fail("dimension_mismatch", "variance vector length does not match basis size");
  if ((variances.array() < 0.0).any()) fail("negative_variance", "variances must be nonnegative");
  const Matrix psi = basis.basis_rows(locations);
  return psi.transpose() * variances.asDiagonal() * psi;
}

Matrix covariance_to_correlation(const Matrix& cov) {
  const Vector d = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  Matrix out = cov;
  for (Index a = 0; a < cov.rows(); ++a)
    for (Index b = 0; b < cov.cols(); ++b) {
      const double den = d[a] * d[b];
      out(a, b) = den > 0.0 ? cov(a, b) / den : (a == b ? 1.0 : 0.0);
    }
  return out;
}

PcResult pc_basis(const BasisSystem& wavelet_basis, const Matrix& coefficients, double scree_threshold) {
  if (coefficients.rows() < 2) fail("too_few_functions", "principal components need at least two functions");
  if (wavelet_basis.has_rotation()) fail("invalid_basis", "pc_basis expects an unrotated wavelet basis");
  if (static_cast<std::size_t>(coefficients.cols()) != wavelet_basis.retained_size())
    fail("dimension_mismatch", "coefficient columns do not match the retained set");
  Eigen::BDCSVD<Matrix> svd(coefficients, Eigen::ComputeThinV);
  const Vector sv2 = svd.singularValues().array().square();
  const double total = sv2.sum();
  if (!(total > 0.0) || svd.singularValues()[0] <= 1e-12 * coefficients.cwiseAbs().maxCoeff())
    fail("degenerate_input", "coefficient matrix has rank 0");
  const double tol = svd.singularValues()[0] * 1e-10 * std::max(coefficients.rows(), coefficients.cols());
  Index m = 0;
  double acc = 0.0;
  Vector cum(sv2.size());
  for (Index j = 0; j < sv2.size(); ++j) {
    acc += sv2[j];
    cum[j] = acc / total;
  }
  while (m < sv2.size() && (m == 0 || cum[m - 1] < scree_threshold) && svd.singularValues()[m] > tol) ++m;
  PcResult res;
  res.basis = wavelet_basis;
  res.basis.set_rotation(svd.matrixV().leftCols(m));
  const Matrix scores = coefficients * svd.matrixV().leftCols(m);
  res.basis.set_weights(energy_weights(scores));
  res.explained = cum.head(m);
  return res;
}

BasisBuildReport build_wavelet_basis(const FunctionalDataset& data, const WaveletSpec& spec, double spike_ratio,
                                     double energy_threshold, int workers) {
  data.validate();
  auto wavelet = std::make_shared<const TensorWavelet>(data.grid, spec);
  const Matrix full = tensor_transform_dataset(data, *wavelet, workers);
  BasisBuildReport rep;
  rep.full_size = wavelet->size();
  rep.spikes = spike_filter(full, spike_ratio);
  Matrix filtered(full.rows(), rep.spikes.retained.size());
  for (std::size_t k = 0; k < rep.spikes.retained.size(); ++k) filtered.col(k) = full.col(rep.spikes.retained[k]);
  rep.compression = compress(filtered, energy_threshold);
  std::vector<std::size_t> retained;
  for (std::size_t k : rep.compression.retained) retained.push_back(rep.spikes.retained[k]);
  Matrix coeffs(full.rows(), retained.size());
  for (std::size_t k = 0; k < retained.size(); ++k) coeffs.col(k) = full.col(retained[k]);
  rep.basis = BasisSystem(wavelet, retained, energy_weights(coeffs));
  rep.coefficients = std::move(coeffs);
  return rep;
}

Vector reconstruction_error(const FunctionalDataset& data, const BasisSystem& basis, const Matrix& coefficients) {
  Vector err(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Matrix rec = basis.synthesize(coefficients.row(i).transpose());
    const double nrm = data.values[i].norm();
    err[i] = nrm > 0.0 ? (rec - data.values[i]).norm() / nrm : (rec - data.values[i]).norm();
  }
  return err;
}

}  // namespace sfmm
