#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfmm/dataset.hpp"
#include "sfmm/wavelet.hpp"

namespace sfmm {

struct CoefficientIndex {
  int scale_m = 0;  // meridional scale: 0 approximation, 1 coarsest detail ... L finest
  int scale_c = 0;
  int loc_m = 0;
  int loc_c = 0;
  bool operator==(const CoefficientIndex&) const = default;
};

// Separable 2-D transform C = A_theta Y A_phi', vec(C) column-stacked.
class TensorWavelet {
 public:
  TensorWavelet(const SurfaceGrid& grid, const WaveletSpec& spec);

  const SurfaceGrid& grid() const { return grid_; }
  const WaveletSpec& spec() const { return spec_; }
  std::size_t size_meridional() const { return plan_m_.output_size(); }
  std::size_t size_circumferential() const { return plan_c_.output_size(); }
  std::size_t size() const { return size_meridional() * size_circumferential(); }

  Vector analyze(const Matrix& values) const;
  Matrix synthesize(const Vector& coefficients) const;
  CoefficientIndex index(std::size_t k) const;
  std::vector<CoefficientIndex> index_map() const;

  // Dense 1-D synthesis operators (columns = basis functions), built from unit vectors.
  const Matrix& synthesis_meridional() const { return synth_m_; }
  const Matrix& synthesis_circumferential() const { return synth_c_; }
  const Dwt1dPlan& plan_meridional() const { return plan_m_; }
  const Dwt1dPlan& plan_circumferential() const { return plan_c_; }

 private:
  SurfaceGrid grid_;
  WaveletSpec spec_;
  Dwt1dPlan plan_m_;
  Dwt1dPlan plan_c_;
  Matrix synth_m_;
  Matrix synth_c_;
};

// Analyze every function of a dataset: N x K_full coefficient matrix.
Matrix tensor_transform_dataset(const FunctionalDataset& data, const TensorWavelet& wavelet, int workers = 1);

struct TensorCoefficients {
  Vector coefficients;
  std::vector<CoefficientIndex> index_map;
};
TensorCoefficients tensor_transform(const Matrix& values, const SurfaceGrid& grid, const WaveletSpec& spec);
Matrix tensor_inverse(const Vector& coefficients, const SurfaceGrid& grid, const WaveletSpec& spec);

class BasisSystem {
 public:
  BasisSystem() = default;
  BasisSystem(std::shared_ptr<const TensorWavelet> wavelet, std::vector<std::size_t> retained, Vector weights);

  std::size_t size() const;  // K (after optional rotation)
  std::size_t retained_size() const { return retained_.size(); }
  const std::vector<std::size_t>& retained_set() const { return retained_; }
  const std::vector<CoefficientIndex>& index_map() const { return index_map_; }
  const Vector& weights() const { return weights_; }
  void set_weights(Vector w) { weights_ = std::move(w); }
  const TensorWavelet& wavelet() const { return *wavelet_; }
  std::shared_ptr<const TensorWavelet> wavelet_ptr() const { return wavelet_; }
  const SurfaceGrid& grid() const { return wavelet_->grid(); }
  bool has_rotation() const { return rotation_.has_value(); }
  const Matrix& rotation() const { return *rotation_; }
  void set_rotation(Matrix r) { rotation_ = std::move(r); }

  // Retained (and rotated) coefficients of one surface.
  Vector analyze(const Matrix& values) const;
  // N x K coefficient matrix for a dataset.
  Matrix analyze(const FunctionalDataset& data, int workers = 1) const;
  // Restrict full-transform coefficients (rows) to this basis.
  Matrix restrict(const Matrix& full_coefficients) const;
  Matrix synthesize(const Vector& coefficients) const;
  // K x |targets| matrix with entry (k, l) = psi_k(target_l); targets are column-stacked locations.
  Matrix basis_rows(std::span<const std::size_t> targets) const;
  std::vector<std::size_t> all_locations() const;

 private:
  std::shared_ptr<const TensorWavelet> wavelet_;
  std::vector<std::size_t> retained_;
  std::vector<CoefficientIndex> index_map_;
  Vector weights_;
  std::optional<Matrix> rotation_;  // retained x K_pc
};

struct SpikeFilterResult {
  std::vector<std::size_t> retained;
  std::vector<std::size_t> dropped;
  std::vector<std::string> warnings;
};
SpikeFilterResult spike_filter(const Matrix& coefficients, double ratio_threshold = 100.0);

struct CompressionResult {
  std::vector<std::size_t> retained;  // ascending column indices of the input
  Vector retained_fraction;           // per function
  double compression_ratio = 0.0;     // input columns / retained
};
CompressionResult compress(const Matrix& coefficients, double energy_threshold = 0.995);

Vector energy_weights(const Matrix& coefficients);

// Psi' diag(v) Psi restricted to `locations` (rows and columns).
Matrix induced_covariance(const Vector& variances, const BasisSystem& basis, std::span<const std::size_t> locations);
Matrix covariance_to_correlation(const Matrix& covariance);

struct PcResult {
  BasisSystem basis;
  Vector explained;  // cumulative fraction per retained component
};
// Principal components of the (retained) wavelet coefficients; rotation composed with the wavelet synthesis.
PcResult pc_basis(const BasisSystem& wavelet_basis, const Matrix& coefficients, double scree_threshold = 0.995);

// Full-to-retained pipeline: spike filter, compression, weights.
struct BasisBuildReport {
  BasisSystem basis;
  Matrix coefficients;  // N x K
  SpikeFilterResult spikes;
  CompressionResult compression;
  std::size_t full_size = 0;
};
BasisBuildReport build_wavelet_basis(const FunctionalDataset& data, const WaveletSpec& spec, double spike_ratio,
                                     double energy_threshold, int workers = 1);

// Relative L2 reconstruction error of each function under the basis.
Vector reconstruction_error(const FunctionalDataset& data, const BasisSystem& basis, const Matrix& coefficients);

}  // namespace sfmm
