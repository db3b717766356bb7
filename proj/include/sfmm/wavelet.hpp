#pragma once

#include <span>
#include <string>
#include <vector>

#include "sfmm/common.hpp"

namespace sfmm {

enum class Boundary { reflection, periodic };

struct WaveletFilter {
  std::string name;
  std::vector<double> lo;  // decomposition lowpass
  std::vector<double> hi;  // decomposition highpass, hi[j] = (-1)^j lo[F-1-j]
  std::size_t size() const { return lo.size(); }
};

// "haar", "db2", "db3", "db4".
WaveletFilter wavelet_filter(const std::string& name);

struct WaveletSpec {
  std::string filter = "db3";
  int levels = 5;
  Boundary boundary_meridional = Boundary::reflection;
  Boundary boundary_circumferential = Boundary::periodic;
};

// Layout of a multi-level 1-D transform. Coefficients are stored flat as
// [approx_L, detail_L, detail_{L-1}, ..., detail_1]; detail_L is the coarsest.
class Dwt1dPlan {
 public:
  Dwt1dPlan(std::size_t n, const WaveletFilter& filter, int levels, Boundary boundary);

  std::size_t input_size() const { return n_; }
  std::size_t output_size() const { return total_; }
  int levels() const { return levels_; }
  Boundary boundary() const { return boundary_; }
  // Length of the signal entering level j (j = 1..L); index 0 is n.
  const std::vector<std::size_t>& level_inputs() const { return inputs_; }
  // Length of the detail (and approximation) output of level j, j = 1..L.
  std::size_t level_size(int j) const { return inputs_[j]; }
  // Scale label of flat coefficient position: 0 approx, 1 coarsest detail ... L finest.
  int scale_of(std::size_t pos) const;
  int location_of(std::size_t pos) const;
  // Offset of a scale block in the flat vector.
  std::size_t scale_offset(int scale) const { return offsets_[scale]; }
  std::size_t scale_size(int scale) const;

  void forward(const double* in, double* out) const;
  void inverse(const double* in, double* out) const;

 private:
  std::size_t n_;
  int levels_;
  Boundary boundary_;
  std::vector<double> lo_, hi_;
  std::vector<std::size_t> inputs_;   // inputs_[0] = n, inputs_[j] = output length of level j
  std::vector<std::size_t> offsets_;  // per scale label
  std::size_t total_ = 0;

  void step_forward(const double* x, std::size_t n, double* a, double* d) const;
  void step_inverse(const double* a, const double* d, std::size_t m, std::size_t n, double* x) const;
};

struct DwtLevels {
  Vector approximation;
  std::vector<Vector> details;  // details[0] coarsest ... details[L-1] finest
};

DwtLevels dwt1d(std::span<const double> signal, const WaveletSpec& spec, Boundary boundary);
Vector idwt1d(const DwtLevels& levels, std::size_t n, const WaveletSpec& spec, Boundary boundary);

}  // namespace sfmm
