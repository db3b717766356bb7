#pragma once

#include <span>
#include <vector>

#include "sfmm/design.hpp"

namespace sfmm {

// Sigma = sum_h q_h Z_h Z_h' + s I for a list of random blocks. Grouped blocks
// are handled exactly through block-diagonal clusters of rows; dense (spline)
// blocks through the Woodbury identity.
class CovarianceStructure {
 public:
  CovarianceStructure() = default;
  CovarianceStructure(const std::vector<RandomBlock>& blocks, std::size_t n);

  std::size_t rows() const { return n_; }
  std::size_t n_levels() const { return n_levels_; }
  // Drop one level (used for the covariance of everything except a spline block).
  CovarianceStructure without(std::size_t level) const;
  Matrix dense(std::span<const double> q, double s) const;

  struct Cluster {
    std::vector<int> rows;
    std::vector<Matrix> patterns;  // per level (empty when the level is dense)
  };
  const std::vector<Cluster>& clusters() const { return clusters_; }
  const std::vector<Matrix>& dense_designs() const { return dense_; }
  bool is_dense(std::size_t level) const { return dense_[level].size() != 0; }

 private:
  std::size_t n_ = 0;
  std::size_t n_levels_ = 0;
  std::vector<RandomBlock> blocks_;
  std::vector<Cluster> clusters_;
  std::vector<Matrix> dense_;  // per level; empty for grouped levels
  void build();
};

class CovarianceFactor {
 public:
  explicit CovarianceFactor(const CovarianceStructure& structure);

  // Factor for variances q (one per level) and residual s; throws singular_covariance.
  void factor(std::span<const double> q, double s);
  // Same, returning false instead of throwing.
  bool try_factor(std::span<const double> q, double s);
  double logdet() const { return logdet_; }
  Vector solve(const Vector& v) const;
  Matrix solve(const Matrix& m) const;
  double quad(const Vector& v) const;
  const CovarianceStructure& structure() const { return *st_; }

 private:
  const CovarianceStructure* st_;
  std::vector<Eigen::LLT<Matrix>> chol_;
  Matrix u_;       // N x r scaled dense columns
  Matrix binv_u_;  // B^-1 U
  Eigen::LLT<Matrix> inner_;
  double logdet_ = 0.0;
  bool ready_ = false;

  void apply_block_inverse(const double* in, double* out) const;
};

}  // namespace sfmm
