#include "sfmm/covariance.hpp"

#include <cmath>
#include <numeric>

namespace sfmm {

namespace {

int find_root(std::vector<int>& parent, int a) {
  while (parent[a] != a) a = parent[a] = parent[parent[a]];
  return a;
}

}  // namespace

CovarianceStructure::CovarianceStructure(const std::vector<RandomBlock>& blocks, std::size_t n)
    : n_(n), n_levels_(blocks.size()), blocks_(blocks) {
  build();
}

void CovarianceStructure::build() {
  dense_.assign(n_levels_, Matrix());
  std::vector<int> parent(n_);
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t h = 0; h < n_levels_; ++h) {
    const RandomBlock& b = blocks_[h];
    if (b.kind == RandomBlock::Kind::dense) {
      if (static_cast<std::size_t>(b.dense.rows()) != n_) fail("dimension_mismatch", "random block row count differs from N");
      dense_[h] = b.dense;
      continue;
    }
    if (b.group.size() != n_) fail("dimension_mismatch", "random block row count differs from N");
    std::vector<int> first(b.n_groups, -1);
    for (std::size_t i = 0; i < n_; ++i) {
      int& f = first[b.group[i]];
      if (f < 0) f = static_cast<int>(i);
      else parent[find_root(parent, static_cast<int>(i))] = find_root(parent, f);
    }
  }
  std::vector<int> cluster_of(n_, -1);
  clusters_.clear();
  for (std::size_t i = 0; i < n_; ++i) {
    const int r = find_root(parent, static_cast<int>(i));
    if (cluster_of[r] < 0) {
      cluster_of[r] = static_cast<int>(clusters_.size());
      clusters_.emplace_back();
    }
    clusters_[cluster_of[r]].rows.push_back(static_cast<int>(i));
  }
  for (Cluster& c : clusters_) {
    const std::size_t m = c.rows.size();
    c.patterns.assign(n_levels_, Matrix());
    for (std::size_t h = 0; h < n_levels_; ++h) {
      const RandomBlock& b = blocks_[h];
      if (b.kind == RandomBlock::Kind::dense) continue;
      Matrix p(m, m);
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t e = 0; e < m; ++e) {
          const int ra = c.rows[a], re = c.rows[e];
          p(a, e) = b.group[ra] == b.group[re] ? b.value[ra] * b.value[re] : 0.0;
        }
      c.patterns[h] = std::move(p);
    }
  }
}

CovarianceStructure CovarianceStructure::without(std::size_t level) const {
  std::vector<RandomBlock> rest;
  for (std::size_t h = 0; h < n_levels_; ++h)
    if (h != level) rest.push_back(blocks_[h]);
  return CovarianceStructure(rest, n_);
}

Matrix CovarianceStructure::dense(std::span<const double> q, double s) const {
  Matrix sigma = s * Matrix::Identity(n_, n_);
  for (std::size_t h = 0; h < n_levels_; ++h) {
    const Matrix z = blocks_[h].to_dense(n_);
    sigma.noalias() += q[h] * z * z.transpose();
  }
  return sigma;
}

CovarianceFactor::CovarianceFactor(const CovarianceStructure& structure) : st_(&structure) {
  chol_.resize(structure.clusters().size());
}

void CovarianceFactor::factor(std::span<const double> q, double s) {
  if (!try_factor(q, s)) fail_numeric("singular_covariance", "marginal covariance is not positive definite");
}

bool CovarianceFactor::try_factor(std::span<const double> q, double s) {
  ready_ = false;
  if (q.size() != st_->n_levels()) fail("dimension_mismatch", "one variance per random level required");
  for (double v : q)
    if (!(v >= 0.0) || !std::isfinite(v)) fail("negative_variance", "variance components must be finite and >= 0");
  if (!(s >= 0.0)) fail("negative_variance", "residual variance must be >= 0");
  logdet_ = 0.0;
  const auto& clusters = st_->clusters();
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const auto& cl = clusters[c];
    const Index m = static_cast<Index>(cl.rows.size());
    Matrix sig = s * Matrix::Identity(m, m);
    for (std::size_t h = 0; h < q.size(); ++h)
      if (q[h] > 0.0 && cl.patterns[h].size()) sig.noalias() += q[h] * cl.patterns[h];
    chol_[c].compute(sig);
    if (chol_[c].info() != Eigen::Success) return false;
    const auto& L = chol_[c].matrixLLT();
    for (Index i = 0; i < m; ++i) {
      if (!(L(i, i) > 0.0)) return false;
      logdet_ += 2.0 * std::log(L(i, i));
    }
  }
  Index r = 0;
  const auto& dense = st_->dense_designs();
  for (std::size_t h = 0; h < q.size(); ++h)
    if (dense[h].size() && q[h] > 0.0) r += dense[h].cols();
  u_.resize(st_->rows(), r);
  Index col = 0;
  for (std::size_t h = 0; h < q.size(); ++h)
    if (dense[h].size() && q[h] > 0.0) {
      u_.middleCols(col, dense[h].cols()) = std::sqrt(q[h]) * dense[h];
      col += dense[h].cols();
    }
  if (r > 0) {
    binv_u_.resize(u_.rows(), r);
    for (Index j = 0; j < r; ++j) apply_block_inverse(u_.col(j).data(), binv_u_.col(j).data());
    Matrix inner = Matrix::Identity(r, r);
    inner.noalias() += u_.transpose() * binv_u_;
    inner_.compute(inner);
    if (inner_.info() != Eigen::Success) return false;
    const auto& L = inner_.matrixLLT();
    for (Index i = 0; i < r; ++i) logdet_ += 2.0 * std::log(L(i, i));
  }
  ready_ = std::isfinite(logdet_);
  return ready_;
}

void CovarianceFactor::apply_block_inverse(const double* in, double* out) const {
  const auto& clusters = st_->clusters();
  Vector buf;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const auto& rows = clusters[c].rows;
    const Index m = static_cast<Index>(rows.size());
    if (m == 1) {
      const double l = chol_[c].matrixLLT()(0, 0);
      out[rows[0]] = in[rows[0]] / (l * l);
      continue;
    }
    buf.resize(m);
    for (Index a = 0; a < m; ++a) buf[a] = in[rows[a]];
    chol_[c].solveInPlace(buf);
    for (Index a = 0; a < m; ++a) out[rows[a]] = buf[a];
  }
}

Vector CovarianceFactor::solve(const Vector& v) const {
  if (!ready_) fail_numeric("singular_covariance", "covariance factor not available");
  Vector w(v.size());
  apply_block_inverse(v.data(), w.data());
  if (u_.cols() > 0) {
    const Vector t = inner_.solve(u_.transpose() * w);
    w.noalias() -= binv_u_ * t;
  }
  return w;
}

Matrix CovarianceFactor::solve(const Matrix& m) const {
  if (!ready_) fail_numeric("singular_covariance", "covariance factor not available");
  Matrix w(m.rows(), m.cols());
  for (Index j = 0; j < m.cols(); ++j) apply_block_inverse(m.col(j).data(), w.col(j).data());
  if (u_.cols() > 0) {
    const Matrix t = inner_.solve(u_.transpose() * w);
    w.noalias() -= binv_u_ * t;
  }
  return w;
}

double CovarianceFactor::quad(const Vector& v) const { return v.dot(solve(v)); }

}  // namespace sfmm
