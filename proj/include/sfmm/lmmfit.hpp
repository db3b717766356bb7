#pragma once

#include <span>
#include <string>

#include "sfmm/covariance.hpp"

namespace sfmm {

struct LmmOptions {
  bool reml = true;
  double tol = 1e-8;  // relative log-likelihood change
  int max_iter = 500;
};

struct LmmFit {
  Vector beta;
  Matrix beta_cov;
  Vector q;  // one per random level
  double s = 0.0;
  double loglik_ml = 0.0;
  double loglik_reml = 0.0;
  bool converged = false;
  bool reml = true;
  bool degenerate = false;  // response fitted exactly by X
  std::size_t n_obs = 0;
  int iterations = 0;
  double gradient_norm = 0.0;
};

// Gaussian log density of y under N(X beta, Sigma(q, s)).
double marginal_loglik(const Vector& y, const Matrix& X, const CovarianceStructure& st, std::span<const double> q,
                       double s, const Vector& beta);
// beta profiled out by GLS; the REML variant adds -1/2 log|X' Sigma^-1 X|.
double marginal_loglik(const Vector& y, const Matrix& X, const CovarianceStructure& st, std::span<const double> q,
                       double s, bool reml);

// Log-likelihood with beta and s profiled out, as a function of variance ratios theta = q / s.
class ProfiledLikelihood {
 public:
  ProfiledLikelihood(const Vector& y, const Matrix& X, const CovarianceStructure& st);
  // Returns -inf when the covariance is singular.
  double operator()(std::span<const double> theta, bool reml) const;
  // Full estimates at theta.
  LmmFit estimates(std::span<const double> theta, bool reml) const;

 private:
  const Vector& y_;
  const Matrix& X_;
  const CovarianceStructure& st_;
  mutable CovarianceFactor factor_;
  struct Parts {
    double logdet_v, rss, logdet_xvx;
    Vector beta;
    Matrix xvx;
    bool ok;
  };
  Parts parts(std::span<const double> theta) const;
};

LmmFit fit_lmm(const Vector& y, const Matrix& X, const CovarianceStructure& st, const LmmOptions& options = {});
inline LmmFit fit_reml(const Vector& y, const Matrix& X, const CovarianceStructure& st, LmmOptions options = {}) {
  options.reml = true;
  return fit_lmm(y, X, st, options);
}
inline LmmFit fit_ml(const Vector& y, const Matrix& X, const CovarianceStructure& st, LmmOptions options = {}) {
  options.reml = false;
  return fit_lmm(y, X, st, options);
}

// DF of a nonparametric term at lambda = s / q_S with W = s * Cov(other random levels + residual)^-1.
double effective_df_np(const LmmFit& fit, const DesignBundle& design, const CovarianceStructure& st, std::size_t term);

}  // namespace sfmm
