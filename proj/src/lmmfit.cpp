#include "sfmm/lmmfit.hpp"

#include <cmath>
#include <limits>

#include "sfmm/optim.hpp"
#include "sfmm/splinekit.hpp"

namespace sfmm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kLogMin = -25.0;
constexpr double kLogMax = 15.0;
}  // namespace

double marginal_loglik(const Vector& y, const Matrix& X, const CovarianceStructure& st, std::span<const double> q,
                       double s, const Vector& beta) {
  if (!(s > 0.0)) fail("invalid_variance", "residual variance must be positive");
  CovarianceFactor f(st);
  f.factor(q, s);
  const Vector r = y - X * beta;
  return -0.5 * (y.size() * kLog2Pi + f.logdet() + f.quad(r));
}

double marginal_loglik(const Vector& y, const Matrix& X, const CovarianceStructure& st, std::span<const double> q,
                       double s, bool reml) {
  if (!(s > 0.0)) fail("invalid_variance", "residual variance must be positive");
  CovarianceFactor f(st);
  f.factor(q, s);
  const Matrix six = f.solve(X);
  const Matrix xsx = X.transpose() * six;
  Eigen::LLT<Matrix> llt(xsx);
  if (llt.info() != Eigen::Success) fail_numeric("singular_design", "X' Sigma^-1 X is singular");
  const Vector beta = llt.solve(six.transpose() * y);
  const Vector r = y - X * beta;
  const double n = static_cast<double>(y.size()), p = static_cast<double>(X.cols());
  if (!reml) return -0.5 * (n * kLog2Pi + f.logdet() + f.quad(r));
  const Matrix L = llt.matrixL();
  const double logdet_xsx = 2.0 * L.diagonal().array().log().sum();
  return -0.5 * ((n - p) * kLog2Pi + f.logdet() + logdet_xsx + f.quad(r));
}

ProfiledLikelihood::ProfiledLikelihood(const Vector& y, const Matrix& X, const CovarianceStructure& st)
    : y_(y), X_(X), st_(st), factor_(st) {}

ProfiledLikelihood::Parts ProfiledLikelihood::parts(std::span<const double> theta) const {
  Parts p{0, 0, 0, {}, {}, false};
  if (!factor_.try_factor(theta, 1.0)) return p;
  const Matrix vix = factor_.solve(X_);
  const Vector viy = factor_.solve(y_);
  p.xvx = X_.transpose() * vix;
  Eigen::LLT<Matrix> llt(p.xvx);
  if (llt.info() != Eigen::Success) return p;
  p.beta = llt.solve(X_.transpose() * viy);
  const Vector r = y_ - X_ * p.beta;
  p.rss = r.dot(viy - vix * p.beta);
  const Matrix L = llt.matrixL();
  p.logdet_xvx = 2.0 * L.diagonal().array().log().sum();
  p.logdet_v = factor_.logdet();
  p.ok = std::isfinite(p.rss) && p.rss > 0.0;
  return p;
}

double ProfiledLikelihood::operator()(std::span<const double> theta, bool reml) const {
  const Parts p = parts(theta);
  if (!p.ok) return -std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(y_.size()), k = static_cast<double>(X_.cols());
  if (!reml) return -0.5 * (n * kLog2Pi + n * std::log(p.rss / n) + p.logdet_v + n);
  const double m = n - k;
  return -0.5 * (m * kLog2Pi + m * std::log(p.rss / m) + p.logdet_v + p.logdet_xvx + m);
}

LmmFit ProfiledLikelihood::estimates(std::span<const double> theta, bool reml) const {
  const Parts p = parts(theta);
  LmmFit fit;
  fit.reml = reml;
  fit.n_obs = y_.size();
  if (!p.ok) {
    fit.degenerate = true;
    fit.q = Vector::Zero(theta.size());
    if (p.beta.size()) fit.beta = p.beta;
    fit.loglik_ml = fit.loglik_reml = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  const double n = static_cast<double>(y_.size()), k = static_cast<double>(X_.cols());
  fit.s = p.rss / (reml ? n - k : n);
  fit.q = Eigen::Map<const Vector>(theta.data(), theta.size()) * fit.s;
  fit.beta = p.beta;
  fit.beta_cov = fit.s * p.xvx.inverse();
  // Both criteria at these variance components.
  const double quad = p.rss / fit.s;
  const double logdet_sigma = p.logdet_v + n * std::log(fit.s);
  fit.loglik_ml = -0.5 * (n * kLog2Pi + logdet_sigma + quad);
  fit.loglik_reml = -0.5 * ((n - k) * kLog2Pi + logdet_sigma + p.logdet_xvx - k * std::log(fit.s) + quad);
  return fit;
}

LmmFit fit_lmm(const Vector& y, const Matrix& X, const CovarianceStructure& st, const LmmOptions& opt) {
  if (static_cast<std::size_t>(y.size()) != st.rows() || X.rows() != y.size())
    fail("dimension_mismatch", "response, design and covariance sizes differ");
  if (y.size() <= X.cols()) fail("too_few_observations", "need more observations than fixed effects");
  if (!y.allFinite()) fail("non_finite_input", "response contains non-finite values");
  const ProfiledLikelihood prof(y, X, st);
  const std::size_t H = st.n_levels();
  const bool reml = opt.reml;

  // Free parameters are log ratios; levels pinned at zero are excluded.
  std::vector<char> at_zero(H, 0);
  Vector phi = Vector::Zero(H);
  auto theta_of = [&](const Vector& free_phi) {
    Vector th = Vector::Zero(H);
    Index j = 0;
    for (std::size_t h = 0; h < H; ++h)
      if (!at_zero[h]) th[h] = std::exp(std::clamp(free_phi[j++], kLogMin, kLogMax));
    return th;
  };
  auto objective = [&](const Vector& free_phi) {
    const Vector th = theta_of(free_phi);
    return -prof(std::span<const double>(th.data(), H), reml);
  };
  auto free_part = [&]() {
    Vector f(H);
    Index j = 0;
    for (std::size_t h = 0; h < H; ++h)
      if (!at_zero[h]) f[j++] = phi[h];
    return Vector(f.head(j));
  };
  auto scatter = [&](const Vector& f) {
    Index j = 0;
    for (std::size_t h = 0; h < H; ++h)
      if (!at_zero[h]) phi[h] = std::clamp(f[j++], kLogMin, kLogMax);
  };

  int iterations = 0;
  bool converged = true;
  double gnorm = 0.0;
  if (H > 0) {
    // Multi-start simplex, then quasi-Newton refinement.
    double best = std::numeric_limits<double>::infinity();
    Vector best_phi = phi;
    for (double start : {0.0, -3.0, 2.0}) {
      const Vector x0 = Vector::Constant(H, start);
      const OptimResult nm = nelder_mead(objective, x0, 1.5, 1e-10, opt.max_iter);
      iterations += nm.iterations;
      if (nm.value < best) {
        best = nm.value;
        best_phi = nm.x;
      }
    }
    phi = best_phi;
    for (int round = 0; round < static_cast<int>(H) + 1; ++round) {
      Vector f = free_part();
      if (f.size() > 0) {
        const OptimResult bf = bfgs(objective, f, 1e-6, opt.max_iter);
        iterations += bf.iterations;
        scatter(bf.x);
      }
      // Explicit boundary comparison for each level.
      bool changed = false;
      for (std::size_t h = 0; h < H; ++h) {
        if (at_zero[h]) continue;
        const Vector th = theta_of(free_part());
        const double cur = prof(std::span<const double>(th.data(), H), reml);
        Vector th0 = th;
        th0[h] = 0.0;
        const double zero = prof(std::span<const double>(th0.data(), H), reml);
        if (zero >= cur - opt.tol * (std::abs(cur) + 1.0) && phi[h] < -5.0) {
          at_zero[h] = 1;
          changed = true;
        } else if (zero > cur) {
          at_zero[h] = 1;
          changed = true;
        }
      }
      if (!changed) break;
    }
    const Vector f = free_part();
    if (f.size() > 0) {
      const Vector g = numeric_gradient(objective, f, 1e-5);
      gnorm = g.norm();
      converged = gnorm < 1e-3;
    }
    // Inward derivative at pinned levels must not favour leaving the boundary.
    const Vector th = theta_of(free_part());
    const double cur = prof(std::span<const double>(th.data(), H), reml);
    for (std::size_t h = 0; h < H; ++h) {
      if (!at_zero[h]) continue;
      Vector tp = th;
      tp[h] = 1e-6;
      if (prof(std::span<const double>(tp.data(), H), reml) > cur + 1e-6) converged = false;
    }
  }
  const Vector th = theta_of(free_part());
  LmmFit fit = prof.estimates(std::span<const double>(th.data(), H), reml);
  fit.converged = converged && !fit.degenerate;
  fit.iterations = iterations;
  fit.gradient_norm = gnorm;
  return fit;
}

double effective_df_np(const LmmFit& fit, const DesignBundle& design, const CovarianceStructure& st, std::size_t term) {
  if (term >= design.np_terms.size()) fail("unknown_term", "nonparametric term index out of range");
  const NonparametricTerm& t = design.np_terms[term];
  const std::size_t b = static_cast<std::size_t>(t.block);
  const double qs = fit.q[b];
  if (!(qs > 0.0)) return 2.0;
  const CovarianceStructure rest = st.without(b);
  std::vector<double> q;
  for (std::size_t h = 0; h < st.n_levels(); ++h)
    if (h != b) q.push_back(fit.q[h]);
  CovarianceFactor f(rest);
  f.factor(q, fit.s);
  const Matrix gram = fit.s * t.basis.transpose() * f.solve(t.basis);
  return DfSpectrum(0.5 * (gram + gram.transpose()), t.dr.omega)(fit.s / qs);
}

}  // namespace sfmm
