#include <algorithm>
#include <chrono>
#include <cmath>

#include "acceptance/acceptance.hpp"
#include "oracles.hpp"
#include "sfmm/inference.hpp"
#include "sfmm/mcmc.hpp"
#include "sfmm/simulate.hpp"
#include "sfmm/stats.hpp"

using namespace sfmm;

namespace acceptance {

namespace {

DesignBundle bare_design(const Matrix& x) {
  DesignBundle d;
  d.X = x;
  for (Index a = 0; a < x.cols(); ++a) d.x_names.push_back("x" + std::to_string(a));
  return d;
}

ChainConfig chain(int burn, int keep, int thin, std::uint64_t seed) {
  ChainConfig c;
  c.n_burn = burn;
  c.n_keep = keep;
  c.thin = thin;
  c.seed = seed;
  return c;
}

double binomial_se(double p, double n) { return std::sqrt(p * (1.0 - p) / n); }

struct FitResult {
  std::vector<CoefficientPosterior> posteriors;
  std::size_t failures = 0;
};

FitResult fit_all(const Matrix& coefficients, const DesignBundle& design, const BasisSystem& basis,
                  const ChainConfig& config) {
  const InitialFits init = initial_fits(coefficients, design, workers());
  const ShrinkageHyper hyper = empirical_bayes(init.bhat, init.v, regularization_sets(basis));
  FitResult out;
  for (auto& r : run_all(coefficients, design, hyper, init.starts, config, workers())) {
    if (r.posterior) out.posteriors.push_back(std::move(*r.posterior));
    else ++out.failures;
  }
  return out;
}

// Per-location variance of each component summed over the surface: sum_k v_k |psi_k|^2.
double surface_variance(const Vector& per_coefficient, const BasisSystem& basis) {
  const Matrix rows = basis.basis_rows(basis.all_locations());
  return per_coefficient.dot(rows.rowwise().squaredNorm());
}

Outcome prior_reproduction(std::string& detail) {
  const auto recs = study_records(StudyLayout{});
  const DesignBundle d = assemble(recs, parse_formula("value ~ np(age) + hyper(iop) + (hyper(iop)|eye)"));
  const CovarianceStructure st(d.blocks, d.rows());
  Rng rng(701);
  const Vector y = oracle::random_vector(d.rows(), rng);
  ChainConfig c = chain(2000, 50000, 10, 702);
  c.likelihood = false;
  const Index a = d.X.cols(), h = static_cast<Index>(d.blocks.size());
  const Vector pi = Vector::Constant(a, 0.4), tau = Vector::Constant(a, 2.0);
  ChainStart start{Vector::Zero(a), Vector::Constant(h, 0.3), 0.8};
  const CoefficientPosterior post = CoefficientSampler(y, d, st, pi, tau, start, c, 0).run();
  const double n = static_cast<double>(post.draws());
  double min_p = 1.0;
  int tests = 0, bad = 0;
  for (Index j = 0; j < post.variance.cols(); ++j) {
    const InverseGamma prior{c.prior_shape, c.prior_scale_factor * post.start_variance[j]};
    const Vector col = post.variance.col(j);
    const double p = ks_test(std::vector<double>(col.data(), col.data() + col.size()), [&](double x) { return prior.cdf(x); });
    min_p = std::min(min_p, p);
    ++tests;
    bad += p <= 0.01;
  }
  for (Index j = 0; j < a; ++j) {
    const double freq = post.gamma.col(j).cast<double>().mean();
    ++tests;
    bad += std::abs(freq - 0.4) >= 3.0 * binomial_se(0.4, n);
    std::vector<double> slab;
    for (Index g = 0; g < post.b.rows(); ++g)
      if (post.gamma(g, j)) slab.push_back(post.b(g, j));
    const double p = ks_test(slab, [](double x) { return normal_cdf(x / std::sqrt(2.0)); });
    min_p = std::min(min_p, p);
    ++tests;
    bad += p <= 0.01;
  }
  for (std::size_t t = 0; t < post.spline.size(); ++t) {
    const Index blk = d.np_terms[t].block;
    for (Index m = 0; m < post.spline[t].cols(); ++m) {
      std::vector<double> z;
      for (Index g = 0; g < post.spline[t].rows(); ++g) z.push_back(post.spline[t](g, m) / std::sqrt(post.variance(g, blk)));
      const double p = ks_test(z, [](double x) { return normal_cdf(x); });
      min_p = std::min(min_p, p);
      ++tests;
      bad += p <= 0.01;
    }
  }
  detail = cat("prior: ", tests - bad, "/", tests, " checks pass (min KS p ", min_p, ")");
  return {bad == 0, detail};
}

Outcome spike_slab_toy(std::string& detail) {
  Matrix x(3, 2);
  x << 1.0, 0.5, 0.6, 1.0, 0.2, 0.3;
  const DesignBundle d = bare_design(x);
  const CovarianceStructure st({}, 3);
  Vector y(3);
  y << 0.9, 1.4, -0.3;
  const double s = 1.0;
  const Vector pi = (Vector(2) << 0.3, 0.6).finished(), tau = (Vector(2) << 2.0, 1.0).finished();
  // Exact posterior over the four inclusion patterns.
  double w[4], total = 0.0;
  for (int m = 0; m < 4; ++m) {
    Matrix cov = s * Matrix::Identity(3, 3);
    double lp = 0.0;
    for (int j = 0; j < 2; ++j) {
      const bool in = (m >> j) & 1;
      lp += std::log(in ? pi[j] : 1.0 - pi[j]);
      if (in) cov += tau[j] * x.col(j) * x.col(j).transpose();
    }
    w[m] = std::exp(lp + oracle::gaussian_logpdf(y, cov));
    total += w[m];
  }
  ChainConfig c = chain(1000, 100000, 5, 703);
  c.update_variances = false;
  const CoefficientPosterior post =
      CoefficientSampler(y, d, st, pi, tau, {Vector::Zero(2), Vector(0), s}, c, 0).run();
  const double n = static_cast<double>(post.draws());
  double freq[4] = {0, 0, 0, 0};
  for (Index g = 0; g < post.gamma.rows(); ++g) freq[post.gamma(g, 0) + 2 * post.gamma(g, 1)] += 1.0 / n;
  double worst = 0.0;
  for (int m = 0; m < 4; ++m) {
    const double p = w[m] / total;
    worst = std::max(worst, std::abs(freq[m] - p) / binomial_se(p, n));
  }
  for (int j = 0; j < 2; ++j) {
    const double p = (w[1 << j] + w[3]) / total;
    worst = std::max(worst, std::abs(post.gamma.col(j).cast<double>().mean() - p) / binomial_se(p, n));
  }
  detail = cat("spike-slab: max deviation ", worst, " binomial SE");
  return {worst < 3.0, detail};
}

Outcome no_shrinkage(std::string& detail) {
  const auto recs = study_records(StudyLayout{});
  const DesignBundle d = assemble(recs, parse_formula("value ~ np(age) + hyper(iop) + (1|eye)"));
  const CovarianceStructure st(d.blocks, d.rows());
  Rng rng(704);
  const std::vector<double> q = {0.002, 0.5};
  const double s = 0.4;
  const Vector y = simulate_response(d, Vector::Constant(d.X.cols(), 0.3), q, s, rng);
  const Matrix si = st.dense(q, s).inverse();
  const Vector gls = (d.X.transpose() * si * d.X).ldlt().solve(d.X.transpose() * si * y);
  ChainConfig c = chain(200, 20000, 2, 705);
  c.update_variances = false;
  const Index a = d.X.cols();
  const Vector qv = Eigen::Map<const Vector>(q.data(), 2);
  const CoefficientPosterior post =
      CoefficientSampler(y, d, st, Vector::Ones(a), Vector::Constant(a, 1e6), {Vector::Zero(a), qv, s}, c, 0).run();
  double worst = 0.0;
  for (Index j = 0; j < a; ++j) {
    const Vector col = post.b.col(j);
    const double m = col.mean();
    const double sd = std::sqrt((col.array() - m).square().sum() / static_cast<double>(col.size() - 1));
    worst = std::max(worst, std::abs(m - gls[j]) / (sd / std::sqrt(post.ess[j])));
  }
  detail = cat("no shrinkage: max deviation from GLS ", worst, " MC SE");
  return {worst < 3.0, detail};
}

Outcome variance_posterior(std::string& detail) {
  const auto recs = study_records(StudyLayout{6, 3, {7, 25, 45}});
  const DesignBundle d = assemble(recs, parse_formula("value ~ np(age)"));
  const CovarianceStructure st(d.blocks, d.rows());
  const Matrix& Z = d.blocks[0].dense;
  const double m = Z.rowwise().squaredNorm().mean();
  Rng rng(706);
  const std::vector<double> q = {0.3 / m};
  const Vector y = simulate_response(d, Vector::Constant(2, 0.5), q, 0.2, rng);
  const ChainStart start{Vector::Zero(2), Vector::Constant(1, q[0]), 0.2};
  const double tau = 1e4;
  ChainConfig c = chain(2000, 200000, 10, 707);
  const InverseGamma prior_q{c.prior_shape, c.prior_scale_factor * start.q[0]};
  const InverseGamma prior_s{c.prior_shape, c.prior_scale_factor * start.s};
  // Exact marginal posterior of (q, s) by quadrature on a log grid; b integrated out analytically.
  const Index n = d.X.rows(), grid = 240;
  std::vector<double> lp, qv, sv;
  for (Index i = 0; i < grid; ++i)
    for (Index j = 0; j < grid; ++j) {
      const double lq = std::log(start.q[0]) - 6.0 + 12.0 * i / (grid - 1);
      const double ls = std::log(start.s) - 3.0 + 6.0 * j / (grid - 1);
      const Matrix cov = std::exp(lq) * Z * Z.transpose() + std::exp(ls) * Matrix::Identity(n, n) +
                         tau * d.X * d.X.transpose();
      lp.push_back(oracle::gaussian_logpdf(y, cov) + prior_q.log_pdf(std::exp(lq)) + prior_s.log_pdf(std::exp(ls)) +
                   lq + ls);
      qv.push_back(std::exp(lq));
      sv.push_back(std::exp(ls));
    }
  const double top = *std::max_element(lp.begin(), lp.end());
  double z = 0.0, eq = 0.0, es = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double w = std::exp(lp[i] - top);
    z += w;
    eq += w * qv[i];
    es += w * sv[i];
  }
  eq /= z;
  es /= z;
  const CoefficientPosterior post =
      CoefficientSampler(y, d, st, Vector::Ones(2), Vector::Constant(2, tau), start, c, 0).run();
  double worst = 0.0;
  const double exact[2] = {eq, es};
  for (Index h = 0; h < 2; ++h) {
    const Vector col = post.variance.col(h);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(col.size() - 1));
    const double ess = post.ess[static_cast<Index>(post.fixed_names.size()) + h];
    worst = std::max(worst, std::abs(mean - exact[h]) / (sd / std::sqrt(ess)));
  }
  detail = cat("variance posterior: max deviation from quadrature ", worst, " MC SE");
  return {worst < 3.0, detail};
}

}  // namespace

Outcome sampler_correctness() {
  std::string a, b, c, e;
  const bool pass =
      prior_reproduction(a).pass & spike_slab_toy(b).pass & no_shrinkage(c).pass & variance_posterior(e).pass;
  return {pass, a + "; " + b + "; " + c + "; " + e};
}

Outcome calibration() {
  SyntheticStudyOptions o;
  o.grid = {32, 32};
  o.wavelet.levels = 3;
  o.support = 25;
  o.seed = 801;
  o.workers = workers();
  const SyntheticStudy study = synthetic_study(o);
  const BasisBuildReport b = build_wavelet_basis(study.data, o.wavelet, 100.0, 0.9999, workers());
  const DesignBundle& d = study.design;
  const FitResult fit = fit_all(b.coefficients, d, b.basis, chain(1000, 4000, 4, 802));
  if (fit.failures) return {false, cat(fit.failures, " chains failed")};

  const std::vector<std::size_t> all = b.basis.all_locations();
  std::string detail = cat("K = ", b.basis.size(), "; joint coverage");
  bool pass = true;
  for (Index a = 0; a < d.X.cols(); ++a) {
    const Matrix truth = study.basis.synthesize(study.truth.beta.row(a).transpose());
    const PosteriorSurface s = back_project(coefficient_draws(fit.posteriors, d.x_names[a]), b.basis, all);
    const BandSummary band = joint_band(s, 0.05);
    std::size_t covered = 0;
    for (std::size_t l = 0; l < all.size(); ++l) {
      const double v = truth.data()[all[l]];
      covered += band.joint_lo[static_cast<Index>(l)] <= v && v <= band.joint_hi[static_cast<Index>(l)];
    }
    const double frac = static_cast<double>(covered) / static_cast<double>(all.size());
    pass = pass && frac >= 0.9;
    detail += cat(" ", d.x_names[a], " ", frac);
  }

  // Variance components compared as their contribution to the data variance summed over the
  // surface; dominant means at least 10% of the largest contribution.
  const auto& names = fit.posteriors.front().variance_names;
  std::vector<double> truth_total(names.size()), fitted_total(names.size());
  for (std::size_t h = 0; h < names.size(); ++h) {
    const double row = h < d.blocks.size() ? d.blocks[h].to_dense(d.rows()).rowwise().squaredNorm().mean() : 1.0;
    truth_total[h] = row * surface_variance(study.truth.variance.row(static_cast<Index>(h)).transpose(), study.basis);
    fitted_total[h] =
        row * surface_variance(variance_draws(fit.posteriors, names[h]).colwise().mean().transpose(), b.basis);
  }
  const double largest = *std::max_element(truth_total.begin(), truth_total.end());
  detail += "; variance ratio";
  for (std::size_t h = 0; h < names.size(); ++h) {
    const double ratio = fitted_total[h] / truth_total[h];
    const bool dominant = truth_total[h] >= 0.1 * largest;
    if (dominant) pass = pass && std::abs(ratio - 1.0) <= 0.5;
    detail += cat(" ", names[h], dominant ? "* " : " ", ratio);
  }
  return {pass, detail};
}

Outcome operational_statistics() {
  SyntheticStudyOptions o;
  o.seed = 901;
  o.workers = workers();
  const SyntheticStudy study = synthetic_study(o);
  const auto start = std::chrono::steady_clock::now();
  const ChainConfig config = chain(5000, 10000, 10, 902);
  const FitResult fit = fit_all(study.coefficients, study.design, study.basis, config);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (fit.failures) return {false, cat(fit.failures, " chains failed")};
  double lo = 1.0, hi = 0.0;
  std::size_t tested = 0, rejected = 0;
  for (const auto& p : fit.posteriors) {
    lo = std::min(lo, p.acceptance.minCoeff());
    hi = std::max(hi, p.acceptance.maxCoeff());
    for (Index i = 0; i < p.geweke_p.size(); ++i) {
      if (!std::isfinite(p.geweke_p[i])) continue;
      ++tested;
      rejected += p.geweke_p[i] < 0.05;
    }
  }
  const double geweke = static_cast<double>(rejected) / static_cast<double>(std::max<std::size_t>(tested, 1));
  const double sweeps = config.n_burn + static_cast<double>(config.n_keep);
  const double hours = seconds / 3600.0;
  const bool pass = lo >= 0.2 && hi <= 0.97 && geweke < 0.1 && hours < 12.0;
  return {pass, cat("K = ", fit.posteriors.size(), ", acceptance [", lo, ", ", hi, "], Geweke p < 0.05 in ", geweke,
                    " of ", tested, ", ", seconds / sweeps, " s per sweep over all coefficients, total ", hours,
                    " h with ", workers(), " worker(s)")};
}

}  // namespace acceptance
