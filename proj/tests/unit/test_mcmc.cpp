#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "sfmm/mcmc.hpp"
#include "sfmm/simulate.hpp"
#include "sfmm/stats.hpp"

using namespace sfmm;

namespace {

DesignBundle bare_design(const Matrix& x) {
  DesignBundle d;
  d.X = x;
  for (Index a = 0; a < x.cols(); ++a) d.x_names.push_back("x" + std::to_string(a));
  return d;
}

ChainConfig short_config(int burn, int keep, int thin, std::uint64_t seed = 7) {
  ChainConfig c;
  c.n_burn = burn;
  c.n_keep = keep;
  c.thin = thin;
  c.seed = seed;
  return c;
}

double binomial_se(double p, double n) { return std::sqrt(p * (1 - p) / n); }

}  // namespace

TEST_CASE("regularization sets") {
  std::vector<std::pair<int, int>> scales;
  for (int a = 0; a <= 5; ++a)
    for (int b = 0; b <= 5; ++b)
      for (int r = 0; r < 5; ++r) scales.push_back({a, b});
  const RegularizationSets full = regularization_sets(scales);
  CHECK(full.n_sets() == 36);
  // every coefficient in exactly one set with its own scale pair
  for (std::size_t k = 0; k < scales.size(); ++k) CHECK(full.scale_pair[full.set_of[k]] == scales[k]);

  std::vector<std::pair<int, int>> sparse = {{0, 0}, {0, 0}, {0, 0}, {0, 0}, {0, 0}, {1, 1}, {1, 1}, {2, 1}, {3, 3}};
  for (int r = 0; r < 5; ++r) sparse.push_back({1, 0});
  const RegularizationSets m = regularization_sets(sparse);
  // (3,3) -> (2,3) -> (2,2) -> (1,2) -> (1,1); (2,1) -> (1,1); (1,1) has 4 -> (0,1) -> (0,0)
  CHECK(m.n_sets() == 2);
  for (std::size_t k = 0; k < sparse.size(); ++k) {
    CHECK(m.set_of[k] >= 0);
    CHECK(m.scale_pair[m.set_of[k]] == (sparse[k] == std::pair<int, int>{1, 0} ? std::pair<int, int>{1, 0}
                                                                                : std::pair<int, int>{0, 0}));
  }
  const std::vector<std::pair<int, int>> tiny = {{2, 2}, {0, 0}};
  CHECK(regularization_sets(tiny).n_sets() == 1);
}

TEST_CASE("two-group empirical Bayes") {
  Rng rng(31);
  std::vector<double> b(500), v(500, 1.0);
  for (auto& x : b) x = rng.normal(0.0, std::sqrt(5.0));
  const TwoGroupFit f = fit_two_group(b, v, 1.0 / 500);
  CHECK(std::abs(f.tau - 4.0) < 1.0);
  std::vector<double> zeros(50, 0.0), ones(50, 1.0);
  CHECK(fit_two_group(zeros, ones, 0.02).pi == doctest::Approx(0.02).epsilon(1e-6));

  Matrix bh(2, 40), vv = Matrix::Constant(2, 40, 0.5);
  for (Index i = 0; i < bh.size(); ++i) bh.data()[i] = rng.normal(0.0, 1.5);
  for (int k = 20; k < 40; ++k) bh.col(k) = bh.col(k - 20);
  std::vector<std::pair<int, int>> sc(40, {1, 1});
  for (int k = 20; k < 40; ++k) sc[k] = {2, 2};
  const ShrinkageHyper h = empirical_bayes(bh, vv, regularization_sets(sc));
  CHECK(h.pi.col(0) == h.pi.col(1));
  CHECK(h.tau.col(0) == h.tau.col(1));
  CHECK_THROWS_AS(fit_two_group(std::vector<double>{}, std::vector<double>{}, 0.1), Error);
}

TEST_CASE("spike-slab inclusion odds and proposal correction") {
  Rng rng(32);
  for (int rep = 0; rep < 20; ++rep) {
    // scalar toy: y ~ N(b x, I), b ~ pi N(0, tau) + (1 - pi) delta_0
    const Vector x = oracle::random_vector(5, rng);
    const Vector y = 0.7 * x + oracle::random_vector(5, rng);
    const double pi = rng.uniform(), tau = std::exp(rng.normal());
    const Matrix i5 = Matrix::Identity(5, 5);
    const double m1 = oracle::gaussian_logpdf(y, i5 + tau * x * x.transpose());
    const double m0 = oracle::gaussian_logpdf(y, i5);
    const double expected = std::log(pi / (1 - pi)) + m1 - m0;
    const double v = 1.0 / x.squaredNorm();
    CHECK(inclusion_log_odds(x.dot(y) * v, v, pi, tau) == doctest::Approx(expected).epsilon(1e-10));
  }
  CHECK(truncated_proposal_correction(100.0, 101.0, 1.0) == 0.0);
  CHECK(std::abs(truncated_proposal_correction(50.0, 52.5, 2.0)) < 1e-15);
  CHECK(truncated_proposal_correction(0.5, 1.5, 1.0) ==
        doctest::Approx(std::log(normal_cdf(0.5) / normal_cdf(1.5))).epsilon(1e-12));
  CHECK(truncated_proposal_correction(0.5, 1.5, 1.0) == -truncated_proposal_correction(1.5, 0.5, 1.0));
}

TEST_CASE("spike-slab exactness on an enumerable toy") {
  Matrix x(2, 1);
  x << 1.0, 0.6;
  const DesignBundle d = bare_design(x);
  const CovarianceStructure st({}, 2);
  Vector y(2);
  y << 0.9, 1.4;
  const double pi = 0.3, tau = 2.0, s = 1.0;
  const double m1 = oracle::gaussian_logpdf(y, s * Matrix::Identity(2, 2) + tau * x * x.transpose());
  const double m0 = oracle::gaussian_logpdf(y, s * Matrix::Identity(2, 2));
  const double p1 = 1.0 / (1.0 + (1 - pi) / pi * std::exp(m0 - m1));
  ChainConfig c = short_config(0, 50000, 1);
  c.update_variances = false;
  CoefficientSampler sampler(y, d, st, Vector::Constant(1, pi), Vector::Constant(1, tau), {Vector::Zero(1), Vector(0), s},
                             c, 0);
  const CoefficientPosterior post = sampler.run();
  const double freq = post.gamma.cast<double>().mean();
  CHECK(std::abs(freq - p1) < 3.0 * binomial_se(p1, 50000));
  bool coherent = true;
  for (Index g = 0; g < static_cast<Index>(post.draws()); ++g)
    coherent = coherent && ((post.b(g, 0) == 0.0) == (post.gamma(g, 0) == 0));
  CHECK(coherent);

  CoefficientSampler never(y, d, st, Vector::Constant(1, 0.0), Vector::Constant(1, tau), {Vector::Zero(1), Vector(0), s},
                           short_config(0, 500, 1), 0);
  CHECK(never.run().b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("no-shrinkage mode recovers the GLS estimate") {
  const auto recs = study_records(StudyLayout{8, 4, {7, 15, 25, 35, 45}});
  const DesignBundle d = assemble(recs, parse_formula("value ~ age + hyper(iop) + (1|eye)"));
  const CovarianceStructure st(d.blocks, d.rows());
  Rng rng(33);
  const std::vector<double> q = {0.5};
  const Vector y = simulate_response(d, Vector::Constant(d.X.cols(), 0.3), q, 0.4, rng);
  const Matrix sigma = st.dense(q, 0.4);
  const Matrix si = sigma.inverse();
  const Vector gls = (d.X.transpose() * si * d.X).ldlt().solve(d.X.transpose() * si * y);
  ChainConfig c = short_config(200, 20000, 2);
  c.update_variances = false;
  const Index a = d.X.cols();
  CoefficientSampler sampler(y, d, st, Vector::Ones(a), Vector::Constant(a, 1e6), {Vector::Zero(a), Vector::Constant(1, 0.5), 0.4},
                             c, 0);
  const CoefficientPosterior post = sampler.run();
  for (Index j = 0; j < a; ++j) {
    const Vector col = post.b.col(j);
    const double m = col.mean();
    const double sd = std::sqrt((col.array() - m).square().sum() / (col.size() - 1));
    const double mcse = sd / std::sqrt(post.ess[j]);
    CHECK(std::abs(m - gls[j]) < 3.0 * mcse);
  }
}

TEST_CASE("prior reproduction with the likelihood disabled") {
  const auto recs = study_records(StudyLayout{6, 3, {7, 25, 45}});
  const DesignBundle d = assemble(recs, parse_formula("value ~ np(age) + (1|eye)"));
  const CovarianceStructure st(d.blocks, d.rows());
  Rng rng(34);
  const Vector y = oracle::random_vector(d.rows(), rng);
  ChainConfig c = short_config(2000, 50000, 10);
  c.likelihood = false;
  const Index a = d.X.cols();
  const Vector pi = Vector::Constant(a, 0.4), tau = Vector::Constant(a, 2.0);
  CoefficientSampler sampler(y, d, st, pi, tau, {Vector::Zero(a), Vector::Constant(2, 0.3), 0.8}, c, 3);
  const CoefficientPosterior post = sampler.run();
  REQUIRE(post.draws() == 5000);
  for (Index h = 0; h < post.variance.cols(); ++h) {
    const InverseGamma prior{2.0, 3.0 * post.start_variance[h]};
    const Vector col = post.variance.col(h);
    const double p = ks_test(std::vector<double>(col.data(), col.data() + col.size()),
                             [&](double x) { return prior.cdf(x); });
    CHECK(p > 0.01);
  }
  for (Index j = 0; j < a; ++j) {
    const double freq = post.gamma.col(j).cast<double>().mean();
    CHECK(std::abs(freq - 0.4) < 3.0 * binomial_se(0.4, 5000));
    std::vector<double> slab;
    for (Index g = 0; g < post.b.rows(); ++g)
      if (post.gamma(g, j)) slab.push_back(post.b(g, j));
    CHECK(ks_test(slab, [](double x) { return normal_cdf(x / std::sqrt(2.0)); }) > 0.01);
  }
  // spline effects follow N(0, q_S) marginally
  std::vector<double> z;
  for (Index g = 0; g < post.spline[0].rows(); ++g)
    z.push_back(post.spline[0](g, 0) / std::sqrt(post.variance(g, 0)));
  CHECK(ks_test(z, [](double x) { return normal_cdf(x); }) > 0.01);
}

TEST_CASE("spline conditional") {
  const auto recs = study_records(StudyLayout{10, 0, {10, 30}});
  const DesignBundle d = assemble(recs, parse_formula("value ~ np(age)"));
  const CovarianceStructure st(d.blocks, d.rows());
  Rng rng(35);
  const Vector r = oracle::random_vector(d.rows(), rng);
  const Matrix& z = d.blocks[0].dense;
  const double qs = 0.7;
  const std::vector<double> q = {qs};
  const SplineConditional sc = spline_conditional(d, st, 0, r, q, 1.0);
  const Matrix a = z.transpose() * z + Matrix::Identity(z.cols(), z.cols()) / qs;
  CHECK((sc.mean - a.ldlt().solve(z.transpose() * r)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((sc.cov - a.inverse()).cwiseAbs().maxCoeff() < 1e-10);
  const std::vector<double> q0 = {0.0};
  CHECK(spline_conditional(d, st, 0, r, q0, 1.0).mean.isZero());

  // sampled covariance of post hoc draws with fixed variances
  const DesignBundle d2 = assemble(recs, parse_formula("value ~ np(age) + (1|subject)"));
  const CovarianceStructure st2(d2.blocks, d2.rows());
  const Vector y = oracle::random_vector(d2.rows(), rng);
  ChainConfig c = short_config(0, 10000, 1);
  c.update_variances = false;
  const Index p = d2.X.cols();
  const Vector beta = Vector::Constant(p, 0.1);
  CoefficientSampler sampler(y, d2, st2, Vector::Ones(p), Vector::Constant(p, 1e-12), {beta, Vector::Constant(2, 0.6), 0.9},
                             c, 0);
  const CoefficientPosterior post = sampler.run();
  const std::vector<double> qq = {0.6, 0.6};
  const Matrix u = post.spline[0];
  const Vector m = u.colwise().mean();
  const Matrix cov = (u.rowwise() - m.transpose()).transpose() * (u.rowwise() - m.transpose()) / (u.rows() - 1.0);
  // b is held near zero by the tiny slab; use the average conditional covariance
  const SplineConditional ref = spline_conditional(d2, st2, 0, y, qq, 0.9);
  for (Index i = 0; i < cov.rows(); ++i)
    for (Index j = 0; j < cov.cols(); ++j)
      CHECK(std::abs(cov(i, j) - ref.cov(i, j)) < 0.05 * std::sqrt(ref.cov(i, i) * ref.cov(j, j)) + 1e-3 * std::abs(ref.mean[i] * ref.mean[j]));
}

TEST_CASE("chains are deterministic and independent of worker count") {
  const auto recs = study_records(StudyLayout{8, 4, {7, 15, 25, 35, 45}});
  const DesignBundle d = assemble(recs, parse_formula("value ~ np(age) + hyper(iop) + (hyper(iop)|eye)"));
  const CovarianceStructure st(d.blocks, d.rows());
  Rng rng(36);
  const int k = 4;
  Matrix y(d.rows(), k);
  std::vector<ChainStart> starts;
  const std::vector<double> q = {0.3, 0.5, 0.2, 0.1};
  Matrix bhat(d.X.cols(), k), v(d.X.cols(), k);
  for (int j = 0; j < k; ++j) {
    y.col(j) = simulate_response(d, Vector::Constant(d.X.cols(), 0.5), q, 0.2, rng);
    const LmmFit fit = fit_reml(y.col(j), d.X, st);
    starts.push_back(chain_start(fit, y.col(j), d));
    bhat.col(j) = fit.beta;
    v.col(j) = fit.beta_cov.diagonal();
  }
  const ShrinkageHyper hyper = empirical_bayes(bhat, v, regularization_sets(std::vector<std::pair<int, int>>(k, {0, 0})));
  const ChainConfig c = short_config(500, 1000, 5);
  const auto one = run_all(y, d, hyper, starts, c, 1);
  const auto two = run_all(y, d, hyper, starts, c, 3);
  REQUIRE(one.size() == 4);
  for (int j = 0; j < k; ++j) {
    REQUIRE(one[j].posterior);
    REQUIRE(two[j].posterior);
    CHECK(one[j].posterior->b == two[j].posterior->b);
    CHECK(one[j].posterior->variance == two[j].posterior->variance);
    CHECK(one[j].posterior->spline[0] == two[j].posterior->spline[0]);
    CHECK((one[j].posterior->variance.array() > 0.0).all());
    for (Index c2 = 0; c2 < one[j].posterior->acceptance.size(); ++c2) {
      CHECK(one[j].posterior->acceptance[c2] >= 0.2);
      CHECK(one[j].posterior->acceptance[c2] <= 0.97);
    }
  }
  const std::vector<std::size_t> none;
  CHECK(run_all(Matrix(d.rows(), 0), d, ShrinkageHyper{}, {}, c, 2).empty());
  CHECK(run_all(y, d, hyper, starts, c, 1, std::vector<std::size_t>{2}).size() == 1);
  CHECK(run_all(y, d, hyper, starts, c, 1, std::vector<std::size_t>{2})[0].posterior->b == one[2].posterior->b);

  // constant data: intercept degenerate at the constant
  const DesignBundle d0 = assemble(recs, parse_formula("value ~ 1"));
  const CovarianceStructure st0(d0.blocks, d0.rows());
  const Vector flat = Vector::Constant(d0.rows(), 2.5);
  LmmFit f0 = fit_reml(flat, d0.X, st0);
  CoefficientSampler flat_sampler(flat, d0, st0, Vector::Ones(1), Vector::Constant(1, 100.0), chain_start(f0, flat, d0),
                                  short_config(200, 1000, 1), 0);
  const CoefficientPosterior fp = flat_sampler.run();
  CHECK((fp.b.array() - 2.5).abs().maxCoeff() < 1e-3);
  CHECK(fp.variance.col(0).mean() < 1e-6);
}
