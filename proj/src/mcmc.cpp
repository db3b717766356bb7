#include "sfmm/mcmc.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "sfmm/diagnostics.hpp"
#include "sfmm/optim.hpp"
#include "sfmm/parallel.hpp"
#include "sfmm/stats.hpp"

namespace sfmm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kSplineStream = 0x5A17E5EEDULL;

double log_normal0(double x, double v) { return -0.5 * (std::log(2.0 * M_PI * v) + x * x / v); }

double log_add(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double two_group_loglik(std::span<const double> bhat, std::span<const double> v, double pi, double tau) {
  double ll = 0.0;
  const double lp = std::log(pi), lq = pi < 1.0 ? std::log1p(-pi) : -kInf;
  for (std::size_t i = 0; i < bhat.size(); ++i)
    ll += log_add(lp + log_normal0(bhat[i], tau + v[i]), lq + log_normal0(bhat[i], v[i]));
  return ll;
}

std::pair<double, double> best_pi(std::span<const double> bhat, std::span<const double> v, double tau,
                                  double pi_min) {
  const auto r = minimize_scalar([&](double p) { return -two_group_loglik(bhat, v, p, tau); }, pi_min, 1.0, 40);
  double pi = r.first, value = -r.second;
  for (double edge : {pi_min, 1.0}) {
    const double e = two_group_loglik(bhat, v, edge, tau);
    if (e > value) {
      pi = edge;
      value = e;
    }
  }
  return {pi, value};
}

SplineConditional spline_from_factor(const Matrix& z, const CovarianceFactor& rest, const Vector& r, double qs) {
  SplineConditional out;
  const Index m = z.cols();
  if (!(qs > 0.0)) {
    out.mean = Vector::Zero(m);
    out.cov = Matrix::Zero(m, m);
    return out;
  }
  const Matrix siz = rest.solve(z);
  Matrix precision = z.transpose() * siz;
  precision.diagonal().array() += 1.0 / qs;
  Eigen::LLT<Matrix> llt(0.5 * (precision + precision.transpose()));
  if (llt.info() != Eigen::Success) fail_numeric("singular_inner_matrix", "spline conditional precision not PD");
  out.cov = llt.solve(Matrix::Identity(m, m));
  out.mean = llt.solve(siz.transpose() * r);
  return out;
}

}  // namespace

// ---- regularization sets ----

RegularizationSets regularization_sets(std::span<const std::pair<int, int>> scales, std::size_t min_size) {
  std::map<std::pair<int, int>, std::vector<std::size_t>> members;
  for (std::size_t k = 0; k < scales.size(); ++k) members[scales[k]].push_back(k);
  auto finer_first = [](const std::pair<int, int>& a, const std::pair<int, int>& b) {
    const int sa = a.first + a.second, sb = b.first + b.second;
    return sa != sb ? sa > sb : a.first > b.first;
  };
  for (;;) {
    std::vector<std::pair<int, int>> keys;
    for (const auto& [key, m] : members) keys.push_back(key);
    std::sort(keys.begin(), keys.end(), finer_first);
    bool merged = false;
    for (const auto& key : keys) {
      if (members[key].size() >= min_size || key == std::pair<int, int>{0, 0}) continue;
      std::pair<int, int> parent = key;
      if (key.first >= key.second) --parent.first;
      else --parent.second;
      auto& dst = members[parent];
      dst.insert(dst.end(), members[key].begin(), members[key].end());
      members.erase(key);
      merged = true;
      break;
    }
    if (!merged) break;
  }
  const std::pair<int, int> root{0, 0};
  if (members.count(root) && members[root].size() < min_size && members.size() > 1) {
    std::vector<std::pair<int, int>> keys;
    for (const auto& [key, m] : members)
      if (key != root) keys.push_back(key);
    std::sort(keys.begin(), keys.end(), [&](auto a, auto b) { return finer_first(b, a); });
    auto& dst = members[keys.front()];
    dst.insert(dst.end(), members[root].begin(), members[root].end());
    members.erase(root);
  }
  RegularizationSets out;
  out.set_of.assign(scales.size(), -1);
  for (const auto& [key, m] : members) {
    for (std::size_t k : m) out.set_of[k] = static_cast<int>(out.scale_pair.size());
    out.scale_pair.push_back(key);
  }
  return out;
}

RegularizationSets regularization_sets(const BasisSystem& basis, std::size_t min_size) {
  std::vector<std::pair<int, int>> scales;
  if (basis.has_rotation()) {
    scales.assign(basis.size(), {0, 0});
  } else {
    for (const auto& c : basis.index_map()) scales.push_back({c.scale_m, c.scale_c});
  }
  return regularization_sets(scales, min_size);
}

// ---- empirical Bayes ----

TwoGroupFit fit_two_group(std::span<const double> bhat, std::span<const double> v, double pi_min) {
  if (bhat.empty()) fail("empty_set", "two-group fit needs at least one estimate");
  if (bhat.size() != v.size()) fail("dimension_mismatch", "estimates and variances differ in length");
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!(v[i] > 0.0) || !std::isfinite(bhat[i])) fail("invalid_variance", "sampling variances must be positive");
  pi_min = std::clamp(pi_min, 1e-12, 1.0);
  const double tau_min = std::max(1e-8 * median(std::vector<double>(v.begin(), v.end())), 1e-300);
  double bmax = 0.0;
  for (double b : bhat) bmax = std::max(bmax, b * b);
  const double tau_max = std::max(10.0 * bmax, 100.0 * tau_min);
  const double lo = std::log(tau_min), hi = std::log(tau_max);
  const int grid = 80;
  TwoGroupFit best;
  best.loglik = -kInf;
  int best_i = 0;
  for (int i = 0; i <= grid; ++i) {
    const double lt = lo + (hi - lo) * i / grid;
    const auto [pi, ll] = best_pi(bhat, v, std::exp(lt), pi_min);
    if (ll > best.loglik) {
      best = {pi, std::exp(lt), ll};
      best_i = i;
    }
  }
  const double a = lo + (hi - lo) * std::max(0, best_i - 1) / grid;
  const double b = lo + (hi - lo) * std::min(grid, best_i + 1) / grid;
  const auto r = minimize_scalar([&](double lt) { return -best_pi(bhat, v, std::exp(lt), pi_min).second; }, a, b, 40);
  if (-r.second > best.loglik) {
    const auto [pi, ll] = best_pi(bhat, v, std::exp(r.first), pi_min);
    best = {pi, std::exp(r.first), ll};
  }
  return best;
}

ShrinkageHyper empirical_bayes(const Matrix& bhat, const Matrix& v, const RegularizationSets& sets) {
  if (bhat.rows() != v.rows() || bhat.cols() != v.cols() ||
      static_cast<std::size_t>(bhat.cols()) != sets.set_of.size())
    fail("dimension_mismatch", "estimates, variances and set map disagree");
  const Index a_count = bhat.rows();
  const std::size_t j_count = sets.n_sets();
  ShrinkageHyper h;
  h.pi = Matrix::Ones(a_count, j_count);
  h.tau = Matrix::Zero(a_count, j_count);
  h.set_map = sets.set_of;
  const double pi_min = 1.0 / static_cast<double>(std::max<Index>(1, bhat.cols()));
  for (std::size_t j = 0; j < j_count; ++j) {
    std::vector<Index> ks;
    for (std::size_t k = 0; k < sets.set_of.size(); ++k)
      if (sets.set_of[k] == static_cast<int>(j)) ks.push_back(static_cast<Index>(k));
    if (ks.empty()) fail("empty_set", "regularization set " + std::to_string(j) + " has no coefficients");
    for (Index a = 0; a < a_count; ++a) {
      std::vector<double> b, vv;
      for (Index k : ks) {
        b.push_back(bhat(a, k));
        vv.push_back(v(a, k));
      }
      const TwoGroupFit f = fit_two_group(b, vv, pi_min);
      h.pi(a, j) = f.pi;
      h.tau(a, j) = f.tau;
    }
  }
  return h;
}

// ---- elementary pieces ----

double InverseGamma::log_pdf(double x) const {
  if (!(x > 0.0)) return -kInf;
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

double InverseGamma::cdf(double x) const {
  if (!(x > 0.0)) return 0.0;
  return boost::math::gamma_q(shape, scale / x);
}

double inclusion_log_odds(double bhat, double v, double pi, double tau) {
  if (pi >= 1.0) return kInf;
  if (pi <= 0.0) return -kInf;
  const double zeta2 = bhat * bhat / v;
  return std::log(pi) - std::log1p(-pi) - 0.5 * std::log1p(tau / v) + 0.5 * zeta2 / (1.0 + v / tau);
}

double truncated_proposal_correction(double current, double proposed, double sd) {
  return normal_log_cdf(current / sd) - normal_log_cdf(proposed / sd);
}

SplineConditional spline_conditional(const DesignBundle& design, const CovarianceStructure& st, std::size_t term,
                                     const Vector& r, std::span<const double> q, double s) {
  if (term >= design.np_terms.size()) fail("unknown_term", "nonparametric term index out of range");
  const std::size_t b = static_cast<std::size_t>(design.np_terms[term].block);
  const CovarianceStructure rest = st.without(b);
  std::vector<double> qr;
  for (std::size_t h = 0; h < q.size(); ++h)
    if (h != b) qr.push_back(q[h]);
  CovarianceFactor f(rest);
  f.factor(qr, s);
  return spline_from_factor(design.blocks[b].dense, f, r, q[b]);
}

ChainStart chain_start(const LmmFit& fit, const Vector& y, const DesignBundle& design) {
  ChainStart c;
  c.beta = fit.beta;
  const double scale = std::max(1.0, y.squaredNorm() / std::max<Index>(1, y.size()));
  c.s = std::max(fit.s, 1e-8 * scale);
  c.q = fit.q;
  for (Index h = 0; h < c.q.size(); ++h) {
    const RandomBlock& b = design.blocks[static_cast<std::size_t>(h)];
    const double row = b.kind == RandomBlock::Kind::dense ? b.dense.rowwise().squaredNorm().mean()
                                                          : b.value.squaredNorm() / std::max<Index>(1, b.value.size());
    c.q[h] = std::max(c.q[h], 1e-2 * c.s / std::max(row, 1e-300));
  }
  return c;
}

Vector curvature_proposal_sd(const Vector& y, const DesignBundle& design, const CovarianceStructure& st,
                             const ChainStart& start) {
  const std::size_t h_count = st.n_levels();
  std::vector<double> v(start.q.data(), start.q.data() + start.q.size());
  v.push_back(start.s);
  auto ll = [&](const std::vector<double>& w) {
    return marginal_loglik(y, design.X, st, std::span<const double>(w.data(), h_count), w[h_count], start.beta);
  };
  const double center = ll(v);
  Vector sd(h_count + 1);
  for (std::size_t c = 0; c <= h_count; ++c) {
    const double h = 1e-2 * v[c];
    std::vector<double> up = v, down = v;
    up[c] += h;
    down[c] -= h;
    const double d2 = (ll(up) - 2.0 * center + ll(down)) / (h * h);
    sd[c] = d2 < 0.0 && std::isfinite(d2) ? std::min(1.0 / std::sqrt(-d2), 2.0 * v[c]) : 0.5 * v[c];
  }
  return sd;
}

// ---- sampler ----

CoefficientSampler::CoefficientSampler(const Vector& y, const DesignBundle& design, const CovarianceStructure& st,
                                       Vector pi, Vector tau, const ChainStart& start, const ChainConfig& config,
                                       std::size_t k)
    : y_(y),
      design_(design),
      st_(st),
      pi_(std::move(pi)),
      tau_(std::move(tau)),
      config_(config),
      k_(k),
      rng_(config.seed, k),
      b_(start.beta),
      q_(start.q),
      s_(start.s),
      factor_(st),
      trial_(st) {
  const Index a_count = design.X.cols();
  const std::size_t h_count = st.n_levels();
  if (pi_.size() != a_count || tau_.size() != a_count || b_.size() != a_count ||
      static_cast<std::size_t>(q_.size()) != h_count)
    fail("dimension_mismatch", "chain inputs do not match the design");
  if (!(s_ > 0.0) || (q_.array() <= 0.0).any()) fail("invalid_start", "variance components must start > 0");
  if (config.thin < 1 || config.n_keep < config.thin || config.n_burn < 0)
    fail("invalid_chain_config", "need n_keep >= thin >= 1 and n_burn >= 0");
  gamma_.assign(static_cast<std::size_t>(a_count), 1);
  for (Index a = 0; a < a_count; ++a)
    if (b_[a] == 0.0) gamma_[a] = 0;
  start_ = Vector(h_count + 1);
  start_ << q_, s_;
  for (Index c = 0; c < start_.size(); ++c)
    prior_.push_back({config.prior_shape, config.prior_scale_factor * start_[c]});
  if (config.likelihood) {
    sd_ = config.proposal_scale * curvature_proposal_sd(y, design, st, {b_, q_, s_});
  } else {
    sd_ = config.proposal_scale * start_;
  }
  const std::size_t n = h_count + 1;
  accepted_.assign(n, 0);
  proposed_.assign(n, 0);
  window_accepted_.assign(n, 0);
  window_proposed_.assign(n, 0);
  rejected_run_.assign(n, 0);
  const std::vector<double> v = variances();
  factor_.factor(std::span<const double>(v.data(), h_count), s_);
}

std::vector<double> CoefficientSampler::variances() const {
  std::vector<double> v(q_.data(), q_.data() + q_.size());
  v.push_back(s_);
  return v;
}

void CoefficientSampler::gibbs_fixed() {
  const Index a_count = design_.X.cols();
  Matrix g;
  Vector hvec;
  if (config_.likelihood) {
    const Matrix six = factor_.solve(design_.X);
    g = design_.X.transpose() * six;
    hvec = six.transpose() * y_;
  }
  for (Index a = 0; a < a_count; ++a) {
    if (!config_.likelihood) {
      gamma_[a] = rng_.bernoulli(pi_[a]) ? 1 : 0;
      b_[a] = gamma_[a] ? rng_.normal(0.0, std::sqrt(tau_[a])) : 0.0;
      continue;
    }
    const double v = 1.0 / g(a, a);
    double num = hvec[a];
    for (Index j = 0; j < a_count; ++j)
      if (j != a) num -= g(a, j) * b_[j];
    const double bhat = num * v;
    const double lo = inclusion_log_odds(bhat, v, pi_[a], tau_[a]);
    const double p_in = lo >= 0.0 ? 1.0 / (1.0 + std::exp(-lo)) : std::exp(lo) / (1.0 + std::exp(lo));
    const double u = rng_.uniform();
    if (u < p_in) {
      const double shrink = 1.0 / (1.0 + v / tau_[a]);
      gamma_[a] = 1;
      b_[a] = rng_.normal(bhat * shrink, std::sqrt(v * shrink));
    } else {
      gamma_[a] = 0;
      b_[a] = 0.0;
    }
  }
}

double CoefficientSampler::log_target(const CovarianceFactor& f, const Vector& r, std::size_t component,
                                      double value) const {
  double lt = prior_[component].log_pdf(value);
  if (config_.likelihood) lt += -0.5 * f.logdet() - 0.5 * f.quad(r);
  return lt;
}

void CoefficientSampler::mh_variance() {
  const std::size_t h_count = st_.n_levels();
  const Vector r = y_ - design_.X * b_;
  std::vector<double> v = variances();
  double current = 0.0;
  for (std::size_t c = 0; c <= h_count; ++c) {
    current = log_target(factor_, r, c, v[c]);
    const double proposal = truncated_normal_positive(rng_, v[c], sd_[c]);
    std::vector<double> w = v;
    w[c] = proposal;
    double log_alpha = -kInf;
    bool factored = true;
    if (config_.likelihood) factored = trial_.try_factor(std::span<const double>(w.data(), h_count), w[h_count]);
    if (factored)
      log_alpha = log_target(trial_, r, c, proposal) - current +
                  truncated_proposal_correction(v[c], proposal, sd_[c]);
    ++proposed_[c];
    ++window_proposed_[c];
    if (std::log(rng_.uniform()) < log_alpha) {
      v[c] = proposal;
      if (config_.likelihood) std::swap(factor_, trial_);
      ++accepted_[c];
      ++window_accepted_[c];
      rejected_run_[c] = 0;
    } else if (++rejected_run_[c] >= config_.stall_limit) {
      sd_[c] *= 0.5;
      rejected_run_[c] = 0;
      warnings_.push_back("component " + std::to_string(c) + ": " + std::to_string(config_.stall_limit) +
                          " consecutive rejections, proposal sd halved");
    }
  }
  for (std::size_t h = 0; h < h_count; ++h) q_[h] = v[h];
  s_ = v[h_count];
}

void CoefficientSampler::adapt() {
  for (std::size_t c = 0; c < window_proposed_.size(); ++c) {
    if (window_proposed_[c] == 0) continue;
    const double rate = static_cast<double>(window_accepted_[c]) / static_cast<double>(window_proposed_[c]);
    if (rate < 0.25) sd_[c] *= 0.5;
    else if (rate > 0.6) sd_[c] *= 2.0;
    window_accepted_[c] = 0;
    window_proposed_[c] = 0;
  }
}

void CoefficientSampler::sweep() {
  gibbs_fixed();
  if (config_.update_variances) mh_variance();
}

CoefficientPosterior CoefficientSampler::run() {
  const Index a_count = design_.X.cols();
  const std::size_t h_count = st_.n_levels();
  const std::size_t n_np = design_.np_terms.size();
  const Index g_count = config_.n_keep / config_.thin;
  CoefficientPosterior post;
  post.k = k_;
  post.seed = config_.seed;
  post.fixed_names = design_.x_names;
  for (const auto& b : design_.blocks) post.variance_names.push_back(b.name);
  post.variance_names.push_back("residual");
  post.b = Matrix(g_count, a_count);
  post.gamma.resize(g_count, a_count);
  post.variance = Matrix(g_count, static_cast<Index>(h_count + 1));
  post.start_variance = start_;

  // Spline effects are drawn post hoc on kept draws from their own stream.
  Rng spline_rng(config_.seed ^ kSplineStream, k_);
  std::vector<CovarianceStructure> rest;
  std::vector<std::size_t> np_block;
  if (config_.sample_splines) {
    for (std::size_t t = 0; t < n_np; ++t) {
      const std::size_t b = static_cast<std::size_t>(design_.np_terms[t].block);
      np_block.push_back(b);
      rest.push_back(st_.without(b));
      post.spline.push_back(Matrix(g_count, design_.blocks[b].dense.cols()));
    }
  }

  for (int i = 0; i < config_.n_burn; ++i) {
    sweep();
    if (config_.adapt && (i + 1) % config_.adapt_window == 0) adapt();
  }
  std::fill(accepted_.begin(), accepted_.end(), 0);
  std::fill(proposed_.begin(), proposed_.end(), 0);
  Index g = 0;
  for (int i = 0; i < config_.n_keep; ++i) {
    sweep();
    if ((i + 1) % config_.thin != 0 || g >= g_count) continue;
    post.b.row(g) = b_.transpose();
    for (Index a = 0; a < a_count; ++a) post.gamma(g, a) = gamma_[a];
    post.variance.row(g) << q_.transpose(), s_;
    for (std::size_t t = 0; t < rest.size(); ++t) {
      const std::size_t b = np_block[t];
      const Matrix& z = design_.blocks[b].dense;
      Vector u(z.cols());
      if (!(q_[b] > 0.0)) {
        u.setZero();
      } else if (!config_.likelihood) {
        for (auto& x : u) x = spline_rng.normal(0.0, std::sqrt(q_[b]));
      } else {
        std::vector<double> qr;
        for (std::size_t h = 0; h < h_count; ++h)
          if (h != b) qr.push_back(q_[h]);
        CovarianceFactor f(rest[t]);
        f.factor(qr, s_);
        const SplineConditional sc = spline_from_factor(z, f, y_ - design_.X * b_, q_[b]);
        const Matrix l = Eigen::LLT<Matrix>(sc.cov).matrixL();
        Vector e(z.cols());
        for (auto& x : e) x = spline_rng.normal();
        u = sc.mean + l * e;
      }
      post.spline[t].row(g) = u.transpose();
    }
    ++g;
  }

  post.acceptance = Vector(h_count + 1);
  for (std::size_t c = 0; c <= h_count; ++c)
    post.acceptance[c] =
        proposed_[c] > 0 ? static_cast<double>(accepted_[c]) / static_cast<double>(proposed_[c]) : 0.0;
  post.proposal_sd = sd_;
  post.warnings = warnings_;
  for (const auto& n : post.fixed_names) post.parameter_names.push_back("b:" + n);
  for (const auto& n : post.variance_names) post.parameter_names.push_back("var:" + n);
  const Index p_count = a_count + static_cast<Index>(h_count + 1);
  post.geweke_z = Vector::Constant(p_count, std::nan(""));
  post.geweke_p = Vector::Constant(p_count, std::nan(""));
  post.ess = Vector::Constant(p_count, std::nan(""));
  if (g_count >= 20) {
    for (Index p = 0; p < p_count; ++p) {
      const Vector col = p < a_count ? Vector(post.b.col(p)) : Vector(post.variance.col(p - a_count));
      const std::span<const double> chain(col.data(), static_cast<std::size_t>(col.size()));
      const GewekeResult gr = geweke(chain);
      post.geweke_z[p] = gr.z;
      post.geweke_p[p] = gr.p;
      post.ess[p] = effective_sample_size(chain).ess;
    }
  }
  return post;
}

InitialFits initial_fits(const Matrix& coefficients, const DesignBundle& design, int workers) {
  if (static_cast<std::size_t>(coefficients.rows()) != design.rows())
    fail("dimension_mismatch", "coefficient rows do not match the design");
  const CovarianceStructure st(design.blocks, design.rows());
  const Index k = coefficients.cols();
  InitialFits out;
  out.starts.resize(k);
  out.bhat = Matrix::Zero(design.X.cols(), k);
  out.v = Matrix::Zero(design.X.cols(), k);
  std::vector<std::string> notes(k);
  parallel_for(static_cast<std::size_t>(k), workers, [&](std::size_t j) {
    const Vector y = coefficients.col(static_cast<Index>(j));
    const LmmFit fit = fit_reml(y, design.X, st);
    out.starts[j] = chain_start(fit, y, design);
    out.bhat.col(static_cast<Index>(j)) = fit.beta;
    out.v.col(static_cast<Index>(j)) = fit.beta_cov.diagonal().cwiseMax(0.0);
    if (!fit.converged) notes[j] = "coefficient " + std::to_string(j) + ": REML start did not converge";
  });
  for (auto& n : notes)
    if (!n.empty()) out.warnings.push_back(std::move(n));
  return out;
}

std::vector<ChainResult> run_all(const Matrix& coefficients, const DesignBundle& design, const ShrinkageHyper& hyper,
                                 const std::vector<ChainStart>& starts, const ChainConfig& config, int workers,
                                 std::span<const std::size_t> indices) {
  std::vector<std::size_t> ks(indices.begin(), indices.end());
  if (indices.empty())
    for (Index k = 0; k < coefficients.cols(); ++k) ks.push_back(static_cast<std::size_t>(k));
  if (static_cast<std::size_t>(coefficients.rows()) != design.rows())
    fail("dimension_mismatch", "coefficient rows do not match the design");
  if (starts.size() != static_cast<std::size_t>(coefficients.cols()) ||
      hyper.set_map.size() != static_cast<std::size_t>(coefficients.cols()))
    fail("dimension_mismatch", "starting values or set map do not cover every coefficient");
  const CovarianceStructure st(design.blocks, design.rows());
  std::vector<ChainResult> out(ks.size());
  parallel_for(ks.size(), workers, [&](std::size_t i) {
    const std::size_t k = ks[i];
    const Vector y = coefficients.col(static_cast<Index>(k));
    const int j = hyper.set_map[k];
    const ChainStart& start = starts[k];
    try {
      CoefficientSampler sampler(y, design, st, hyper.pi.col(j), hyper.tau.col(j), start, config, k);
      try {
        out[i].posterior = sampler.run();
      } catch (const std::exception& e) {
        std::ostringstream msg;
        msg << e.what() << " [state: b=" << sampler.beta().transpose() << " q=" << sampler.q().transpose()
            << " s=" << sampler.s() << "]";
        out[i].error = msg.str();
      }
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

}  // namespace sfmm
