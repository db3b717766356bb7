#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfmm/basis.hpp"
#include "sfmm/lmmfit.hpp"
#include "sfmm/rng.hpp"

namespace sfmm {

// ---- regularization sets and empirical Bayes ----

struct RegularizationSets {
  std::vector<int> set_of;                      // per coefficient
  std::vector<std::pair<int, int>> scale_pair;  // per set: (meridional, circumferential) scale
  std::size_t n_sets() const { return scale_pair.size(); }
};

// One set per tensor scale pair; sets smaller than `min_size` merge into the
// next coarser pair (the finer of the two scales is reduced first).
RegularizationSets regularization_sets(std::span<const std::pair<int, int>> scales, std::size_t min_size = 5);
RegularizationSets regularization_sets(const BasisSystem& basis, std::size_t min_size = 5);

struct TwoGroupFit {
  double pi = 1.0;
  double tau = 0.0;
  double loglik = 0.0;
};

// Maximizes sum_k log[pi N(bhat_k; 0, tau + V_k) + (1 - pi) N(bhat_k; 0, V_k)].
TwoGroupFit fit_two_group(std::span<const double> bhat, std::span<const double> v, double pi_min);

struct ShrinkageHyper {
  Matrix pi;   // A x J
  Matrix tau;  // A x J
  std::vector<int> set_map;
};

// bhat, v: A x K estimates and sampling variances.
ShrinkageHyper empirical_bayes(const Matrix& bhat, const Matrix& v, const RegularizationSets& sets);

// ---- sampler ----

struct InverseGamma {
  double shape = 2.0;
  double scale = 1.0;
  double log_pdf(double x) const;
  double cdf(double x) const;
};

struct ChainConfig {
  int n_burn = 5000;
  int n_keep = 10000;
  int thin = 10;
  std::uint64_t seed = 1;
  double proposal_scale = 1.0;
  double prior_shape = 2.0;
  double prior_scale_factor = 3.0;  // scale b = factor * start, so the mode equals the start
  bool adapt = true;
  int adapt_window = 50;
  int stall_limit = 500;
  bool update_variances = true;
  bool likelihood = true;  // false samples the prior
  bool sample_splines = true;
};

struct ChainStart {
  Vector beta;
  Vector q;
  double s = 1.0;
};

struct CoefficientPosterior {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> fixed_names;
  std::vector<std::string> variance_names;  // random levels then "residual"
  Matrix b;                                 // G x A
  Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> gamma;
  Matrix variance;                          // G x (H + 1)
  std::vector<Matrix> spline;               // per nonparametric term, G x (M + 2)
  Vector start_variance;
  Vector acceptance;                        // per variance component
  Vector proposal_sd;
  std::vector<std::string> parameter_names;  // b then variances
  Vector geweke_z, geweke_p, ess;
  std::vector<std::string> warnings;
  std::size_t draws() const { return static_cast<std::size_t>(b.rows()); }
};

// Log odds of inclusion for one fixed effect given its conditional GLS estimate
// bhat with sampling variance v under the prior pi N(0, tau) + (1 - pi) delta_0.
double inclusion_log_odds(double bhat, double v, double pi, double tau);

// log q(current | proposed) - log q(proposed | current) for zero-truncated
// Gaussian random-walk proposals with standard deviation sd.
double truncated_proposal_correction(double current, double proposed, double sd);

struct SplineConditional {
  Vector mean;
  Matrix cov;
};

// Conditional of the spline effects of `term` given r = y - X b, with the other
// random levels integrated out.
SplineConditional spline_conditional(const DesignBundle& design, const CovarianceStructure& st, std::size_t term,
                                     const Vector& r, std::span<const double> q, double s);

// One chain on a single coefficient of the marginalized model.
class CoefficientSampler {
 public:
  CoefficientSampler(const Vector& y, const DesignBundle& design, const CovarianceStructure& st, Vector pi,
                     Vector tau, const ChainStart& start, const ChainConfig& config, std::size_t k);

  void gibbs_fixed();
  void mh_variance();
  void sweep();
  CoefficientPosterior run();

  const Vector& beta() const { return b_; }
  const std::vector<std::uint8_t>& gamma() const { return gamma_; }
  const Vector& q() const { return q_; }
  double s() const { return s_; }
  const Vector& proposal_sd() const { return sd_; }

 private:
  const Vector& y_;
  const DesignBundle& design_;
  const CovarianceStructure& st_;
  Vector pi_, tau_;
  ChainConfig config_;
  std::size_t k_;
  Rng rng_;
  Vector b_;
  std::vector<std::uint8_t> gamma_;
  Vector q_;
  double s_;
  std::vector<InverseGamma> prior_;
  Vector sd_;
  Vector start_;
  CovarianceFactor factor_, trial_;
  double logdet_ = 0.0;
  std::vector<long> accepted_, proposed_, window_accepted_, window_proposed_, rejected_run_;
  std::vector<std::string> warnings_;

  std::vector<double> variances() const;
  double log_target(const CovarianceFactor& f, const Vector& r, std::size_t component, double value) const;
  void adapt();
};

// Proposal standard deviations from the curvature of the marginal log-likelihood
// at the starting values (one per random level, then the residual).
Vector curvature_proposal_sd(const Vector& y, const DesignBundle& design, const CovarianceStructure& st,
                             const ChainStart& start);

// REML starting values with each variance lifted to a floor whose per-row
// contribution is 1% of the residual variance.
ChainStart chain_start(const LmmFit& fit, const Vector& y, const DesignBundle& design);

// REML fit of every coefficient: chain starts plus the fixed-effect estimates and
// sampling variances (A x K) that feed the empirical Bayes step.
struct InitialFits {
  std::vector<ChainStart> starts;
  Matrix bhat;
  Matrix v;
  std::vector<std::string> warnings;
};
InitialFits initial_fits(const Matrix& coefficients, const DesignBundle& design, int workers = 1);

struct ChainResult {
  std::optional<CoefficientPosterior> posterior;
  std::string error;
};

// Chains for every column of `coefficients`; the seed of chain k is derived
// from (config.seed, k), so results do not depend on the worker count.
std::vector<ChainResult> run_all(const Matrix& coefficients, const DesignBundle& design, const ShrinkageHyper& hyper,
                                 const std::vector<ChainStart>& starts, const ChainConfig& config, int workers = 1,
                                 std::span<const std::size_t> indices = {});

}  // namespace sfmm
