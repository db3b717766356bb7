#include "sfmm/select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>

#include "sfmm/parallel.hpp"

namespace sfmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kUnits = 9007199254740992.0;  // 2^53

struct PreparedModel {
  DesignBundle design;
  CovarianceStructure structure;
};

PreparedModel prepare(const std::vector<FunctionRecord>& records, const ModelSpec& spec,
                      const AssembleOptions& options) {
  PreparedModel m;
  m.design = assemble(records, spec, options);
  m.structure = CovarianceStructure(m.design.blocks, m.design.rows());
  return m;
}

void check_inputs(const Matrix& coefficients, const std::vector<FunctionRecord>& records) {
  if (static_cast<std::size_t>(coefficients.rows()) != records.size())
    fail("dimension_mismatch", "coefficient rows do not match the number of functions");
  if (!coefficients.allFinite()) fail("non_finite_value", "coefficients contain non-finite values");
}

}  // namespace

std::string to_string(Criterion c) { return c == Criterion::abic ? "aBIC" : "aAIC"; }

std::string to_string(SelectionStage s) {
  switch (s) {
    case SelectionStage::fixed: return "fixed";
    case SelectionStage::random: return "random";
    case SelectionStage::smoothness: return "smoothness";
    case SelectionStage::joint: return "joint";
  }
  return "";
}

double abic(double loglik, double n_par, std::size_t n_obs) {
  return -2.0 * loglik + n_par * std::log(static_cast<double>(n_obs));
}

double aaic(double loglik, double n_par) { return -2.0 * loglik + 2.0 * n_par; }

double information_criterion(Criterion c, double loglik, double n_par, std::size_t n_obs) {
  return c == Criterion::abic ? abic(loglik, n_par, n_obs) : aaic(loglik, n_par);
}

double parameter_count(const LmmFit& fit, const DesignBundle& design, const CovarianceStructure& st) {
  double n = static_cast<double>(design.X.cols()) + static_cast<double>(st.n_levels()) + 1.0;
  for (std::size_t t = 0; t < design.np_terms.size(); ++t) n += effective_df_np(fit, design, st, t) - 2.0;
  return n;
}

Matrix CoefficientScores::criterion(Criterion c) const {
  Matrix out(loglik.rows(), loglik.cols());
  for (Index i = 0; i < out.rows(); ++i)
    for (Index k = 0; k < out.cols(); ++k) out(i, k) = information_criterion(c, loglik(i, k), n_par(i, k), n_obs);
  return out;
}

std::size_t SelectionReport::best() const {
  std::size_t b = 0;
  for (std::size_t c = 1; c < ids.size(); ++c)
    if (probability[c] > probability[b] || (probability[c] == probability[b] && ids[c] < ids[b])) b = c;
  return b;
}

double SelectionReport::probability_of(const std::string& id) const {
  for (std::size_t c = 0; c < ids.size(); ++c)
    if (ids[c] == id) return probability[c];
  fail("unknown_candidate", "no candidate '" + id + "'");
}

SelectionReport vote(const std::vector<std::string>& ids, const Matrix& criterion, const Matrix& n_par,
                     const Vector& weights) {
  if (ids.empty()) fail("empty_candidates", "vote needs at least one candidate");
  const Index c_count = static_cast<Index>(ids.size());
  if (criterion.rows() != c_count || n_par.rows() != c_count || criterion.cols() != weights.size() ||
      n_par.cols() != weights.size())
    fail("dimension_mismatch", "criterion table does not match candidates and weights");
  for (Index k = 0; k < weights.size(); ++k)
    if (!(weights[k] >= 0.0) || !std::isfinite(weights[k])) fail("invalid_weights", "weights must be finite and >= 0");
  SelectionReport report;
  report.ids = ids;
  const Index k_count = weights.size();
  report.winners.assign(static_cast<std::size_t>(k_count), -1);
  std::vector<double> included;
  for (Index k = 0; k < k_count; ++k) {
    int w = -1;
    for (Index c = 0; c < c_count; ++c) {
      const double v = criterion(c, k);
      if (!std::isfinite(v)) continue;
      if (w < 0) {
        w = static_cast<int>(c);
        continue;
      }
      const double b = criterion(w, k);
      if (v < b || (v == b && (n_par(c, k) < n_par(w, k) || (n_par(c, k) == n_par(w, k) && ids[c] < ids[w]))))
        w = static_cast<int>(c);
    }
    report.winners[k] = w;
    if (w >= 0) included.push_back(weights[k]);
    else report.warnings.push_back("coefficient " + std::to_string(k) + " excluded: every candidate failed");
  }
  // Sorted summation keeps the total independent of coefficient order.
  std::sort(included.begin(), included.end());
  const double total = std::accumulate(included.begin(), included.end(), 0.0);
  report.probability.assign(ids.size(), 0.0);
  if (!(total > 0.0)) {
    // No usable weight: fall back to the first candidate in id order.
    std::size_t first = 0;
    for (std::size_t c = 1; c < ids.size(); ++c)
      if (ids[c] < ids[first]) first = c;
    report.probability[first] = 1.0;
    report.warnings.push_back("no coefficient carried weight");
    return report;
  }
  // Integer units of 2^-53 make the sum exact; the rounding remainder goes to the
  // winner of the heaviest coefficient (smallest id among equal weights).
  std::vector<double> units(ids.size(), 0.0);
  double assigned = 0.0;
  double heaviest = -1.0;
  int remainder_to = -1;
  for (Index k = 0; k < k_count; ++k) {
    const int w = report.winners[k];
    if (w < 0) continue;
    const double u = std::floor(weights[k] / total * kUnits);
    units[w] += u;
    assigned += u;
    if (weights[k] > heaviest || (weights[k] == heaviest && ids[w] < ids[remainder_to])) {
      heaviest = weights[k];
      remainder_to = w;
    }
  }
  units[remainder_to] += kUnits - assigned;
  for (std::size_t c = 0; c < ids.size(); ++c) report.probability[c] = units[c] / kUnits;
  return report;
}

CoefficientScores score_candidates(const Matrix& coefficients, const std::vector<FunctionRecord>& records,
                                   const std::vector<CandidateModel>& candidates, const ScoreOptions& options) {
  if (candidates.empty()) fail("empty_candidates", "no candidate models");
  check_inputs(coefficients, records);
  std::vector<PreparedModel> models;
  models.reserve(candidates.size());
  for (const auto& c : candidates) models.push_back(prepare(records, c.spec, options.assemble));
  const std::size_t c_count = candidates.size();
  const std::size_t k_count = static_cast<std::size_t>(coefficients.cols());
  CoefficientScores out;
  for (const auto& c : candidates) out.ids.push_back(c.id);
  out.loglik = Matrix::Constant(c_count, k_count, kNaN);
  out.n_par = Matrix::Constant(c_count, k_count, kNaN);
  out.n_obs = records.size();
  std::mutex mutex;
  LmmOptions lmm = options.lmm;
  lmm.reml = options.reml;
  parallel_for(c_count * k_count, options.workers, [&](std::size_t task) {
    const std::size_t k = task / c_count, c = task % c_count;
    const Vector y = coefficients.col(static_cast<Index>(k));
    const PreparedModel& m = models[c];
    std::string warning;
    try {
      const LmmFit fit = fit_lmm(y, m.design.X, m.structure, lmm);
      out.loglik(c, k) = options.reml ? fit.loglik_reml : fit.loglik_ml;
      out.n_par(c, k) = parameter_count(fit, m.design, m.structure);
      if (!fit.converged)
        warning = "candidate " + candidates[c].id + " coefficient " + std::to_string(k) + ": not converged";
    } catch (const Error& e) {
      warning = "candidate " + candidates[c].id + " coefficient " + std::to_string(k) + " excluded: " + e.what();
    }
    if (!warning.empty()) {
      std::lock_guard<std::mutex> lock(mutex);
      out.warnings.push_back(warning);
    }
  });
  std::sort(out.warnings.begin(), out.warnings.end());
  return out;
}

SelectionReport select_models(const Matrix& coefficients, const std::vector<FunctionRecord>& records,
                              const std::vector<CandidateModel>& candidates, const Vector& weights,
                              Criterion criterion, SelectionStage stage, const ScoreOptions& options) {
  const CoefficientScores scores = score_candidates(coefficients, records, candidates, options);
  SelectionReport r = vote(scores.ids, scores.criterion(criterion), scores.n_par, weights);
  r.stage = stage;
  r.criterion = criterion;
  r.warnings.insert(r.warnings.begin(), scores.warnings.begin(), scores.warnings.end());
  return r;
}

TwoStepResult two_step_select(const std::vector<CandidateModel>& fixed_candidates,
                              const std::vector<CandidateModel>& random_candidates, const Matrix& coefficients,
                              const std::vector<FunctionRecord>& records, const Vector& weights,
                              const TwoStepOptions& options) {
  if (fixed_candidates.empty() || random_candidates.empty()) fail("empty_candidates", "both stages need candidates");
  ScoreOptions so;
  so.workers = options.workers;
  so.assemble = options.assemble;
  TwoStepResult out;

  std::vector<CandidateModel> stage1;
  for (const auto& c : fixed_candidates) stage1.push_back({c.id, combine(c.spec, options.baseline_random)});
  so.reml = options.reml_fixed;
  out.fixed_report = select_models(coefficients, records, stage1, weights, options.criterion,
                                   SelectionStage::fixed, so);
  out.best_fixed = fixed_candidates[out.fixed_report.best()];

  std::vector<CandidateModel> stage2;
  for (const auto& c : random_candidates) stage2.push_back({c.id, combine(out.best_fixed.spec, c.spec)});
  so.reml = options.reml_random;
  out.random_report = select_models(coefficients, records, stage2, weights, options.criterion,
                                    SelectionStage::random, so);
  out.best_random = random_candidates[out.random_report.best()];
  out.model = combine(out.best_fixed.spec, out.best_random.spec);
  return out;
}

SmoothnessReport smoothness_compare(const Matrix& coefficients, const std::vector<FunctionRecord>& records,
                                    const ModelSpec& model, const std::vector<double>& lambda_grid,
                                    const Vector& weights, Criterion criterion, const ScoreOptions& options) {
  check_inputs(coefficients, records);
  if (lambda_grid.empty()) fail("invalid_lambda", "empty lambda grid");
  for (double l : lambda_grid)
    if (!(l > 0.0) || !std::isfinite(l)) fail("invalid_lambda", "common smoothing parameters must be positive");
  if (model.n_nonparametric() != 1 || !model.random.empty())
    fail("unsupported_model", "smoothness comparison needs one nonparametric term and no other random terms");
  const PreparedModel m = prepare(records, model, options.assemble);
  const std::size_t k_count = static_cast<std::size_t>(coefficients.cols());
  const std::size_t n = m.design.rows();
  const double n_d = static_cast<double>(n);
  const double p = static_cast<double>(m.design.X.cols());
  const std::size_t l_count = lambda_grid.size();

  // Row 0: varying smoothness; rows 1..L: common lambda.
  Matrix loglik = Matrix::Constant(1 + l_count, k_count, kNaN);
  Matrix n_par = Matrix::Constant(1 + l_count, k_count, kNaN);
  std::vector<std::string> warnings;
  std::mutex mutex;
  LmmOptions lmm = options.lmm;
  lmm.reml = false;
  parallel_for(k_count, options.workers, [&](std::size_t k) {
    const Vector y = coefficients.col(static_cast<Index>(k));
    try {
      const LmmFit fit = fit_lmm(y, m.design.X, m.structure, lmm);
      loglik(0, k) = fit.loglik_ml;
      n_par(0, k) = parameter_count(fit, m.design, m.structure);
    } catch (const Error& e) {
      std::lock_guard<std::mutex> lock(mutex);
      warnings.push_back("varying coefficient " + std::to_string(k) + " excluded: " + e.what());
    }
    CovarianceFactor factor(m.structure);
    for (std::size_t l = 0; l < l_count; ++l) {
      const double lambda = lambda_grid[l];
      const double one = 1.0;
      if (!factor.try_factor(std::span<const double>(&one, 1), lambda)) {
        std::lock_guard<std::mutex> lock(mutex);
        warnings.push_back("common lambda " + std::to_string(lambda) + " coefficient " + std::to_string(k) +
                           " excluded: whitening matrix not positive definite");
        continue;
      }
      const Matrix wx = factor.solve(m.design.X);
      const Matrix xwx = m.design.X.transpose() * wx;
      const Vector beta = xwx.ldlt().solve(wx.transpose() * y);
      const Vector r = y - m.design.X * beta;
      const double rss = factor.quad(r);
      if (!(rss > 0.0)) continue;
      const double q = rss / n_d;
      loglik(1 + l, k) = -0.5 * (n_d * std::log(2.0 * M_PI) + n_d * std::log(q) + factor.logdet() + n_d);
      LmmFit common;
      common.q = Vector::Constant(1, q);
      common.s = lambda * q;
      n_par(1 + l, k) = p + 1.0 + effective_df_np(common, m.design, m.structure, 0) - 2.0;
    }
  });
  std::sort(warnings.begin(), warnings.end());

  SmoothnessReport out;
  out.lambda = lambda_grid;
  out.varying_preferred = true;
  const Matrix table = [&] {
    CoefficientScores s;
    s.loglik = loglik;
    s.n_par = n_par;
    s.n_obs = n;
    return s.criterion(criterion);
  }();
  for (std::size_t l = 0; l < l_count; ++l) {
    Matrix crit(2, k_count), np(2, k_count);
    crit.row(0) = table.row(0);
    crit.row(1) = table.row(1 + l);
    np.row(0) = n_par.row(0);
    np.row(1) = n_par.row(1 + l);
    SelectionReport r = vote({"varying", "common"}, crit, np, weights);
    r.stage = SelectionStage::smoothness;
    r.criterion = criterion;
    if (l == 0) r.warnings.insert(r.warnings.begin(), warnings.begin(), warnings.end());
    out.p_varying.push_back(r.probability[0]);
    if (!(r.probability[0] > 0.5)) out.varying_preferred = false;
    out.reports.push_back(std::move(r));
  }
  return out;
}

}  // namespace sfmm
