#pragma once

#include <string>
#include <vector>

#include "sfmm/lmmfit.hpp"

namespace sfmm {

enum class Criterion { abic, aaic };
enum class SelectionStage { fixed, random, smoothness, joint };

std::string to_string(Criterion c);
std::string to_string(SelectionStage s);

struct CandidateModel {
  std::string id;
  ModelSpec spec;
};

double abic(double loglik, double n_par, std::size_t n_obs);
double aaic(double loglik, double n_par);
double information_criterion(Criterion c, double loglik, double n_par, std::size_t n_obs);

// Fixed effects + variance components (residual included) + the DF of each
// nonparametric term beyond its linear part, which is already a fixed column.
double parameter_count(const LmmFit& fit, const DesignBundle& design, const CovarianceStructure& st);

// Per-candidate, per-coefficient results; NaN marks a failed fit.
struct CoefficientScores {
  std::vector<std::string> ids;
  Matrix loglik;  // C x K
  Matrix n_par;   // C x K
  std::size_t n_obs = 0;
  std::vector<std::string> warnings;
  Matrix criterion(Criterion c) const;
};

struct SelectionReport {
  SelectionStage stage = SelectionStage::fixed;
  Criterion criterion = Criterion::abic;
  std::vector<std::string> ids;
  std::vector<double> probability;
  std::vector<int> winners;  // per coefficient; -1 when every candidate failed
  std::vector<std::string> warnings;
  std::size_t best() const;
  double probability_of(const std::string& id) const;
};

// Weighted vote. Ties at the argmin go to the smaller n_par, then the smaller id.
// Probabilities are multiples of 2^-53 and sum to exactly 1.
SelectionReport vote(const std::vector<std::string>& ids, const Matrix& criterion, const Matrix& n_par,
                     const Vector& weights);

struct ScoreOptions {
  bool reml = false;
  int workers = 1;
  AssembleOptions assemble;
  LmmOptions lmm;
};

// coefficients: N x K, one column per basis coefficient.
CoefficientScores score_candidates(const Matrix& coefficients, const std::vector<FunctionRecord>& records,
                                   const std::vector<CandidateModel>& candidates, const ScoreOptions& options = {});

SelectionReport select_models(const Matrix& coefficients, const std::vector<FunctionRecord>& records,
                              const std::vector<CandidateModel>& candidates, const Vector& weights,
                              Criterion criterion, SelectionStage stage, const ScoreOptions& options = {});

struct TwoStepOptions {
  Criterion criterion = Criterion::abic;
  ModelSpec baseline_random;  // random structure used while comparing fixed structures
  bool reml_fixed = false;
  bool reml_random = true;
  int workers = 1;
  AssembleOptions assemble;
};

struct TwoStepResult {
  CandidateModel best_fixed;
  CandidateModel best_random;
  ModelSpec model;
  SelectionReport fixed_report;
  SelectionReport random_report;
};

// fixed_candidates contribute their fixed part, random_candidates their random part.
TwoStepResult two_step_select(const std::vector<CandidateModel>& fixed_candidates,
                              const std::vector<CandidateModel>& random_candidates, const Matrix& coefficients,
                              const std::vector<FunctionRecord>& records, const Vector& weights,
                              const TwoStepOptions& options = {});

struct SmoothnessReport {
  std::vector<double> lambda;
  std::vector<double> p_varying;
  std::vector<SelectionReport> reports;
  bool varying_preferred = false;  // P(varying) > 1/2 at every common lambda
};

// Varying smoothing parameter per coefficient versus V = q (Z Z' + lambda I)
// for each common lambda. The model must contain one nonparametric term and no
// other random terms.
SmoothnessReport smoothness_compare(const Matrix& coefficients, const std::vector<FunctionRecord>& records,
                                    const ModelSpec& model, const std::vector<double>& lambda_grid,
                                    const Vector& weights, Criterion criterion = Criterion::abic,
                                    const ScoreOptions& options = {});

}  // namespace sfmm
