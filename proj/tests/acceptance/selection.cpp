#include <cmath>
#include <map>

#include "acceptance/acceptance.hpp"
#include "sfmm/select.hpp"
#include "sfmm/simulate.hpp"

using namespace sfmm;

namespace acceptance {

Outcome model_selection() {
  const std::vector<CandidateModel> models = {{"null", parse_formula("value ~ 1")},
                                              {"linear_age", parse_formula("value ~ age")},
                                              {"np_age", parse_formula("value ~ np(age)")},
                                              {"linear_age_eye", parse_formula("value ~ age + (1|eye)")}};
  WaveletSpec spec;
  spec.levels = 3;
  ScoreOptions so;
  so.workers = workers();
  bool pass = true;
  std::string detail;
  for (std::size_t truth = 0; truth < models.size(); ++truth) {
    SyntheticStudyOptions o;
    o.grid = {32, 32};
    o.wavelet = spec;
    o.formula = models[truth].spec.to_string();
    o.support = 30;
    o.sparsity = 0.0;
    o.unit_var = {0.5};
    o.seed = 400 + truth;
    o.workers = workers();
    const SyntheticStudy base = synthetic_study(o);
    int correct = 0;
    double mean_p = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      const FunctionalDataset data =
          simulate_pseudo(base.truth, base.design, base.basis, base.records, 4000 + 100 * truth + rep, workers());
      const BasisBuildReport b = build_wavelet_basis(data, spec, 100.0, 0.995, workers());
      const SelectionReport r =
          select_models(b.coefficients, data.records, models, b.basis.weights(), Criterion::abic, SelectionStage::joint, so);
      correct += r.best() == truth;
      mean_p += r.probability[truth] / 20.0;
    }
    pass = pass && correct >= 18;
    detail += cat(truth ? ", " : "", models[truth].id, " ", correct, "/20 (mean P ", mean_p, ")");
  }
  return {pass, detail};
}

Outcome two_step_identifiability() {
  const auto recs = study_records(StudyLayout{});
  const ModelSpec truth = parse_formula("value ~ np(age) + (1|subject)");
  const std::vector<CandidateModel> joint = {{"subject", parse_formula("value ~ (1|subject)")},
                                             {"np_age", parse_formula("value ~ np(age)")},
                                             {"np_age_subject", truth}};
  TwoStepOptions opt;
  opt.workers = workers();
  ScoreOptions so;
  so.workers = workers();
  int joint_correct = 0, two_step_correct = 0;
  for (int rep = 0; rep < 20; ++rep) {
    Rng rng(500, static_cast<std::uint64_t>(rep));
    std::map<std::string, double> u;
    for (const auto& r : recs)
      if (!u.count(r.subject_id)) u[r.subject_id] = rng.normal();
    Matrix y(recs.size(), 1);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const double a = (recs[i].covariates.at("age") - 55.0) / 35.0;
      y(static_cast<Index>(i), 0) = 1.5 * std::sin(3.0 * a) + u[recs[i].subject_id] + 0.5 * rng.normal();
    }
    const Vector w = Vector::Ones(1);
    const SelectionReport r = select_models(y, recs, joint, w, Criterion::abic, SelectionStage::joint, so);
    joint_correct += r.ids[r.best()] == "np_age_subject";
    const TwoStepResult ts = two_step_select({{"intercept", parse_formula("~ 1")}, {"np_age", parse_formula("~ np(age)")}},
                                             {{"none", parse_formula("~ 1")}, {"subject", parse_formula("~ (1|subject)")}},
                                             y, recs, w, opt);
    two_step_correct += ts.model == truth;
  }
  return {joint_correct < 10 && two_step_correct >= 18,
          cat("joint selects the true model ", joint_correct, "/20, two-step ", two_step_correct, "/20")};
}

Outcome varying_smoothness() {
  const auto recs = study_records(StudyLayout{});
  const ModelSpec spec = parse_formula("value ~ np(age)");
  const DesignBundle d = assemble(recs, spec);
  // Smoothing parameters on the scale of the spline block: lambda = m gives equal signal and noise.
  const double m = d.blocks[0].dense.rowwise().squaredNorm().mean();
  std::vector<double> grid = {0.01, 0.1, 1.0, 10.0, 100.0};
  for (auto& g : grid) g *= m;
  const int k_count = 60;
  ScoreOptions so;
  so.workers = workers();
  int right[2] = {0, 0};
  for (int varying = 0; varying < 2; ++varying) {
    for (int rep = 0; rep < 20; ++rep) {
      Rng rng(600 + varying, static_cast<std::uint64_t>(rep));
      Matrix y(d.rows(), k_count);
      for (int k = 0; k < k_count; ++k) {
        const double lambda = m * (varying ? std::pow(10.0, 6.0 * rng.uniform() - 3.0) : 1.0);
        const double s = 1.0 / (1.0 + m / lambda);
        const std::vector<double> q = {s / lambda};
        Vector beta(2);
        beta << 2.0 * rng.normal(), rng.normal();
        y.col(k) = simulate_response(d, beta, q, s, rng);
      }
      const SmoothnessReport r =
          smoothness_compare(y, recs, spec, grid, energy_weights(y), Criterion::abic, so);
      right[varying] += r.varying_preferred == static_cast<bool>(varying);
    }
  }
  return {right[0] >= 18 && right[1] >= 18,
          cat("common truth ", right[0], "/20 correct, varying truth ", right[1], "/20 correct")};
}

}  // namespace acceptance
