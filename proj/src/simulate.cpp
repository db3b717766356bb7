#include "sfmm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfmm/parallel.hpp"

namespace sfmm {

std::vector<FunctionRecord> study_records(const StudyLayout& layout) {
  std::vector<FunctionRecord> recs;
  for (int s = 0; s < layout.n_subjects; ++s) {
    const double age = layout.n_subjects == 1
                           ? layout.age_min
                           : layout.age_min + (layout.age_max - layout.age_min) * s / (layout.n_subjects - 1.0);
    const int units = s < layout.n_two_units ? 2 : 1;
    for (int u = 0; u < units; ++u)
      for (double p : layout.serial_levels) {
        FunctionRecord r;
        r.subject_id = "S" + std::to_string(s + 1);
        r.unit_id = u == 0 ? "OD" : "OS";
        r.serial_level = p;
        r.covariates["age"] = age;
        r.id = r.subject_id + "_" + r.unit_id + "_" + std::to_string(static_cast<int>(p));
        recs.push_back(std::move(r));
      }
  }
  return recs;
}

Vector simulate_response(const DesignBundle& design, const Vector& beta, std::span<const double> q, double s,
                         Rng& rng) {
  if (beta.size() != design.X.cols() || q.size() != design.blocks.size())
    fail("dimension_mismatch", "parameters do not match the design");
  if (s < 0.0) fail("negative_variance", "residual variance must be >= 0");
  const Index n = design.X.rows();
  Vector y = design.X * beta;
  for (std::size_t h = 0; h < design.blocks.size(); ++h) {
    if (q[h] < 0.0) fail("negative_variance", "variance components must be >= 0");
    const RandomBlock& b = design.blocks[h];
    const double sd = std::sqrt(q[h]);
    if (b.kind == RandomBlock::Kind::dense) {
      Vector u(b.dense.cols());
      for (auto& v : u) v = sd * rng.normal();
      y += b.dense * u;
    } else {
      Vector u(b.n_groups);
      for (auto& v : u) v = sd * rng.normal();
      for (Index i = 0; i < n; ++i) y[i] += b.value[i] * u[b.group[i]];
    }
  }
  const double se = std::sqrt(s);
  for (Index i = 0; i < n; ++i) y[i] += se * rng.normal();
  return y;
}

Matrix simulate_coefficients(const PseudoParameters& params, const DesignBundle& design, std::uint64_t seed,
                             int workers) {
  const Index k_count = params.beta.cols();
  const Index h_count = static_cast<Index>(design.blocks.size());
  if (params.beta.rows() != design.X.cols() || params.variance.rows() != h_count + 1 ||
      params.variance.cols() != k_count)
    fail("dimension_mismatch", "pseudo parameters do not match the design");
  Matrix out(design.X.rows(), k_count);
  parallel_for(static_cast<std::size_t>(k_count), workers, [&](std::size_t k) {
    const Index kk = static_cast<Index>(k);
    Rng rng(seed, k);
    const Vector v = params.variance.col(kk);
    out.col(kk) = simulate_response(design, params.beta.col(kk), std::span<const double>(v.data(), h_count),
                                    v[h_count], rng);
  });
  return out;
}

FunctionalDataset simulate_pseudo(const PseudoParameters& params, const DesignBundle& design,
                                  const BasisSystem& basis, const std::vector<FunctionRecord>& records,
                                  std::uint64_t seed, int workers) {
  if (records.size() != design.rows()) fail("dimension_mismatch", "records do not match the design");
  if (static_cast<std::size_t>(params.beta.cols()) != basis.size())
    fail("missing_parameters", "parameters cover " + std::to_string(params.beta.cols()) + " of " +
                                   std::to_string(basis.size()) + " coefficients");
  const Matrix c = simulate_coefficients(params, design, seed, workers);
  FunctionalDataset data;
  data.grid = basis.grid();
  data.records = records;
  data.values.resize(records.size());
  parallel_for(records.size(), workers,
               [&](std::size_t i) { data.values[i] = basis.synthesize(c.row(static_cast<Index>(i)).transpose()); });
  return data;
}

SyntheticStudy synthetic_study(const SyntheticStudyOptions& o) {
  SyntheticStudy st;
  st.records = study_records(o.layout);
  st.model = parse_formula(o.formula);
  st.design = assemble(st.records, st.model);
  auto wavelet = std::make_shared<const TensorWavelet>(o.grid, o.wavelet);
  const std::size_t full = wavelet->size();
  if (o.support == 0 || o.support > full) fail("invalid_support", "support must be in [1, K]");
  std::vector<std::size_t> order(full);
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> level(full);
  for (std::size_t k = 0; k < full; ++k) {
    const CoefficientIndex c = wavelet->index(k);
    level[k] = c.scale_m + c.scale_c;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return level[a] < level[b]; });
  std::vector<std::size_t> retained(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(o.support));
  std::sort(retained.begin(), retained.end());
  st.basis = BasisSystem(wavelet, retained, Vector::Constant(static_cast<Index>(o.support), 1.0 / o.support));

  const DesignBundle& d = st.design;
  const Index a_count = d.X.cols();
  const Index h_count = static_cast<Index>(d.blocks.size());
  const Index k_count = static_cast<Index>(o.support);
  st.truth.beta = Matrix::Zero(a_count, k_count);
  st.truth.variance = Matrix::Zero(h_count + 1, k_count);
  Rng rng(o.seed, 0xB0A7);
  std::vector<double> level_var(static_cast<std::size_t>(h_count));
  for (Index h = 0; h < h_count; ++h) {
    const RandomBlock& b = d.blocks[h];
    if (b.kind == RandomBlock::Kind::dense) {
      const double mean_row = b.dense.rowwise().squaredNorm().mean();
      level_var[h] = o.spline_var / std::max(mean_row, 1e-300);
    } else if (b.name.rfind("subject", 0) == 0) {
      level_var[h] = o.subject_var;
    } else {
      const std::size_t c = b.name.back() - '0';
      level_var[h] = c < o.unit_var.size() ? o.unit_var[c] : o.unit_var.back();
    }
  }
  for (Index k = 0; k < k_count; ++k) {
    const CoefficientIndex c = st.basis.index_map()[k];
    const double scale = std::exp(-o.decay * (c.scale_m + c.scale_c));
    for (Index a = 0; a < a_count; ++a) {
      const std::string& name = d.x_names[a];
      if (name == "(Intercept)") {
        st.truth.beta(a, k) = scale * o.intercept * (1.0 + 0.3 * rng.normal());
        continue;
      }
      const bool zero = rng.uniform() < o.sparsity;
      const double col_sd = std::sqrt(d.X.col(a).squaredNorm() / static_cast<double>(d.rows()));
      const double b = rng.normal(0.0, scale * o.effect_sd / std::max(col_sd, 1e-12));
      st.truth.beta(a, k) = zero ? 0.0 : b;
    }
    for (Index h = 0; h < h_count; ++h) st.truth.variance(h, k) = scale * scale * level_var[h];
    st.truth.variance(h_count, k) = scale * scale * o.residual_var;
  }
  st.coefficients = simulate_coefficients(st.truth, d, o.seed, o.workers);
  st.data.grid = o.grid;
  st.data.records = st.records;
  st.data.values.resize(st.records.size());
  parallel_for(st.records.size(), o.workers, [&](std::size_t i) {
    st.data.values[i] = st.basis.synthesize(st.coefficients.row(static_cast<Index>(i)).transpose());
    if (o.noise_sd > 0.0) {
      Rng noise(o.seed ^ 0x9015EULL, i);
      for (Index t = 0; t < st.data.values[i].size(); ++t) st.data.values[i].data()[t] += noise.normal(0.0, o.noise_sd);
    }
  });
  Rng spike_rng(o.seed, 0x5B1CE);
  for (std::size_t s = 0; s < std::min(o.spikes, st.records.size()); ++s) {
    const std::size_t i = (s * 97 + 13) % st.records.size();
    const std::size_t loc = static_cast<std::size_t>(spike_rng.uniform() * static_cast<double>(o.grid.size()));
    st.data.values[i].data()[std::min(loc, o.grid.size() - 1)] += o.spike_size;
  }
  return st;
}

}  // namespace sfmm
