#include "sfmm/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace sfmm {

int SerialBasis::order() const {
  switch (kind) {
    case SerialKind::constant: return 1;
    case SerialKind::linear: return 2;
    case SerialKind::hyperbolic_no_intercept: return 2;
    case SerialKind::hyperbolic: return 3;
  }
  return 0;
}

std::vector<std::string> SerialBasis::column_names() const {
  switch (kind) {
    case SerialKind::constant: return {"G0"};
    case SerialKind::linear: return {"G0", "G1"};
    case SerialKind::hyperbolic_no_intercept: return {"G1", "G2"};
    case SerialKind::hyperbolic: return {"G0", "G1", "G2"};
  }
  return {};
}

double SerialBasis::value(int column, double p) const {
  const std::string name = column_names().at(column);
  if (name == "G0") return 1.0;
  const double x1 = (p - p_mean) / p_norm;
  if (kind == SerialKind::linear) return x1;
  const double x2 = (1.0 / p - ip_mean) / ip_norm;
  return name == "G1" ? M_SQRT1_2 * (x1 - x2) : M_SQRT1_2 * (x1 + x2);
}

Matrix SerialBasis::evaluate(std::span<const double> p) const {
  Matrix out(p.size(), order());
  for (std::size_t i = 0; i < p.size(); ++i)
    for (int d = 0; d < order(); ++d) out(i, d) = value(d, p[i]);
  return out;
}

SerialBasis make_serial_basis(SerialKind kind, std::span<const double> p) {
  SerialBasis g;
  g.kind = kind;
  std::set<double> distinct(p.begin(), p.end());
  g.levels.assign(distinct.begin(), distinct.end());
  if (kind == SerialKind::constant) return g;
  const bool hyper = kind == SerialKind::hyperbolic || kind == SerialKind::hyperbolic_no_intercept;
  if (hyper) {
    for (double v : g.levels)
      if (!(v > 0.0)) fail("nonpositive_serial", "hyperbolic basis needs positive serial levels");
    if (g.levels.size() < 3) fail("too_few_levels", "hyperbolic basis needs at least 3 distinct levels");
  } else if (g.levels.size() < 2) {
    fail("too_few_levels", "linear serial basis needs at least 2 distinct levels");
  }
  const double n = static_cast<double>(g.levels.size());
  g.p_mean = std::accumulate(g.levels.begin(), g.levels.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : g.levels) ss += (v - g.p_mean) * (v - g.p_mean);
  g.p_norm = std::sqrt(ss);
  if (hyper) {
    double s = 0.0;
    for (double v : g.levels) s += 1.0 / v;
    g.ip_mean = s / n;
    ss = 0.0;
    for (double v : g.levels) ss += (1.0 / v - g.ip_mean) * (1.0 / v - g.ip_mean);
    g.ip_norm = std::sqrt(ss);
  }
  return g;
}

SerialBasis hyperbolic_basis(std::span<const double> p_levels) {
  return make_serial_basis(SerialKind::hyperbolic_no_intercept, p_levels);
}

double serial_covariance(const SerialBasis& g, std::span<const double> q, double p, double p_prime) {
  if (static_cast<int>(q.size()) != g.order()) fail("dimension_mismatch", "one variance per serial basis column required");
  double c = 0.0;
  for (int d = 0; d < g.order(); ++d) {
    if (q[d] < 0.0) fail("negative_variance", "serial variances must be nonnegative");
    c += q[d] * g.value(d, p) * g.value(d, p_prime);
  }
  return c;
}

Matrix RandomBlock::to_dense(std::size_t n) const {
  if (kind == Kind::dense) return dense;
  Matrix z = Matrix::Zero(n, n_groups);
  for (std::size_t i = 0; i < n; ++i) z(i, group[i]) = value[i];
  return z;
}

int DesignBundle::fixed_column(const std::string& name) const {
  for (std::size_t j = 0; j < x_names.size(); ++j)
    if (x_names[j] == name) return static_cast<int>(j);
  return -1;
}

int DesignBundle::block_index(const std::string& name) const {
  for (std::size_t j = 0; j < blocks.size(); ++j)
    if (blocks[j].name == name) return static_cast<int>(j);
  return -1;
}

double covariate_value(const FunctionRecord& r, const std::string& name, const std::string& serial_variable) {
  if (name == serial_variable || name == "serial") return r.serial_level;
  const auto it = r.covariates.find(name);
  if (it == r.covariates.end()) fail("missing_covariate", "function '" + r.id + "' lacks covariate '" + name + "'");
  return it->second;
}

namespace {

std::vector<double> column_of(const std::vector<FunctionRecord>& recs, const std::string& name, const std::string& serial) {
  std::vector<double> x(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) x[i] = covariate_value(recs[i], name, serial);
  return x;
}

std::vector<std::string> group_keys(const std::vector<FunctionRecord>& recs, const std::string& grouping) {
  std::vector<std::string> keys(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const FunctionRecord& r = recs[i];
    if (grouping == "subject")
      keys[i] = r.subject_id;
    else if (grouping == "eye" || grouping == "unit")
      keys[i] = r.subject_id + "/" + r.unit_id;
    else {
      const auto it = r.covariates.find(grouping);
      if (it == r.covariates.end()) fail("unknown_grouping", "grouping '" + grouping + "' is neither subject/eye/unit nor a covariate");
      keys[i] = std::to_string(it->second);
    }
  }
  return keys;
}

void add_fixed(DesignBundle& d, std::vector<Vector>& cols, const std::string& name, Vector v) {
  d.x_names.push_back(name);
  cols.push_back(std::move(v));
}

}  // namespace

DesignBundle assemble(const std::vector<FunctionRecord>& recs, const ModelSpec& spec, const AssembleOptions& opt) {
  const std::size_t n = recs.size();
  if (n == 0) fail("empty_dataset", "no functions to assemble");
  DesignBundle d;
  std::vector<Vector> cols;
  auto open_term = [&](const std::string& label, bool random) {
    d.term_index.push_back({label, random, random ? static_cast<int>(d.blocks.size()) : static_cast<int>(cols.size()), 0});
  };
  auto close_term = [&](bool random) {
    TermRange& t = d.term_index.back();
    t.count = (random ? static_cast<int>(d.blocks.size()) : static_cast<int>(cols.size())) - t.first;
  };

  if (spec.include_intercept) {
    open_term("1", false);
    add_fixed(d, cols, "(Intercept)", Vector::Ones(n));
    close_term(false);
  }

  for (const FixedTerm& t : spec.fixed) {
    const std::string label = t.label();
    switch (t.kind) {
      case FixedTerm::Kind::linear: {
        open_term(label, false);
        const auto x = column_of(recs, t.covariate, opt.serial_variable);
        Vector v = Eigen::Map<const Vector>(x.data(), n);
        v.array() -= v.mean();
        add_fixed(d, cols, label, v);
        close_term(false);
        break;
      }
      case FixedTerm::Kind::serial: {
        open_term(label, false);
        const auto p = column_of(recs, t.covariate, opt.serial_variable);
        const SerialBasis g = make_serial_basis(t.serial_kind, p);
        const Matrix G = g.evaluate(p);
        const auto names = g.column_names();
        for (int c = 0; c < g.order(); ++c) {
          if (names[c] == "G0") continue;
          add_fixed(d, cols, label + "." + names[c], G.col(c));
        }
        close_term(false);
        break;
      }
      case FixedTerm::Kind::nonparametric:
      case FixedTerm::Kind::interaction: {
        const auto x = column_of(recs, t.covariate, opt.serial_variable);
        const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
        double lo = *mn, hi = *mx;
        if (auto it = opt.spline_range.find(t.covariate); it != opt.spline_range.end()) {
          lo = it->second.first;
          hi = it->second.second;
        }
        const SplineBasisDef def = SplineBasisDef::equally_spaced(lo, hi, t.knots);
        const DemmlerReinsch dr = demmler_reinsch(penalty_matrix(def), def);
        const Matrix B = bspline_design(x, def);
        const Vector xv = Eigen::Map<const Vector>(x.data(), n);
        const double center = xv.mean();
        // Left factors: ones for a plain term, covariate or serial columns for an interaction.
        std::vector<std::pair<std::string, Vector>> left;
        if (t.kind == FixedTerm::Kind::nonparametric) {
          left.push_back({"", Vector::Ones(n)});
        } else if (t.by_kind == FixedTerm::Kind::serial) {
          const auto p = column_of(recs, t.by, opt.serial_variable);
          const SerialBasis g = make_serial_basis(SerialKind::hyperbolic_no_intercept, p);
          const Matrix G = g.evaluate(p);
          const auto names = g.column_names();
          for (int c = 0; c < g.order(); ++c) left.push_back({"hyper(" + t.by + ")." + names[c] + ":", G.col(c)});
        } else {
          const auto a = column_of(recs, t.by, opt.serial_variable);
          left.push_back({"lin(" + t.by + "):", Eigen::Map<const Vector>(a.data(), n)});
        }
        const std::string np_label = "np(" + t.covariate + (t.knots != 5 ? "," + std::to_string(t.knots) : "") + ")";
        open_term(label, false);
        for (auto& [prefix, mult] : left) {
          NonparametricTerm term;
          term.label = prefix + np_label;
          term.covariate = t.covariate;
          term.def = def;
          term.dr = dr;
          term.center = center;
          term.multiplier = mult;
          term.basis = mult.asDiagonal() * B;
          term.x = xv;
          term.fixed_column = static_cast<int>(cols.size());
          add_fixed(d, cols, term.label + ".lin", mult.cwiseProduct((xv.array() - center).matrix()));
          d.np_terms.push_back(std::move(term));
        }
        close_term(false);
        break;
      }
    }
  }

  // Spline blocks first, then the declared random levels.
  for (std::size_t j = 0; j < d.np_terms.size(); ++j) {
    NonparametricTerm& term = d.np_terms[j];
    open_term(term.label, true);
    RandomBlock b;
    b.name = term.label;
    b.kind = RandomBlock::Kind::dense;
    b.dense = term.basis * term.dr.z_map;
    b.np_term = static_cast<int>(j);
    term.block = static_cast<int>(d.blocks.size());
    d.blocks.push_back(std::move(b));
    close_term(true);
  }
  for (const RandomTerm& r : spec.random) {
    open_term(r.label(), true);
    const auto keys = group_keys(recs, r.grouping);
    std::vector<int> group(n);
    std::vector<std::string> labels;
    std::map<std::string, int> seen;
    for (std::size_t i = 0; i < n; ++i) {
      auto [it, inserted] = seen.emplace(keys[i], static_cast<int>(labels.size()));
      if (inserted) labels.push_back(keys[i]);
      group[i] = it->second;
    }
    SerialBasis g;
    std::vector<double> p(n, 0.0);
    if (r.kind == SerialKind::constant) {
      g.kind = SerialKind::constant;
    } else {
      p = column_of(recs, r.variable, opt.serial_variable);
      g = make_serial_basis(r.kind, p);
    }
    const Matrix G = g.evaluate(p);
    const auto names = g.column_names();
    for (int c = 0; c < g.order(); ++c) {
      RandomBlock b;
      b.name = r.grouping + ":" + (r.kind == SerialKind::constant ? std::string("G0") : names[c]);
      b.kind = RandomBlock::Kind::grouped;
      b.group = group;
      b.value = G.col(c);
      b.n_groups = static_cast<int>(labels.size());
      b.group_labels = labels;
      if (d.block_index(b.name) >= 0) fail("duplicate_term", "random level '" + b.name + "' appears twice");
      d.blocks.push_back(std::move(b));
    }
    close_term(true);
  }

  d.X.resize(n, cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) d.X.col(j) = cols[j];
  return d;
}

}  // namespace sfmm
