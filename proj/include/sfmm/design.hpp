#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfmm/dataset.hpp"
#include "sfmm/splinekit.hpp"

namespace sfmm {

enum class SerialKind { constant, linear, hyperbolic_no_intercept, hyperbolic };

// Parametric basis over a serial variable. Standardization constants come
// from the pooled distinct levels so G can be evaluated anywhere.
struct SerialBasis {
  SerialKind kind = SerialKind::constant;
  std::vector<double> levels;
  double p_mean = 0.0, p_norm = 1.0;
  double ip_mean = 0.0, ip_norm = 1.0;

  int order() const;  // number of columns
  std::vector<std::string> column_names() const;
  double value(int column, double p) const;
  Matrix evaluate(std::span<const double> p) const;
};

SerialBasis make_serial_basis(SerialKind kind, std::span<const double> p);
SerialBasis hyperbolic_basis(std::span<const double> p_levels);
double serial_covariance(const SerialBasis& g, std::span<const double> q, double p, double p_prime);

// ---- model specification ----

struct FixedTerm {
  enum class Kind { linear, serial, nonparametric, interaction };
  Kind kind = Kind::linear;
  std::string covariate;                         // linear / nonparametric covariate, serial variable
  SerialKind serial_kind = SerialKind::hyperbolic_no_intercept;
  int knots = 5;                                 // nonparametric
  std::optional<FixedTerm::Kind> by_kind;        // interaction: linear or serial left factor
  std::string by;                                // interaction left covariate
  std::string label() const;
  bool operator==(const FixedTerm&) const = default;
};

struct RandomTerm {
  std::string grouping;  // subject, eye/unit, or a covariate name
  SerialKind kind = SerialKind::constant;
  std::string variable;  // serial variable for non-constant kinds
  std::string label() const;
  bool operator==(const RandomTerm&) const = default;
};

struct ModelSpec {
  std::string response = "value";
  bool include_intercept = true;
  std::vector<FixedTerm> fixed;
  std::vector<RandomTerm> random;

  std::string to_string() const;
  std::size_t n_nonparametric() const;
  bool operator==(const ModelSpec&) const = default;
};

// Grammar (whitespace-insensitive):
//   formula := [IDENT] '~' term ('+' term)*
//   term    := '1' | '0' | '-1' | '(' rterm '|' IDENT ')' | atom [':' atom]
//   atom    := IDENT | 'lin(' IDENT ')' | 'hyper(' IDENT ')' | 'np(' IDENT [',' INT] ')'
//   rterm   := '1' | ['0' '+' | '1' '+'] ('lin(' IDENT ')' | 'hyper(' IDENT ')' | IDENT)
ModelSpec parse_formula(const std::string& text);

// Fixed part of one spec combined with the random part of another.
ModelSpec combine(const ModelSpec& fixed_part, const ModelSpec& random_part);

// ---- assembled design ----

struct RandomBlock {
  enum class Kind { grouped, dense };
  std::string name;
  Kind kind = Kind::grouped;
  std::vector<int> group;  // grouped: group of each row
  Vector value;            // grouped: design value of each row
  int n_groups = 0;
  std::vector<std::string> group_labels;
  Matrix dense;            // dense: N x m
  int np_term = -1;        // index into DesignBundle::np_terms for spline blocks

  Index columns() const { return kind == Kind::grouped ? n_groups : dense.cols(); }
  Matrix to_dense(std::size_t n) const;
};

struct NonparametricTerm {
  std::string label;
  std::string covariate;
  SplineBasisDef def;
  DemmlerReinsch dr;
  double center = 0.0;
  int fixed_column = -1;
  int block = -1;
  Vector multiplier;  // per row; ones unless an interaction
  Matrix basis;       // N x (M+4): multiplier .* B(x)
  Vector x;           // raw covariate per row
};

struct TermRange {
  std::string term;
  bool random = false;
  int first = 0;
  int count = 0;
};

struct DesignBundle {
  Matrix X;
  std::vector<std::string> x_names;
  std::vector<RandomBlock> blocks;
  std::vector<NonparametricTerm> np_terms;
  std::vector<TermRange> term_index;
  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
  int fixed_column(const std::string& name) const;
  int block_index(const std::string& name) const;
};

struct AssembleOptions {
  std::string serial_variable = "iop";
  // Optional spline boundaries per covariate; the observed range is used otherwise.
  std::map<std::string, std::pair<double, double>> spline_range;
};

DesignBundle assemble(const std::vector<FunctionRecord>& records, const ModelSpec& spec,
                      const AssembleOptions& options = {});

// Covariate value of a record (serial variable name maps to the serial level).
double covariate_value(const FunctionRecord& r, const std::string& name, const std::string& serial_variable);

}  // namespace sfmm
