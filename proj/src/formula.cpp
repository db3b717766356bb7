#include <cctype>
#include <set>

#include "sfmm/design.hpp"

namespace sfmm {

std::string FixedTerm::label() const {
  switch (kind) {
    case Kind::linear: return "lin(" + covariate + ")";
    case Kind::serial: return "hyper(" + covariate + ")";
    case Kind::nonparametric: return "np(" + covariate + (knots != 5 ? "," + std::to_string(knots) : "") + ")";
    case Kind::interaction: {
      const std::string left = by_kind == Kind::serial ? "hyper(" + by + ")" : "lin(" + by + ")";
      return left + ":np(" + covariate + (knots != 5 ? "," + std::to_string(knots) : "") + ")";
    }
  }
  return {};
}

std::string RandomTerm::label() const {
  switch (kind) {
    case SerialKind::constant: return "(1|" + grouping + ")";
    case SerialKind::linear: return "(lin(" + variable + ")|" + grouping + ")";
    case SerialKind::hyperbolic: return "(hyper(" + variable + ")|" + grouping + ")";
    case SerialKind::hyperbolic_no_intercept: return "(0+hyper(" + variable + ")|" + grouping + ")";
  }
  return {};
}

std::string ModelSpec::to_string() const {
  std::string s = response + " ~ " + (include_intercept ? "1" : "0");
  for (const auto& t : fixed) s += " + " + t.label();
  for (const auto& r : random) s += " + " + r.label();
  return s;
}

std::size_t ModelSpec::n_nonparametric() const {
  std::size_t n = 0;
  for (const auto& t : fixed)
    if (t.kind == FixedTerm::Kind::nonparametric || t.kind == FixedTerm::Kind::interaction) ++n;
  return n;
}

ModelSpec combine(const ModelSpec& fixed_part, const ModelSpec& random_part) {
  ModelSpec m = fixed_part;
  m.random = random_part.random;
  return m;
}

namespace {

struct Token {
  enum Kind { ident, number, symbol, end } kind;
  std::string text;
  std::size_t pos;
};

class Parser {
 public:
  explicit Parser(const std::string& text) : text_(text) { tokenize(); }

  ModelSpec parse() {
    ModelSpec m;
    if (peek().kind == Token::ident && peek(1).text == "~") m.response = take().text;
    expect("~");
    parse_term(m);
    while (peek().text == "+") {
      take();
      parse_term(m);
    }
    if (peek().kind != Token::end) error("unexpected token", peek());
    std::set<std::string> seen;
    std::set<std::string> linear_vars;
    for (const auto& t : m.fixed) {
      if (!seen.insert(t.label()).second) error_at("duplicate term '" + t.label() + "'", 0);
      if (t.kind == FixedTerm::Kind::linear || t.kind == FixedTerm::Kind::nonparametric)
        if (!linear_vars.insert(t.covariate).second)
          error_at("covariate '" + t.covariate + "' enters both linearly and nonparametrically", 0);
    }
    for (const auto& r : m.random)
      if (!seen.insert(r.label()).second) error_at("duplicate term '" + r.label() + "'", 0);
    return m;
  }

 private:
  std::string text_;
  std::vector<Token> toks_;
  std::size_t at_ = 0;

  void tokenize() {
    std::size_t i = 0;
    while (i < text_.size()) {
      const char c = text_[i];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::size_t j = i;
        while (j < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[j])) || text_[j] == '_' || text_[j] == '.')) ++j;
        toks_.push_back({Token::ident, text_.substr(i, j - i), i});
        i = j;
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        std::size_t j = i;
        while (j < text_.size() && std::isdigit(static_cast<unsigned char>(text_[j]))) ++j;
        toks_.push_back({Token::number, text_.substr(i, j - i), i});
        i = j;
      } else if (std::string("~+-()|,:").find(c) != std::string::npos) {
        toks_.push_back({Token::symbol, std::string(1, c), i});
        ++i;
      } else {
        error_at(std::string("invalid character '") + c + "'", i);
      }
    }
    toks_.push_back({Token::end, "<end>", text_.size()});
  }

  const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(at_ + ahead, toks_.size() - 1)]; }
  Token take() { return toks_[std::min(at_++, toks_.size() - 1)]; }

  [[noreturn]] void error_at(const std::string& what, std::size_t pos) const {
    fail("formula_syntax", what + " at position " + std::to_string(pos) + " in '" + text_ + "'");
  }
  [[noreturn]] void error(const std::string& what, const Token& t) const {
    error_at(what + " '" + t.text + "'", t.pos);
  }

  void expect(const std::string& s) {
    if (peek().text != s) error("expected '" + s + "' but found", peek());
    take();
  }

  std::string ident() {
    if (peek().kind != Token::ident) error("expected a name but found", peek());
    return take().text;
  }

  struct Atom {
    std::string fn;  // "", lin, hyper, np
    std::string var;
    int knots = 5;
  };

  Atom atom() {
    Atom a;
    const Token t = peek();
    if (t.kind != Token::ident) error("expected a term but found", t);
    if (peek(1).text == "(" && (t.text == "lin" || t.text == "hyper" || t.text == "np")) {
      a.fn = take().text;
      expect("(");
      a.var = ident();
      if (a.fn == "np" && peek().text == ",") {
        take();
        if (peek().kind != Token::number) error("expected a knot count but found", peek());
        a.knots = std::stoi(take().text);
        if (a.knots < 1) error_at("knot count must be positive", t.pos);
      }
      expect(")");
    } else if (peek(1).text == "(") {
      error("unknown function", t);
    } else {
      a.var = take().text;
    }
    return a;
  }

  void parse_term(ModelSpec& m) {
    const Token t = peek();
    if (t.kind == Token::number) {
      take();
      if (t.text == "1") m.include_intercept = true;
      else if (t.text == "0") m.include_intercept = false;
      else error("expected 0 or 1 but found", t);
      return;
    }
    if (t.text == "-") {
      take();
      if (peek().text != "1") error("only '-1' may follow '-', found", peek());
      take();
      m.include_intercept = false;
      return;
    }
    if (t.text == "(") {
      m.random.push_back(random_term());
      return;
    }
    const Atom a = atom();
    if (peek().text == ":") {
      take();
      const Token rt = peek();
      const Atom b = atom();
      if (b.fn != "np") error("right side of ':' must be np(...), found", rt);
      if (a.fn == "np") error("left side of ':' must be linear or hyper(...), found", t);
      FixedTerm f;
      f.kind = FixedTerm::Kind::interaction;
      f.covariate = b.var;
      f.knots = b.knots;
      f.by = a.var;
      f.by_kind = a.fn == "hyper" ? FixedTerm::Kind::serial : FixedTerm::Kind::linear;
      m.fixed.push_back(f);
      return;
    }
    FixedTerm f;
    f.covariate = a.var;
    if (a.fn == "np") {
      f.kind = FixedTerm::Kind::nonparametric;
      f.knots = a.knots;
    } else if (a.fn == "hyper") {
      f.kind = FixedTerm::Kind::serial;
      f.serial_kind = SerialKind::hyperbolic_no_intercept;
    } else {
      f.kind = FixedTerm::Kind::linear;
    }
    m.fixed.push_back(f);
  }

  RandomTerm random_term() {
    expect("(");
    RandomTerm r;
    bool intercept = true;
    bool has_serial = false;
    std::string fn;
    if (peek().kind == Token::number) {
      const Token n = take();
      if (n.text == "0") intercept = false;
      else if (n.text != "1") error("expected 0 or 1 but found", n);
      if (peek().text == "+") {
        take();
        has_serial = true;
      } else if (!intercept) {
        error("random term with no columns near", n);
      }
    } else {
      has_serial = true;
    }
    if (has_serial) {
      const Token st = peek();
      const Atom a = atom();
      if (a.fn == "np") error("np(...) cannot be a random slope, found", st);
      r.variable = a.var;
      if (a.fn == "hyper") r.kind = intercept ? SerialKind::hyperbolic : SerialKind::hyperbolic_no_intercept;
      else if (intercept) r.kind = SerialKind::linear;
      else error("random linear slope without intercept is not supported near", st);
    }
    expect("|");
    r.grouping = ident();
    expect(")");
    return r;
  }
};

}  // namespace

ModelSpec parse_formula(const std::string& text) { return Parser(text).parse(); }

}  // namespace sfmm
