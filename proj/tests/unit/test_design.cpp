#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sfmm/design.hpp"
#include "sfmm/simulate.hpp"

using namespace sfmm;

namespace {
const std::vector<double> kIop = {7, 10, 15, 20, 25, 30, 35, 40, 45};
}

TEST_CASE("hyperbolic serial basis is centered and orthogonal") {
  const SerialBasis g = hyperbolic_basis(kIop);
  const Matrix G = g.evaluate(kIop);
  CHECK(std::abs(G.col(0).dot(G.col(1))) < 1e-12);
  CHECK(std::abs(G.col(0).sum()) < 1e-12);
  CHECK(std::abs(G.col(1).sum()) < 1e-12);
  // noiseless hyperbola regressed on {1, G1, G2} leaves no residual
  Vector y(9);
  for (int i = 0; i < 9; ++i) y[i] = 0.3 - 0.01 * kIop[i] + 2.5 / kIop[i];
  Matrix X(9, 3);
  X << Vector::Ones(9), G;
  const Vector beta = X.colPivHouseholderQr().solve(y);
  CHECK((X * beta - y).cwiseAbs().maxCoeff() < 1e-12);
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> p(6);
    for (auto& v : p) v = 0.5 + 50.0 * rng.uniform();
    const Matrix H = hyperbolic_basis(p).evaluate(p);
    CHECK(std::abs(H.col(0).dot(H.col(1))) < 1e-10);
  }
  const std::vector<double> neg = {-1, 2, 3};
  CHECK_THROWS_WITH_AS(hyperbolic_basis(neg), doctest::Contains("nonpositive_serial"), Error);
  const std::vector<double> two = {1, 2, 2};
  CHECK_THROWS_WITH_AS(hyperbolic_basis(two), doctest::Contains("too_few_levels"), Error);
}

TEST_CASE("serial covariance") {
  const SerialBasis g = make_serial_basis(SerialKind::hyperbolic, kIop);
  const std::vector<double> cs = {1.0, 0.0, 0.0};
  const std::vector<double> zero = {0.0, 0.0, 0.0};
  for (double p : kIop)
    for (double pp : kIop) {
      CHECK(serial_covariance(g, cs, p, pp) == 1.0);
      CHECK(serial_covariance(g, zero, p, pp) == 0.0);
    }
  const std::vector<double> q = {0.5, 0.2, 0.1};
  Rng rng(7);
  const int draws = 200000;
  Matrix acc = Matrix::Zero(9, 9);
  const Matrix G = g.evaluate(kIop);
  for (int n = 0; n < draws; ++n) {
    Vector u(3);
    for (int d = 0; d < 3; ++d) u[d] = std::sqrt(q[d]) * rng.normal();
    const Vector y = G * u;
    acc += y * y.transpose();
  }
  acc /= draws;
  for (int a = 0; a < 9; ++a)
    for (int b = 0; b < 9; ++b) {
      const double exact = serial_covariance(g, q, kIop[a], kIop[b]);
      CHECK(exact == doctest::Approx(serial_covariance(g, q, kIop[b], kIop[a])));
      CHECK(std::abs(acc(a, b) - exact) < 0.02 * std::abs(exact) + 0.02 * 0.5 * 0.1);
    }
  const std::vector<double> negq = {0.5, -0.2, 0.1};
  CHECK_THROWS_AS(serial_covariance(g, negq, 7, 10), Error);
}

TEST_CASE("formula parsing") {
  const ModelSpec m = parse_formula("value ~ np(age) + hyper(iop) + (hyper(iop) | eye)");
  CHECK(m.include_intercept);
  REQUIRE(m.fixed.size() == 2);
  CHECK(m.fixed[0].kind == FixedTerm::Kind::nonparametric);
  CHECK(m.fixed[1].kind == FixedTerm::Kind::serial);
  REQUIRE(m.random.size() == 1);
  CHECK(m.random[0].kind == SerialKind::hyperbolic);
  CHECK(m.random[0].grouping == "eye");
  CHECK(parse_formula(m.to_string()) == m);
  const ModelSpec r = parse_formula("~ 0 + lin(age):np(x, 7) + (0 + hyper(iop)|eye) + (1|subject)");
  CHECK_FALSE(r.include_intercept);
  CHECK(r.fixed[0].kind == FixedTerm::Kind::interaction);
  CHECK(r.fixed[0].knots == 7);
  CHECK(r.random[0].kind == SerialKind::hyperbolic_no_intercept);
  CHECK(r.random[1].kind == SerialKind::constant);
  CHECK(parse_formula(r.to_string()) == r);
  CHECK(parse_formula("y ~ 1").fixed.empty());
  CHECK_THROWS_WITH_AS(parse_formula("y ~ np(age) + "), doctest::Contains("position 14"), Error);
  CHECK_THROWS_WITH_AS(parse_formula("y ~ foo(age)"), doctest::Contains("unknown function 'foo'"), Error);
  CHECK_THROWS_WITH_AS(parse_formula("y ~ age + age"), doctest::Contains("duplicate"), Error);
  CHECK_THROWS_WITH_AS(parse_formula("y ~ age + np(age)"), doctest::Contains("both linearly"), Error);
  CHECK_THROWS_WITH_AS(parse_formula("y ~ age $"), doctest::Contains("invalid character"), Error);
}

TEST_CASE("assembly for the glaucoma layout") {
  const auto recs = study_records(StudyLayout{});
  CHECK(recs.size() == 306);
  const ModelSpec m = parse_formula("value ~ hyper(iop) + np(age) + (hyper(iop)|eye)");
  const DesignBundle d = assemble(recs, m);
  CHECK(d.rows() == 306);
  CHECK(d.x_names == std::vector<std::string>{"(Intercept)", "hyper(iop).G1", "hyper(iop).G2", "np(age).lin"});
  REQUIRE(d.blocks.size() == 4);
  CHECK(d.blocks[0].name == "np(age)");
  CHECK(d.blocks[0].columns() == 7);
  CHECK(d.blocks[1].name == "eye:G0");
  CHECK(d.blocks[1].n_groups == 34);
  CHECK(d.blocks[3].name == "eye:G2");
  CHECK(std::abs(d.X.col(3).sum()) < 1e-9);
  // rows of one eye share a group, each with 9 serial levels
  for (int g = 0; g < 34; ++g)
    CHECK(std::count(d.blocks[1].group.begin(), d.blocks[1].group.end(), g) == 9);
  const DesignBundle again = assemble(recs, m);
  CHECK(again.X == d.X);
  CHECK(again.blocks[0].dense == d.blocks[0].dense);

  const DesignBundle icpt = assemble(recs, parse_formula("value ~ 1"));
  CHECK(icpt.X.cols() == 1);
  CHECK((icpt.X.array() == 1.0).all());
  CHECK(icpt.blocks.empty());

  const DesignBundle inter = assemble(recs, parse_formula("value ~ lin(iop):np(age)"));
  const NonparametricTerm& t = inter.np_terms[0];
  const Matrix plain = bspline_design(std::span<const double>(t.x.data(), t.x.size()), t.def) * t.dr.z_map;
  for (std::size_t i = 0; i < recs.size(); ++i)
    for (Index c = 0; c < plain.cols(); ++c)
      CHECK(std::abs(inter.blocks[0].dense(i, c) - recs[i].serial_level * plain(i, c)) < 1e-12);
  CHECK_THROWS_WITH_AS(assemble(recs, parse_formula("value ~ np(bmi)")), doctest::Contains("missing_covariate"), Error);
  CHECK_THROWS_WITH_AS(assemble(recs, parse_formula("value ~ (1|clinic)")), doctest::Contains("unknown_grouping"), Error);
}
