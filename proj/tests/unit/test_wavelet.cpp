#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sfmm/wavelet.hpp"

using namespace sfmm;

TEST_CASE("daubechies filters are orthonormal with vanishing moments") {
  for (const char* name : {"haar", "db2", "db3", "db4"}) {
    const WaveletFilter f = wavelet_filter(name);
    const std::size_t F = f.size();
    double sum = 0.0;
    for (double c : f.lo) sum += c;
    CHECK(sum == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
    for (std::size_t shift = 0; shift < F; shift += 2) {
      double dot = 0.0;
      for (std::size_t j = 0; j + shift < F; ++j) dot += f.lo[j] * f.lo[j + shift];
      CHECK(std::abs(dot - (shift == 0 ? 1.0 : 0.0)) < 1e-14);
    }
    for (std::size_t p = 0; p < F / 2; ++p) {
      double moment = 0.0;
      for (std::size_t j = 0; j < F; ++j) moment += f.hi[j] * std::pow(static_cast<double>(j), p);
      CHECK(std::abs(moment) < 1e-10);
    }
  }
}

TEST_CASE("constant signal has zero details") {
  WaveletSpec spec;
  spec.levels = 2;
  const std::vector<double> x(16, 3.0);
  for (Boundary b : {Boundary::reflection, Boundary::periodic}) {
    const DwtLevels lv = dwt1d(x, spec, b);
    for (const Vector& d : lv.details) CHECK(d.cwiseAbs().maxCoeff() < 1e-12);
    for (double a : lv.approximation) CHECK(a == doctest::Approx(3.0 * 2.0).epsilon(1e-12));
  }
}

TEST_CASE("perfect reconstruction for both boundary modes") {
  Rng rng(11);
  for (const char* name : {"haar", "db2", "db3", "db4"})
    for (std::size_t n : {16, 17, 31, 64, 120, 121}) {
      WaveletSpec spec;
      spec.filter = name;
      spec.levels = 3;
      const Vector x = oracle::random_vector(n, rng);
      for (Boundary b : {Boundary::reflection, Boundary::periodic}) {
        const DwtLevels lv = dwt1d(std::span<const double>(x.data(), n), spec, b);
        const Vector back = idwt1d(lv, n, spec, b);
        CHECK((back - x).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
}

TEST_CASE("level sizes for 120 samples and five levels") {
  WaveletSpec spec;
  const Dwt1dPlan per(120, wavelet_filter("db3"), 5, Boundary::periodic);
  CHECK(per.scale_size(0) == 4);
  CHECK(per.scale_size(1) == 4);
  CHECK(per.scale_size(2) == 8);
  CHECK(per.scale_size(3) == 15);
  CHECK(per.scale_size(4) == 30);
  CHECK(per.scale_size(5) == 60);
  CHECK(per.output_size() == 121);
  const Dwt1dPlan sym(120, wavelet_filter("db3"), 5, Boundary::reflection);
  CHECK(sym.scale_size(5) == 62);
  CHECK(sym.scale_size(1) == 8);
  CHECK(sym.scale_size(0) == 8);
  CHECK(sym.output_size() == 142);
}

TEST_CASE("periodic transform matches the brute-force matrix form") {
  const WaveletFilter f = wavelet_filter("db3");
  for (std::size_t n : {120, 37, 16}) {
    const int levels = n == 16 ? 2 : 5;
    const Matrix A = oracle::periodic_analysis(n, f.lo, f.hi, levels);
    const Dwt1dPlan plan(n, f, levels, Boundary::periodic);
    CHECK(static_cast<std::size_t>(A.rows()) == plan.output_size());
    Rng rng(n);
    const Vector x = oracle::random_vector(n, rng);
    Vector c(plan.output_size());
    plan.forward(x.data(), c.data());
    CHECK((A * x - c).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("periodic transform preserves energy on even level lengths") {
  Rng rng(5);
  const Vector x = oracle::random_vector(64, rng);
  const Dwt1dPlan plan(64, wavelet_filter("db3"), 3, Boundary::periodic);
  Vector c(plan.output_size());
  plan.forward(x.data(), c.data());
  CHECK(std::abs(c.squaredNorm() - x.squaredNorm()) < 1e-8 * x.squaredNorm());
}

TEST_CASE("input validation") {
  WaveletSpec spec;
  const std::vector<double> shortx(5, 1.0);
  CHECK_THROWS_WITH_AS(dwt1d(shortx, spec, Boundary::periodic), doctest::Contains("signal_too_short"), Error);
  std::vector<double> bad(16, 1.0);
  bad[3] = std::nan("");
  CHECK_THROWS_AS(dwt1d(bad, spec, Boundary::reflection), Error);
  spec.levels = 9;
  CHECK_THROWS_WITH_AS(dwt1d(std::vector<double>(16, 1.0), spec, Boundary::periodic),
                       doctest::Contains("levels_infeasible"), Error);
}
