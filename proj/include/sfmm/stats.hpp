#pragma once

#include <span>
#include <vector>

#include "sfmm/rng.hpp"

namespace sfmm {

double normal_cdf(double x);
double normal_log_cdf(double x);
double normal_quantile(double p);

// Draw from N(mean, sd^2) truncated to (0, inf).
double truncated_normal_positive(Rng& rng, double mean, double sd);

// Type-7 (linear interpolation) empirical quantile; `values` is copied.
double quantile(std::span<const double> values, double prob);
double mean(std::span<const double> values);
double variance(std::span<const double> values);
double median(std::vector<double> values);

// Asymptotic Kolmogorov-Smirnov p-value for a one-sample test against `cdf`.
template <class Cdf>
double ks_test(std::vector<double> sample, Cdf cdf);
double kolmogorov_pvalue(double d, std::size_t n);

// Adaptive Simpson quadrature to absolute tolerance `tol`.
template <class F>
double integrate(F f, double a, double b, double tol = 1e-12);

}  // namespace sfmm

#include "sfmm/stats_impl.hpp"
