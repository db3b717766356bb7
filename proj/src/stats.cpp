#include "sfmm/stats.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <numeric>

#include "sfmm/common.hpp"

namespace sfmm {

double normal_cdf(double x) { return 0.5 * boost::math::erfc(-x / std::sqrt(2.0)); }

double normal_log_cdf(double x) {
  if (x > -5.0) return std::log(normal_cdf(x));
  // Asymptotic expansion of the Mills ratio for the far left tail.
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * M_PI) + std::log(series);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) fail("invalid_probability", "quantile probability outside (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double truncated_normal_positive(Rng& rng, double mean, double sd) {
  const double alpha = -mean / sd;
  if (alpha < 0.5) {
    for (;;) {
      const double x = rng.normal(mean, sd);
      if (x > 0.0) return x;
    }
  }
  // Robert (1995) exponential rejection for a far tail.
  const double lambda = 0.5 * (alpha + std::sqrt(alpha * alpha + 4.0));
  for (;;) {
    const double z = alpha - std::log(rng.uniform()) / lambda;
    if (rng.uniform() <= std::exp(-0.5 * (z - lambda) * (z - lambda))) return mean + sd * z;
  }
}

double quantile(std::span<const double> values, double prob) {
  if (values.empty()) fail("empty_input", "quantile of an empty sample");
  std::vector<double> v(values.begin(), values.end());
  const double h = (v.size() - 1) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + lo, v.end());
  const double a = v[lo];
  if (hi == lo) return a;
  const double b = *std::min_element(v.begin() + lo + 1, v.end());
  return a + (h - lo) * (b - a);
}

double mean(std::span<const double> values) {
  return std::accumulate(values.begin(), values.end(), 0.0) / values.size();
}

double variance(std::span<const double> values) {
  const double m = mean(values);
  double s = 0.0;
  for (double x : values) s += (x - m) * (x - m);
  return s / (values.size() - 1);
}

double median(std::vector<double> values) { return quantile(values, 0.5); }

double kolmogorov_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += (j % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

}  // namespace sfmm
