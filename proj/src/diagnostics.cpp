#include "sfmm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sfmm/stats.hpp"

namespace sfmm {

namespace {

std::vector<double> autocovariance(std::span<const double> x, std::size_t max_lag) {
  const std::size_t n = x.size();
  const double m = mean(x);
  std::vector<double> acov(max_lag + 1, 0.0);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - m) * (x[i + lag] - m);
    acov[lag] = s / static_cast<double>(n);
  }
  return acov;
}

bool is_constant(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
}

}  // namespace

double spectrum0_ar(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4) fail("chain_too_short", "spectral density needs at least 4 draws");
  const std::size_t max_order =
      std::min<std::size_t>(n - 2, static_cast<std::size_t>(std::floor(10.0 * std::log10(static_cast<double>(n)))));
  const std::vector<double> acov = autocovariance(x, max_order);
  if (!(acov[0] > 0.0)) return 0.0;
  // Levinson-Durbin recursion over increasing orders.
  std::vector<double> phi, prev;
  double sigma2 = acov[0];
  double best_aic = static_cast<double>(n) * std::log(sigma2);
  double best_s0 = sigma2;
  for (std::size_t p = 1; p <= max_order; ++p) {
    double num = acov[p];
    for (std::size_t j = 0; j + 1 < p; ++j) num -= phi[j] * acov[p - 1 - j];
    const double kappa = num / sigma2;
    prev = phi;
    phi.assign(p, 0.0);
    for (std::size_t j = 0; j + 1 < p; ++j) phi[j] = prev[j] - kappa * prev[p - 2 - j];
    phi[p - 1] = kappa;
    sigma2 *= (1.0 - kappa * kappa);
    if (!(sigma2 > 0.0)) break;
    const double aic = static_cast<double>(n) * std::log(sigma2) + 2.0 * static_cast<double>(p);
    if (aic < best_aic) {
      best_aic = aic;
      double sum = 1.0;
      for (double f : phi) sum -= f;
      best_s0 = sigma2 / (sum * sum);
    }
  }
  return best_s0;
}

GewekeResult geweke(std::span<const double> chain, double first, double last) {
  if (chain.size() < 20) fail("chain_too_short", "Geweke diagnostic needs at least 20 draws");
  if (!(first > 0.0 && last > 0.0 && first + last <= 1.0)) fail("invalid_window", "window fractions out of range");
  const std::size_t n = chain.size();
  const std::size_t na = static_cast<std::size_t>(std::floor(first * n));
  const std::size_t nb = static_cast<std::size_t>(std::floor(last * n));
  const auto a = chain.subspan(0, na);
  const auto b = chain.subspan(n - nb, nb);
  GewekeResult r;
  const double va = spectrum0_ar(a) / static_cast<double>(na);
  const double vb = spectrum0_ar(b) / static_cast<double>(nb);
  if (!(va + vb > 0.0)) {
    r.constant = true;
    r.z = 0.0;
    r.p = mean(a) == mean(b) ? 1.0 : 0.0;
    return r;
  }
  r.z = (mean(a) - mean(b)) / std::sqrt(va + vb);
  r.p = 2.0 * normal_cdf(-std::abs(r.z));
  return r;
}

EssResult effective_sample_size(std::span<const double> chain) {
  const std::size_t n = chain.size();
  EssResult r;
  if (n < 4) fail("chain_too_short", "ESS needs at least 4 draws");
  if (is_constant(chain)) {
    r.ess = static_cast<double>(n);
    r.constant = true;
    return r;
  }
  const std::vector<double> acov = autocovariance(chain, n - 1);
  double tau = -1.0;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = (acov[2 * m] + acov[2 * m + 1]) / acov[0];
    if (!(pair > 0.0)) break;
    pair = std::min(pair, previous);
    previous = pair;
    tau += 2.0 * pair;
  }
  r.ess = static_cast<double>(n) / tau;
  return r;
}

}  // namespace sfmm
