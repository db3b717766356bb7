#pragma once

#include <span>

#include "sfmm/common.hpp"

namespace sfmm {

// Spectral density at frequency zero from an AR(p) fit (Yule-Walker, order by AIC).
double spectrum0_ar(std::span<const double> x);

struct GewekeResult {
  double z = 0.0;
  double p = 1.0;
  bool constant = false;
};

// Compares the mean of the first `first` fraction of the chain with the last `last` fraction.
GewekeResult geweke(std::span<const double> chain, double first = 0.25, double last = 0.25);

struct EssResult {
  double ess = 0.0;
  bool constant = false;
};

// Initial positive sequence estimator: autocorrelation pairs summed up to the
// first nonpositive pair, made monotone.
EssResult effective_sample_size(std::span<const double> chain);

}  // namespace sfmm
