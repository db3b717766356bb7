#include "sfmm/wavelet.hpp"

#include <cmath>

namespace sfmm {

WaveletFilter wavelet_filter(const std::string& name) {
  WaveletFilter f;
  f.name = name;
  if (name == "haar" || name == "db1") {
    f.lo = {M_SQRT1_2, M_SQRT1_2};
  } else if (name == "db2") {
    f.lo = {-0.12940952255126038117, 0.22414386804201338103, 0.83651630373780790558, 0.48296291314453414337};
  } else if (name == "db3") {
    f.lo = {0.035226291885709536603, -0.085441273882026661693, -0.1350110200102545887,
            0.4598775021184915701,   0.80689150931109257649,   0.332670552950082616};
  } else if (name == "db4") {
    f.lo = {-0.010597401785069032105, 0.032883011666885199735, 0.030841381835560763627,
            -0.18703481171909308408,  -0.027983769416859854211, 0.63088076792985890788,
            0.71484657055291564709,   0.23037781330889650086};
  } else {
    fail("unknown_filter", "unsupported wavelet filter '" + name + "'");
  }
  const std::size_t F = f.lo.size();
  f.hi.resize(F);
  for (std::size_t j = 0; j < F; ++j) f.hi[j] = (j % 2 ? -1.0 : 1.0) * f.lo[F - 1 - j];
  return f;
}

namespace {

// Half-point symmetric extension: ... x1 x0 | x0 x1 ... x_{n-1} | x_{n-1} x_{n-2} ...
inline std::size_t reflect(long i, long n) {
  const long period = 2 * n;
  long r = i % period;
  if (r < 0) r += period;
  return static_cast<std::size_t>(r < n ? r : period - 1 - r);
}

inline std::size_t wrap(long i, long n) {
  long r = i % n;
  return static_cast<std::size_t>(r < 0 ? r + n : r);
}

}  // namespace

Dwt1dPlan::Dwt1dPlan(std::size_t n, const WaveletFilter& filter, int levels, Boundary boundary)
    : n_(n), levels_(levels), boundary_(boundary), lo_(filter.lo), hi_(filter.hi) {
  const std::size_t F = filter.size();
  if (levels < 1) fail("invalid_levels", "wavelet levels must be >= 1");
  if (n < F) fail("signal_too_short", "signal length " + std::to_string(n) + " shorter than filter length " + std::to_string(F));
  inputs_.push_back(n);
  for (int j = 1; j <= levels; ++j) {
    const std::size_t len = inputs_.back();
    if (len < 2) fail("levels_infeasible", std::to_string(levels) + " levels infeasible for length " + std::to_string(n));
    inputs_.push_back(boundary == Boundary::periodic ? (len + 1) / 2 : (len + F - 1) / 2);
  }
  offsets_.assign(levels + 1, 0);
  std::size_t off = inputs_[levels];  // approximation block
  for (int s = 1; s <= levels; ++s) {
    offsets_[s] = off;
    off += inputs_[levels - s + 1];
  }
  total_ = off;
}

std::size_t Dwt1dPlan::scale_size(int scale) const {
  return scale == 0 ? inputs_[levels_] : inputs_[levels_ - scale + 1];
}

int Dwt1dPlan::scale_of(std::size_t pos) const {
  int s = 0;
  for (int k = 1; k <= levels_; ++k)
    if (pos >= offsets_[k]) s = k;
  return s;
}

int Dwt1dPlan::location_of(std::size_t pos) const {
  return static_cast<int>(pos - offsets_[scale_of(pos)]);
}

void Dwt1dPlan::step_forward(const double* x, std::size_t n, double* a, double* d) const {
  const long F = static_cast<long>(lo_.size());
  if (boundary_ == Boundary::periodic) {
    const long np = static_cast<long>(n + (n % 2));
    const long m = np / 2;
    auto at = [&](long i) { const std::size_t w = wrap(i, np); return w < n ? x[w] : x[n - 1]; };
    for (long o = 0; o < m; ++o) {
      double sa = 0.0, sd = 0.0;
      for (long j = 0; j < F; ++j) {
        const double v = at(2 * o + 1 - j);
        sa += lo_[j] * v;
        sd += hi_[j] * v;
      }
      a[o] = sa;
      d[o] = sd;
    }
  } else {
    const long m = static_cast<long>((n + F - 1) / 2);
    const long ln = static_cast<long>(n);
    for (long o = 0; o < m; ++o) {
      double sa = 0.0, sd = 0.0;
      for (long j = 0; j < F; ++j) {
        const double v = x[reflect(2 * o + 1 - j, ln)];
        sa += lo_[j] * v;
        sd += hi_[j] * v;
      }
      a[o] = sa;
      d[o] = sd;
    }
  }
}

void Dwt1dPlan::step_inverse(const double* a, const double* d, std::size_t m, std::size_t n, double* x) const {
  const long F = static_cast<long>(lo_.size());
  if (boundary_ == Boundary::periodic) {
    // Transpose of the (orthogonal) periodized analysis operator.
    const long np = static_cast<long>(n + (n % 2));
    std::vector<double> y(np, 0.0);
    for (long o = 0; o < static_cast<long>(m); ++o)
      for (long j = 0; j < F; ++j) y[wrap(2 * o + 1 - j, np)] += lo_[j] * a[o] + hi_[j] * d[o];
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i];
  } else {
    // Synthesis with reversed filters, keeping the first n samples.
    const long lm = static_cast<long>(m);
    for (long i = 0; i < static_cast<long>(n); ++i) {
      const long base = i + F - 2;
      const long k_min = std::max(0L, (base - F + 2) / 2);
      const long k_max = std::min(lm - 1, base / 2);
      double s = 0.0;
      for (long k = k_min; k <= k_max; ++k) {
        const long idx = base - 2 * k;
        s += lo_[F - 1 - idx] * a[k] + hi_[F - 1 - idx] * d[k];
      }
      x[i] = s;
    }
  }
}

void Dwt1dPlan::forward(const double* in, double* out) const {
  std::vector<double> cur(in, in + n_);
  std::vector<double> next(inputs_[1]);
  for (int j = 1; j <= levels_; ++j) {
    const std::size_t len = inputs_[j - 1];
    const std::size_t m = inputs_[j];
    next.resize(m);
    // detail of level j goes to scale label L - j + 1
    double* d = out + offsets_[levels_ - j + 1];
    step_forward(cur.data(), len, next.data(), d);
    std::copy(next.begin(), next.end(), cur.begin());
  }
  std::copy(cur.begin(), cur.begin() + inputs_[levels_], out);
}

void Dwt1dPlan::inverse(const double* in, double* out) const {
  std::vector<double> cur(in, in + inputs_[levels_]);
  std::vector<double> next;
  for (int j = levels_; j >= 1; --j) {
    const std::size_t m = inputs_[j];
    const std::size_t len = inputs_[j - 1];
    next.assign(len, 0.0);
    step_inverse(cur.data(), in + offsets_[levels_ - j + 1], m, len, next.data());
    cur.swap(next);
  }
  std::copy(cur.begin(), cur.end(), out);
}

DwtLevels dwt1d(std::span<const double> signal, const WaveletSpec& spec, Boundary boundary) {
  for (double v : signal)
    if (!std::isfinite(v)) fail("non_finite_input", "signal contains non-finite values");
  const Dwt1dPlan plan(signal.size(), wavelet_filter(spec.filter), spec.levels, boundary);
  std::vector<double> flat(plan.output_size());
  plan.forward(signal.data(), flat.data());
  DwtLevels out;
  out.approximation = Eigen::Map<Vector>(flat.data(), plan.scale_size(0));
  for (int s = 1; s <= spec.levels; ++s)
    out.details.push_back(Eigen::Map<Vector>(flat.data() + plan.scale_offset(s), plan.scale_size(s)));
  return out;
}

Vector idwt1d(const DwtLevels& levels, std::size_t n, const WaveletSpec& spec, Boundary boundary) {
  const Dwt1dPlan plan(n, wavelet_filter(spec.filter), spec.levels, boundary);
  std::vector<double> flat(plan.output_size());
  if (static_cast<std::size_t>(levels.approximation.size()) != plan.scale_size(0) ||
      static_cast<int>(levels.details.size()) != spec.levels)
    fail("dimension_mismatch", "coefficient layout does not match signal length");
  std::copy(levels.approximation.begin(), levels.approximation.end(), flat.begin());
  for (int s = 1; s <= spec.levels; ++s) {
    const Vector& d = levels.details[s - 1];
    if (static_cast<std::size_t>(d.size()) != plan.scale_size(s))
      fail("dimension_mismatch", "detail level size mismatch");
    std::copy(d.begin(), d.end(), flat.begin() + plan.scale_offset(s));
  }
  Vector out(n);
  plan.inverse(flat.data(), out.data());
  return out;
}

}  // namespace sfmm
