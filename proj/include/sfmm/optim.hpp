#pragma once

#include <functional>

#include "sfmm/common.hpp"

namespace sfmm {

using Objective = std::function<double(const Vector&)>;

struct OptimResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Minimizers. Non-finite objective values are treated as +infinity.
OptimResult nelder_mead(const Objective& f, const Vector& x0, double step, double rel_tol, int max_iter);
OptimResult bfgs(const Objective& f, const Vector& x0, double grad_tol, int max_iter, double fd_step = 1e-5);
Vector numeric_gradient(const Objective& f, const Vector& x, double h);

// Minimum of a unimodal function on [a, b] (Brent's method).
std::pair<double, double> minimize_scalar(const std::function<double(double)>& f, double a, double b, int bits = 40);

}  // namespace sfmm
