#include "sfmm/optim.hpp"

#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <limits>
#include <numeric>

namespace sfmm {

namespace {
double safe(const Objective& f, const Vector& x) {
  const double v = f(x);
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}
}  // namespace

OptimResult nelder_mead(const Objective& f, const Vector& x0, double step, double rel_tol, int max_iter) {
  const Index n = x0.size();
  std::vector<Vector> simplex(n + 1, x0);
  std::vector<double> fv(n + 1);
  for (Index i = 0; i < n; ++i) simplex[i + 1][i] += step;
  for (Index i = 0; i <= n; ++i) fv[i] = safe(f, simplex[i]);
  std::vector<Index> order(n + 1);
  OptimResult res;
  int it = 0;
  for (; it < max_iter; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Index a, Index b) { return fv[a] < fv[b]; });
    const double best = fv[order[0]], worst = fv[order[n]];
    if (std::isfinite(worst) && std::abs(worst - best) <= rel_tol * (std::abs(best) + rel_tol)) {
      double spread = 0.0;
      for (Index i = 1; i <= n; ++i) spread = std::max(spread, (simplex[order[i]] - simplex[order[0]]).cwiseAbs().maxCoeff());
      if (spread < 1e-6) {
        res.converged = true;
        break;
      }
    }
    Vector centroid = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) centroid += simplex[order[i]];
    centroid /= static_cast<double>(n);
    const Index w = order[n];
    const Vector xr = centroid + (centroid - simplex[w]);
    const double fr = safe(f, xr);
    if (fr < fv[order[0]]) {
      const Vector xe = centroid + 2.0 * (centroid - simplex[w]);
      const double fe = safe(f, xe);
      if (fe < fr) {
        simplex[w] = xe;
        fv[w] = fe;
      } else {
        simplex[w] = xr;
        fv[w] = fr;
      }
    } else if (fr < fv[order[n - 1]]) {
      simplex[w] = xr;
      fv[w] = fr;
    } else {
      const bool outside = fr < fv[w];
      const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid)) : Vector(centroid + 0.5 * (simplex[w] - centroid));
      const double fc = safe(f, xc);
      if (fc < (outside ? fr : fv[w])) {
        simplex[w] = xc;
        fv[w] = fc;
      } else {
        for (Index i = 1; i <= n; ++i) {
          const Index k = order[i];
          simplex[k] = simplex[order[0]] + 0.5 * (simplex[k] - simplex[order[0]]);
          fv[k] = safe(f, simplex[k]);
        }
      }
    }
  }
  const Index b = std::min_element(fv.begin(), fv.end()) - fv.begin();
  res.x = simplex[b];
  res.value = fv[b];
  res.iterations = it;
  return res;
}

Vector numeric_gradient(const Objective& f, const Vector& x, double h) {
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (safe(f, xp) - safe(f, xm)) / (2.0 * h);
    xp[i] = xm[i] = x[i];
  }
  return g;
}

OptimResult bfgs(const Objective& f, const Vector& x0, double grad_tol, int max_iter, double fd_step) {
  const Index n = x0.size();
  OptimResult res;
  Vector x = x0;
  double fx = safe(f, x);
  Vector g = numeric_gradient(f, x, fd_step);
  Matrix H = Matrix::Identity(n, n);
  int it = 0;
  for (; it < max_iter; ++it) {
    if (!g.allFinite()) break;
    if (g.norm() < grad_tol) {
      res.converged = true;
      break;
    }
    Vector d = -H * g;
    if (d.dot(g) >= 0.0) {
      H.setIdentity();
      d = -g;
    }
    double t = 1.0;
    const double max_step = 5.0;
    if (d.norm() > max_step) t = max_step / d.norm();
    double fn = fx;
    Vector xn = x;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      xn = x + t * d;
      fn = safe(f, xn);
      if (fn <= fx + 1e-4 * t * g.dot(d)) {
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) {
      res.converged = g.norm() < 10.0 * grad_tol;
      break;
    }
    const Vector gn = numeric_gradient(f, xn, fd_step);
    const Vector s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Matrix I = Matrix::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    const double change = std::abs(fx - fn);
    x = xn;
    fx = fn;
    g = gn;
    if (change <= 1e-14 * (std::abs(fx) + 1e-14) && g.norm() < 100.0 * grad_tol) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.value = fx;
  res.iterations = it;
  return res;
}

std::pair<double, double> minimize_scalar(const std::function<double(double)>& f, double a, double b, int bits) {
  auto safe_f = [&](double x) {
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
  };
  const auto r = boost::math::tools::brent_find_minima(safe_f, a, b, bits);
  return {r.first, r.second};
}

}  // namespace sfmm
