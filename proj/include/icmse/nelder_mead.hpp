#pragma once

// Derivative-free minimisation on a box. Trial points that leave the box are
// folded back by coordinate reflection, so every evaluated point is feasible.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "icmse/errors.hpp"

namespace icmse {

struct NelderMeadOptions {
  double reflection = 1.0;
  double expansion = 2.0;
  double contraction = 0.5;
  double shrink = 0.5;
  double tol_diameter = 1e-4;
  int max_iters = 200;
  double initial_step = 0.1;  // fraction of the box width
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Folds x back into [lo, hi] coordinatewise by mirror reflection at the faces.
inline void reflect_into_box(Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double w = hi[i] - lo[i];
    if (!(w > 0.0) || !std::isfinite(x[i])) {
      x[i] = lo[i];
      continue;
    }
    double t = std::fmod(x[i] - lo[i], 2.0 * w);
    if (t < 0.0) t += 2.0 * w;
    x[i] = t <= w ? lo[i] + t : hi[i] - (t - w);
  }
}

template <class F>
NelderMeadResult nelder_mead(F&& f, const Eigen::VectorXd& start, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi, const NelderMeadOptions& opt = {}) {
  const Eigen::Index n = start.size();
  if (n == 0 || lo.size() != n || hi.size() != n) {
    throw ArgumentError("nelder_mead: start and bounds must have equal nonzero length");
  }
  NelderMeadResult res;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++res.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> simplex(n + 1, start);
  reflect_into_box(simplex[0], lo, hi);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd v = simplex[0];
    const double step = opt.initial_step * (hi[i] - lo[i]);
    v[i] = v[i] + step <= hi[i] ? v[i] + step : v[i] - step;
    reflect_into_box(v, lo, hi);
    simplex[i + 1] = v;
  }
  std::vector<double> fv(n + 1);
  for (Eigen::Index i = 0; i <= n; ++i) fv[i] = eval(simplex[i]);

  std::vector<int> order(n + 1);
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    std::vector<Eigen::VectorXd> s2;
    std::vector<double> f2;
    for (int k : order) {
      s2.push_back(simplex[k]);
      f2.push_back(fv[k]);
    }
    simplex.swap(s2);
    fv.swap(f2);
  };
  auto diameter = [&] {
    double d = 0.0;
    for (Eigen::Index i = 1; i <= n; ++i) d = std::max(d, (simplex[i] - simplex[0]).norm());
    return d;
  };

  sort_simplex();
  while (res.iterations < opt.max_iters) {
    if (diameter() < opt.tol_diameter) {
      res.converged = true;
      break;
    }
    ++res.iterations;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) centroid += simplex[i];
    centroid /= static_cast<double>(n);

    Eigen::VectorXd xr = centroid + opt.reflection * (centroid - simplex[n]);
    reflect_into_box(xr, lo, hi);
    const double fr = eval(xr);
    if (fr < fv[0]) {
      Eigen::VectorXd xe = centroid + opt.expansion * (xr - centroid);
      reflect_into_box(xe, lo, hi);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[n] = xe;
        fv[n] = fe;
      } else {
        simplex[n] = xr;
        fv[n] = fr;
      }
    } else if (fr < fv[n - 1]) {
      simplex[n] = xr;
      fv[n] = fr;
    } else {
      const bool outside = fr < fv[n];
      Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + opt.contraction * (xr - centroid))
                                   : Eigen::VectorXd(centroid + opt.contraction *
                                                                    (simplex[n] - centroid));
      reflect_into_box(xc, lo, hi);
      const double fc = eval(xc);
      if (fc < (outside ? fr : fv[n])) {
        simplex[n] = xc;
        fv[n] = fc;
      } else {
        for (Eigen::Index i = 1; i <= n; ++i) {
          simplex[i] = simplex[0] + opt.shrink * (simplex[i] - simplex[0]);
          reflect_into_box(simplex[i], lo, hi);
          fv[i] = eval(simplex[i]);
        }
      }
    }
    sort_simplex();
  }
  if (!res.converged && diameter() < opt.tol_diameter) res.converged = true;
  res.x = simplex[0];
  res.value = fv[0];
  return res;
}

}  // namespace icmse
