#pragma once

// Orthant probabilities and first/second moments of lower-truncated
// multivariate normal distributions, P(Z >= lower) and the law of Z | Z >= lower.
//
//   d = 1   closed form with Mills-ratio tails
//   d = 2   Genz's bivariate algorithm (double precision)
//   d = 3   adaptive one-dimensional integral of exact bivariate conditionals
//   d >= 4  separation-of-variables (Genz) with variable prioritisation and
//           randomly shifted Richtmyer lattices; deterministic given the seed
//
// Moments use the Tallis / Manjunath-Wilhelm identities for d <= 3 (which only
// need probabilities of dimension d-1 and d-2) and importance-weighted
// quasi-Monte Carlo on the same separation-of-variables transform for d >= 4.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "icmse/errors.hpp"
#include "icmse/lowdiscrepancy.hpp"
#include "icmse/normal.hpp"
#include "icmse/quadrature.hpp"

namespace icmse {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct MvnSpec {
  Vector mean;
  Matrix cov;
};

struct TruncatedMoments {
  double prob = 1.0;
  double log_prob = 0.0;
  Vector mean;
  Matrix cov;
};

struct TmvnOptions {
  int orthant_points = 1 << 13;
  int moment_points = 1 << 14;
  int shifts = 8;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline void check_spec(const MvnSpec& spec, const Vector& lower) {
  const Eigen::Index d = spec.mean.size();
  if (d < 1) throw ArgumentError("tmvn: dimension must be at least 1");
  if (spec.cov.rows() != d || spec.cov.cols() != d || lower.size() != d) {
    throw ArgumentError("tmvn: mean, covariance and bounds disagree in dimension");
  }
  const double scale = std::max(1.0, spec.cov.diagonal().cwiseAbs().maxCoeff());
  if ((spec.cov - spec.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ArgumentError("tmvn: covariance is not symmetric");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!std::isfinite(spec.mean[i])) throw ArgumentError("tmvn: non-finite mean");
    if (std::isnan(lower[i])) throw ArgumentError("tmvn: NaN bound");
  }
}

/// Cholesky factor with the jitter policy: on failure add 1e-8 * mean(diag)
/// to the diagonal, at most twice.
inline Matrix robust_cholesky(const Matrix& cov) {
  const double jitter = 1e-8 * std::max(cov.diagonal().mean(), 1e-300);
  Matrix work = cov;
  for (int attempt = 0; attempt < 3; ++attempt) {
    Eigen::LLT<Matrix> llt(work);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    work.diagonal().array() += jitter;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  std::ostringstream msg;
  msg << "covariance not positive definite after jitter (eigenvalues in [" << lo << ", " << hi
      << "], condition number " << (lo > 0 ? hi / lo : kInf) << ")";
  throw NumericalError(msg.str());
}

struct GlHalf {
  std::vector<double> x;
  std::vector<double> w;
};

inline const std::array<GlHalf, 3>& bvn_rules() {
  static const std::array<GlHalf, 3> rules = [] {
    std::array<GlHalf, 3> out;
    const std::array<int, 3> sizes{6, 12, 20};
    for (int r = 0; r < 3; ++r) {
      const QuadratureRule q = gauss_legendre(sizes[r]);
      for (std::size_t i = 0; i < q.nodes.size(); ++i) {
        if (q.nodes[i] > 0.0) {
          out[r].x.push_back(q.nodes[i]);
          out[r].w.push_back(q.weights[i]);
        }
      }
    }
    return out;
  }();
  return rules;
}

}  // namespace detail

/// P(X > h, Y > k) for standard bivariate normal with correlation r
/// (Drezner-Wesolowsky / Genz algorithm).
inline double bvn_upper(double h, double k, double r) {
  using normal::cdf;
  if (h == detail::kInf || k == detail::kInf) return 0.0;
  if (h == -detail::kInf) return k == -detail::kInf ? 1.0 : cdf(-k);
  if (k == -detail::kInf) return cdf(-h);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const auto& rules = detail::bvn_rules();
  const int ng = std::abs(r) < 0.3 ? 0 : (std::abs(r) < 0.75 ? 1 : 2);
  const auto& x = rules[ng].x;
  const auto& w = rules[ng].w;
  double hk = h * k;
  double bvn = 0.0;
  if (std::abs(r) < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double sn = std::sin(asr * (x[i] + 1.0) / 2.0);
      bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      sn = std::sin(asr * (-x[i] + 1.0) / 2.0);
      bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
    }
    bvn = bvn * asr / (2.0 * two_pi) + cdf(-h) * cdf(-k);
  } else {
    if (r < 0.0) {
      k = -k;
      hk = -hk;
    }
    if (std::abs(r) < 1.0) {
      const double as = (1.0 - r) * (1.0 + r);
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 16.0;
      bvn = a * std::exp(-(bs / as + hk) / 2.0) *
            (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
      if (hk > -160.0) {
        const double b = std::sqrt(bs);
        bvn -= std::exp(-hk / 2.0) * std::sqrt(two_pi) * cdf(-b / a) * b *
               (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
      }
      a /= 2.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        double xs = std::pow(a * (x[i] + 1.0), 2);
        double rs = std::sqrt(1.0 - xs);
        bvn += a * w[i] *
               (std::exp(-bs / (2.0 * xs) - hk / (1.0 + rs)) / rs -
                std::exp(-(bs / xs + hk) / 2.0) * (1.0 + c * xs * (1.0 + d * xs)));
        xs = as * std::pow(-x[i] + 1.0, 2) / 4.0;
        rs = std::sqrt(1.0 - xs);
        bvn += a * w[i] * std::exp(-(bs / xs + hk) / 2.0) *
               (std::exp(-hk * xs / (2.0 * std::pow(1.0 + rs, 2))) / rs -
                (1.0 + c * xs * (1.0 + d * xs)));
      }
      bvn = -bvn / two_pi;
    }
    if (r > 0.0) {
      bvn += cdf(-std::max(h, k));
    } else {
      bvn = -bvn;
      if (k > h) bvn += h < 0.0 ? cdf(k) - cdf(h) : cdf(-h) - cdf(-k);
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

namespace detail {

/// Separation-of-variables setup for P(Y <= b), Y ~ N(0, cov), with Genz's
/// prioritisation (most restrictive variable first).
struct SovFactor {
  Matrix chol;                 // lower-triangular in permuted order
  Vector upper;                // permuted upper limits
  std::vector<int> order;      // order[i] = original index at position i
};

inline SovFactor sov_factor(const Matrix& cov_in, const Vector& upper_in) {
  const int d = static_cast<int>(upper_in.size());
  Matrix cov = cov_in;
  {
    // jitter policy applied up-front so the pivoted factorisation below is safe
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) {
      const Matrix l = robust_cholesky(cov);
      cov = l * l.transpose();
    }
  }
  SovFactor f;
  f.chol = Matrix::Zero(d, d);
  f.upper = upper_in;
  f.order.resize(d);
  for (int i = 0; i < d; ++i) f.order[i] = i;
  Vector expected = Vector::Zero(d);
  for (int i = 0; i < d; ++i) {
    int best = i;
    double best_p = kInf;
    for (int j = i; j < d; ++j) {
      double s = cov(j, j);
      double shift = 0.0;
      for (int k = 0; k < i; ++k) {
        s -= f.chol(j, k) * f.chol(j, k);
        shift += f.chol(j, k) * expected[k];
      }
      const double sd = std::sqrt(std::max(s, 1e-300));
      const double pj = f.upper[j] == kInf ? 1.0 : normal::cdf((f.upper[j] - shift) / sd);
      if (pj < best_p) {
        best_p = pj;
        best = j;
      }
    }
    if (best != i) {
      cov.row(i).swap(cov.row(best));
      cov.col(i).swap(cov.col(best));
      f.chol.row(i).swap(f.chol.row(best));
      std::swap(f.upper[i], f.upper[best]);
      std::swap(f.order[i], f.order[best]);
    }
    double s = cov(i, i);
    for (int k = 0; k < i; ++k) s -= f.chol(i, k) * f.chol(i, k);
    const double lii = std::sqrt(std::max(s, 1e-300 + 1e-14 * cov(i, i)));
    f.chol(i, i) = lii;
    for (int r = i + 1; r < d; ++r) {
      double v = cov(r, i);
      for (int k = 0; k < i; ++k) v -= f.chol(r, k) * f.chol(i, k);
      f.chol(r, i) = v / lii;
    }
    double shift = 0.0;
    for (int k = 0; k < i; ++k) shift += f.chol(i, k) * expected[k];
    const double t = f.upper[i] == kInf ? kInf : (f.upper[i] - shift) / lii;
    // E[Z | Z <= t]
    expected[i] = t == kInf ? 0.0 : -normal::hazard(-t);
  }
  return f;
}

/// Runs the randomised-lattice separation-of-variables integrand. The visitor
/// receives (weight, z) for every sample, z being the standard-normal vector in
/// permuted order (z has `sample_dims` valid entries).
template <class Visitor>
void sov_sweep(const SovFactor& f, int points, int shifts, std::uint64_t seed, int sample_dims,
               Visitor&& visit) {
  const int d = static_cast<int>(f.upper.size());
  const int lattice_dims = std::max(sample_dims, 1);
  const std::vector<double> gen = richtmyer_vector(lattice_dims);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const int per_shift = std::max(1, points / std::max(shifts, 1));
  std::vector<double> shift(lattice_dims);
  Vector z = Vector::Zero(d);
  for (int s = 0; s < shifts; ++s) {
    for (double& v : shift) v = uniform01(rng);
    for (int n = 1; n <= per_shift; ++n) {
      double weight = 1.0;
      for (int i = 0; i < d; ++i) {
        double mu = 0.0;
        for (int k = 0; k < i; ++k) mu += f.chol(i, k) * z[k];
        const double t = f.upper[i] == kInf ? kInf : (f.upper[i] - mu) / f.chol(i, i);
        const double e = t == kInf ? 1.0 : normal::cdf(t);
        weight *= e;
        if (i < sample_dims) {
          double u = n * gen[i] + shift[i];
          u -= std::floor(u);
          u = std::abs(2.0 * u - 1.0);  // baker's transform
          const double q = std::clamp(u * e, 1e-300, 1.0 - 1e-16);
          z[i] = normal::quantile(q);
        }
        if (weight == 0.0) break;
      }
      visit(weight, z);
    }
  }
}

}  // namespace detail

namespace detail {

/// Trivariate orthant as a one-dimensional integral over the first coordinate
/// (in probability scale) of exact bivariate conditionals.
inline double trivariate_upper(const MvnSpec& spec, const Vector& lower,
                               const std::vector<int>& idx) {
  const int i = idx[0];
  const int j = idx[1];
  const int k = idx[2];
  const double s11 = spec.cov(i, i);
  if (!(s11 > 0.0)) throw NumericalError("orthant_prob: nonpositive variance");
  const double bj = spec.cov(j, i) / s11;
  const double bk = spec.cov(k, i) / s11;
  const double vj = spec.cov(j, j) - bj * spec.cov(i, j);
  const double vk = spec.cov(k, k) - bk * spec.cov(i, k);
  const double cjk = spec.cov(j, k) - bj * spec.cov(i, k);
  if (!(vj > 0.0 && vk > 0.0) || cjk * cjk >= vj * vk) {
    // conditional law degenerate: fall back to the lattice rule on a jittered copy
    return -1.0;
  }
  const double sj = std::sqrt(vj);
  const double sk = std::sqrt(vk);
  const double r = std::clamp(cjk / (sj * sk), -1.0, 1.0);
  const double sd1 = std::sqrt(s11);
  const double z0 = std::max((lower[i] - spec.mean[i]) / sd1, -10.0);
  const double z1 = std::max(z0, 0.0) + 10.0;
  auto integrand = [&](double z) {
    const double dx = sd1 * z;
    const double h = (lower[j] - spec.mean[j] - bj * dx) / sj;
    const double kk = (lower[k] - spec.mean[k] - bk * dx) / sk;
    return normal::pdf(z) * bvn_upper(h, kk, r);
  };
  const double p = boost::math::quadrature::gauss_kronrod<double, 21>::integrate(
      integrand, z0, z1, 15, 1e-12);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace detail

/// P(Z >= lower componentwise), Z ~ N(spec.mean, spec.cov). Components with
/// lower = -inf are marginalised out.
inline double orthant_prob(const MvnSpec& spec, const Vector& lower, std::uint64_t seed = 0,
                           const TmvnOptions& opts = {}) {
  detail::check_spec(spec, lower);
  std::vector<int> active;
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (lower[i] == detail::kInf) return 0.0;
    if (lower[i] != -detail::kInf) active.push_back(static_cast<int>(i));
  }
  const int d = static_cast<int>(active.size());
  if (d == 0) return 1.0;
  if (d == 1) {
    const int i = active[0];
    const double sd = std::sqrt(spec.cov(i, i));
    if (!(sd > 0.0)) throw NumericalError("orthant_prob: nonpositive variance");
    return normal::sf((lower[i] - spec.mean[i]) / sd);
  }
  if (d == 2) {
    const int i = active[0];
    const int j = active[1];
    const double si = std::sqrt(spec.cov(i, i));
    const double sj = std::sqrt(spec.cov(j, j));
    if (!(si > 0.0 && sj > 0.0)) throw NumericalError("orthant_prob: nonpositive variance");
    const double r = std::clamp(spec.cov(i, j) / (si * sj), -1.0, 1.0);
    return bvn_upper((lower[i] - spec.mean[i]) / si, (lower[j] - spec.mean[j]) / sj, r);
  }
  if (d == 3) {
    const double p3 = detail::trivariate_upper(spec, lower, active);
    if (p3 >= 0.0) return p3;
  }
  // P(X >= a) = P(Y <= mean - a) with Y = mean - X ~ N(0, cov)
  Matrix cov(d, d);
  Vector upper(d);
  for (int r = 0; r < d; ++r) {
    upper[r] = spec.mean[active[r]] - lower[active[r]];
    for (int c = 0; c < d; ++c) cov(r, c) = spec.cov(active[r], active[c]);
  }
  const detail::SovFactor f = detail::sov_factor(cov, upper);
  double sum = 0.0;
  long count = 0;
  detail::sov_sweep(f, opts.orthant_points, opts.shifts, seed, d - 1,
                    [&](double w, const Vector&) {
                      sum += w;
                      ++count;
                    });
  return std::clamp(sum / static_cast<double>(count), 0.0, 1.0);
}

/// log P(Z >= lower); stays finite in the univariate deep tail.
inline double log_orthant_prob(const MvnSpec& spec, const Vector& lower, std::uint64_t seed = 0,
                               const TmvnOptions& opts = {}) {
  detail::check_spec(spec, lower);
  int active = 0;
  int last = -1;
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (lower[i] != -detail::kInf) {
      ++active;
      last = static_cast<int>(i);
    }
  }
  if (active == 1 && lower[last] != detail::kInf) {
    const double sd = std::sqrt(spec.cov(last, last));
    if (!(sd > 0.0)) throw NumericalError("orthant_prob: nonpositive variance");
    return normal::log_sf((lower[last] - spec.mean[last]) / sd);
  }
  const double p = orthant_prob(spec, lower, seed, opts);
  return p > 0.0 ? std::log(p) : -detail::kInf;
}

/// Moments of N(mu, var) truncated to [lower, inf).
inline TruncatedMoments trunc_univariate(double mu, double var, double lower) {
  if (!std::isfinite(mu) || !std::isfinite(var) || std::isnan(lower)) {
    throw ArgumentError("trunc_univariate: non-finite input");
  }
  if (!(var > 0.0)) throw ArgumentError("trunc_univariate: variance must be positive");
  const double sd = std::sqrt(var);
  TruncatedMoments out;
  out.mean = Vector::Constant(1, mu);
  out.cov = Matrix::Constant(1, 1, var);
  if (lower == detail::kInf) {
    throw DegenerateTruncationError("trunc_univariate: lower bound is +inf");
  }
  const double z = (lower - mu) / sd;
  if (z < -40.0) return out;  // no effective truncation
  const double lam = normal::hazard(z);
  out.prob = normal::sf(z);
  out.log_prob = normal::log_sf(z);
  out.mean[0] = mu + sd * lam;
  // 1 + z lam - lam^2 = 1 - lam (lam - z)
  const double factor = std::max(1.0 - lam * normal::hazard_minus_z(z), 0.0);
  out.cov(0, 0) = var * factor;
  return out;
}

namespace detail {

/// Conditional law of the coordinates `rest` given X[fixed] = values.
inline MvnSpec condition_on(const MvnSpec& spec, const std::vector<int>& fixed,
                            const Vector& values, const std::vector<int>& rest) {
  const int nf = static_cast<int>(fixed.size());
  const int nr = static_cast<int>(rest.size());
  Matrix sff(nf, nf);
  Matrix srf(nr, nf);
  Vector diff(nf);
  for (int a = 0; a < nf; ++a) {
    diff[a] = values[a] - spec.mean[fixed[a]];
    for (int b = 0; b < nf; ++b) sff(a, b) = spec.cov(fixed[a], fixed[b]);
    for (int r = 0; r < nr; ++r) srf(r, a) = spec.cov(rest[r], fixed[a]);
  }
  const Eigen::LDLT<Matrix> ldlt(sff);
  const Vector sol = ldlt.solve(diff);
  const Matrix gain = ldlt.solve(srf.transpose()).transpose();
  MvnSpec out;
  out.mean.resize(nr);
  out.cov.resize(nr, nr);
  for (int r = 0; r < nr; ++r) {
    out.mean[r] = spec.mean[rest[r]] + srf.row(r).dot(sol);
    for (int c = 0; c < nr; ++c) {
      out.cov(r, c) = spec.cov(rest[r], rest[c]) - gain.row(r).dot(srf.row(c));
    }
  }
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

inline double sub_orthant(const MvnSpec& cond, const Vector& lower_rest, std::uint64_t seed,
                          const TmvnOptions& opts) {
  if (cond.mean.size() == 0) return 1.0;
  return orthant_prob(cond, lower_rest, seed, opts);
}

/// Tallis / Manjunath-Wilhelm moments for lower truncation (d <= 3 in practice).
inline TruncatedMoments mw_moments(const MvnSpec& spec, const Vector& lower, double alpha,
                                   std::uint64_t seed, const TmvnOptions& opts) {
  const int d = static_cast<int>(spec.mean.size());
  const Matrix& s = spec.cov;
  const Vector a = lower - spec.mean;  // centred bounds
  MvnSpec centred{Vector::Zero(d), s};
  // first-order terms F_k(a_k)
  Vector fk = Vector::Zero(d);
  for (int k = 0; k < d; ++k) {
    if (a[k] == -kInf) continue;
    const double sd = std::sqrt(s(k, k));
    const double dens = normal::pdf(a[k] / sd) / sd;
    std::vector<int> rest;
    for (int j = 0; j < d; ++j) {
      if (j != k) rest.push_back(j);
    }
    double cond_p = 1.0;
    if (!rest.empty()) {
      const MvnSpec cond = condition_on(centred, {k}, Vector::Constant(1, a[k]), rest);
      Vector lr(rest.size());
      for (std::size_t r = 0; r < rest.size(); ++r) lr[r] = a[rest[r]];
      cond_p = sub_orthant(cond, lr, seed + 1 + k, opts);
    }
    fk[k] = dens * cond_p / alpha;
  }
  // second-order terms F_kq(a_k, a_q)
  Matrix fkq = Matrix::Zero(d, d);
  for (int k = 0; k < d; ++k) {
    for (int q = k + 1; q < d; ++q) {
      if (a[k] == -kInf || a[q] == -kInf) continue;
      const double skk = s(k, k);
      const double sqq = s(q, q);
      const double skq = s(k, q);
      const double det = skk * sqq - skq * skq;
      if (!(det > 0.0)) continue;
      const double quad = (sqq * a[k] * a[k] - 2.0 * skq * a[k] * a[q] + skk * a[q] * a[q]) / det;
      const double dens = std::exp(-0.5 * quad) / (2.0 * std::numbers::pi * std::sqrt(det));
      std::vector<int> rest;
      for (int j = 0; j < d; ++j) {
        if (j != k && j != q) rest.push_back(j);
      }
      double cond_p = 1.0;
      if (!rest.empty()) {
        Vector vals(2);
        vals << a[k], a[q];
        const MvnSpec cond = condition_on(centred, {k, q}, vals, rest);
        Vector lr(rest.size());
        for (std::size_t r = 0; r < rest.size(); ++r) lr[r] = a[rest[r]];
        cond_p = sub_orthant(cond, lr, seed + 101 + k * d + q, opts);
      }
      fkq(k, q) = fkq(q, k) = dens * cond_p / alpha;
    }
  }
  Vector m = s * fk;
  Matrix second = s;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double v = 0.0;
      for (int k = 0; k < d; ++k) {
        if (a[k] != -kInf) v += s(i, k) * s(j, k) * a[k] * fk[k] / s(k, k);
        double inner = 0.0;
        for (int q = 0; q < d; ++q) {
          if (q == k) continue;
          inner += (s(j, q) - s(k, q) * s(j, k) / s(k, k)) * fkq(k, q);
        }
        v += s(i, k) * inner;
      }
      second(i, j) += v;
    }
  }
  TruncatedMoments out;
  out.prob = alpha;
  out.log_prob = std::log(alpha);
  out.mean = spec.mean + m;
  out.cov = second - m * m.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

}  // namespace detail

/// Mean and covariance of Z | Z >= lower. Throws DegenerateTruncationError when
/// the orthant probability vanishes (below 1e-300).
inline TruncatedMoments trunc_moments(const MvnSpec& spec, const Vector& lower,
                                      std::uint64_t seed = 0, const TmvnOptions& opts = {}) {
  detail::check_spec(spec, lower);
  const int d = static_cast<int>(spec.mean.size());
  for (int i = 0; i < d; ++i) {
    if (lower[i] == detail::kInf) throw DegenerateTruncationError("trunc_moments: +inf bound");
  }
  if (d == 1) return trunc_univariate(spec.mean[0], spec.cov(0, 0), lower[0]);

  bool diagonal = true;
  for (int i = 0; i < d && diagonal; ++i) {
    for (int j = 0; j < d; ++j) {
      if (i != j && spec.cov(i, j) != 0.0) {
        diagonal = false;
        break;
      }
    }
  }
  if (diagonal) {
    TruncatedMoments out;
    out.mean.resize(d);
    out.cov = Matrix::Zero(d, d);
    out.prob = 1.0;
    out.log_prob = 0.0;
    for (int i = 0; i < d; ++i) {
      const TruncatedMoments u = trunc_univariate(spec.mean[i], spec.cov(i, i), lower[i]);
      out.mean[i] = u.mean[0];
      out.cov(i, i) = u.cov(0, 0);
      out.prob *= u.prob;
      out.log_prob += u.log_prob;
    }
    if (!(out.log_prob > std::log(1e-300))) {
      throw DegenerateTruncationError("trunc_moments: vanishing orthant probability");
    }
    return out;
  }

  const double alpha = orthant_prob(spec, lower, seed, opts);
  if (!(alpha >= 1e-300)) {
    throw DegenerateTruncationError("trunc_moments: vanishing orthant probability");
  }
  if (d <= 3) return detail::mw_moments(spec, lower, alpha, seed, opts);

  // importance-weighted separation of variables
  std::vector<int> active;
  for (int i = 0; i < d; ++i) active.push_back(i);
  Vector upper(d);
  for (int i = 0; i < d; ++i) upper[i] = spec.mean[i] - lower[i];
  const detail::SovFactor f = detail::sov_factor(spec.cov, upper);
  double wsum = 0.0;
  std::vector<double> s1(d, 0.0);
  std::vector<double> s2(static_cast<std::size_t>(d) * d, 0.0);
  std::vector<double> y(d);
  detail::sov_sweep(f, opts.moment_points, opts.shifts, seed + 7, d, [&](double w, const Vector& z) {
    if (w <= 0.0) return;
    for (int i = 0; i < d; ++i) {
      double v = 0.0;
      for (int k = 0; k <= i; ++k) v += f.chol(i, k) * z[k];
      y[i] = v;
    }
    wsum += w;
    for (int i = 0; i < d; ++i) {
      const double wy = w * y[i];
      s1[i] += wy;
      for (int j = 0; j <= i; ++j) s2[i * d + j] += wy * y[j];
    }
  });
  if (!(wsum > 0.0)) throw DegenerateTruncationError("trunc_moments: all sample weights vanished");
  Vector my(d);
  for (int i = 0; i < d; ++i) my[i] = s1[i] / wsum;
  Matrix cy(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) cy(i, j) = cy(j, i) = s2[i * d + j] / wsum - my[i] * my[j];
  }
  TruncatedMoments out;
  out.prob = alpha;
  out.log_prob = std::log(alpha);
  out.mean.resize(d);
  out.cov.resize(d, d);
  // X = mean - Y, undo the permutation
  for (int i = 0; i < d; ++i) {
    const int oi = f.order[i];
    out.mean[oi] = spec.mean[oi] - my[i];
    for (int j = 0; j < d; ++j) out.cov(oi, f.order[j]) = cy(i, j);
  }
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

}  // namespace icmse
