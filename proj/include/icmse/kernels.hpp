#pragma once

// Product Gaussian correlation functions, covariance assembly for single- and
// bi-fidelity models, and the closed-form unit-cube integrals of products of
// covariance functions used by the integrated design criteria.
//
// Parameterization: R(x, x') = prod_l theta_l^{4 (x_l - x'_l)^2} with
// theta_l in (0,1), equivalently exp(-sum_l rate_l (x_l - x'_l)^2) with
// rate_l = -4 log(theta_l) > 0.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "icmse/errors.hpp"
#include "icmse/normal.hpp"

namespace icmse {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Fidelity { Computer, Physical };

class LengthscaleParams {
 public:
  LengthscaleParams() = default;

  static LengthscaleParams from_rates(Vector rates) {
    LengthscaleParams ls;
    ls.rates_ = std::move(rates);
    ls.validate();
    return ls;
  }

  static LengthscaleParams from_theta(const Vector& theta) {
    Vector rates(theta.size());
    for (Eigen::Index l = 0; l < theta.size(); ++l) {
      if (!(theta[l] > 0.0 && theta[l] < 1.0)) {
        throw ParameterError("theta must lie strictly inside (0,1), got " +
                             std::to_string(theta[l]));
      }
      rates[l] = -4.0 * std::log(theta[l]);
    }
    return from_rates(std::move(rates));
  }

  const Vector& rates() const noexcept { return rates_; }
  Vector theta() const { return (-0.25 * rates_.array()).exp().matrix(); }
  int dim() const noexcept { return static_cast<int>(rates_.size()); }

  void validate() const {
    for (Eigen::Index l = 0; l < rates_.size(); ++l) {
      if (!(rates_[l] > 0.0) || !std::isfinite(rates_[l])) {
        throw ParameterError("lengthscale rate must be positive and finite, got " +
                             std::to_string(rates_[l]));
      }
    }
  }

 private:
  Vector rates_;
};

enum class KernelFamily { GaussianProduct };

struct KernelSpec {
  KernelFamily family = KernelFamily::GaussianProduct;
  LengthscaleParams lengthscales;
  double variance = 1.0;
};

/// GP prior parameters. Single-fidelity models use `mean`, `signal_var`,
/// `signal_ls` and `noise_var`; bi-fidelity models add the discrepancy GP
/// (`discrepancy_var`, `discrepancy_ls`), which only enters physical rows.
struct Hyperparams {
  bool bifidelity = false;
  double mean = 0.0;
  double signal_var = 1.0;
  LengthscaleParams signal_ls;
  double discrepancy_var = 0.0;
  LengthscaleParams discrepancy_ls;
  double noise_var = 0.0;

  int dim() const noexcept { return signal_ls.dim(); }
  double prior_variance() const noexcept {
    return signal_var + (bifidelity ? discrepancy_var : 0.0);
  }
  bool has_discrepancy() const noexcept { return bifidelity && discrepancy_var > 0.0; }

  void validate() const {
    if (!(signal_var > 0.0) || !std::isfinite(signal_var)) {
      throw ParameterError("signal variance must be positive");
    }
    if (!(noise_var >= 0.0) || !std::isfinite(noise_var)) {
      throw ParameterError("noise variance must be nonnegative");
    }
    if (!std::isfinite(mean)) throw ParameterError("prior mean must be finite");
    signal_ls.validate();
    if (bifidelity) {
      if (!(discrepancy_var >= 0.0) || !std::isfinite(discrepancy_var)) {
        throw ParameterError("discrepancy variance must be nonnegative");
      }
      discrepancy_ls.validate();
      if (discrepancy_ls.dim() != signal_ls.dim()) {
        throw ParameterError("discrepancy and signal lengthscales differ in dimension");
      }
    }
  }
};

/// Diagonal jitter added to every observation covariance, relative to signal_var.
inline constexpr double kNuggetRelative = 1e-8;

namespace detail {

inline double sq_dist_weighted(const double* x, const double* y, const double* rates, int p) {
  double s = 0.0;
  for (int l = 0; l < p; ++l) {
    const double d = x[l] - y[l];
    s += rates[l] * d * d;
  }
  return s;
}

inline double gauss_corr(const double* x, const double* y, const double* rates, int p) {
  return std::exp(-sq_dist_weighted(x, y, rates, p));
}

}  // namespace detail

/// prod_l theta_l^{4 (x_l - x'_l)^2}.
inline double corr_gaussian(const Vector& x, const Vector& x_prime, const LengthscaleParams& ls) {
  if (x.size() != x_prime.size() || x.size() != ls.dim()) {
    throw ArgumentError("corr_gaussian: dimension mismatch");
  }
  ls.validate();
  return detail::gauss_corr(x.data(), x_prime.data(), ls.rates().data(), ls.dim());
}

/// variance * R(a_i, b_j); `nugget` is added on the diagonal when both point
/// sets are the same. Rows of `points_a`/`points_b` are points.
inline Matrix corr_matrix(const Matrix& points_a, const Matrix& points_b, const KernelSpec& spec,
                          double nugget = 0.0) {
  const int p = spec.lengthscales.dim();
  if (points_a.cols() != p || points_b.cols() != p) {
    throw ArgumentError("corr_matrix: points and lengthscales disagree in dimension");
  }
  if (nugget < 0.0) throw ArgumentError("corr_matrix: nugget must be nonnegative");
  const bool same = points_a.rows() == points_b.rows() && points_a == points_b;
  const Vector& rates = spec.lengthscales.rates();
  Matrix out(points_a.rows(), points_b.rows());
  for (Eigen::Index i = 0; i < points_a.rows(); ++i) {
    const Vector xi = points_a.row(i).transpose();
    for (Eigen::Index j = 0; j < points_b.rows(); ++j) {
      const Vector xj = points_b.row(j).transpose();
      out(i, j) = spec.variance * detail::gauss_corr(xi.data(), xj.data(), rates.data(), p);
    }
    if (same) out(i, i) += nugget;
  }
  return out;
}

/// Covariance between the latent responses of two rows (before noise).
inline double row_covariance(const Hyperparams& hp, const double* xi, Fidelity fi,
                             const double* xj, Fidelity fj) {
  const int p = hp.dim();
  double k = hp.signal_var * detail::gauss_corr(xi, xj, hp.signal_ls.rates().data(), p);
  if (hp.has_discrepancy() && fi == Fidelity::Physical && fj == Fidelity::Physical) {
    k += hp.discrepancy_var * detail::gauss_corr(xi, xj, hp.discrepancy_ls.rates().data(), p);
  }
  return k;
}

/// Covariance between a data row and the physical mean response xi(x).
inline double row_response_covariance(const Hyperparams& hp, const double* xi, Fidelity fi,
                                      const double* x) {
  const int p = hp.dim();
  double k = hp.signal_var * detail::gauss_corr(xi, x, hp.signal_ls.rates().data(), p);
  if (hp.has_discrepancy() && fi == Fidelity::Physical) {
    k += hp.discrepancy_var * detail::gauss_corr(xi, x, hp.discrepancy_ls.rates().data(), p);
  }
  return k;
}

/// Diagonal term of an observation covariance: prior variance of the row,
/// measurement noise on physical rows, and the fixed nugget.
inline double row_variance(const Hyperparams& hp, Fidelity f) {
  double v = hp.signal_var * (1.0 + kNuggetRelative);
  if (f == Fidelity::Physical) {
    if (hp.has_discrepancy()) v += hp.discrepancy_var;
    v += hp.noise_var;
  }
  return v;
}

/// Gamma_n for the given rows (points as matrix rows).
inline Matrix observation_covariance(const Hyperparams& hp, const Matrix& points,
                                     const std::vector<Fidelity>& fidelity) {
  const Eigen::Index n = points.rows();
  Matrix rowmajor = points.transpose();  // column i is point i, contiguous
  Matrix gamma(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    gamma(i, i) = row_variance(hp, fidelity[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double k = row_covariance(hp, rowmajor.col(i).data(), fidelity[i],
                                      rowmajor.col(j).data(), fidelity[j]);
      gamma(i, j) = k;
      gamma(j, i) = k;
    }
  }
  return gamma;
}

/// G([a,x],[b,y]) = int_0^1 exp(-a (x-z)^2) exp(-b (y-z)^2) dz.
///
/// Uses exp((ax+by)^2/(a+b) - ax^2 - by^2) = exp(-ab (x-y)^2 / (a+b)) so the
/// exponential never overflows; the normal-CDF difference is taken on the
/// side of the tails where it does not cancel, and in log space when it would
/// underflow.
inline double g_exp_integral(double a, double x, double b, double y) {
  if (a < 0.0 || b < 0.0) throw ArgumentError("g_exp_integral: a and b must be nonnegative");
  const double s = a + b;
  if (s == 0.0) return 1.0;
  const double m = (a * x + b * y) / s;
  const double expo = -a * b * (x - y) * (x - y) / s;
  const double root = std::sqrt(2.0 * s);
  const double upper = root * (1.0 - m);
  const double lower = -root * m;
  // Phi(upper) - Phi(lower), upper > lower
  double diff;
  if (lower > 0.0) {
    diff = normal::sf(lower) - normal::sf(upper);
  } else if (upper < 0.0) {
    diff = normal::cdf(upper) - normal::cdf(lower);
  } else {
    diff = 1.0 - normal::sf(upper) - normal::cdf(lower);
  }
  const double scale = std::sqrt(std::numbers::pi / s);
  if (diff > 1e-280) return scale * std::exp(expo) * diff;
  // both limits deep in the same tail: log(Q(l) - Q(u)) with Q the upper tail
  const double hi = lower > 0.0 ? lower : -upper;
  const double lo = lower > 0.0 ? upper : -lower;
  const double log_hi = normal::log_sf(hi);
  const double log_lo = normal::log_sf(lo);
  const double log_diff = log_hi + std::log1p(-std::exp(log_lo - log_hi));
  return std::exp(std::log(scale) + expo + log_diff);
}

namespace detail {

inline double g_product(const double* x, const double* rates_x, const double* y,
                        const double* rates_y, int p) {
  double prod = 1.0;
  for (int l = 0; l < p; ++l) prod *= g_exp_integral(rates_x[l], x[l], rates_y[l], y[l]);
  return prod;
}

}  // namespace detail

/// int_{[0,1]^p} gamma_i(x) gamma_j(x) dx for two data rows, where gamma_i is
/// the covariance between row i and the physical mean response at x.
inline double lambda_entry(const Hyperparams& hp, const double* xi, Fidelity fi, const double* xj,
                           Fidelity fj) {
  const int p = hp.dim();
  const double* rf = hp.signal_ls.rates().data();
  double v = hp.signal_var * hp.signal_var * detail::g_product(xi, rf, xj, rf, p);
  if (hp.has_discrepancy()) {
    const double* rd = hp.discrepancy_ls.rates().data();
    const bool pi = fi == Fidelity::Physical;
    const bool pj = fj == Fidelity::Physical;
    const double sfd = hp.signal_var * hp.discrepancy_var;
    if (pi && pj) {
      v += hp.discrepancy_var * hp.discrepancy_var * detail::g_product(xi, rd, xj, rd, p);
    }
    if (pi) v += sfd * detail::g_product(xi, rd, xj, rf, p);
    if (pj) v += sfd * detail::g_product(xi, rf, xj, rd, p);
  }
  return v;
}

/// Lambda = int gamma gamma^T dx over the unit cube for the given rows.
inline Matrix lambda_matrix(const Matrix& points, const Hyperparams& hp,
                            const std::vector<Fidelity>& fidelity,
                            KernelFamily family = KernelFamily::GaussianProduct) {
  if (family != KernelFamily::GaussianProduct) {
    throw UnsupportedKernelError("lambda_matrix: closed form requires product Gaussian kernels");
  }
  if (points.cols() != hp.dim()) throw ArgumentError("lambda_matrix: dimension mismatch");
  if (static_cast<Eigen::Index>(fidelity.size()) != points.rows()) {
    throw ArgumentError("lambda_matrix: one fidelity flag per point required");
  }
  const Eigen::Index n = points.rows();
  const Matrix cols = points.transpose();
  Matrix lam(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v =
          lambda_entry(hp, cols.col(i).data(), fidelity[i], cols.col(j).data(), fidelity[j]);
      lam(i, j) = v;
      lam(j, i) = v;
    }
  }
  return lam;
}

}  // namespace icmse
