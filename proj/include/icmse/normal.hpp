#pragma once

// Standard normal density, distribution and tail helpers that stay accurate far
// into the tails. Everything here is a pure function of its arguments.

#include <cmath>
#include <limits>
#include <numbers>

namespace icmse::normal {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;
inline constexpr double kTailSwitch = 8.0;

inline double pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

inline double log_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

inline double cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Upper tail 1 - Phi(z), without cancellation for large positive z.
inline double sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

/// Mills ratio (1 - Phi(z)) / phi(z) for z > 0, by Lentz's continued fraction.
inline double mills_ratio_cf(double z) {
  // R(z) = 1 / (z + 1/(z + 2/(z + 3/(z + ...))))
  constexpr double tiny = 1e-300;
  double f = z;
  double c = z;
  double d = 0.0;
  for (int k = 1; k < 500; ++k) {
    d = z + k * d;
    if (std::abs(d) < tiny) d = tiny;
    c = z + k / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 / f;
}

/// log(1 - Phi(z)).
inline double log_sf(double z) {
  if (z < kTailSwitch) return std::log(sf(z));
  return log_pdf(z) + std::log(mills_ratio_cf(z));
}

/// log Phi(z).
inline double log_cdf(double z) { return log_sf(-z); }

/// Inverse hazard-type ratio phi(z) / (1 - Phi(z)), finite for every finite z.
inline double hazard(double z) {
  if (z > kTailSwitch) return 1.0 / mills_ratio_cf(z);
  const double s = sf(z);
  return pdf(z) / s;
}

/// hazard(z) - z, evaluated without catastrophic cancellation for large z.
inline double hazard_minus_z(double z) {
  if (z > kTailSwitch) {
    const double r = mills_ratio_cf(z);
    return (1.0 - z * r) / r;
  }
  return hazard(z) - z;
}

/// Inverse of Phi: Acklam's rational approximation refined by one Halley step
/// (relative error near machine precision, several times cheaper than erfc_inv).
inline double quantile(double p) {
  if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  if (p > 0.5) return -quantile(1.0 - p);
  constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                          1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                          6.680131188771972e+01,  -1.328068155288572e+01};
  constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                          -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                          3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  // Halley refinement on Phi(x) - p
  const double e = cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// 1 - h(z), accurate in the upper tail where h rounds to 1.
inline double censoring_adjustment_complement(double z) {
  if (std::isinf(z)) return z > 0 ? 0.0 : 1.0;
  if (z <= 3.0) return 1.0 - (cdf(z) - z * pdf(z) + pdf(z) * hazard(z));
  // Laplace continued fraction of the Mills ratio, R = 1/(z + c1),
  // c_k = k/(z + c_{k+1}); then 1 - h = phi (c2 - c1) / ((z + c2)(z + c1))
  double ck = 0.0;
  for (int k = 200; k >= 2; --k) ck = k / (z + ck);
  const double c2 = ck;
  const double c1 = 1.0 / (z + c2);
  const double diff = (c2 * (z + c2) - 1.0) / (z + c2);
  return pdf(z) * diff / ((z + c2) * (z + c1));
}

/// Censoring adjustment h(z) = Phi(z) - z phi(z) + phi(z)^2 / (1 - Phi(z)).
/// Increasing from 0 (z -> -inf) to 1 (z -> +inf).
inline double censoring_adjustment(double z) {
  if (std::isinf(z)) return z > 0 ? 1.0 : 0.0;
  if (z > 3.0) return 1.0 - censoring_adjustment_complement(z);
  return cdf(z) - z * pdf(z) + pdf(z) * hazard(z);
}

}  // namespace icmse::normal
