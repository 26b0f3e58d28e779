#pragma once

// Sequential design criteria for censored GP models.
//
// All criteria share the form
//   integral of Var[xi(x) | data] - g(x)^T Gamma_{n+1}^{-1} H Gamma_{n+1}^{-1} g(x) dx
// where H lives on the rows whose latent response is still random after the
// next run: the censored block C and the candidate row *. The first term does
// not depend on the candidate and is only added when requested.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "icmse/errors.hpp"
#include "icmse/gpmodel.hpp"
#include "icmse/kernels.hpp"
#include "icmse/lowdiscrepancy.hpp"
#include "icmse/normal.hpp"
#include "icmse/quadrature.hpp"
#include "icmse/tmvn.hpp"

namespace icmse {

enum class Integration { LambdaTrace, Quadrature };
enum class HcCorner { SquaredDiff, Product };
enum class ImseVariant { Impute, Cen };

struct CriterionOptions {
  Integration integration = Integration::LambdaTrace;
  HcCorner corner = HcCorner::SquaredDiff;
  bool include_constant = false;
  TmvnOptions tmvn{};
  std::uint64_t seed = 0;
  int quad_nodes = 0;  // per axis for p <= 3; 0 picks a default
};

struct CriterionEval {
  double value = 0.0;
  double lambda = 0.0;
  double trace_term = 0.0;
  bool constant_included = false;
};

struct HcMatrix {
  Matrix matrix;  // (n+1) x (n+1), candidate last
  double lambda = 0.0;
  double y_gt = 0.0;
  double y_lt = 0.0;
};

/// h(z) = Phi(z) - z phi(z) + phi(z)^2 / (1 - Phi(z)).
inline double h_adjust(double z) {
  if (std::isnan(z)) throw ArgumentError("h_adjust: z is NaN");
  return normal::censoring_adjustment(z);
}

/// 1 - h(z); resolves the upper tail where h(z) rounds to 1.
inline double h_adjust_complement(double z) {
  if (std::isnan(z)) throw ArgumentError("h_adjust_complement: z is NaN");
  return normal::censoring_adjustment_complement(z);
}

/// Per-model quantities reused across candidates.
struct CriterionCache {
  Matrix lambda_n;
  Eigen::LLT<Matrix> obs_llt;  // uncensored block of Gamma_n
  Vector obs_alpha;            // its solve against y_O - mean
  Matrix gco;                  // Gamma_{C,O}
  double sigma_bar2 = 0.0;     // integrated predictive variance given the data
};

inline CriterionCache make_criterion_cache(const FittedModel& m) {
  CriterionCache cache;
  const int n = m.n();
  const int nu = m.n_uncensored();
  const double prior = m.params.prior_variance();
  if (n == 0) {
    cache.sigma_bar2 = prior;
    return cache;
  }
  cache.lambda_n = lambda_matrix(m.points, m.params, m.fidelity);
  if (nu > 0) {
    cache.obs_llt.compute(m.gamma.topLeftCorner(nu, nu));
    const Vector resid = (m.response.head(nu).array() - m.params.mean).matrix();
    cache.obs_alpha = cache.obs_llt.solve(resid);
    cache.gco = m.gamma.block(nu, 0, m.n_censored, nu);
  }
  // tr((Gamma^{-1} - W Sigma_c W^T) Lambda)
  double tr = m.gamma_llt.solve(cache.lambda_n).trace();
  if (m.n_censored > 0) {
    const Matrix lw = cache.lambda_n * m.w_c;
    tr -= (m.sigma_c * (m.w_c.transpose() * lw)).trace();
  }
  cache.sigma_bar2 = prior - tr;
  return cache;
}

namespace detail {

inline constexpr double kLambdaFloor = 1e-10;

/// Joint law of [y_C, Y*] given the uncensored rows, Y* the noisy physical
/// response at the candidate.
struct CandidateLaw {
  Vector k;     // Cov(rows, Y*)
  double v = 0; // Var(Y*)
  MvnSpec joint;
};

inline CandidateLaw candidate_law(const FittedModel& m, const CriterionCache& cache,
                                  const Vector& x) {
  check_point(x, m.dim(), "criterion");
  const int n = m.n();
  const int nu = m.n_uncensored();
  const int nc = m.n_censored;
  CandidateLaw law;
  law.k.resize(n);
  const Matrix cols = m.points.transpose();
  for (int i = 0; i < n; ++i) {
    law.k[i] = row_covariance(m.params, cols.col(i).data(), m.fidelity[i], x.data(),
                              Fidelity::Physical);
  }
  law.v = row_variance(m.params, Fidelity::Physical);

  law.joint.mean.resize(nc + 1);
  law.joint.cov.resize(nc + 1, nc + 1);
  double mstar = m.params.mean;
  double vstar = law.v;
  Vector cstar = law.k.tail(nc);
  if (nu > 0) {
    const Vector ko = law.k.head(nu);
    const Vector so = cache.obs_llt.solve(ko);
    mstar += ko.dot(cache.obs_alpha);
    vstar -= ko.dot(so);
    if (nc > 0) cstar -= cache.gco * so;
  }
  if (nc > 0) {
    law.joint.mean.head(nc) = m.cond_mean_c;
    law.joint.cov.topLeftCorner(nc, nc) = m.cond_cov_c;
    law.joint.cov.block(0, nc, nc, 1) = cstar;
    law.joint.cov.block(nc, 0, 1, nc) = cstar.transpose();
  }
  law.joint.mean[nc] = mstar;
  law.joint.cov(nc, nc) = std::max(vstar, 0.0);
  return law;
}

struct HcCompact {
  Matrix h;  // (nc+1) x (nc+1)
  double lambda = 0.0;
  double y_gt = 0.0;
  double y_lt = 0.0;
};

/// Var(y_C | y_O, y_C >= c, Y* = y).
inline Matrix plugin_block_cov(const MvnSpec& joint, double y, double c, std::uint64_t seed,
                               const TmvnOptions& tmvn) {
  const int nc = static_cast<int>(joint.mean.size()) - 1;
  std::vector<int> fixed{nc};
  std::vector<int> rest;
  for (int i = 0; i < nc; ++i) rest.push_back(i);
  const MvnSpec cond = condition_on(joint, fixed, Vector::Constant(1, y), rest);
  return trunc_moments(cond, Vector::Constant(nc, c), seed, tmvn).cov;
}

/// H on K = C + {*}. `c_new` is the censoring limit applied to the candidate
/// (+inf scores the candidate as an exact observation).
inline HcCompact hc_compact(const FittedModel& m, const CandidateLaw& law, double c_new,
                            const CriterionOptions& opt) {
  const int nc = m.n_censored;
  const double c = m.censor_limit;
  const MvnSpec& joint = law.joint;
  HcCompact out;
  out.h = Matrix::Zero(nc + 1, nc + 1);

  if (c_new == std::numeric_limits<double>::infinity()) {
    // Var(K | y_O, y_C >= c): regress Y* on y_C.
    Matrix sigma1(nc + 1, nc + 1);
    double ylt = joint.mean[nc];
    if (nc > 0) {
      const Matrix scc = joint.cov.topLeftCorner(nc, nc);
      const Vector scs = joint.cov.block(0, nc, nc, 1);
      const Eigen::LDLT<Matrix> ldlt(scc);
      const Vector b = ldlt.solve(scs);
      const double resid = std::max(joint.cov(nc, nc) - scs.dot(b), 0.0);
      sigma1.topLeftCorner(nc, nc) = m.sigma_c;
      const Vector sb = m.sigma_c * b;
      sigma1.block(0, nc, nc, 1) = sb;
      sigma1.block(nc, 0, 1, nc) = sb.transpose();
      sigma1(nc, nc) = b.dot(sb) + resid;
      ylt += b.dot(m.yc_hat - joint.mean.head(nc));
      out.h = sigma1;
      out.h.topLeftCorner(nc, nc) -= plugin_block_cov(joint, ylt, c, opt.seed + 2, opt.tmvn);
    } else {
      out.h(0, 0) = joint.cov(0, 0);
    }
    out.lambda = 0.0;
    out.y_lt = ylt;
    out.y_gt = std::numeric_limits<double>::infinity();
    return out;
  }
  if (std::isinf(c_new)) {
    // everything is censored
    out.lambda = 1.0;
    out.y_gt = joint.mean[nc];
    out.y_lt = -std::numeric_limits<double>::infinity();
    return out;
  }

  const double var_star = joint.cov(nc, nc);
  if (!(var_star > 0.0)) {
    // candidate response known exactly: no censoring uncertainty, no reduction
    out.lambda = joint.mean[nc] >= c_new ? 1.0 : 0.0;
    out.y_gt = out.y_lt = joint.mean[nc];
    return out;
  }

  Vector lower(nc + 1);
  lower.head(nc).setConstant(c);
  lower[nc] = c_new;

  // Y* >= c_new together with the censored block
  double lp_gt = -std::numeric_limits<double>::infinity();
  TruncatedMoments gt;
  bool have_gt = false;
  try {
    gt = trunc_moments(joint, lower, opt.seed, opt.tmvn);
    lp_gt = gt.log_prob;
    have_gt = true;
  } catch (const DegenerateTruncationError&) {
  }

  // Y* < c_new: flip the sign of the candidate coordinate
  MvnSpec flipped = joint;
  flipped.mean[nc] = -joint.mean[nc];
  flipped.cov.row(nc) *= -1.0;
  flipped.cov.col(nc) *= -1.0;
  Vector flower = lower;
  flower[nc] = -c_new;
  TruncatedMoments lt;
  try {
    lt = trunc_moments(flipped, flower, opt.seed + 1, opt.tmvn);
  } catch (const DegenerateTruncationError&) {
    if (!have_gt) throw;
    out.lambda = 1.0;
    out.y_gt = gt.mean[nc];
    out.y_lt = c_new;
    return out;
  }
  const double lp_lt = lt.log_prob;
  double lambda = have_gt ? 1.0 / (1.0 + std::exp(lp_lt - lp_gt)) : 0.0;
  if (lambda < kLambdaFloor) lambda = 0.0;

  out.y_lt = -lt.mean[nc];
  out.y_gt = have_gt ? gt.mean[nc] : c_new;
  out.lambda = lambda;
  if (lambda > 1.0 - kLambdaFloor) {
    out.lambda = 1.0;
    return out;
  }

  Matrix sigma1 = lt.cov;
  sigma1.row(nc) *= -1.0;
  sigma1.col(nc) *= -1.0;
  out.h = sigma1;
  if (nc > 0) {
    out.h.topLeftCorner(nc, nc) -= plugin_block_cov(joint, out.y_lt, c, opt.seed + 2, opt.tmvn);
  }
  out.h *= (1.0 - lambda);
  if (lambda > 0.0) {
    const double corner = opt.corner == HcCorner::SquaredDiff
                              ? (out.y_gt - out.y_lt) * (out.y_gt - out.y_lt)
                              : out.y_gt * out.y_lt;
    out.h(nc, nc) += lambda * (1.0 - lambda) * corner;
  }
  return out;
}

/// Columns of Gamma_{n+1}^{-1} for the censored rows and the candidate.
struct ExtendedSolve {
  Matrix x;  // (n+1) x (nc+1)
  double schur = 0.0;
};

inline ExtendedSolve extended_solve(const FittedModel& m, const CandidateLaw& law) {
  const int n = m.n();
  const int nc = m.n_censored;
  ExtendedSolve es;
  const Vector u = n > 0 ? Vector(m.gamma_llt.solve(law.k)) : Vector(0);
  es.schur = law.v - law.k.dot(u);
  if (!(es.schur > 0.0)) throw NumericalError("criterion: candidate covariance is singular");
  const double s = es.schur;
  es.x.resize(n + 1, nc + 1);
  if (nc > 0) {
    const Vector uc = u.tail(nc);
    es.x.topLeftCorner(n, nc) = m.w_c + u * uc.transpose() / s;
    es.x.block(n, 0, 1, nc) = -uc.transpose() / s;
  }
  es.x.block(0, nc, n, 1) = -u / s;
  es.x(n, nc) = 1.0 / s;
  return es;
}

/// X^T Lambda_{n+1} X, only the candidate row of Lambda is new.
inline Matrix projected_lambda(const FittedModel& m, const CriterionCache& cache,
                               const Vector& x_next, const Matrix& x) {
  const int n = m.n();
  Vector ell(n);
  const Matrix cols = m.points.transpose();
  for (int i = 0; i < n; ++i) {
    ell[i] = lambda_entry(m.params, cols.col(i).data(), m.fidelity[i], x_next.data(),
                          Fidelity::Physical);
  }
  const double ell_star =
      lambda_entry(m.params, x_next.data(), Fidelity::Physical, x_next.data(), Fidelity::Physical);
  const Matrix top = x.topRows(n);
  const Eigen::RowVectorXd bottom = x.row(n);
  Matrix lx(n + 1, x.cols());
  if (n > 0) {
    lx.topRows(n) = cache.lambda_n * top + ell * bottom;
    lx.row(n) = ell.transpose() * top + ell_star * bottom;
  } else {
    lx.row(n) = ell_star * bottom;
  }
  return x.transpose() * lx;
}

/// Tensor Gauss-Legendre (p <= 3) or scrambled Sobol' points on the unit cube.
struct CubeRule {
  Matrix points;  // N x p
  Vector weights;
};

inline CubeRule cube_rule(int p, int nodes_per_axis, std::uint64_t seed) {
  CubeRule rule;
  if (p <= 3) {
    int m = nodes_per_axis;
    if (m <= 0) m = p == 1 ? 256 : (p == 2 ? 96 : 40);
    // composite rule: panels of 16 nodes (or one panel when m is small)
    const int per = std::min(m, 16);
    const int panels = (m + per - 1) / per;
    const QuadratureRule base = gauss_legendre_unit(per);
    std::vector<double> nodes;
    std::vector<double> weights;
    for (int k = 0; k < panels; ++k) {
      for (int i = 0; i < per; ++i) {
        nodes.push_back((k + base.nodes[i]) / panels);
        weights.push_back(base.weights[i] / panels);
      }
    }
    const int q = static_cast<int>(nodes.size());
    int total = 1;
    for (int l = 0; l < p; ++l) total *= q;
    rule.points.resize(total, p);
    rule.weights.resize(total);
    for (int idx = 0; idx < total; ++idx) {
      int r = idx;
      double w = 1.0;
      for (int l = 0; l < p; ++l) {
        const int j = r % q;
        r /= q;
        rule.points(idx, l) = nodes[j];
        w *= weights[j];
      }
      rule.weights[idx] = w;
    }
    return rule;
  }
  const int total = 1 << 14;
  SobolSequence seq(p, seed + 0x5eed);
  rule.points.resize(total, p);
  rule.weights = Vector::Constant(total, 1.0 / total);
  std::vector<double> buf(p);
  for (int i = 0; i < total; ++i) {
    seq.next(buf.data());
    for (int l = 0; l < p; ++l) rule.points(i, l) = buf[l];
  }
  return rule;
}

/// Covariances of [rows..., candidate] with xi(x_new).
inline Vector extended_cross_cov(const FittedModel& m, const Vector& x_next, const Vector& x_new) {
  Vector g(m.n() + 1);
  g.head(m.n()) = m.cross_cov(x_new);
  g[m.n()] = row_response_covariance(m.params, x_next.data(), Fidelity::Physical, x_new.data());
  return g;
}

inline double quadrature_sigma_bar2(const FittedModel& m, const CriterionOptions& opt) {
  const CubeRule rule = cube_rule(m.dim(), opt.quad_nodes, opt.seed);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rule.points.rows(); ++i) {
    const Vector xn = rule.points.row(i).transpose();
    acc += rule.weights[i] * detail::predict_plugin(m, xn).var;
  }
  return acc;
}

inline double reduction(const FittedModel& m, const CriterionCache& cache, const Vector& x_next,
                        const Matrix& x, const Matrix& h, const CriterionOptions& opt) {
  if (opt.integration == Integration::LambdaTrace) {
    return (h.array() * projected_lambda(m, cache, x_next, x).array()).sum();
  }
  const CubeRule rule = cube_rule(m.dim(), opt.quad_nodes, opt.seed);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rule.points.rows(); ++i) {
    const Vector xn = rule.points.row(i).transpose();
    const Vector t = x.transpose() * extended_cross_cov(m, x_next, xn);
    acc += rule.weights[i] * t.dot(h * t);
  }
  return acc;
}

inline CriterionEval finish(const FittedModel& m, const CriterionCache& cache, double lambda,
                            double trace, const CriterionOptions& opt) {
  CriterionEval ev;
  ev.lambda = std::clamp(lambda, 0.0, 1.0);
  ev.trace_term = trace;
  ev.constant_included = opt.include_constant;
  double constant = 0.0;
  if (opt.include_constant) {
    constant = opt.integration == Integration::Quadrature ? quadrature_sigma_bar2(m, opt)
                                                          : cache.sigma_bar2;
  }
  ev.value = constant - trace;
  return ev;
}

inline CriterionEval general_with_limit(const FittedModel& m, const CriterionCache& cache,
                                        const Vector& x_next, double c_new,
                                        const CriterionOptions& opt) {
  const CandidateLaw law = candidate_law(m, cache, x_next);
  const HcCompact hc = hc_compact(m, law, c_new, opt);
  if (hc.lambda >= 1.0) return finish(m, cache, 1.0, 0.0, opt);
  const ExtendedSolve es = extended_solve(m, law);
  const double trace = reduction(m, cache, x_next, es.x, hc.h, opt);
  return finish(m, cache, hc.lambda, trace, opt);
}

}  // namespace detail

/// Closed form for uncensored training data: the reduction is damped by
/// h((c - mu_{n+1}) / sigma_{n+1}), sigma_{n+1} including measurement noise.
inline CriterionEval icmse_nocensor_training(const FittedModel& m, const CriterionCache& cache,
                                             const Vector& x_next, double c,
                                             const CriterionOptions& opt = {}) {
  if (m.n_censored > 0) {
    throw ModeError("icmse_nocensor_training: model has censored rows");
  }
  if (std::isnan(c)) throw ArgumentError("icmse_nocensor_training: c is NaN");
  detail::check_point(x_next, m.dim(), "criterion");
  const int n = m.n();
  const Matrix cols = m.points.transpose();
  Vector k(n);
  for (int i = 0; i < n; ++i) {
    k[i] = row_covariance(m.params, cols.col(i).data(), m.fidelity[i], x_next.data(),
                          Fidelity::Physical);
  }
  const Vector u = n > 0 ? Vector(m.gamma_llt.solve(k)) : Vector(0);
  const double s = row_variance(m.params, Fidelity::Physical) - k.dot(u);
  if (!(s > 0.0)) throw NumericalError("criterion: candidate covariance is singular");
  const double mu = m.params.mean + k.dot(m.alpha);
  const double z = (c - mu) / std::sqrt(s);
  const double h = h_adjust(z);
  Vector w(n + 1);
  w.head(n) = -u;
  w[n] = 1.0;

  double quad;
  if (opt.integration == Integration::LambdaTrace) {
    Matrix lam(n + 1, n + 1);
    Matrix pts(n + 1, m.dim());
    pts.topRows(n) = m.points;
    pts.row(n) = x_next.transpose();
    std::vector<Fidelity> fid = m.fidelity;
    fid.push_back(Fidelity::Physical);
    lam = lambda_matrix(pts, m.params, fid);
    quad = w.dot(lam * w);
  } else {
    const detail::CubeRule rule = detail::cube_rule(m.dim(), opt.quad_nodes, opt.seed);
    quad = 0.0;
    for (Eigen::Index i = 0; i < rule.points.rows(); ++i) {
      const Vector xn = rule.points.row(i).transpose();
      const double t = w.dot(detail::extended_cross_cov(m, x_next, xn));
      quad += rule.weights[i] * t * t;
    }
  }
  return detail::finish(m, cache, normal::sf(z), h * quad / s, opt);
}

inline CriterionEval icmse_nocensor_training(const FittedModel& m, const Vector& x_next, double c,
                                             const CriterionOptions& opt = {}) {
  return icmse_nocensor_training(m, make_criterion_cache(m), x_next, c, opt);
}

inline HcMatrix hc_matrix(const FittedModel& m, const CriterionCache& cache, const Vector& x_next,
                          const CriterionOptions& opt = {}) {
  const detail::CandidateLaw law = detail::candidate_law(m, cache, x_next);
  const detail::HcCompact hc = detail::hc_compact(m, law, m.censor_limit, opt);
  const int n = m.n();
  const int nu = m.n_uncensored();
  const int nc = m.n_censored;
  HcMatrix out;
  out.matrix = Matrix::Zero(n + 1, n + 1);
  out.matrix.block(nu, nu, nc, nc) = hc.h.topLeftCorner(nc, nc);
  out.matrix.block(nu, n, nc, 1) = hc.h.block(0, nc, nc, 1);
  out.matrix.block(n, nu, 1, nc) = hc.h.block(nc, 0, 1, nc);
  out.matrix(n, n) = hc.h(nc, nc);
  out.lambda = hc.lambda;
  out.y_gt = hc.y_gt;
  out.y_lt = hc.y_lt;
  return out;
}

inline HcMatrix hc_matrix(const FittedModel& m, const Vector& x_next,
                          const CriterionOptions& opt = {}) {
  return hc_matrix(m, make_criterion_cache(m), x_next, opt);
}

/// ICMSE for censored training data (any model mode).
inline CriterionEval icmse_general(const FittedModel& m, const CriterionCache& cache,
                                   const Vector& x_next, const CriterionOptions& opt = {}) {
  return detail::general_with_limit(m, cache, x_next, m.censor_limit, opt);
}

inline CriterionEval icmse_general(const FittedModel& m, const Vector& x_next,
                                   const CriterionOptions& opt = {}) {
  return icmse_general(m, make_criterion_cache(m), x_next, opt);
}

/// Sequential IMSE ignoring censoring of the next run. `Impute` expects the
/// model refitted on data with censored values taken as exact; `Cen` keeps the
/// censored GP.
inline CriterionEval imse_baseline(const FittedModel& m, const CriterionCache& cache,
                                   const Vector& x_next, ImseVariant variant,
                                   const CriterionOptions& opt = {}) {
  if (variant == ImseVariant::Impute && m.n_censored > 0) {
    throw ModeError("imse_baseline: Impute variant needs a model without censored rows");
  }
  return detail::general_with_limit(m, cache, x_next, std::numeric_limits<double>::infinity(),
                                    opt);
}

inline CriterionEval imse_baseline(const FittedModel& m, const Vector& x_next, ImseVariant variant,
                                   const CriterionOptions& opt = {}) {
  return imse_baseline(m, make_criterion_cache(m), x_next, variant, opt);
}

inline double rmse(const Vector& predictions, const Vector& truths) {
  if (predictions.size() == 0) throw ArgumentError("rmse: empty input");
  if (predictions.size() != truths.size()) throw ArgumentError("rmse: length mismatch");
  return std::sqrt((predictions - truths).squaredNorm() / static_cast<double>(predictions.size()));
}

inline double interval_score(double lower, double upper, double truth, double alpha) {
  if (!(lower <= upper)) throw ArgumentError("interval_score: lower > upper");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("interval_score: alpha outside (0,1)");
  return (upper - lower) + (2.0 / alpha) * std::max(lower - truth, 0.0) +
         (2.0 / alpha) * std::max(truth - upper, 0.0);
}

inline constexpr double kIntervalAlpha = 0.32;

/// Mean score of the intervals [mean - sd, mean + sd].
inline double mean_interval_score(const Vector& means, const Vector& vars, const Vector& truths,
                                  double alpha = kIntervalAlpha) {
  if (means.size() == 0) throw ArgumentError("mean_interval_score: empty input");
  if (means.size() != vars.size() || means.size() != truths.size()) {
    throw ArgumentError("mean_interval_score: length mismatch");
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < means.size(); ++i) {
    if (!(vars[i] >= 0.0)) throw ArgumentError("mean_interval_score: negative variance");
    const double sd = std::sqrt(vars[i]);
    acc += interval_score(means[i] - sd, means[i] + sd, truths[i], alpha);
  }
  return acc / static_cast<double>(means.size());
}

}  // namespace icmse
