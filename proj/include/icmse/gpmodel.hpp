#pragma once

// Gaussian process models for right-censored data.
//
// A model keeps its rows in the order [computer, observed physical, censored].
// The censored rows enter through the truncated moments of their latent
// responses given the observed rows; predictions plug those moments in.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "icmse/errors.hpp"
#include "icmse/kernels.hpp"
#include "icmse/lowdiscrepancy.hpp"
#include "icmse/nelder_mead.hpp"
#include "icmse/normal.hpp"
#include "icmse/tmvn.hpp"

namespace icmse {

struct Observation {
  Vector x;
  double value = 0.0;
  bool censored = false;
  Fidelity fidelity = Fidelity::Physical;
};

enum class ModelMode { Standard, CensoredSingle, CensoredBiFidelity };

inline const char* to_string(ModelMode m) {
  switch (m) {
    case ModelMode::Standard: return "standard";
    case ModelMode::CensoredSingle: return "censored";
    case ModelMode::CensoredBiFidelity: return "bifidelity";
  }
  return "?";
}

struct Prediction {
  double mean = 0.0;
  double var = 0.0;
};

struct FittedModel {
  Hyperparams params;
  ModelMode mode = ModelMode::Standard;
  double censor_limit = std::numeric_limits<double>::infinity();
  std::vector<Observation> data;
  int n_computer = 0;
  int n_observed = 0;  // uncensored physical rows
  int n_censored = 0;

  Matrix points;  // one row per observation
  std::vector<Fidelity> fidelity;
  Matrix gamma;
  Eigen::LLT<Matrix> gamma_llt;

  // law of the latent censored responses given the uncensored rows
  Vector cond_mean_c;
  Matrix cond_cov_c;
  double log_prob_c = 0.0;
  Vector yc_hat;
  Matrix sigma_c;

  Vector response;  // [f, y_o, yc_hat]
  Vector alpha;     // Gamma^{-1} (response - mean)
  Matrix w_c;       // Gamma^{-1} E_C, n x n_c

  std::uint64_t seed = 0;
  TmvnOptions tmvn;
  double loglik = std::numeric_limits<double>::quiet_NaN();

  int n() const noexcept { return static_cast<int>(data.size()); }
  int n_uncensored() const noexcept { return n_computer + n_observed; }
  int dim() const noexcept { return params.dim(); }

  /// Covariances between every data row and the physical mean response at x.
  Vector cross_cov(const Vector& x) const {
    if (x.size() != dim()) throw ArgumentError("model: point has wrong dimension");
    Vector g(n());
    const Matrix cols = points.transpose();
    for (int i = 0; i < n(); ++i) {
      g[i] = row_response_covariance(params, cols.col(i).data(), fidelity[i], x.data());
    }
    return g;
  }
};

namespace detail {

inline void check_point(const Vector& x, int p, const char* what) {
  if (x.size() != p) throw ArgumentError(std::string(what) + ": point has wrong dimension");
  for (Eigen::Index l = 0; l < x.size(); ++l) {
    if (!std::isfinite(x[l])) throw ArgumentError(std::string(what) + ": non-finite coordinate");
  }
}

/// Stable reorder into [computer, observed physical, censored].
inline std::vector<Observation> order_rows(const std::vector<Observation>& data) {
  std::vector<Observation> out;
  out.reserve(data.size());
  for (const auto& o : data) {
    if (o.fidelity == Fidelity::Computer) out.push_back(o);
  }
  for (const auto& o : data) {
    if (o.fidelity == Fidelity::Physical && !o.censored) out.push_back(o);
  }
  for (const auto& o : data) {
    if (o.fidelity == Fidelity::Physical && o.censored) out.push_back(o);
  }
  return out;
}

inline void validate_observations(const std::vector<Observation>& data, int p, double c) {
  for (const auto& o : data) {
    check_point(o.x, p, "observation");
    if (o.censored && o.fidelity != Fidelity::Physical) {
      throw ValidationError("censored", "only physical observations can be censored");
    }
    if (o.censored && !std::isfinite(c)) {
      throw ValidationError("censored", "censored observation with an infinite censoring limit");
    }
    if (!o.censored && !std::isfinite(o.value)) {
      throw ValidationError("value", "observation value must be finite");
    }
  }
}

inline Matrix stack_points(const std::vector<Observation>& rows, int p) {
  Matrix pts(static_cast<Eigen::Index>(rows.size()), p);
  for (std::size_t i = 0; i < rows.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = rows[i].x;
  return pts;
}

}  // namespace detail

/// Assembles a model for fixed hyperparameters: factorises Gamma_n and computes
/// the truncated moments of the censored block.
inline FittedModel make_model(const Hyperparams& params, const std::vector<Observation>& data,
                              double censor_limit, ModelMode mode, std::uint64_t seed = 0,
                              const TmvnOptions& tmvn = {}) {
  params.validate();
  const int p = params.dim();
  if (p < 1) throw ArgumentError("make_model: hyperparameters have no lengthscales");
  if (std::isnan(censor_limit)) throw ArgumentError("make_model: censoring limit is NaN");
  detail::validate_observations(data, p, censor_limit);
  if (mode == ModelMode::CensoredBiFidelity && !params.bifidelity) {
    throw ModeError("bi-fidelity model requires bi-fidelity hyperparameters");
  }
  if (mode != ModelMode::CensoredBiFidelity && params.bifidelity) {
    throw ModeError("bi-fidelity hyperparameters given to a single-fidelity model");
  }

  FittedModel m;
  m.params = params;
  m.mode = mode;
  m.censor_limit = censor_limit;
  m.seed = seed;
  m.tmvn = tmvn;
  m.data = detail::order_rows(data);
  for (auto& o : m.data) {
    if (o.censored) o.value = censor_limit;
    if (o.fidelity == Fidelity::Computer) ++m.n_computer;
    else if (o.censored) ++m.n_censored;
    else ++m.n_observed;
  }
  if (mode == ModelMode::Standard && m.n_censored > 0) {
    throw ModeError("standard GP cannot hold censored rows (impute or use a censored model)");
  }
  if (mode == ModelMode::CensoredSingle && m.n_computer > 0) {
    throw ModeError("single-fidelity censored model cannot hold computer rows");
  }
  const int n = m.n();
  m.points = detail::stack_points(m.data, p);
  for (const auto& o : m.data) m.fidelity.push_back(o.fidelity);
  m.gamma = observation_covariance(params, m.points, m.fidelity);
  m.gamma_llt.compute(m.gamma);
  if (m.gamma_llt.info() != Eigen::Success) {
    const Matrix l = detail::robust_cholesky(m.gamma);
    m.gamma = l * l.transpose();
    m.gamma_llt.compute(m.gamma);
  }

  const int nu = m.n_uncensored();
  const int nc = m.n_censored;
  m.response.resize(n);
  for (int i = 0; i < n; ++i) m.response[i] = m.data[i].value;
  if (nc > 0) {
    const Matrix goo = m.gamma.topLeftCorner(nu, nu);
    const Matrix gco = m.gamma.block(nu, 0, nc, nu);
    const Matrix gcc = m.gamma.bottomRightCorner(nc, nc);
    Vector resid = m.response.head(nu).array() - params.mean;
    if (nu > 0) {
      const Eigen::LLT<Matrix> loo(goo);
      m.cond_mean_c = Vector::Constant(nc, params.mean) + gco * loo.solve(resid);
      m.cond_cov_c = gcc - gco * loo.solve(gco.transpose());
    } else {
      m.cond_mean_c = Vector::Constant(nc, params.mean);
      m.cond_cov_c = gcc;
    }
    m.cond_cov_c = 0.5 * (m.cond_cov_c + m.cond_cov_c.transpose());
    const TruncatedMoments tm = trunc_moments({m.cond_mean_c, m.cond_cov_c},
                                              Vector::Constant(nc, censor_limit), seed, tmvn);
    m.yc_hat = tm.mean;
    m.sigma_c = tm.cov;
    m.log_prob_c = tm.log_prob;
    m.response.tail(nc) = m.yc_hat;
    Matrix ec = Matrix::Zero(n, nc);
    ec.bottomRows(nc).setIdentity();
    m.w_c = m.gamma_llt.solve(ec);
  } else {
    m.yc_hat.resize(0);
    m.sigma_c.resize(0, 0);
    m.w_c.resize(n, 0);
  }
  m.alpha = m.gamma_llt.solve((m.response.array() - params.mean).matrix());
  return m;
}

namespace detail {

inline double clamp_variance(double v, double scale) {
  if (v >= 0.0) return v;
  if (v >= -1e-10 * std::max(1.0, scale)) return 0.0;
  throw NumericalError("negative predictive variance " + std::to_string(v));
}

inline Prediction predict_plugin(const FittedModel& m, const Vector& x) {
  detail::check_point(x, m.dim(), "predict");
  const double prior = m.params.prior_variance();
  if (m.n() == 0) return {m.params.mean, prior};
  const Vector g = m.cross_cov(x);
  const Vector gi = m.gamma_llt.solve(g);
  double var = prior - g.dot(gi);
  if (m.n_censored > 0) {
    const Vector u = m.w_c.transpose() * g;
    var += u.dot(m.sigma_c * u);
  }
  return {m.params.mean + g.dot(m.alpha), clamp_variance(var, prior)};
}

}  // namespace detail

/// Kriging predictor for uncensored data.
inline Prediction predict_standard(const FittedModel& m, const Vector& x) {
  if (m.mode != ModelMode::Standard || m.n_censored > 0) {
    throw ModeError("predict_standard: model is not a standard (uncensored) GP");
  }
  detail::check_point(x, m.dim(), "predict");
  const double prior = m.params.prior_variance();
  if (m.n() == 0) return {m.params.mean, prior};
  const Vector g = m.cross_cov(x);
  const Vector resid = (m.response.array() - m.params.mean).matrix();
  const double mean = m.params.mean + g.dot(m.gamma_llt.solve(resid));
  const double var = prior - g.dot(m.gamma_llt.solve(g));
  return {mean, detail::clamp_variance(var, prior)};
}

/// Censored-GP predictor (truncated moments of the censored block plugged in).
inline Prediction predict_censored(const FittedModel& m, const Vector& x) {
  if (m.mode != ModelMode::CensoredSingle) {
    throw ModeError("predict_censored: model is not a single-fidelity censored GP");
  }
  return detail::predict_plugin(m, x);
}

/// Bi-fidelity censored predictor for the physical mean response.
inline Prediction predict_bifidelity(const FittedModel& m, const Vector& x) {
  if (m.mode != ModelMode::CensoredBiFidelity) {
    throw ModeError("predict_bifidelity: model is not a bi-fidelity GP");
  }
  return detail::predict_plugin(m, x);
}

inline Prediction predict(const FittedModel& m, const Vector& x) {
  switch (m.mode) {
    case ModelMode::Standard: return predict_standard(m, x);
    case ModelMode::CensoredSingle: return predict_censored(m, x);
    case ModelMode::CensoredBiFidelity: return predict_bifidelity(m, x);
  }
  throw ModeError("predict: unknown mode");
}

/// Pointwise probability that a new physical measurement at x is censored.
inline double censoring_probability(const FittedModel& m, const Vector& x) {
  if (!std::isfinite(m.censor_limit)) return m.censor_limit > 0 ? 0.0 : 1.0;
  const Prediction pr = predict(m, x);
  const double sd = std::sqrt(pr.var + m.params.noise_var);
  if (!(sd > 0.0)) return pr.mean >= m.censor_limit ? 1.0 : 0.0;
  return normal::sf((m.censor_limit - pr.mean) / sd);
}

/// Log-likelihood of the data: Gaussian density of the uncensored rows times the
/// conditional probability that the censored latent responses exceed c.
/// Returns -inf for parameters with a non positive-definite covariance.
inline double censored_loglik(const Hyperparams& params, const std::vector<Observation>& data,
                              double c, std::uint64_t seed = 0, const TmvnOptions& tmvn = {}) {
  const int p = params.dim();
  detail::validate_observations(data, p, c);
  const std::vector<Observation> rows = detail::order_rows(data);
  int nu = 0;
  for (const auto& o : rows) nu += o.censored ? 0 : 1;
  const int nc = static_cast<int>(rows.size()) - nu;
  if (nu < 2) throw ArgumentError("censored_loglik: at least two uncensored observations needed");
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  try {
    params.validate();
  } catch (const ParameterError&) {
    return ninf;
  }
  const Matrix pts = detail::stack_points(rows, p);
  std::vector<Fidelity> fid;
  for (const auto& o : rows) fid.push_back(o.fidelity);
  const Matrix gamma = observation_covariance(params, pts, fid);
  const Matrix goo = gamma.topLeftCorner(nu, nu);
  const Eigen::LLT<Matrix> llt(goo);
  if (llt.info() != Eigen::Success) return ninf;
  Vector resid(nu);
  for (int i = 0; i < nu; ++i) resid[i] = rows[i].value - params.mean;
  const Vector sol = llt.solve(resid);
  const Matrix lmat = llt.matrixL();
  double logdet = 0.0;
  for (int i = 0; i < nu; ++i) logdet += 2.0 * std::log(lmat(i, i));
  double ll = -0.5 * resid.dot(sol) - 0.5 * logdet - 0.5 * nu * std::log(2.0 * std::numbers::pi);
  if (nc > 0) {
    const Matrix gco = gamma.block(nu, 0, nc, nu);
    Matrix cov = gamma.bottomRightCorner(nc, nc) - gco * llt.solve(gco.transpose());
    cov = 0.5 * (cov + cov.transpose());
    const Vector mean = Vector::Constant(nc, params.mean) + gco * sol;
    try {
      ll += log_orthant_prob({mean, cov}, Vector::Constant(nc, c), seed, tmvn);
    } catch (const NumericalError&) {
      return ninf;
    }
  }
  return std::isfinite(ll) || ll == ninf ? ll : ninf;
}

/// Replaces every censored response by the censoring limit, as if observed.
inline std::vector<Observation> impute_censored(std::vector<Observation> data, double c) {
  for (auto& o : data) {
    if (o.censored) {
      o.censored = false;
      o.value = c;
    }
  }
  return data;
}

struct FitConfig {
  int restarts = 5;
  int max_iters = 400;
  std::uint64_t seed = 0;
  std::optional<double> noise_var;         // known measurement noise variance
  std::optional<Hyperparams> warm_start;   // previous optimum, used as first start
  TmvnOptions likelihood_tmvn{1 << 10, 1 << 12, 4};
  TmvnOptions model_tmvn{};
};

namespace detail {

/// Maps between Hyperparams and the optimiser's coordinates
/// (log variances, log rates, and the prior mean when it is not profiled).
struct ParamPacking {
  int p = 1;
  bool bifidelity = false;
  bool with_discrepancy = false;  // bi-fidelity with physical rows
  bool noise_free = true;         // noise variance is optimised
  bool mean_free = false;         // mean is optimised (censored rows present)
  double fixed_noise = 0.0;
  Vector lo;
  Vector hi;

  int size() const {
    return 1 + p + (with_discrepancy ? 1 + p : 0) + (noise_free ? 1 : 0) + (mean_free ? 1 : 0);
  }

  Hyperparams unpack(const Vector& v, double mean) const {
    Hyperparams hp;
    hp.bifidelity = bifidelity;
    int k = 0;
    hp.signal_var = std::exp(v[k++]);
    hp.signal_ls = LengthscaleParams::from_rates(v.segment(k, p).array().exp().matrix());
    k += p;
    if (bifidelity) {
      if (with_discrepancy) {
        hp.discrepancy_var = std::exp(v[k++]);
        hp.discrepancy_ls = LengthscaleParams::from_rates(v.segment(k, p).array().exp().matrix());
        k += p;
      } else {
        hp.discrepancy_var = 0.0;
        hp.discrepancy_ls = hp.signal_ls;
      }
    }
    hp.noise_var = noise_free ? std::exp(v[k++]) : fixed_noise;
    hp.mean = mean_free ? v[k++] : mean;
    return hp;
  }

  Vector pack(const Hyperparams& hp) const {
    Vector v(size());
    int k = 0;
    v[k++] = std::log(hp.signal_var);
    for (int l = 0; l < p; ++l) v[k++] = std::log(hp.signal_ls.rates()[l]);
    if (with_discrepancy) {
      v[k++] = std::log(std::max(hp.discrepancy_var, 1e-300));
      const Vector r = hp.discrepancy_ls.dim() == p ? hp.discrepancy_ls.rates() : hp.signal_ls.rates();
      for (int l = 0; l < p; ++l) v[k++] = std::log(r[l]);
    }
    if (noise_free) v[k++] = std::log(std::max(hp.noise_var, 1e-300));
    if (mean_free) v[k++] = hp.mean;
    for (int i = 0; i < v.size(); ++i) v[i] = std::clamp(v[i], lo[i], hi[i]);
    return v;
  }
};

/// Generalised least squares mean for fixed covariance parameters.
inline double profiled_mean(const Hyperparams& hp, const std::vector<Observation>& rows, int p) {
  const Matrix pts = stack_points(rows, p);
  std::vector<Fidelity> fid;
  Vector y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    fid.push_back(rows[i].fidelity);
    y[static_cast<Eigen::Index>(i)] = rows[i].value;
  }
  const Eigen::LLT<Matrix> llt(observation_covariance(hp, pts, fid));
  if (llt.info() != Eigen::Success) return y.mean();
  const Vector ones = Vector::Ones(y.size());
  const Vector gi1 = llt.solve(ones);
  const double denom = ones.dot(gi1);
  return denom > 0.0 ? gi1.dot(y) / denom : y.mean();
}

}  // namespace detail

/// Maximum-likelihood fit by multistart Nelder-Mead. Deterministic given the seed.
inline FittedModel fit_mle(const std::vector<Observation>& data, double c, ModelMode mode,
                           const FitConfig& cfg = {}) {
  if (data.empty()) throw ArgumentError("fit_mle: no data");
  if (cfg.restarts < 1) throw ArgumentError("fit_mle: restarts must be at least 1");
  const int p = static_cast<int>(data.front().x.size());
  if (p < 1) throw ArgumentError("fit_mle: points must have at least one coordinate");
  detail::validate_observations(data, p, c);
  const std::vector<Observation> rows = detail::order_rows(data);

  int n_comp = 0;
  int n_phys = 0;
  int n_cens = 0;
  std::vector<double> values;
  for (const auto& o : rows) {
    if (o.fidelity == Fidelity::Computer) ++n_comp;
    else ++n_phys;
    if (o.censored) ++n_cens;
    else values.push_back(o.value);
  }
  if (mode == ModelMode::Standard && n_cens > 0) {
    throw ModeError("fit_mle: standard mode cannot use censored rows");
  }
  if (mode == ModelMode::CensoredSingle && n_comp > 0) {
    throw ModeError("fit_mle: computer rows need the bi-fidelity mode");
  }
  if (mode == ModelMode::CensoredBiFidelity && n_comp == 0) {
    throw ArgumentError("fit_mle: bi-fidelity fit needs computer observations");
  }
  if (values.size() < 2) throw ArgumentError("fit_mle: at least two uncensored observations needed");

  double ybar = 0.0;
  for (double v : values) ybar += v;
  ybar /= static_cast<double>(values.size());
  double s2 = 0.0;
  for (double v : values) s2 += (v - ybar) * (v - ybar);
  s2 /= static_cast<double>(values.size() - 1);
  if (!(s2 > 1e-12)) s2 = std::max(1e-12, ybar * ybar * 1e-4 + 1e-12);
  double ymin = *std::min_element(values.begin(), values.end());
  double ymax = *std::max_element(values.begin(), values.end());
  if (n_cens > 0) ymax = std::max(ymax, c);
  const double sd = std::sqrt(s2);

  detail::ParamPacking pk;
  pk.p = p;
  pk.bifidelity = mode == ModelMode::CensoredBiFidelity;
  pk.with_discrepancy = pk.bifidelity && n_phys > 0;
  const bool has_noisy_rows = n_phys > 0;
  pk.noise_free = has_noisy_rows && !cfg.noise_var.has_value();
  pk.fixed_noise = cfg.noise_var.value_or(0.0);
  if (pk.fixed_noise < 0.0) throw ArgumentError("fit_mle: noise variance must be nonnegative");
  pk.mean_free = n_cens > 0;
  const int dim = pk.size();
  pk.lo.resize(dim);
  pk.hi.resize(dim);
  {
    int k = 0;
    pk.lo[k] = std::log(1e-4 * s2);
    pk.hi[k++] = std::log(1e2 * s2);
    for (int l = 0; l < p; ++l, ++k) {
      pk.lo[k] = std::log(0.05);
      pk.hi[k] = std::log(200.0);
    }
    if (pk.with_discrepancy) {
      pk.lo[k] = std::log(1e-6 * s2);
      pk.hi[k++] = std::log(10.0 * s2);
      for (int l = 0; l < p; ++l, ++k) {
        pk.lo[k] = std::log(0.05);
        pk.hi[k] = std::log(200.0);
      }
    }
    if (pk.noise_free) {
      pk.lo[k] = std::log(1e-8 * s2);
      pk.hi[k++] = std::log(s2);
    }
    if (pk.mean_free) {
      pk.lo[k] = ymin - 3.0 * sd;
      pk.hi[k++] = ymax + 3.0 * sd;
    }
  }

  auto objective_params = [&](const Vector& v) -> Hyperparams {
    Hyperparams hp = pk.unpack(v, 0.0);
    if (!pk.mean_free) hp.mean = detail::profiled_mean(hp, rows, p);
    return hp;
  };
  auto objective = [&](const Vector& v) {
    const Hyperparams hp = objective_params(v);
    const double ll = censored_loglik(hp, rows, c, cfg.seed, cfg.likelihood_tmvn);
    return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
  };

  std::vector<Vector> starts;
  if (cfg.warm_start && cfg.warm_start->dim() == p && cfg.warm_start->bifidelity == pk.bifidelity) {
    Hyperparams ws = *cfg.warm_start;
    if (pk.with_discrepancy && !(ws.discrepancy_var > 0.0)) ws.discrepancy_var = 0.1 * s2;
    if (pk.noise_free && !(ws.noise_var > 0.0)) ws.noise_var = 0.01 * s2;
    starts.push_back(pk.pack(ws));
  } else {
    Hyperparams def;
    def.bifidelity = pk.bifidelity;
    def.signal_var = s2;
    def.signal_ls = LengthscaleParams::from_rates(Vector::Constant(p, 5.0));
    def.discrepancy_var = 0.1 * s2;
    def.discrepancy_ls = LengthscaleParams::from_rates(Vector::Constant(p, 5.0));
    def.noise_var = 0.01 * s2;
    def.mean = ybar;
    starts.push_back(pk.pack(def));
  }
  std::mt19937_64 rng(cfg.seed);
  while (static_cast<int>(starts.size()) < cfg.restarts) {
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v[i] = pk.lo[i] + (pk.hi[i] - pk.lo[i]) * uniform01(rng);
    starts.push_back(v);
  }

  NelderMeadOptions nm;
  nm.max_iters = cfg.max_iters;
  nm.tol_diameter = 1e-4;
  nm.initial_step = 0.1;
  Vector best;
  double best_val = std::numeric_limits<double>::infinity();
  for (const Vector& s : starts) {
    const NelderMeadResult r = nelder_mead(objective, s, pk.lo, pk.hi, nm);
    if (r.value < best_val) {
      best_val = r.value;
      best = r.x;
    }
  }
  if (!std::isfinite(best_val)) {
    throw FitError("fit_mle: every restart produced a non-finite likelihood", -best_val);
  }
  const Hyperparams hp = objective_params(best);
  FittedModel model = make_model(hp, rows, c, mode, cfg.seed, cfg.model_tmvn);
  model.loglik = -best_val;
  return model;
}

/// Estimated discrepancy between physical mean and computer model at x.
inline double discrepancy_estimate(const FittedModel& model_bi, const FittedModel& model_computer,
                                   const Vector& x) {
  return predict(model_bi, x).mean - predict(model_computer, x).mean;
}

}  // namespace icmse
