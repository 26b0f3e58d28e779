#pragma once

// Sequential design: initial MaxPro designs, criterion minimisation, and the
// simulated campaign loop used by the benchmarks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "icmse/criteria.hpp"
#include "icmse/errors.hpp"
#include "icmse/gpmodel.hpp"
#include "icmse/lowdiscrepancy.hpp"
#include "icmse/nelder_mead.hpp"
#include "icmse/normal.hpp"

namespace icmse {

enum class Method { ICMSE, IMSE_Impute, IMSE_Cen, SeqMaxPro };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::ICMSE: return "icmse";
    case Method::IMSE_Impute: return "imse-impute";
    case Method::IMSE_Cen: return "imse-cen";
    case Method::SeqMaxPro: return "seqmaxpro";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "icmse") return Method::ICMSE;
  if (s == "imse-impute") return Method::IMSE_Impute;
  if (s == "imse-cen") return Method::IMSE_Cen;
  if (s == "seqmaxpro" || s == "maxpro") return Method::SeqMaxPro;
  throw ValidationError("method", "unknown method '" + s + "'");
}

struct DesignConfig {
  int p = 1;
  int n_ini = 6;
  int n_seq = 20;
  double c = std::numeric_limits<double>::infinity();
  bool bifidelity = false;
  Method method = Method::ICMSE;
  int restarts = 10;
  std::uint64_t seed = 0;

  std::optional<double> noise_var;  // known measurement noise, otherwise estimated
  int fit_restarts = 3;
  bool record_time = false;
  TmvnOptions criterion_tmvn{1 << 11, 1 << 12, 4};

  void validate() const {
    if (p < 1) throw ValidationError("p", "p must be at least 1");
    if (n_ini < 2) throw ValidationError("n_ini", "n_ini must be at least 2");
    if (n_seq < 0) throw ValidationError("n_seq", "n_seq must be nonnegative");
    if (restarts < 1) throw ValidationError("restarts", "restarts must be at least 1");
    if (fit_restarts < 1) throw ValidationError("fit_restarts", "fit_restarts must be at least 1");
    if (std::isnan(c)) throw ValidationError("c", "censoring limit is NaN");
    if (noise_var && !(*noise_var >= 0.0)) {
      throw ValidationError("noise_var", "noise variance must be nonnegative");
    }
  }
};

struct Proposal {
  Vector x;
  CriterionEval eval;
};

struct StepMetrics {
  int step = 0;
  double rmse = 0.0;
  double mis = 0.0;
  int censored_count = 0;  // censored sequential runs so far
  double seconds = 0.0;
};

struct CampaignHistory {
  std::vector<Observation> observations;
  std::vector<Proposal> proposals;
  std::vector<StepMetrics> metrics_per_step;
  std::vector<double> wallclock_per_step;
  std::string termination;  // empty when the campaign ran to completion
};

// ---- space-filling designs ------------------------------------------------

/// sum_{i<j} prod_l (x_il - x_jl)^-2
inline double maxpro_criterion(const Matrix& d) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      double prod = 1.0;
      for (Eigen::Index l = 0; l < d.cols(); ++l) {
        const double diff = d(i, l) - d(j, l);
        prod *= diff * diff;
      }
      s += 1.0 / prod;
    }
  }
  return s;
}

/// Best of 200 seeded midpoint Latin hypercubes under the MaxPro criterion,
/// refined by pairwise coordinate exchanges.
inline Matrix initial_design(int n, int p, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("initial_design: n must be at least 2");
  if (p < 1) throw ArgumentError("initial_design: p must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<int> perm(n);
  Matrix best;
  double best_val = std::numeric_limits<double>::infinity();
  for (int cand = 0; cand < 200; ++cand) {
    Matrix d(n, p);
    for (int l = 0; l < p; ++l) {
      std::iota(perm.begin(), perm.end(), 0);
      for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(perm[i], perm[j]);
      }
      for (int i = 0; i < n; ++i) d(i, l) = (perm[i] + 0.5) / n;
    }
    const double v = maxpro_criterion(d);
    if (v < best_val) {
      best_val = v;
      best = d;
    }
  }
  for (int pass = 0; pass < 20; ++pass) {
    bool improved = false;
    for (int l = 0; l < p; ++l) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < i; ++j) {
          std::swap(best(i, l), best(j, l));
          const double v = maxpro_criterion(best);
          if (v < best_val * (1.0 - 1e-12)) {
            best_val = v;
            improved = true;
          } else {
            std::swap(best(i, l), best(j, l));
          }
        }
      }
    }
    if (!improved) break;
  }
  return best;
}

/// First n points of the Sobol' sequence; seed 0 is unscrambled.
inline Matrix sobol_points(int n, int p, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("sobol_points: n must be at least 1");
  if (p < 1 || p > kSobolMaxDim) {
    throw ArgumentError("sobol_points: dimension must be in 1.." + std::to_string(kSobolMaxDim));
  }
  SobolSequence seq(p, seed);
  Matrix pts(n, p);
  std::vector<double> buf(p);
  for (int i = 0; i < n; ++i) {
    seq.next(buf.data());
    for (int l = 0; l < p; ++l) pts(i, l) = buf[l];
  }
  return pts;
}

// ---- test functions ---------------------------------------------------------

inline double testfn_xi_1d(double x) {
  return 0.5 * std::sin(10.0 * (x - 1.02) * (x - 1.02)) - 1.25 * (x - 0.75) * (2.0 * x - 0.25) +
         0.2;
}

inline double testfn_f_1d(double x) {
  return 0.5 * std::sin(10.0 * (x - 1.02) * (x - 1.02)) + 0.1;
}

inline double testfn_xi_2d(double x1, double x2) {
  const double bracket = x2 > 0.0 ? 1.0 - std::exp(-1.0 / (2.0 * x2)) : 1.0;
  const double num = 2300.0 * x1 * x1 * x1 + 1900.0 * x1 * x1 + 2092.0 * x1 + 6.0;
  const double den = 100.0 * x1 * x1 * x1 + 500.0 * x1 * x1 + 4.0 * x1 + 20.0;
  return bracket * num / den;
}

inline double testfn_f_2d(double x1, double x2) {
  const double d = 1.0 / 20.0;
  const double lo2 = std::max(x2 - d, 0.0);
  return 0.25 * (testfn_xi_2d(x1 + d, x2 + d) + testfn_xi_2d(x1 + d, lo2) +
                 testfn_xi_2d(x1 - d, x2 + d) + testfn_xi_2d(x1 - d, lo2));
}

// ---- problems --------------------------------------------------------------

enum class ProblemKind { OneDSingle, OneDBi, TwoDBi, Custom };

struct Problem {
  ProblemKind kind = ProblemKind::Custom;
  std::string name;
  int p = 1;
  bool bifidelity = false;
  double noise_sd = 0.0;
  double c = std::numeric_limits<double>::infinity();
  std::function<double(const Vector&)> xi;
  std::function<double(const Vector&)> f;  // computer model, bi-fidelity only
  std::function<Matrix(int n_ini, std::uint64_t seed)> initial;
  Matrix test_points;
};

inline Matrix equispaced(int n) {
  Matrix d(n, 1);
  for (int i = 0; i < n; ++i) d(i, 0) = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
  return d;
}

inline Problem make_problem(ProblemKind kind) {
  Problem pr;
  pr.kind = kind;
  switch (kind) {
    case ProblemKind::OneDSingle:
    case ProblemKind::OneDBi: {
      pr.name = kind == ProblemKind::OneDSingle ? "1d-single" : "1d-bi";
      pr.p = 1;
      pr.bifidelity = kind == ProblemKind::OneDBi;
      pr.noise_sd = 0.1;
      pr.c = 0.55;
      pr.xi = [](const Vector& x) { return testfn_xi_1d(x[0]); };
      pr.f = [](const Vector& x) { return testfn_f_1d(x[0]); };
      pr.initial = [](int n, std::uint64_t) { return equispaced(n); };
      pr.test_points = equispaced(1000);
      break;
    }
    case ProblemKind::TwoDBi: {
      pr.name = "2d-bi";
      pr.p = 2;
      pr.bifidelity = true;
      pr.noise_sd = 1.0;
      pr.c = 10.0;
      pr.xi = [](const Vector& x) { return testfn_xi_2d(x[0], x[1]); };
      pr.f = [](const Vector& x) { return testfn_f_2d(x[0], x[1]); };
      pr.initial = [](int n, std::uint64_t seed) { return initial_design(n, 2, seed); };
      pr.test_points = sobol_points(200, 2, 0);
      break;
    }
    case ProblemKind::Custom:
      pr.name = "custom";
      break;
  }
  return pr;
}

inline ProblemKind problem_from_string(const std::string& s) {
  if (s == "1d-single") return ProblemKind::OneDSingle;
  if (s == "1d-bi") return ProblemKind::OneDBi;
  if (s == "2d-bi") return ProblemKind::TwoDBi;
  throw ValidationError("problem", "unknown problem '" + s + "'");
}

// ---- proposals ----------------------------------------------------------------

/// Criterion used by `method`, scored without the candidate-free constant.
/// `existing` holds every design input so far (SeqMaxPro only).
inline CriterionEval score_candidate(const FittedModel& model, const CriterionCache& cache,
                                     Method method, const Vector& x, const Matrix& existing,
                                     const CriterionOptions& opt) {
  switch (method) {
    case Method::ICMSE: return icmse_general(model, cache, x, opt);
    case Method::IMSE_Impute: return imse_baseline(model, cache, x, ImseVariant::Impute, opt);
    case Method::IMSE_Cen: return imse_baseline(model, cache, x, ImseVariant::Cen, opt);
    case Method::SeqMaxPro: {
      CriterionEval ev;
      double s = 0.0;
      for (Eigen::Index i = 0; i < existing.rows(); ++i) {
        double prod = 1.0;
        for (Eigen::Index l = 0; l < x.size(); ++l) {
          const double d = existing(i, l) - x[l];
          prod *= d * d;
        }
        s += 1.0 / prod;
      }
      ev.value = s;
      return ev;
    }
  }
  throw ArgumentError("score_candidate: unknown method");
}

/// Multistart Nelder-Mead over [0,1]^p. For IMSE-Impute the model must be
/// the one fitted on imputed data.
inline Proposal propose_next(const FittedModel& model, Method method, const DesignConfig& cfg,
                             const Matrix& existing, std::uint64_t seed) {
  cfg.validate();
  const int p = cfg.p;
  if (model.dim() != p) throw ArgumentError("propose_next: model dimension differs from config");
  const CriterionCache cache =
      method == Method::SeqMaxPro ? CriterionCache{} : make_criterion_cache(model);
  CriterionOptions opt;
  opt.tmvn = cfg.criterion_tmvn;
  opt.seed = seed;
  auto objective = [&](const Vector& x) {
    try {
      const double v = score_candidate(model, cache, method, x, existing, opt).value;
      return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  const Vector lo = Vector::Zero(p);
  const Vector hi = Vector::Ones(p);
  NelderMeadOptions nm;
  std::mt19937_64 rng(seed);
  Proposal best;
  best.eval.value = std::numeric_limits<double>::infinity();
  std::string diag;
  for (int r = 0; r < cfg.restarts; ++r) {
    Vector start(p);
    for (int l = 0; l < p; ++l) start[l] = uniform01(rng);
    const NelderMeadResult res = nelder_mead(objective, start, lo, hi, nm);
    if (res.value < best.eval.value) {
      best.x = res.x;
      best.eval.value = res.value;
    }
    if (!std::isfinite(res.value)) diag += " restart " + std::to_string(r) + " non-finite;";
  }
  if (!std::isfinite(best.eval.value)) {
    throw ProposalError("propose_next: every restart returned a non-finite criterion:" + diag);
  }
  best.eval = score_candidate(model, cache, method, best.x, existing, opt);
  if (method == Method::SeqMaxPro) best.eval.lambda = censoring_probability(model, best.x);
  return best;
}

// ---- simulated campaigns ---------------------------------------------------------

namespace detail {

inline double normal_draw(std::mt19937_64& rng) {
  double u = uniform01(rng);
  while (u <= 0.0) u = uniform01(rng);
  return normal::quantile(u);
}

inline ModelMode campaign_mode(bool bifidelity) {
  return bifidelity ? ModelMode::CensoredBiFidelity : ModelMode::CensoredSingle;
}

inline Matrix design_inputs(const std::vector<Observation>& obs, int p) {
  Matrix x(static_cast<Eigen::Index>(obs.size()), p);
  for (std::size_t i = 0; i < obs.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = obs[i].x.transpose();
  return x;
}

inline bool near_existing(const Vector& x, const std::vector<Observation>& obs, double tol) {
  for (const auto& o : obs) {
    if ((o.x - x).lpNorm<Eigen::Infinity>() < tol) return true;
  }
  return false;
}

}  // namespace detail

/// Test-set RMSE and mean interval score of a model against the noiseless mean.
inline std::pair<double, double> evaluate_model(const FittedModel& model, const Problem& pr) {
  const Eigen::Index nt = pr.test_points.rows();
  Vector mu(nt), var(nt), truth(nt);
  for (Eigen::Index i = 0; i < nt; ++i) {
    const Vector x = pr.test_points.row(i).transpose();
    const Prediction pd = predict(model, x);
    mu[i] = pd.mean;
    var[i] = pd.var;
    truth[i] = pr.xi(x);
  }
  return {rmse(mu, truth), mean_interval_score(mu, var, truth)};
}

inline FitConfig campaign_fit_config(const DesignConfig& cfg, int step,
                                     const std::optional<Hyperparams>& warm) {
  FitConfig fc;
  fc.restarts = cfg.fit_restarts;
  fc.seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(step) * 7919ULL + 1;
  fc.noise_var = cfg.noise_var;
  fc.warm_start = warm;
  return fc;
}

/// Runs the sequential design loop against a simulated experiment.
/// Deterministic given the problem and config (including the seed).
inline CampaignHistory run_campaign_sim(const Problem& pr, DesignConfig cfg) {
  cfg.p = pr.p;
  cfg.bifidelity = pr.bifidelity;
  cfg.c = pr.c;
  cfg.validate();
  if (!pr.xi || !pr.initial || (pr.bifidelity && !pr.f)) {
    throw ArgumentError("run_campaign_sim: problem is missing its response functions");
  }
  CampaignHistory hist;
  std::mt19937_64 noise(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  using clock = std::chrono::steady_clock;

  auto simulate_physical = [&](const Vector& x) {
    const double y = pr.xi(x) + pr.noise_sd * detail::normal_draw(noise);
    Observation o{x, y, false, Fidelity::Physical};
    if (y >= pr.c) {
      o.value = pr.c;
      o.censored = true;
    }
    return o;
  };

  const Matrix x0 = pr.initial(cfg.n_ini, cfg.seed);
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const Vector x = x0.row(i).transpose();
    if (pr.bifidelity) {
      hist.observations.push_back({x, pr.f(x), false, Fidelity::Computer});
    } else {
      hist.observations.push_back(simulate_physical(x));
    }
  }

  const ModelMode mode = detail::campaign_mode(pr.bifidelity);
  std::optional<Hyperparams> warm;
  std::optional<Hyperparams> warm_imputed;
  FittedModel model;
  try {
    model = fit_mle(hist.observations, pr.c, mode, campaign_fit_config(cfg, 0, warm));
  } catch (const Error& e) {
    hist.termination = std::string("initial fit failed: ") + e.what();
    return hist;
  }
  warm = model.params;

  int censored = 0;
  int near_hits = 0;
  for (int step = 1; step <= cfg.n_seq; ++step) {
    const auto t0 = clock::now();
    const std::uint64_t prop_seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(step);
    Proposal prop;
    try {
      if (cfg.method == Method::IMSE_Impute) {
        const auto imputed = impute_censored(hist.observations, pr.c);
        const ModelMode imode = pr.bifidelity ? ModelMode::CensoredBiFidelity : ModelMode::Standard;
        const FittedModel mi =
            fit_mle(imputed, pr.c, imode, campaign_fit_config(cfg, step + 100000, warm_imputed));
        warm_imputed = mi.params;
        prop = propose_next(mi, cfg.method, cfg, Matrix(), prop_seed);
      } else {
        prop = propose_next(model, cfg.method, cfg,
                            detail::design_inputs(hist.observations, pr.p), prop_seed);
      }
    } catch (const Error& e) {
      hist.termination = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
    if (cfg.method == Method::IMSE_Cen) {
      near_hits = detail::near_existing(prop.x, hist.observations, 1e-4) ? near_hits + 1 : 0;
      if (near_hits >= 2) {
        hist.termination = "step " + std::to_string(step) +
                           ": repeated proposals on existing design points";
        break;
      }
    }
    const Observation o = simulate_physical(prop.x);
    censored += o.censored;
    hist.observations.push_back(o);
    hist.proposals.push_back(prop);
    try {
      model = fit_mle(hist.observations, pr.c, mode, campaign_fit_config(cfg, step, warm));
    } catch (const Error& e) {
      hist.termination = "step " + std::to_string(step) + " fit: " + e.what();
      break;
    }
    warm = model.params;
    const auto [r, mis] = evaluate_model(model, pr);
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    hist.wallclock_per_step.push_back(secs);
    hist.metrics_per_step.push_back({step, r, mis, censored, cfg.record_time ? secs : 0.0});
  }
  return hist;
}

// ---- benchmark output -----------------------------------------------------

/// Seed of replication r (1-based) in a benchmark run with base seed `base`.
inline std::uint64_t replication_seed(std::uint64_t base, int r) {
  return base * 7919ULL + static_cast<std::uint64_t>(r);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_benchmark_header(std::ostream& os) {
  os << "method,replication,step,rmse,mis,censored_count,seconds\n";
}

inline void write_benchmark_rows(std::ostream& os, Method method, int replication,
                                 const CampaignHistory& hist) {
  for (const auto& m : hist.metrics_per_step) {
    os << to_string(method) << ',' << replication << ',' << m.step << ',' << format_double(m.rmse)
       << ',' << format_double(m.mis) << ',' << m.censored_count << ','
       << format_double(m.seconds) << '\n';
  }
}

}  // namespace icmse
