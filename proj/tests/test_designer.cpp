#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "icmse/designer.hpp"

using namespace icmse;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector pt(double a) { return Vector::Constant(1, a); }

// max over anchored boxes [0,a) x [0,b) with corners on the point grid
double star_discrepancy_2d(const Matrix& pts) {
  const int n = static_cast<int>(pts.rows());
  std::vector<double> xs{1.0}, ys{1.0};
  for (int i = 0; i < n; ++i) {
    xs.push_back(pts(i, 0));
    ys.push_back(pts(i, 1));
  }
  double worst = 0.0;
  for (double a : xs) {
    for (double b : ys) {
      int open = 0, closed = 0;
      for (int i = 0; i < n; ++i) {
        open += pts(i, 0) < a && pts(i, 1) < b;
        closed += pts(i, 0) <= a && pts(i, 1) <= b;
      }
      worst = std::max({worst, a * b - static_cast<double>(open) / n,
                        static_cast<double>(closed) / n - a * b});
    }
  }
  return worst;
}

Problem short_problem(ProblemKind k, double c) {
  Problem pr = make_problem(k);
  pr.c = c;
  return pr;
}

}  // namespace

// ---- initial designs -----------------------------------------------------------

TEST(InitialDesign, OneDimensionalGaps) {
  const Matrix d = initial_design(6, 1, 3);
  std::vector<double> v(d.data(), d.data() + 6);
  std::sort(v.begin(), v.end());
  for (int i = 1; i < 6; ++i) EXPECT_GE(v[i] - v[i - 1], 1.0 / 12.0);
  for (double x : v) {
    EXPECT_GT(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

TEST(InitialDesign, LatinColumnsAndFiniteCriterion) {
  const Matrix d = initial_design(10, 3, 8);
  for (int l = 0; l < 3; ++l) {
    std::set<double> col;
    for (int i = 0; i < 10; ++i) col.insert(d(i, l));
    EXPECT_EQ(col.size(), 10u);
    std::vector<double> s(col.begin(), col.end());
    for (int i = 0; i < 10; ++i) EXPECT_NEAR(s[i], (i + 0.5) / 10.0, 1e-15);
  }
  EXPECT_TRUE(std::isfinite(maxpro_criterion(d)));
}

TEST(InitialDesign, DeterministicAndSeedSensitive) {
  EXPECT_EQ(initial_design(12, 2, 5), initial_design(12, 2, 5));
  EXPECT_NE(initial_design(12, 2, 5), initial_design(12, 2, 6));
}

TEST(InitialDesign, PolishNeverWorseThanRandomLatinHypercube) {
  std::mt19937_64 rng(1);
  const Matrix d = initial_design(12, 2, 1);
  const double best = maxpro_criterion(d);
  for (int t = 0; t < 50; ++t) {
    Matrix r(12, 2);
    for (int l = 0; l < 2; ++l) {
      std::vector<int> perm(12);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (int i = 0; i < 12; ++i) r(i, l) = (perm[i] + 0.5) / 12.0;
    }
    EXPECT_LE(best, maxpro_criterion(r) * (1.0 + 1e-12));
  }
}

TEST(InitialDesign, RejectsTooFewRuns) { EXPECT_THROW(initial_design(1, 2, 0), ArgumentError); }

TEST(MaxPro, HandComputedCriterion) {
  Matrix d(3, 2);
  d << 0.1, 0.2, 0.5, 0.9, 0.8, 0.4;
  auto term = [](double a, double b) { return 1.0 / (a * a * b * b); };
  const double expected = term(0.4, 0.7) + term(0.7, 0.2) + term(0.3, 0.5);
  EXPECT_NEAR(maxpro_criterion(d), expected, 1e-12 * expected);
}

// ---- Sobol' ------------------------------------------------------------------

TEST(SobolPoints, FirstPointIsOriginAdjacent) {
  const Matrix s = sobol_points(1, 3, 0);
  for (int l = 0; l < 3; ++l) {
    EXPECT_GT(s(0, l), 0.0);
    EXPECT_LT(s(0, l), 1e-9);
  }
  // the next points of the unscrambled sequence
  const Matrix t = sobol_points(4, 2, 0);
  EXPECT_NEAR(t(1, 0), 0.5, 1e-9);
  EXPECT_NEAR(t(1, 1), 0.5, 1e-9);
  EXPECT_NEAR(t(2, 0), 0.75, 1e-9);
  EXPECT_NEAR(t(2, 1), 0.25, 1e-9);
}

TEST(SobolPoints, LowerDiscrepancyThanUniform) {
  const double sob = star_discrepancy_2d(sobol_points(128, 2, 0));
  std::vector<double> uni;
  for (int s = 0; s < 20; ++s) {
    std::mt19937_64 rng(s);
    Matrix u(128, 2);
    for (int i = 0; i < 128; ++i) {
      u(i, 0) = uniform01(rng);
      u(i, 1) = uniform01(rng);
    }
    uni.push_back(star_discrepancy_2d(u));
  }
  std::nth_element(uni.begin(), uni.begin() + 10, uni.end());
  EXPECT_LT(sob, uni[10]);
}

TEST(SobolPoints, DeterministicAndBounded) {
  EXPECT_EQ(sobol_points(50, 4, 9), sobol_points(50, 4, 9));
  EXPECT_NE(sobol_points(50, 4, 9), sobol_points(50, 4, 10));
  EXPECT_THROW(sobol_points(5, kSobolMaxDim + 1, 0), ArgumentError);
  EXPECT_THROW(sobol_points(0, 2, 0), ArgumentError);
}

// ---- test functions ------------------------------------------------------------

TEST(TestFunctions, OneDimensionalDifference) {
  for (double x : {0.0, 0.13, 0.5, 0.77, 1.0}) {
    EXPECT_NEAR(testfn_f_1d(x) - testfn_xi_1d(x), 1.25 * (x - 0.75) * (2 * x - 0.25) - 0.1, 1e-14);
  }
  EXPECT_NEAR(testfn_xi_1d(0.0), -0.4483, 2e-3);
}

TEST(TestFunctions, TwoDimensional) {
  EXPECT_NEAR(testfn_xi_2d(0.5, 0.5), (1.0 - std::exp(-1.0)) * 1814.5 / 159.5, 1e-13);
  EXPECT_NEAR(testfn_xi_2d(0.5, 0.5), 7.1913, 1e-3);
  for (double x1 : {0.0, 0.3, 1.0}) {
    const double r = (2300 * x1 * x1 * x1 + 1900 * x1 * x1 + 2092 * x1 + 6) /
                     (100 * x1 * x1 * x1 + 500 * x1 * x1 + 4 * x1 + 20);
    EXPECT_DOUBLE_EQ(testfn_xi_2d(x1, 0.0), r);
    // continuity of the limit
    EXPECT_NEAR(testfn_xi_2d(x1, 1e-6), r, 1e-12);
  }
  const double x1 = 0.4, x2 = 0.02;
  const double f = 0.25 * (testfn_xi_2d(0.45, 0.07) + testfn_xi_2d(0.45, 0.0) +
                           testfn_xi_2d(0.35, 0.07) + testfn_xi_2d(0.35, 0.0));
  EXPECT_NEAR(testfn_f_2d(x1, x2), f, 1e-12);
}

// ---- proposals -------------------------------------------------------------------

TEST(ProposeNext, FeasibleAndDominatesStarts) {
  std::vector<Observation> data;
  for (int i = 0; i < 6; ++i) {
    const double x = i / 5.0;
    data.push_back({pt(x), std::sin(4 * x), false, Fidelity::Physical});
  }
  Hyperparams hp;
  hp.signal_var = 0.5;
  hp.signal_ls = LengthscaleParams::from_rates(Vector::Constant(1, 6.0));
  hp.noise_var = 0.001;
  const FittedModel m = make_model(hp, data, 0.8, ModelMode::CensoredSingle);
  DesignConfig cfg;
  cfg.restarts = 6;
  const std::uint64_t seed = 41;
  const Proposal prop = propose_next(m, Method::ICMSE, cfg, Matrix(), seed);
  EXPECT_GE(prop.x[0], 0.0);
  EXPECT_LE(prop.x[0], 1.0);
  std::mt19937_64 rng(seed);
  CriterionOptions opt;
  opt.tmvn = cfg.criterion_tmvn;
  opt.seed = seed;
  for (int r = 0; r < cfg.restarts; ++r) {
    const double s = uniform01(rng);
    EXPECT_LE(prop.eval.value, icmse_general(m, pt(s), opt).value);
  }
}

TEST(ProposeNext, AvoidsTheCensoredRegion) {
  // six equispaced noiseless runs of the 1D test function, one censored
  const double c = 0.55;
  std::vector<Observation> data;
  int nc = 0;
  for (int i = 0; i < 6; ++i) {
    const double x = i / 5.0;
    const double y = testfn_xi_1d(x);
    data.push_back({pt(x), std::min(y, c), y >= c, Fidelity::Physical});
    nc += y >= c;
  }
  ASSERT_EQ(nc, 1);
  FitConfig fc;
  fc.noise_var = 0.01;
  fc.seed = 3;
  const FittedModel m = fit_mle(data, c, ModelMode::CensoredSingle, fc);
  DesignConfig cfg;
  const Proposal prop = propose_next(m, Method::ICMSE, cfg, Matrix(), 17);
  EXPECT_LT(censoring_probability(m, prop.x), 0.5);
  for (const auto& o : data) EXPECT_GT(std::abs(o.x[0] - prop.x[0]), 0.05);
  // grid scan agrees with the optimiser up to its tolerance
  CriterionOptions opt;
  opt.tmvn = cfg.criterion_tmvn;
  opt.seed = 17;
  double grid_best = kInf;
  for (int i = 0; i <= 400; ++i) grid_best = std::min(grid_best, icmse_general(m, pt(i / 400.0), opt).value);
  EXPECT_LE(prop.eval.value, grid_best + 1e-6 * std::abs(grid_best));
}

TEST(ProposeNext, SeqMaxProFillsTheLargestGap) {
  Matrix existing(3, 1);
  existing << 0.0, 0.2, 1.0;
  std::vector<Observation> data{{pt(0.0), 0.0, false, Fidelity::Physical},
                                {pt(0.2), 0.1, false, Fidelity::Physical},
                                {pt(1.0), 0.3, false, Fidelity::Physical}};
  Hyperparams hp;
  hp.signal_ls = LengthscaleParams::from_rates(Vector::Constant(1, 3.0));
  const FittedModel m = make_model(hp, data, kInf, ModelMode::CensoredSingle);
  DesignConfig cfg;
  const Proposal prop = propose_next(m, Method::SeqMaxPro, cfg, existing, 2);
  // minimiser of 1/x^2 + 1/(x-0.2)^2 + 1/(1-x)^2 on (0.2, 1)
  double best_x = 0.0, best = kInf;
  for (int i = 1; i < 80000; ++i) {
    const double x = 0.2 + 0.8 * i / 80000.0;
    const double v = 1 / (x * x) + 1 / ((x - 0.2) * (x - 0.2)) + 1 / ((1 - x) * (1 - x));
    if (v < best) best = v, best_x = x;
  }
  EXPECT_NEAR(prop.x[0], best_x, 1e-3);
}

// ---- campaigns -----------------------------------------------------------------

TEST(Campaign, NoCensoringMakesIcmseAndImseCenIdentical) {
  const Problem pr = short_problem(ProblemKind::OneDSingle, kInf);
  DesignConfig cfg;
  cfg.n_seq = 3;
  cfg.restarts = 4;
  cfg.fit_restarts = 2;
  cfg.seed = 5;
  cfg.noise_var = 0.01;
  cfg.method = Method::ICMSE;
  const CampaignHistory a = run_campaign_sim(pr, cfg);
  cfg.method = Method::IMSE_Cen;
  const CampaignHistory b = run_campaign_sim(pr, cfg);
  ASSERT_EQ(a.proposals.size(), 3u);
  ASSERT_EQ(b.proposals.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.proposals[i].x, b.proposals[i].x);
    EXPECT_EQ(a.metrics_per_step[i].rmse, b.metrics_per_step[i].rmse);
  }
}

TEST(Campaign, DeterministicAndConsistent) {
  const Problem pr = make_problem(ProblemKind::OneDBi);
  DesignConfig cfg;
  cfg.n_seq = 4;
  cfg.restarts = 3;
  cfg.fit_restarts = 2;
  cfg.seed = 9;
  cfg.noise_var = 0.01;
  const CampaignHistory a = run_campaign_sim(pr, cfg);
  const CampaignHistory b = run_campaign_sim(pr, cfg);
  ASSERT_TRUE(a.termination.empty()) << a.termination;
  ASSERT_EQ(a.observations.size(), 6u + 4u);
  EXPECT_EQ(a.proposals.size(), 4u);
  EXPECT_EQ(a.metrics_per_step.size(), 4u);
  for (std::size_t i = 0; i < a.observations.size(); ++i) {
    EXPECT_EQ(a.observations[i].x, b.observations[i].x);
    EXPECT_EQ(a.observations[i].value, b.observations[i].value);
  }
  for (std::size_t i = 0; i < a.metrics_per_step.size(); ++i) {
    EXPECT_EQ(a.metrics_per_step[i].rmse, b.metrics_per_step[i].rmse);
    EXPECT_EQ(a.metrics_per_step[i].mis, b.metrics_per_step[i].mis);
  }
  // computer runs first, then one physical run per proposal
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(a.observations[i].fidelity, Fidelity::Computer);
    EXPECT_NEAR(a.observations[i].x[0], i / 5.0, 1e-15);
  }
  int censored = 0;
  for (std::size_t k = 0; k < a.proposals.size(); ++k) {
    const Observation& o = a.observations[6 + k];
    EXPECT_EQ(o.fidelity, Fidelity::Physical);
    EXPECT_EQ(o.x, a.proposals[k].x);
    EXPECT_GE(o.x[0], 0.0);
    EXPECT_LE(o.x[0], 1.0);
    if (o.censored) {
      EXPECT_EQ(o.value, pr.c);
    } else {
      EXPECT_LT(o.value, pr.c);
    }
    censored += o.censored;
    EXPECT_EQ(a.metrics_per_step[k].censored_count, censored);
    EXPECT_EQ(a.metrics_per_step[k].step, static_cast<int>(k) + 1);
    EXPECT_EQ(a.metrics_per_step[k].seconds, 0.0);
  }
}

TEST(Campaign, InvalidConfigIsRejected) {
  DesignConfig cfg;
  cfg.n_ini = 1;
  EXPECT_THROW(run_campaign_sim(make_problem(ProblemKind::OneDBi), cfg), ValidationError);
  cfg.n_ini = 6;
  cfg.restarts = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Campaign, BenchmarkCsvLayout) {
  CampaignHistory h;
  h.metrics_per_step.push_back({1, 0.25, 1.5, 0, 0.0});
  h.metrics_per_step.push_back({2, 0.1, 0.75, 1, 0.0});
  std::ostringstream os;
  write_benchmark_header(os);
  write_benchmark_rows(os, Method::ICMSE, 3, h);
  EXPECT_EQ(os.str(),
            "method,replication,step,rmse,mis,censored_count,seconds\n"
            "icmse,3,1,0.25,1.5,0,0\n"
            "icmse,3,2,0.10000000000000001,0.75,1,0\n");
}

TEST(Campaign, MethodNames) {
  for (Method m : {Method::ICMSE, Method::IMSE_Impute, Method::IMSE_Cen, Method::SeqMaxPro}) {
    EXPECT_EQ(method_from_string(to_string(m)), m);
  }
  EXPECT_THROW(method_from_string("bogus"), ValidationError);
  EXPECT_THROW(problem_from_string("3d"), ValidationError);
}
