#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "icmse/tmvn.hpp"

using namespace icmse;

namespace {

struct SampleMoments {
  Vector mean;
  Matrix cov;
  double accept_rate;
};

// Plain rejection sampling from N(mean, cov) restricted to x >= lower.
SampleMoments rejection_moments(const MvnSpec& spec, const Vector& lower, long accepted,
                                std::uint64_t seed) {
  const int d = static_cast<int>(spec.mean.size());
  const Matrix l = Eigen::LLT<Matrix>(spec.cov).matrixL();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Vector z(d);
  Vector x(d);
  Vector s1 = Vector::Zero(d);
  Matrix s2 = Matrix::Zero(d, d);
  long got = 0;
  long tried = 0;
  while (got < accepted) {
    for (int i = 0; i < d; ++i) z[i] = n01(rng);
    x.noalias() = spec.mean + l * z;
    ++tried;
    if (((x - lower).array() >= 0.0).all()) {
      const Vector c = x - spec.mean;
      s1 += c;
      s2.noalias() += c * c.transpose();
      ++got;
    }
  }
  SampleMoments out;
  const Vector m = s1 / static_cast<double>(got);
  out.mean = spec.mean + m;
  out.cov = s2 / static_cast<double>(got) - m * m.transpose();
  out.accept_rate = static_cast<double>(got) / static_cast<double>(tried);
  return out;
}

MvnSpec random_spec(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Matrix a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = n01(rng);
  }
  Matrix cov = a * a.transpose() / d + 0.3 * Matrix::Identity(d, d);
  Vector mean(d);
  for (int i = 0; i < d; ++i) mean[i] = n01(rng);
  return {mean, cov};
}

MvnSpec bivariate(double r) {
  Matrix cov(2, 2);
  cov << 1.0, r, r, 1.0;
  return {Vector::Zero(2), cov};
}

}  // namespace

TEST(OrthantProb, Examples) {
  MvnSpec one{Vector::Zero(1), Matrix::Identity(1, 1)};
  EXPECT_DOUBLE_EQ(orthant_prob(one, Vector::Zero(1)), 0.5);
  EXPECT_NEAR(orthant_prob(bivariate(0.0), Vector::Zero(2)), 0.25, 1e-15);
  EXPECT_NEAR(orthant_prob(bivariate(0.5), Vector::Zero(2)),
              0.25 + std::asin(0.5) / (2.0 * std::numbers::pi), 1e-14);
}

TEST(OrthantProb, BivariateMatchesArcsinFormula) {
  for (int k = 0; k < 20; ++k) {
    const double r = -0.97 + k * (1.94 / 19.0);
    const double expected = 0.25 + std::asin(r) / (2.0 * std::numbers::pi);
    EXPECT_NEAR(orthant_prob(bivariate(r), Vector::Zero(2)), expected, 1e-10) << r;
  }
}

TEST(OrthantProb, BivariateOffsetBoundsAgainstIndependentProduct) {
  // with zero correlation the orthant factorises for any bounds
  for (double h : {-3.0, -0.7, 0.0, 1.2, 4.0}) {
    for (double k : {-2.0, 0.4, 2.5}) {
      Vector lo(2);
      lo << h, k;
      EXPECT_NEAR(orthant_prob(bivariate(0.0), lo), normal::sf(h) * normal::sf(k), 1e-15);
    }
  }
}

TEST(OrthantProb, BivariateHighCorrelationAgainstSampler) {
  MvnSpec spec = bivariate(0.95);
  spec.mean << 0.3, -0.1;
  Vector lo(2);
  lo << 0.5, 0.2;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  long hit = 0;
  const long n = 4000000;
  const double s = std::sqrt(1.0 - 0.95 * 0.95);
  for (long i = 0; i < n; ++i) {
    const double z1 = n01(rng);
    const double z2 = 0.95 * z1 + s * n01(rng);
    if (0.3 + z1 >= 0.5 && -0.1 + z2 >= 0.2) ++hit;
  }
  EXPECT_NEAR(orthant_prob(spec, lo), static_cast<double>(hit) / n, 1e-3);
}

TEST(OrthantProb, TrivariateAgainstClosedFormAtZero) {
  // P(all three >= 0) = 1/8 + (asin r12 + asin r13 + asin r23) / (4 pi)
  Matrix cov(3, 3);
  cov << 1.0, 0.3, -0.2, 0.3, 1.0, 0.5, -0.2, 0.5, 1.0;
  const double expected =
      0.125 + (std::asin(0.3) + std::asin(-0.2) + std::asin(0.5)) / (4.0 * std::numbers::pi);
  EXPECT_NEAR(orthant_prob({Vector::Zero(3), cov}, Vector::Zero(3), 1), expected, 1e-10);
}

TEST(OrthantProb, DecreasesWhenABoundIncreases) {
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const int d = 1 + t % 5;
    const MvnSpec spec = random_spec(d, rng);
    Vector lo(d);
    for (int i = 0; i < d; ++i) lo[i] = spec.mean[i] + u(rng);
    const double p0 = orthant_prob(spec, lo, 4);
    Vector raised = lo;
    raised[t % d] += 0.5;
    EXPECT_LE(orthant_prob(spec, raised, 4), p0 + 1e-12);
  }
}

TEST(OrthantProb, SameSeedIsBitIdentical) {
  std::mt19937_64 rng(8);
  const MvnSpec spec = random_spec(5, rng);
  const Vector lo = spec.mean;
  EXPECT_EQ(orthant_prob(spec, lo, 42), orthant_prob(spec, lo, 42));
}

TEST(OrthantProb, HopelessCovarianceRaisesNumericalError) {
  Matrix cov(3, 3);
  cov << 1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0;
  EXPECT_THROW(orthant_prob({Vector::Zero(3), cov}, Vector::Zero(3)), NumericalError);
}

TEST(TruncUnivariate, StandardHalfLine) {
  const TruncatedMoments m = trunc_univariate(0.0, 1.0, 0.0);
  const double phi0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  EXPECT_NEAR(m.mean[0], 2.0 * phi0, 1e-14);
  EXPECT_NEAR(m.cov(0, 0), 1.0 - 4.0 * phi0 * phi0, 1e-14);
  EXPECT_NEAR(m.mean[0], 0.79788, 1e-5);
  EXPECT_NEAR(m.cov(0, 0), 0.36338, 1e-5);
  EXPECT_DOUBLE_EQ(m.prob, 0.5);
}

TEST(TruncUnivariate, NoTruncation) {
  for (double lo : {-std::numeric_limits<double>::infinity(), -45.0}) {
    const TruncatedMoments m = trunc_univariate(1.5, 4.0, lo);
    EXPECT_EQ(m.mean[0], 1.5);
    EXPECT_EQ(m.cov(0, 0), 4.0);
    EXPECT_EQ(m.prob, 1.0);
  }
}

TEST(TruncUnivariate, DeepTailUsesMillsRatio) {
  const TruncatedMoments m = trunc_univariate(0.0, 1.0, 40.0);
  // asymptotic mean lower + 1/lower - 2/lower^3
  EXPECT_NEAR(m.mean[0], 40.0 + 1.0 / 40.0 - 2.0 / 64000.0, 1e-7);
  EXPECT_NEAR(m.mean[0], 40.025, 1e-3);
  EXPECT_GE(m.prob, 0.0);
  EXPECT_TRUE(std::isfinite(m.log_prob));
  EXPECT_GT(m.cov(0, 0), 0.0);
  EXPECT_LT(m.cov(0, 0), 1.0 / (40.0 * 40.0));
}

TEST(TruncUnivariate, VarianceNeverGrows) {
  for (double lo = -6.0; lo <= 30.0; lo += 0.25) {
    const TruncatedMoments m = trunc_univariate(0.2, 2.0, lo);
    EXPECT_LE(m.cov(0, 0), 2.0);
    EXPECT_GE(m.mean[0], lo);
  }
}

TEST(TruncMoments, DelegatesInOneDimension) {
  const TruncatedMoments a = trunc_moments({Vector::Constant(1, 0.4), Matrix::Constant(1, 1, 2.0)},
                                           Vector::Constant(1, 1.0));
  const TruncatedMoments b = trunc_univariate(0.4, 2.0, 1.0);
  EXPECT_EQ(a.mean[0], b.mean[0]);
  EXPECT_EQ(a.cov(0, 0), b.cov(0, 0));
  EXPECT_EQ(a.prob, b.prob);
}

TEST(TruncMoments, DiagonalFactorises) {
  Matrix cov = Matrix::Zero(2, 2);
  cov(0, 0) = 1.0;
  cov(1, 1) = 3.0;
  Vector mean(2);
  mean << 0.5, -1.0;
  Vector lo(2);
  lo << 0.0, 1.0;
  const TruncatedMoments m = trunc_moments({mean, cov}, lo);
  for (int i = 0; i < 2; ++i) {
    const TruncatedMoments u = trunc_univariate(mean[i], cov(i, i), lo[i]);
    EXPECT_NEAR(m.mean[i], u.mean[0], 1e-15);
    EXPECT_NEAR(m.cov(i, i), u.cov(0, 0), 1e-15);
    EXPECT_GE(m.mean[i], mean[i]);
  }
  EXPECT_EQ(m.cov(0, 1), 0.0);
}

TEST(TruncMoments, BivariateAgainstRejection) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 3; ++t) {
    const MvnSpec spec = random_spec(2, rng);
    Vector lo = spec.mean;
    lo[0] += 0.3 * t;
    const TruncatedMoments m = trunc_moments(spec, lo, 5);
    const SampleMoments ref = rejection_moments(spec, lo, 1000000, 100 + t);
    EXPECT_LT((m.mean - ref.mean).cwiseAbs().maxCoeff(), 3e-3);
    EXPECT_LT((m.cov - ref.cov).cwiseAbs().maxCoeff(), 3e-3);
  }
}

TEST(TruncMoments, TrivariateAgainstRejection) {
  std::mt19937_64 rng(1234);
  for (int t = 0; t < 5; ++t) {
    const MvnSpec spec = random_spec(3, rng);
    const TruncatedMoments m = trunc_moments(spec, spec.mean, 9);
    const SampleMoments ref = rejection_moments(spec, spec.mean, 1000000, 500 + t);
    EXPECT_NEAR(m.prob, ref.accept_rate, 2e-3);
    EXPECT_LT((m.mean - ref.mean).cwiseAbs().maxCoeff(), 3e-3) << t;
    EXPECT_LT((m.cov - ref.cov).cwiseAbs().maxCoeff(), 3e-3) << t;
  }
}

TEST(TruncMoments, HigherDimensionAgainstRejection) {
  std::mt19937_64 rng(99);
  for (int d : {4, 5}) {
    const MvnSpec spec = random_spec(d, rng);
    Vector lo = spec.mean;
    lo[0] -= 0.5;
    const TruncatedMoments m = trunc_moments(spec, lo, 13);
    const SampleMoments ref = rejection_moments(spec, lo, 400000, 700 + d);
    EXPECT_LT((m.mean - ref.mean).cwiseAbs().maxCoeff(), 1e-2) << d;
    EXPECT_LT((m.cov - ref.cov).cwiseAbs().maxCoeff(), 1e-2) << d;
    for (int i = 0; i < d; ++i) EXPECT_GE(m.mean[i], lo[i]);
  }
}

TEST(TruncMoments, MeanDominatesForDiagonalAtTheMean) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int d = 2; d <= 5; ++d) {
    Matrix cov = Matrix::Zero(d, d);
    Vector mean(d);
    for (int i = 0; i < d; ++i) {
      cov(i, i) = u(rng);
      mean[i] = u(rng) - 1.5;
    }
    const TruncatedMoments m = trunc_moments({mean, cov}, mean);
    for (int i = 0; i < d; ++i) EXPECT_GT(m.mean[i], mean[i]);
  }
}

TEST(TruncMoments, SameSeedIsBitIdentical) {
  std::mt19937_64 rng(17);
  for (int d : {3, 4, 6}) {
    const MvnSpec spec = random_spec(d, rng);
    const TruncatedMoments a = trunc_moments(spec, spec.mean, 77);
    const TruncatedMoments b = trunc_moments(spec, spec.mean, 77);
    EXPECT_EQ(a.prob, b.prob);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.cov, b.cov);
  }
}

TEST(TruncMoments, VanishingProbabilityIsDegenerate) {
  Matrix cov(2, 2);
  cov << 1.0, 0.2, 0.2, 1.0;
  Vector lo(2);
  lo << 50.0, 50.0;
  EXPECT_THROW(trunc_moments({Vector::Zero(2), cov}, lo), DegenerateTruncationError);
  EXPECT_THROW(trunc_moments({Vector::Zero(1), Matrix::Identity(1, 1)},
                             Vector::Constant(1, std::numeric_limits<double>::infinity())),
               DegenerateTruncationError);
}
