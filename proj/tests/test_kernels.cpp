#include <cmath>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "icmse/kernels.hpp"
#include "icmse/quadrature.hpp"

using namespace icmse;

namespace {

LengthscaleParams theta1(double t) { return LengthscaleParams::from_theta(Vector::Constant(1, t)); }

double g_adaptive(double a, double x, double b, double y) {
  auto f = [&](double z) { return std::exp(-a * (x - z) * (x - z) - b * (y - z) * (y - z)); };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 15, 1e-14);
}

// gamma_i(z): covariance of data row i with the physical mean response at z
double gamma_row(const Hyperparams& hp, const Vector& xi, Fidelity fi, const Vector& z) {
  return row_response_covariance(hp, xi.data(), fi, z.data());
}

// tensor Gauss-Legendre (64 nodes per axis) of int gamma_i gamma_j over [0,1]^p
Matrix lambda_by_quadrature(const Matrix& pts, const Hyperparams& hp,
                            const std::vector<Fidelity>& fid) {
  const QuadratureRule q = gauss_legendre_unit(64);
  const int p = static_cast<int>(pts.cols());
  const Eigen::Index n = pts.rows();
  Matrix out = Matrix::Zero(n, n);
  std::vector<int> idx(p, 0);
  Vector z(p);
  Vector g(n);
  while (true) {
    double w = 1.0;
    for (int l = 0; l < p; ++l) {
      z[l] = q.nodes[idx[l]];
      w *= q.weights[idx[l]];
    }
    for (Eigen::Index i = 0; i < n; ++i) g[i] = gamma_row(hp, pts.row(i).transpose(), fid[i], z);
    out += w * g * g.transpose();
    int l = 0;
    while (l < p && ++idx[l] == 64) idx[l++] = 0;
    if (l == p) break;
  }
  return out;
}

}  // namespace

TEST(LengthscaleParams, ThetaAndRatesAgree) {
  Vector theta(3);
  theta << 0.1, 0.5, 0.95;
  const auto ls = LengthscaleParams::from_theta(theta);
  for (int l = 0; l < 3; ++l) {
    EXPECT_NEAR(ls.rates()[l], -4.0 * std::log(theta[l]), 1e-12);
    EXPECT_NEAR(ls.theta()[l], theta[l], 1e-12);
  }
}

TEST(LengthscaleParams, RejectsThetaOutsideUnitInterval) {
  EXPECT_THROW(theta1(1.0), ParameterError);
  EXPECT_THROW(theta1(0.0), ParameterError);
  EXPECT_THROW(theta1(-0.2), ParameterError);
  EXPECT_THROW(LengthscaleParams::from_rates(Vector::Constant(1, -1.0)), ParameterError);
}

TEST(CorrGaussian, Examples) {
  const auto ls = theta1(0.5);
  EXPECT_DOUBLE_EQ(corr_gaussian(Vector::Constant(1, 0.3), Vector::Constant(1, 0.3), ls), 1.0);
  EXPECT_NEAR(corr_gaussian(Vector::Constant(1, 0.0), Vector::Constant(1, 0.5), ls), 0.5, 1e-15);
  const auto ls2 = LengthscaleParams::from_theta(Vector::Constant(2, 0.5));
  EXPECT_NEAR(corr_gaussian(Vector::Zero(2), Vector::Constant(2, 0.5), ls2), 0.25, 1e-15);
}

TEST(CorrGaussian, DimensionMismatchThrows) {
  EXPECT_THROW(corr_gaussian(Vector::Zero(2), Vector::Zero(2), theta1(0.5)), ArgumentError);
  EXPECT_THROW(corr_gaussian(Vector::Zero(1), Vector::Zero(2), theta1(0.5)), ArgumentError);
}

TEST(CorrGaussian, SymmetricAndBounded) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const int p = 1 + t % 4;
    Vector theta(p);
    Vector x(p);
    Vector y(p);
    for (int l = 0; l < p; ++l) {
      theta[l] = 0.05 + 0.9 * u(rng);
      x[l] = u(rng);
      y[l] = u(rng);
    }
    const auto ls = LengthscaleParams::from_theta(theta);
    const double r = corr_gaussian(x, y, ls);
    EXPECT_EQ(r, corr_gaussian(y, x, ls));
    EXPECT_GT(r, 0.0);
    EXPECT_LT(r, 1.0);
  }
}

TEST(CorrMatrix, Examples) {
  KernelSpec spec{KernelFamily::GaussianProduct, theta1(0.5), 2.0};
  Matrix one(1, 1);
  one << 0.4;
  EXPECT_DOUBLE_EQ(corr_matrix(one, one, spec, 0.0)(0, 0), 2.0);

  Matrix two(2, 1);
  two << 0.0, 0.5;
  const Matrix k = corr_matrix(two, two, spec, 0.01);
  EXPECT_NEAR(k(0, 1), 2.0 * 0.5, 1e-15);
  EXPECT_NEAR(k(1, 0), 2.0 * 0.5, 1e-15);
  EXPECT_NEAR(k(0, 0), 2.01, 1e-15);
}

TEST(CorrMatrix, PositiveSemidefiniteWithNugget) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    Matrix pts(3, 2);
    for (int i = 0; i < 3; ++i) pts.row(i) << u(rng), u(rng);
    KernelSpec spec{KernelFamily::GaussianProduct,
                    LengthscaleParams::from_rates(Vector::Constant(2, 0.1 + 5.0 * u(rng))), 1.5};
    const Matrix k = corr_matrix(pts, pts, spec, 1e-8);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(k);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(GExpIntegral, Examples) {
  EXPECT_DOUBLE_EQ(g_exp_integral(0.0, 0.3, 0.0, 0.9), 1.0);
  EXPECT_NEAR(g_exp_integral(1.0, 0.5, 1.0, 0.5), g_adaptive(1.0, 0.5, 1.0, 0.5), 1e-10);
  EXPECT_EQ(g_exp_integral(2.0, 0.3, 5.0, 0.8), g_exp_integral(5.0, 0.8, 2.0, 0.3));
  EXPECT_THROW(g_exp_integral(-1.0, 0.0, 1.0, 0.0), ArgumentError);
}

TEST(GExpIntegral, MatchesAdaptiveQuadrature) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const double a = 60.0 * u(rng);
    const double b = 60.0 * u(rng);
    const double x = -0.5 + 2.0 * u(rng);
    const double y = -0.5 + 2.0 * u(rng);
    const double g = g_exp_integral(a, x, b, y);
    EXPECT_NEAR(g, g_adaptive(a, x, b, y), 1e-8) << a << " " << x << " " << b << " " << y;
    EXPECT_EQ(g, g_exp_integral(b, y, a, x));
    EXPECT_GT(g, 0.0);
    EXPECT_LE(g, 1.0);
  }
}

TEST(GExpIntegral, FiniteFarOutsideTheCube) {
  const double g = g_exp_integral(500.0, 3.0, 800.0, 2.5);
  EXPECT_TRUE(std::isfinite(g));
  EXPECT_GE(g, 0.0);
  const double h = g_exp_integral(40.0, 1.8, 40.0, 1.9);
  EXPECT_NEAR(h, g_adaptive(40.0, 1.8, 40.0, 1.9), 1e-14 + 1e-8 * h);
}

TEST(GExpIntegral, DecreasesWithSeparation) {
  for (double a : {0.5, 4.0, 30.0}) {
    double prev = g_exp_integral(a, 0.5, a, 0.5);
    for (int k = 1; k <= 50; ++k) {
      const double d = 0.01 * k;
      const double g = g_exp_integral(a, 0.5 - d / 2, a, 0.5 + d / 2);
      EXPECT_LT(g, prev);
      prev = g;
    }
  }
}

TEST(LambdaMatrix, SingleFidelityDiagonalEntry) {
  Hyperparams hp;
  hp.signal_var = 1.0;
  hp.signal_ls = LengthscaleParams::from_rates((Vector(2) << 3.0, 7.0).finished());
  Matrix pts(1, 2);
  pts << 0.3, 0.8;
  const Matrix lam = lambda_matrix(pts, hp, {Fidelity::Physical});
  const double expected =
      g_exp_integral(3.0, 0.3, 3.0, 0.3) * g_exp_integral(7.0, 0.8, 7.0, 0.8);
  EXPECT_NEAR(lam(0, 0), expected, 1e-15);
  EXPECT_NEAR(lam(0, 0), lambda_by_quadrature(pts, hp, {Fidelity::Physical})(0, 0), 1e-8);
}

TEST(LambdaMatrix, FlatKernelLimit) {
  Hyperparams hp;
  hp.signal_ls = LengthscaleParams::from_rates(Vector::Constant(2, 1e-12));
  Matrix pts(3, 2);
  pts << 0.1, 0.2, 0.5, 0.9, 0.7, 0.3;
  const Matrix lam = lambda_matrix(pts, hp, std::vector<Fidelity>(3, Fidelity::Physical));
  EXPECT_LT((lam - Matrix::Ones(3, 3)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LambdaMatrix, BiFidelityPairMatchesQuadrature) {
  Hyperparams hp;
  hp.bifidelity = true;
  hp.signal_var = 1.3;
  hp.signal_ls = LengthscaleParams::from_rates((Vector(2) << 4.0, 2.0).finished());
  hp.discrepancy_var = 0.4;
  hp.discrepancy_ls = LengthscaleParams::from_rates((Vector(2) << 9.0, 1.5).finished());
  Matrix pts(2, 2);
  pts << 0.2, 0.7, 0.6, 0.4;
  const std::vector<Fidelity> fid{Fidelity::Computer, Fidelity::Physical};
  const Matrix lam = lambda_matrix(pts, hp, fid);
  const Matrix ref = lambda_by_quadrature(pts, hp, fid);
  EXPECT_LT((lam - ref).cwiseAbs().maxCoeff(), 1e-6 * ref.cwiseAbs().maxCoeff());
}

TEST(LambdaMatrix, RandomConfigurationsMatchTensorQuadrature) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    const int p = 1 + t % 2;
    const int n = 2 + t % 4;
    Hyperparams hp;
    hp.bifidelity = t % 3 != 0;
    hp.signal_var = 0.5 + u(rng);
    Vector rf(p);
    Vector rd(p);
    for (int l = 0; l < p; ++l) {
      rf[l] = 0.5 + 25.0 * u(rng);
      rd[l] = 0.5 + 25.0 * u(rng);
    }
    hp.signal_ls = LengthscaleParams::from_rates(rf);
    if (hp.bifidelity) {
      hp.discrepancy_var = 0.1 + u(rng);
      hp.discrepancy_ls = LengthscaleParams::from_rates(rd);
    }
    Matrix pts(n, p);
    std::vector<Fidelity> fid;
    for (int i = 0; i < n; ++i) {
      for (int l = 0; l < p; ++l) pts(i, l) = u(rng);
      fid.push_back(i % 2 == 0 || !hp.bifidelity ? Fidelity::Physical : Fidelity::Computer);
    }
    const Matrix lam = lambda_matrix(pts, hp, fid);
    const Matrix ref = lambda_by_quadrature(pts, hp, fid);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        EXPECT_NEAR(lam(i, j), ref(i, j), 1e-6 * std::abs(ref(i, j))) << "config " << t;
      }
    }
    EXPECT_EQ(lam, lam.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(lam);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10 * lam.trace());
  }
}
