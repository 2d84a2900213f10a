// Correlation-matrix Cholesky transform: bijection, change-of-variable
// terms, gradients, and the LKJ density / sampler.

#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "scaleup/chol_corr.hpp"

using namespace scaleup;

namespace {

Eigen::VectorXd random_u(int dim, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd u(corr_unconstrained_dim(dim));
  for (int i = 0; i < u.size(); ++i) u[i] = normal(rng);
  return u;
}

// Strict lower triangle of the correlation matrix, row-major, matching
// the ordering of the unconstrained vector.
Eigen::VectorXd strict_lower(const Eigen::MatrixXd& omega) {
  int dim = static_cast<int>(omega.rows());
  Eigen::VectorXd v(corr_unconstrained_dim(dim));
  int t = 0;
  for (int r = 1; r < dim; ++r) {
    for (int c = 0; c < r; ++c) v[t++] = omega(r, c);
  }
  return v;
}

double numeric_log_jacobian(const Eigen::VectorXd& u, int dim, double h = 1e-6) {
  int m = corr_unconstrained_dim(dim);
  Eigen::MatrixXd jac(m, m);
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd up = u, dn = u;
    up[j] += h;
    dn[j] -= h;
    Eigen::VectorXd fp = strict_lower(CorrCholTransform::from_unconstrained(up, dim).correlation());
    Eigen::VectorXd fn = strict_lower(CorrCholTransform::from_unconstrained(dn, dim).correlation());
    jac.col(j) = (fp - fn) / (2 * h);
  }
  return std::log(std::abs(jac.determinant()));
}

}  // namespace

TEST_CASE("unconstrained <-> cholesky round trip") {
  std::mt19937_64 rng(7);
  for (int dim : {2, 3, 5}) {
    for (int rep = 0; rep < 5; ++rep) {
      Eigen::VectorXd u = random_u(dim, rng);
      auto t = CorrCholTransform::from_unconstrained(u, dim);
      REQUIRE_FALSE(t.degenerate);

      // The factor is a valid correlation Cholesky: lower triangular with
      // unit row norms and positive diagonal.
      Eigen::MatrixXd omega = t.correlation();
      for (int r = 0; r < dim; ++r) {
        CHECK(omega(r, r) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(t.cholesky(r, r) > 0);
        for (int c = r + 1; c < dim; ++c) CHECK(t.cholesky(r, c) == 0.0);
      }
      CHECK((omega - omega.transpose()).norm() < 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(omega);
      CHECK(eig.eigenvalues().minCoeff() > 0);

      auto back = CorrCholTransform::from_cholesky(t.cholesky);
      CHECK((back.u - u).norm() < 1e-9);
    }
  }
}

TEST_CASE("zero vector maps to the identity with zero jacobian") {
  auto t = CorrCholTransform::from_unconstrained(Eigen::VectorXd::Zero(3), 3);
  CHECK(t.cholesky.isIdentity(1e-15));
  CHECK(t.log_jacobian() == 0.0);
}

TEST_CASE("log jacobian matches the numeric determinant") {
  std::mt19937_64 rng(11);
  for (int dim : {2, 3, 4}) {
    for (int rep = 0; rep < 3; ++rep) {
      Eigen::VectorXd u = random_u(dim, rng, 0.8);
      auto t = CorrCholTransform::from_unconstrained(u, dim);
      double analytic = t.log_jacobian();
      double numeric = numeric_log_jacobian(u, dim);
      CHECK(analytic == doctest::Approx(numeric).epsilon(1e-5));
    }
  }
}

TEST_CASE("log jacobian gradient matches finite differences") {
  std::mt19937_64 rng(13);
  for (int dim : {2, 3, 4}) {
    Eigen::VectorXd u = random_u(dim, rng, 0.7);
    auto t = CorrCholTransform::from_unconstrained(u, dim);
    Eigen::VectorXd g = t.log_jacobian_grad_u();
    const double h = 1e-6;
    for (int j = 0; j < u.size(); ++j) {
      Eigen::VectorXd up = u, dn = u;
      up[j] += h;
      dn[j] -= h;
      double fp = CorrCholTransform::from_unconstrained(up, dim).log_jacobian();
      double fn = CorrCholTransform::from_unconstrained(dn, dim).log_jacobian();
      CHECK(g[j] == doctest::Approx((fp - fn) / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("pullback is the adjoint of the cholesky construction") {
  std::mt19937_64 rng(17);
  for (int dim : {2, 3, 5}) {
    Eigen::VectorXd u = random_u(dim, rng, 0.6);
    auto t = CorrCholTransform::from_unconstrained(u, dim);

    // Random linear functional of the lower-triangular entries.
    Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(dim, dim);
    std::normal_distribution<double> normal;
    for (int r = 0; r < dim; ++r) {
      for (int c = 0; c <= r; ++c) coeff(r, c) = normal(rng);
    }
    auto f = [&](const Eigen::VectorXd& v) {
      Eigen::MatrixXd L = CorrCholTransform::from_unconstrained(v, dim).cholesky;
      return (coeff.array() * L.array()).sum();
    };

    Eigen::VectorXd g = t.pullback(coeff);
    const double h = 1e-6;
    for (int j = 0; j < u.size(); ++j) {
      Eigen::VectorXd up = u, dn = u;
      up[j] += h;
      dn[j] -= h;
      CHECK(g[j] == doctest::Approx((f(up) - f(dn)) / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("lkj log density: eta=1 is flat and K=1 is trivial") {
  CHECK(lkj_log_density(Eigen::MatrixXd::Identity(1, 1), 2.5) == 0.0);

  std::mt19937_64 rng(19);
  for (int rep = 0; rep < 100; ++rep) {
    int dim = 2 + static_cast<int>(rng() % 3);
    auto t = CorrCholTransform::from_unconstrained(random_u(dim, rng), dim);
    CHECK(lkj_log_density(t.cholesky, 1.0) == 0.0);
  }
}

TEST_CASE("lkj log density: normalized K=2 density at r=0 is 0.75") {
  // For K=2 and eta=2 the density over the single correlation r is
  // proportional to (1 - r^2); the normalizer over (-1, 1) is 4/3, so the
  // density at r = 0 equals 3/4. Simpson's rule over the grid.
  const int steps = 20000;
  const double a = -1.0 + 1e-9, b = 1.0 - 1e-9;
  const double h = (b - a) / steps;
  auto dens = [](double r) {
    Eigen::MatrixXd L(2, 2);
    L << 1.0, 0.0, r, std::sqrt(1.0 - r * r);
    return std::exp(lkj_log_density(L, 2.0));
  };
  double z = dens(a) + dens(b);
  for (int i = 1; i < steps; ++i) z += dens(a + i * h) * (i % 2 ? 4.0 : 2.0);
  z *= h / 3.0;
  CHECK(dens(0.0) / z == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("lkj log density rejects invalid factors") {
  Eigen::MatrixXd bad_rows(2, 2);
  bad_rows << 1.0, 0.0, 0.5, 0.5;  // row norm != 1
  CHECK_THROWS_AS(lkj_log_density(bad_rows, 2.0), std::invalid_argument);

  Eigen::MatrixXd upper(2, 2);
  upper << 1.0, 0.5, 0.0, std::sqrt(0.75);  // not lower triangular
  CHECK_THROWS_AS(lkj_log_density(upper, 2.0), std::invalid_argument);

  Eigen::MatrixXd neg_diag(2, 2);
  neg_diag << 1.0, 0.0, 0.6, -0.8;  // negative diagonal
  CHECK_THROWS_AS(lkj_log_density(neg_diag, 2.0), std::invalid_argument);

  CHECK_THROWS_AS(lkj_log_density(Eigen::MatrixXd::Zero(2, 3), 2.0), std::invalid_argument);
}

TEST_CASE("lkj sampler matches the marginal moments of the correlation") {
  // K=3, eta=1: each off-diagonal correlation has mean 0 and variance 1/4
  // ((r+1)/2 is Beta(3/2, 3/2)).
  std::mt19937_64 rng(23);
  const int draws = 4000;
  double sum = 0, sumsq = 0;
  for (int d = 0; d < draws; ++d) {
    Eigen::MatrixXd L = sample_lkj_cholesky(3, 1.0, rng);
    Eigen::MatrixXd omega = L * L.transpose();
    CHECK(omega(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
    double r = omega(1, 0);
    sum += r;
    sumsq += r * r;
  }
  double mean = sum / draws;
  double var = sumsq / draws - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(var == doctest::Approx(0.25).epsilon(0.12));

  // Large eta concentrates mass near the identity.
  double sumsq_tight = 0;
  for (int d = 0; d < 2000; ++d) {
    Eigen::MatrixXd omega = sample_lkj_cholesky(3, 50.0, rng);
    omega = omega * omega.transpose();
    sumsq_tight += omega(1, 0) * omega(1, 0);
  }
  CHECK(sumsq_tight / 2000 < 0.02);
}

TEST_CASE("unconstrained dimension bookkeeping") {
  CHECK(corr_unconstrained_dim(1) == 0);
  CHECK(corr_unconstrained_dim(2) == 1);
  CHECK(corr_unconstrained_dim(5) == 10);
}
