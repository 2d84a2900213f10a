#pragma once

#include <Eigen/Dense>
#include <random>

namespace scaleup {

// Bijection between R^{K(K-1)/2} and Cholesky factors of correlation
// matrices, via canonical partial correlations z = tanh(u) and the row-wise
// construction
//   L(r,0) = z(r,0),  L(r,m) = z(r,m) * prod_{m'<m} sqrt(1 - z(r,m')^2),
//   L(r,r) = prod_{m'<r} sqrt(1 - z(r,m')^2).
// Unconstrained entries are ordered row-major: (1,0), (2,0), (2,1), ...
struct CorrCholTransform {
  int dim = 0;
  Eigen::VectorXd u;  // unconstrained, length K(K-1)/2
  Eigen::VectorXd z;  // tanh(u)
  Eigen::MatrixXd cholesky;  // K x K lower triangular, unit row norms
  bool degenerate = false;   // some |z| reached 1; density is -inf there

  static CorrCholTransform from_unconstrained(const Eigen::VectorXd& u, int dim);
  static CorrCholTransform from_cholesky(const Eigen::MatrixXd& cholesky);

  Eigen::MatrixXd correlation() const { return cholesky * cholesky.transpose(); }

  // log |d vech(Omega) / d u|: the change-of-variable term carrying the LKJ
  // density from correlation matrices to the unconstrained vector.
  double log_jacobian() const;
  Eigen::VectorXd log_jacobian_grad_u() const;

  // Pulls an adjoint with respect to the Cholesky entries (lower triangle,
  // diagonal included) back to the unconstrained vector.
  Eigen::VectorXd pullback(const Eigen::MatrixXd& cholesky_adjoint) const;
};

// LKJ log-density of the correlation matrix Omega = L L^T, up to the
// normalizing constant: 2*(eta-1) * sum_k log L(k,k). Constant in Omega at
// eta = 1. Throws if L is not a valid correlation Cholesky factor.
double lkj_log_density(const Eigen::MatrixXd& cholesky, double eta);

// Draws a correlation Cholesky factor from LKJ(eta).
Eigen::MatrixXd sample_lkj_cholesky(int dim, double eta, std::mt19937_64& rng);

inline int corr_unconstrained_dim(int dim) { return dim * (dim - 1) / 2; }

}  // namespace scaleup
