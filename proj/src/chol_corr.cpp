#include "scaleup/chol_corr.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include <fmt/format.h>

namespace scaleup {

namespace {

// Index of (row, col) in the row-major strict lower triangle.
inline int tri_index(int row, int col) { return row * (row - 1) / 2 + col; }

}  // namespace

CorrCholTransform CorrCholTransform::from_unconstrained(const Eigen::VectorXd& u, int dim) {
  if (u.size() != corr_unconstrained_dim(dim)) {
    throw std::invalid_argument(fmt::format(
        "corr transform: expected {} unconstrained entries for dim {}, got {}",
        corr_unconstrained_dim(dim), dim, u.size()));
  }
  CorrCholTransform t;
  t.dim = dim;
  t.u = u;
  t.z = u.array().tanh();
  t.cholesky = Eigen::MatrixXd::Zero(dim, dim);
  if (dim > 0) t.cholesky(0, 0) = 1.0;
  for (int r = 1; r < dim; ++r) {
    double prod = 1.0;
    for (int m = 0; m < r; ++m) {
      double zi = t.z[tri_index(r, m)];
      t.cholesky(r, m) = zi * prod;
      double c2 = 1.0 - zi * zi;
      if (c2 <= 0.0) t.degenerate = true;
      prod *= std::sqrt(std::max(c2, 0.0));
    }
    t.cholesky(r, r) = prod;
  }
  return t;
}

CorrCholTransform CorrCholTransform::from_cholesky(const Eigen::MatrixXd& L) {
  const int dim = static_cast<int>(L.rows());
  CorrCholTransform t;
  t.dim = dim;
  t.u.resize(corr_unconstrained_dim(dim));
  t.z.resize(corr_unconstrained_dim(dim));
  t.cholesky = L;
  for (int r = 1; r < dim; ++r) {
    double prod = 1.0;
    for (int m = 0; m < r; ++m) {
      double zi = L(r, m) / prod;
      if (!(zi > -1.0 && zi < 1.0)) {
        throw std::invalid_argument("corr transform: matrix is not a correlation Cholesky factor");
      }
      t.z[tri_index(r, m)] = zi;
      t.u[tri_index(r, m)] = std::atanh(zi);
      prod *= std::sqrt(1.0 - zi * zi);
    }
  }
  return t;
}

double CorrCholTransform::log_jacobian() const {
  if (degenerate) return -std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (int r = 1; r < dim; ++r) {
    for (int m = 0; m < r; ++m) {
      double zi = z[tri_index(r, m)];
      // tanh derivative plus the per-column replication in d omega / d z.
      total += (1.0 + 0.5 * (r - 1 - m)) * std::log1p(-zi * zi);
    }
  }
  for (int j = 0; j < dim; ++j) {
    if (dim - 1 - j > 0) total += (dim - 1 - j) * std::log(cholesky(j, j));
  }
  return total;
}

Eigen::VectorXd CorrCholTransform::pullback(const Eigen::MatrixXd& L_adj) const {
  Eigen::VectorXd u_adj = Eigen::VectorXd::Zero(u.size());
  std::vector<double> prefix;
  for (int r = 1; r < dim; ++r) {
    // prefix[m] = prod_{m'<m} c(r,m'), so L(r,m) = z(r,m) * prefix[m].
    prefix.assign(r + 1, 1.0);
    for (int m = 0; m < r; ++m) {
      double zm = z[tri_index(r, m)];
      prefix[m + 1] = prefix[m] * std::sqrt(std::max(1.0 - zm * zm, 0.0));
    }
    // Reverse scan: s collects adjoint mass of entries whose cumulative
    // products contain c(r,j).
    double s = L_adj(r, r) * cholesky(r, r);
    for (int j = r - 1; j >= 0; --j) {
      int idx = tri_index(r, j);
      double zj = z[idx];
      double c2 = std::max(1.0 - zj * zj, 1e-300);
      double z_adj = L_adj(r, j) * prefix[j] - (zj / c2) * s;
      u_adj[idx] = z_adj * (1.0 - zj * zj);
      s += L_adj(r, j) * zj * prefix[j];
    }
  }
  return u_adj;
}

Eigen::VectorXd CorrCholTransform::log_jacobian_grad_u() const {
  // Direct z part: d/du of a*log(1 - z^2) with z = tanh(u) is -2*a*z.
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(u.size());
  for (int r = 1; r < dim; ++r) {
    for (int m = 0; m < r; ++m) {
      int idx = tri_index(r, m);
      grad[idx] = -2.0 * (1.0 + 0.5 * (r - 1 - m)) * z[idx];
    }
  }
  // Diagonal part through L(j,j).
  Eigen::MatrixXd L_adj = Eigen::MatrixXd::Zero(dim, dim);
  for (int j = 0; j < dim; ++j) {
    if (dim - 1 - j > 0) L_adj(j, j) = (dim - 1 - j) / cholesky(j, j);
  }
  grad += pullback(L_adj);
  return grad;
}

double lkj_log_density(const Eigen::MatrixXd& L, double eta) {
  if (eta <= 0) throw std::invalid_argument("lkj_log_density: eta must be positive");
  const int dim = static_cast<int>(L.rows());
  if (L.cols() != dim) throw std::invalid_argument("lkj_log_density: matrix not square");
  for (int r = 0; r < dim; ++r) {
    for (int c = r + 1; c < dim; ++c) {
      if (L(r, c) != 0.0) {
        throw std::invalid_argument("lkj_log_density: matrix not lower triangular");
      }
    }
    if (L(r, r) <= 0.0) {
      throw std::invalid_argument("lkj_log_density: non-positive diagonal");
    }
    double norm = L.row(r).head(r + 1).squaredNorm();
    if (std::abs(norm - 1.0) > 1e-8) {
      throw std::invalid_argument(
          fmt::format("lkj_log_density: row {} has norm {} != 1", r, std::sqrt(norm)));
    }
  }
  double total = 0.0;
  for (int k = 0; k < dim; ++k) total += std::log(L(k, k));
  return 2.0 * (eta - 1.0) * total;
}

Eigen::MatrixXd sample_lkj_cholesky(int dim, double eta, std::mt19937_64& rng) {
  // Canonical partial correlations are independent symmetric Betas; the shape
  // depends only on the column: e_m = eta - 1 + (dim - 2 - m) / 2.
  Eigen::VectorXd u(corr_unconstrained_dim(dim));
  for (int r = 1; r < dim; ++r) {
    for (int m = 0; m < r; ++m) {
      double shape = eta + 0.5 * (dim - 2 - m);
      std::gamma_distribution<double> gamma(shape, 1.0);
      double a = gamma(rng), b = gamma(rng);
      double beta = a / (a + b);
      double z = std::clamp(2.0 * beta - 1.0, -1.0 + 1e-12, 1.0 - 1e-12);
      u[tri_index(r, m)] = std::atanh(z);
    }
  }
  return CorrCholTransform::from_unconstrained(u, dim).cholesky;
}

}  // namespace scaleup
