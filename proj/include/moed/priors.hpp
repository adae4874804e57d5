#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "moed/grids.hpp"

namespace moed {

/// Matern-3/2 covariance kernel:
///   c(s,t) = sigma^2 (1 + sqrt(3)|s-t|/ell) exp(-sqrt(3)|s-t|/ell).
inline double matern32(double s, double t, double sigma, double ell) {
  if (!(sigma > 0.0) || !(ell > 0.0))
    throw std::invalid_argument("matern32: sigma and ell must be positive");
  const double r = std::sqrt(3.0) * std::abs(s - t) / ell;
  return sigma * sigma * (1.0 + r) * std::exp(-r);
}

/// Gaussian prior for the time-dependent primary parameter.
///
/// `cov` is the plain kernel matrix c(t_i, t_j). As an operator on
/// (R^{n_m}, <.,.>_{M1}) the covariance acts as v -> cov * (M1 v), which is
/// self-adjoint in the M1 inner product; cov itself is the Euclidean second
/// moment of draws.
struct TimePrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd chol;          // lower-triangular factor of cov
  Eigen::VectorXd quad_weights;  // M1 diagonal

  Eigen::VectorXd cov_apply(const Eigen::VectorXd& v) const {
    return cov * quad_weights.cwiseProduct(v);
  }

  /// Inverse covariance operator: (cov M1)^{-1} = M1^{-1} cov^{-1}.
  Eigen::VectorXd precision_apply(const Eigen::VectorXd& v) const {
    Eigen::VectorXd u = chol.triangularView<Eigen::Lower>().solve(v);
    u = chol.transpose().triangularView<Eigen::Upper>().solve(u);
    return u.cwiseQuotient(quad_weights);
  }

  /// Trace of the covariance operator, tr(cov M1).
  double trace() const { return cov.diagonal().dot(quad_weights); }

  Eigen::VectorXd sample(std::mt19937_64& rng) const {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd xi(mean.size());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = gauss(rng);
    return mean + chol.triangularView<Eigen::Lower>() * xi;
  }
};

inline TimePrior build_time_prior(const TimeGrid& grid, double sigma, double ell,
                                  double mean_value) {
  TimePrior p;
  p.mean = Eigen::VectorXd::Constant(grid.n_m, mean_value);
  p.quad_weights = grid.quad_weights;
  p.cov.resize(grid.n_m, grid.n_m);
  for (int i = 0; i < grid.n_m; ++i)
    for (int j = 0; j <= i; ++j)
      p.cov(i, j) = p.cov(j, i) = matern32(grid.nodes(i), grid.nodes(j), sigma, ell);

  Eigen::LLT<Eigen::MatrixXd> llt(p.cov);
  if (llt.info() != Eigen::Success) {
    // near-singular for ell >> grid extent; one shot of diagonal jitter
    p.cov.diagonal().array() += 1e-10 * sigma * sigma;
    llt.compute(p.cov);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("build_time_prior: Matern covariance is not positive definite");
  }
  p.chol = llt.matrixL();
  return p;
}

/// Gaussian prior for the spatial secondary parameter with covariance
/// built from the bi-Laplacian-type operator (-eps Lap + alpha I)^{-2},
/// discretized as K = eps*S + alpha*M2 + robin boundary term.
///
/// Operator convention (shared with the posterior module):
///   cov_apply(v)  = K^{-1} M2 K^{-1} M2 v    (self-adjoint in <.,.>_{M2}),
/// so the Euclidean second moment of draws is K^{-1} M2 K^{-1} and
/// samples are mean + K^{-1} sqrt(M2) xi.
struct SpatialPrior {
  using Factor = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;

  Eigen::VectorXd mean;
  Eigen::SparseMatrix<double> K;
  std::shared_ptr<Factor> factor;  // shared_ptr: the solver type is noncopyable
  Eigen::VectorXd cell_weights;    // M2 diagonal
  double robin_coeff = 0.0;

  Eigen::VectorXd cov_apply(const Eigen::VectorXd& v) const {
    Eigen::VectorXd u = factor->solve(cell_weights.cwiseProduct(v));
    return factor->solve(cell_weights.cwiseProduct(u));
  }

  /// Inverse of cov_apply: M2^{-1} K M2^{-1} K v.
  Eigen::VectorXd precision_apply(const Eigen::VectorXd& v) const {
    Eigen::VectorXd u = (K * v).cwiseQuotient(cell_weights);
    return (K * u).cwiseQuotient(cell_weights);
  }

  /// Euclidean second-moment action K^{-1} M2 K^{-1} v (used by the MAP
  /// formulas, where it appears as covariance-operator composed with G*).
  Eigen::VectorXd moment_apply(const Eigen::VectorXd& v) const {
    return factor->solve(cell_weights.cwiseProduct(factor->solve(v)));
  }

  Eigen::VectorXd sample(std::mt19937_64& rng) const {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd xi(mean.size());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = gauss(rng);
    return mean + factor->solve(cell_weights.cwiseSqrt().cwiseProduct(xi));
  }
};

/// 5-point finite-difference stiffness matrix on the unit square (2D scale
/// invariant: unit edge coefficients), with S*1 = 0 for the Neumann part.
inline Eigen::SparseMatrix<double> fd_stiffness(const SpaceGrid& grid) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(5 * grid.n_nodes());
  for (int j = 0; j < grid.ny; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      const int a = grid.index(i, j);
      double diag = 0.0;
      const int di[4] = {1, -1, 0, 0};
      const int dj[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int ii = i + di[k], jj = j + dj[k];
        if (ii < 0 || ii >= grid.nx || jj < 0 || jj >= grid.ny) continue;
        trips.emplace_back(a, grid.index(ii, jj), -1.0);
        diag += 1.0;
      }
      trips.emplace_back(a, a, diag);
    }
  }
  Eigen::SparseMatrix<double> S(grid.n_nodes(), grid.n_nodes());
  S.setFromTriplets(trips.begin(), trips.end());
  return S;
}

inline SpatialPrior build_spatial_prior(const SpaceGrid& grid, double eps, double alpha,
                                        double robin_coeff, double mean_value) {
  if (eps < 0.0 || !(alpha > 0.0))
    throw std::invalid_argument("build_spatial_prior: need eps >= 0 and alpha > 0");
  SpatialPrior p;
  p.mean = Eigen::VectorXd::Constant(grid.n_nodes(), mean_value);
  p.cell_weights = grid.cell_weights;
  p.robin_coeff = robin_coeff;

  Eigen::SparseMatrix<double> K = eps * fd_stiffness(grid);
  // boundary term: robin_coeff * trapezoid arc-length weights on dD
  std::vector<Eigen::Triplet<double>> trips;
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i)
      if (grid.on_boundary(i, j)) {
        double ds = 0.0;
        if (j == 0 || j == grid.ny - 1) ds += (i == 0 || i == grid.nx - 1) ? 0.5 * grid.h : grid.h;
        if (i == 0 || i == grid.nx - 1) ds += (j == 0 || j == grid.ny - 1) ? 0.5 * grid.h : grid.h;
        trips.emplace_back(grid.index(i, j), grid.index(i, j), robin_coeff * ds);
      }
  Eigen::SparseMatrix<double> B(grid.n_nodes(), grid.n_nodes());
  B.setFromTriplets(trips.begin(), trips.end());

  Eigen::SparseMatrix<double> M2(grid.n_nodes(), grid.n_nodes());
  M2 = Eigen::SparseMatrix<double>(grid.cell_weights.asDiagonal());

  p.K = K + alpha * M2 + B;
  p.factor = std::make_shared<SpatialPrior::Factor>();
  p.factor->compute(p.K);
  if (p.factor->info() != Eigen::Success)
    throw std::runtime_error("build_spatial_prior: factorization of K failed");
  if ((p.factor->vectorD().array() <= 0.0).any())
    throw std::runtime_error("build_spatial_prior: K is not positive definite");
  return p;
}

struct PriorPair {
  TimePrior m;
  SpatialPrior b;
};

}  // namespace moed
