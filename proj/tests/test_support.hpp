#pragma once

#include <Eigen/Dense>
#include <random>
#include <utility>

#include "moed/commands.hpp"
#include "moed/oracle.hpp"

namespace moed::testing {

inline Eigen::VectorXd randn(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = gauss(rng);
  return v;
}

inline Eigen::MatrixXd randn_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) M(i, j) = gauss(rng);
  return M;
}

inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index n) {
  const Eigen::MatrixXd A = randn_mat(rng, n, n);
  return A * A.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

inline Eigen::VectorXd random_positive(std::mt19937_64& rng, Eigen::Index n, double lo = 0.2,
                                       double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

inline Eigen::VectorXd random_weights(std::mt19937_64& rng, Eigen::Index n,
                                      bool allow_zeros = true) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i) = u(rng);
    if (allow_zeros && u(rng) < 0.3) w(i) = 0.0;
  }
  return w;
}

/// Random fully synthetic dense instance (no PDE), used by the identity and
/// block-equivalence checks.
inline oracle::DenseProblem random_instance(std::mt19937_64& rng, int n_d, int n_m, int n_b) {
  oracle::DenseProblem p;
  p.F = randn_mat(rng, n_d, n_m);
  p.G = randn_mat(rng, n_d, n_b);
  p.Gm = random_spd(rng, n_m);
  p.Gb = random_spd(rng, n_b);
  p.m1 = random_positive(rng, n_m);
  p.m2 = random_positive(rng, n_b);
  p.sigma = random_positive(rng, n_d, 0.3, 1.5);
  p.m_pr = randn(rng, n_m);
  p.b_pr = randn(rng, n_b);
  return p;
}

/// Synthetic instance paired with PriorPair objects whose moment matrices
/// equal the instance's Gm/Gb, so the fast path and the dense oracle can be
/// compared on the same problem without a PDE.
struct SyntheticPair {
  oracle::DenseProblem p;
  PriorPair priors;
};

inline SyntheticPair random_pair(std::mt19937_64& rng, int n_d, int n_m, int n_b) {
  SyntheticPair sp;
  sp.p.F = randn_mat(rng, n_d, n_m);
  sp.p.G = randn_mat(rng, n_d, n_b);
  sp.p.m1 = random_positive(rng, n_m);
  sp.p.m2 = random_positive(rng, n_b);
  sp.p.sigma = random_positive(rng, n_d, 0.3, 1.5);
  sp.p.m_pr = randn(rng, n_m);
  sp.p.b_pr = randn(rng, n_b);
  sp.p.Gm = random_spd(rng, n_m);

  TimePrior& tm = sp.priors.m;
  tm.mean = sp.p.m_pr;
  tm.cov = sp.p.Gm;
  tm.chol = Eigen::LLT<Eigen::MatrixXd>(tm.cov).matrixL();
  tm.quad_weights = sp.p.m1;

  // spatial prior from a random sparse SPD K; Gb follows from the convention
  SpatialPrior& bp = sp.priors.b;
  bp.mean = sp.p.b_pr;
  bp.cell_weights = sp.p.m2;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Eigen::Triplet<double>> trips;
  for (int i = 0; i < n_b; ++i) {
    trips.emplace_back(i, i, 2.0 + u(rng));
    if (i + 1 < n_b) {
      trips.emplace_back(i, i + 1, -0.3);
      trips.emplace_back(i + 1, i, -0.3);
    }
  }
  bp.K.resize(n_b, n_b);
  bp.K.setFromTriplets(trips.begin(), trips.end());
  bp.factor = std::make_shared<SpatialPrior::Factor>();
  bp.factor->compute(bp.K);
  const Eigen::MatrixXd Kinv = Eigen::MatrixXd(bp.K).inverse();
  sp.p.Gb = Kinv * sp.p.m2.asDiagonal() * Kinv;
  sp.p.Gb = 0.5 * (sp.p.Gb + sp.p.Gb.transpose()).eval();
  return sp;
}

/// Small, cheap PDE-backed configuration for integration-style unit tests.
inline ExperimentConfig tiny_config() {
  ExperimentConfig cfg = preset_config("desk");
  cfg.nx = cfg.ny = 10;
  cfg.n_m = 17;
  cfg.sensors = lattice_sensors(3);
  return cfg;
}

/// KernelMatrices view of a synthetic dense instance for the fast path.
/// Builds C, D, F, G exactly as the operator path would (M-weighted adjoints).
inline KernelMatrices kernels_from_instance(const oracle::DenseProblem& p) {
  KernelMatrices k;
  k.F_dense = p.F;
  k.G_dense = p.G;
  k.C = p.F * p.Gm * p.F.transpose() + p.G * p.Gb * p.G.transpose();
  k.D = p.F * p.Gm * p.m1.asDiagonal() * p.Gm * p.F.transpose();
  k.C = 0.5 * (k.C + k.C.transpose()).eval();
  k.D = 0.5 * (k.D + k.D.transpose()).eval();
  return k;
}

}  // namespace moed::testing
