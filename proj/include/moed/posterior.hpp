#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "moed/forward.hpp"
#include "moed/priors.hpp"

namespace moed {

struct DesignWeights {
  Eigen::VectorXd w;
  Eigen::VectorXd sigma;

  DesignWeights() = default;
  DesignWeights(Eigen::VectorXd w_, Eigen::VectorXd sigma_)
      : w(std::move(w_)), sigma(std::move(sigma_)) {
    validate();
  }

  static DesignWeights uniform_noise(Eigen::VectorXd w_, double noise_std) {
    const Eigen::Index n = w_.size();
    return DesignWeights(std::move(w_), Eigen::VectorXd::Constant(n, noise_std));
  }

  void validate() const {
    if (w.size() != sigma.size()) throw std::invalid_argument("DesignWeights: size mismatch");
    if ((w.array() < 0.0).any() || (w.array() > 1.0).any())
      throw std::invalid_argument("DesignWeights: weights must lie in [0,1]");
    if ((sigma.array() <= 0.0).any())
      throw std::invalid_argument("DesignWeights: noise levels must be positive");
  }

  /// diag of W_sigma = diag(w_i / sigma_i^2)
  Eigen::VectorXd wsigma() const { return w.cwiseQuotient(sigma.cwiseAbs2()); }
};

/// Measurement-space kernel matrices from the precompute pass:
///   C = F Gpr_m F* + G Gpr_b G*,   D = F Gpr_m^2 F*.
/// F_dense/G_dense are recovered from the same adjoint solves at zero extra
/// PDE cost and let every downstream command run without further solves.
struct KernelMatrices {
  Eigen::MatrixXd C;
  Eigen::MatrixXd D;
  Eigen::MatrixXd F_dense;  // n_d x n_m
  Eigen::MatrixXd G_dense;  // n_d x n_b
  long n_forward_solves = 0;
  long n_adjoint_solves = 0;

  int n_d() const { return static_cast<int>(C.rows()); }
};

/// Startup consistency check shared by priors and posterior: the precision
/// action must invert the covariance action.
inline void check_prior_roundtrip(const PriorPair& priors) {
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto randv = [&](Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = gauss(rng);
    return v;
  };
  const Eigen::VectorXd vm = randv(priors.m.mean.size());
  const Eigen::VectorXd vb = randv(priors.b.mean.size());
  if ((priors.m.precision_apply(priors.m.cov_apply(vm)) - vm).norm() > 1e-9 * vm.norm())
    throw std::runtime_error("prior round-trip failed for the time prior");
  if ((priors.b.precision_apply(priors.b.cov_apply(vb)) - vb).norm() > 1e-9 * vb.norm())
    throw std::runtime_error("prior round-trip failed for the spatial prior");
}

/// Precompute C and D column-by-column: 3 n_d forward and 2 n_d adjoint
/// solves, recorded in the returned counters.
inline KernelMatrices precompute_kernels(const ForwardMaps& maps, const PriorPair& priors) {
  const int nd = maps.n_d();
  if (priors.m.mean.size() != maps.n_m() || priors.b.mean.size() != maps.n_b())
    throw std::invalid_argument("precompute_kernels: prior/forward dimension mismatch");
  check_prior_roundtrip(priors);

  const SolveCounters before = maps.counters();
  KernelMatrices k;
  k.C.resize(nd, nd);
  k.D.resize(nd, nd);
  k.F_dense.resize(nd, maps.n_m());
  k.G_dense.resize(nd, maps.n_b());

  for (int i = 0; i < nd; ++i) {
    const Eigen::VectorXd ei = Eigen::VectorXd::Unit(nd, i);
    const Eigen::VectorXd fs = maps.apply_F_adj(ei);            // F* e_i
    const Eigen::VectorXd gs = maps.apply_G_adj(ei);            // G* e_i
    const Eigen::VectorXd ai = priors.m.cov_apply(fs);          // Gpr_m F* e_i
    k.D.col(i) = maps.apply_F(priors.m.cov_apply(ai));
    k.C.col(i) = maps.apply_F(ai) + maps.apply_G(priors.b.cov_apply(gs));
    // dense rows for free: F^T e_i = M1 (F* e_i), G^T e_i = M2 (G* e_i)
    k.F_dense.row(i) = maps.time_grid().quad_weights.cwiseProduct(fs).transpose();
    k.G_dense.row(i) = maps.space_grid().cell_weights.cwiseProduct(gs).transpose();
  }

  auto symmetrize = [](Eigen::MatrixXd& X, const char* name) {
    const double asym = (X - X.transpose()).norm();
    if (asym > 1e-8 * std::max(1.0, X.norm()))
      throw std::runtime_error(std::string(name) + " asymmetry exceeds tolerance (broken adjoint?)");
    X = 0.5 * (X + X.transpose()).eval();
  };
  symmetrize(k.C, "C");
  symmetrize(k.D, "D");

  k.n_forward_solves = maps.counters().forward - before.forward;
  k.n_adjoint_solves = maps.counters().adjoint - before.adjoint;
  return k;
}

/// LU factorization of (I + W_sigma C); Y = (I + W_sigma C)^{-1} columnwise,
/// Q columns recovered as q_i = (w_i/sigma_i^2) y_i.
class QFactor {
 public:
  QFactor(const KernelMatrices& k, const DesignWeights& dw) : ws_(dw.wsigma()) {
    const int nd = k.n_d();
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(nd, nd) + ws_.asDiagonal() * k.C;
    lu_.compute(M);
    Y_ = lu_.solve(Eigen::MatrixXd::Identity(nd, nd));
  }

  const Eigen::MatrixXd& Y() const { return Y_; }
  Eigen::VectorXd wsigma() const { return ws_; }

  /// Q(w) z = (I + W_sigma C)^{-1} W_sigma z
  Eigen::VectorXd apply_Q(const Eigen::VectorXd& z) const {
    return lu_.solve(ws_.cwiseProduct(z).eval());
  }

 private:
  Eigen::VectorXd ws_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  Eigen::MatrixXd Y_;
};

/// Marginal posterior of m in measurement-space form (Euclidean second
/// moment): Gpost_m = Gm - Gm F^T Q F Gm with Gm the Matern kernel matrix.
class MarginalPosteriorM {
 public:
  MarginalPosteriorM(const KernelMatrices& k, const DesignWeights& dw, const PriorPair& priors)
      : k_(&k), priors_(&priors), q_(k, dw) {}

  /// Action of the covariance operator (M1-weighted): v -> Gpost_m M1 v.
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    const Eigen::VectorXd gv = priors_->m.cov_apply(v);
    const Eigen::VectorXd t = q_.apply_Q(k_->F_dense * gv);
    return gv - priors_->m.cov * (k_->F_dense.transpose() * t);
  }

  /// Dense Euclidean moment matrix (variances on the diagonal).
  Eigen::MatrixXd dense_moment(int size_guard = 4000) const {
    const auto& Gm = priors_->m.cov;
    if (Gm.rows() > size_guard) throw std::runtime_error("dense posterior: size guard exceeded");
    const Eigen::MatrixXd FG = k_->F_dense * Gm;  // n_d x n_m
    Eigen::MatrixXd QFG(FG.rows(), FG.cols());
    for (Eigen::Index j = 0; j < FG.cols(); ++j) QFG.col(j) = q_.apply_Q(FG.col(j));
    return Gm - FG.transpose() * QFG;
  }

  /// tr(Gpost_m M1) through the measurement-space identity, no dense pass.
  double trace() const {
    double psi = 0.0;
    const Eigen::MatrixXd DY = k_->D * q_.Y();
    const Eigen::VectorXd ws = q_.wsigma();
    for (int i = 0; i < k_->n_d(); ++i) psi -= ws(i) * DY(i, i);
    return priors_->m.trace() + psi;
  }

  const QFactor& qfactor() const { return q_; }

 private:
  const KernelMatrices* k_;
  const PriorPair* priors_;
  QFactor q_;
};

struct MapPair {
  Eigen::VectorXd m_map;
  Eigen::VectorXd b_map;
};

/// MAP pair of the marginalized formulation. Both estimates share the
/// measurement-space residual r = W_sigma y - Q(C W_sigma y + F m_pr + G b_pr):
///   m_map = m_pr + Gm F^T r,   b_map = b_pr + Gb G^T r,
/// with Gm, Gb the Euclidean second-moment matrices of the priors. No draw
/// of the secondary parameter enters.
inline MapPair map_estimate(const KernelMatrices& k, const DesignWeights& dw,
                            const PriorPair& priors, const Eigen::VectorXd& y) {
  if (y.size() != k.n_d()) throw std::invalid_argument("map_estimate: bad data length");
  const QFactor q(k, dw);
  const Eigen::VectorXd wy = dw.wsigma().cwiseProduct(y);
  const Eigen::VectorXd prior_obs = k.F_dense * priors.m.mean + k.G_dense * priors.b.mean;
  const Eigen::VectorXd r = wy - q.apply_Q(k.C * wy + prior_obs);
  MapPair out;
  out.m_map = priors.m.mean + priors.m.cov * (k.F_dense.transpose() * r);
  out.b_map = priors.b.mean + priors.b.moment_apply(k.G_dense.transpose() * r);
  return out;
}

/// Classical (non-marginalized) posterior of m with the secondary parameter
/// frozen at b0: same measurement-space machinery with C replaced by
/// C_F = F Gpr_m F* and data shifted by G b0.
struct ClassicalPosterior {
  Eigen::VectorXd m_map;
  Eigen::MatrixXd moment;  // Euclidean moment matrix of Gpost_m
  double trace = 0.0;      // tr(Gpost_m M1)
};

inline Eigen::MatrixXd classical_cf(const KernelMatrices& k, const PriorPair& priors) {
  Eigen::MatrixXd CF = k.F_dense * priors.m.cov * k.F_dense.transpose();
  return 0.5 * (CF + CF.transpose()).eval();
}

inline ClassicalPosterior classical_post_m(const KernelMatrices& k, const DesignWeights& dw,
                                           const PriorPair& priors, const Eigen::VectorXd& b0,
                                           const Eigen::VectorXd& y) {
  KernelMatrices kf = k;
  kf.C = classical_cf(k, priors);
  const QFactor q(kf, dw);
  const Eigen::VectorXd yt = y - k.G_dense * b0;
  const Eigen::VectorXd wy = dw.wsigma().cwiseProduct(yt);
  const Eigen::VectorXd r = wy - q.apply_Q(kf.C * wy + k.F_dense * priors.m.mean);
  ClassicalPosterior out;
  out.m_map = priors.m.mean + priors.m.cov * (k.F_dense.transpose() * r);
  const auto& Gm = priors.m.cov;
  const Eigen::MatrixXd FG = k.F_dense * Gm;
  Eigen::MatrixXd QFG(FG.rows(), FG.cols());
  for (Eigen::Index j = 0; j < FG.cols(); ++j) QFG.col(j) = q.apply_Q(FG.col(j));
  out.moment = Gm - FG.transpose() * QFG;
  out.trace = out.moment.diagonal().dot(priors.m.quad_weights);
  return out;
}

/// Cross block Gpost_mb = -Gpr_m F* Q G Gpr_b as an n_m x n_b Euclidean
/// moment matrix (desk scale, dense).
inline Eigen::MatrixXd cross_block_moment(const KernelMatrices& k, const DesignWeights& dw,
                                          const PriorPair& priors, int size_guard = 4000) {
  if (k.F_dense.cols() > size_guard || k.G_dense.cols() > size_guard)
    throw std::runtime_error("cross_block_moment: size guard exceeded");
  const QFactor q(k, dw);
  Eigen::MatrixXd GB(k.n_d(), k.G_dense.cols());  // G Gb (moment) = (Gb G^T)^T
  for (Eigen::Index j = 0; j < GB.rows(); ++j)
    GB.row(j) = priors.b.moment_apply(k.G_dense.row(j).transpose()).transpose();
  Eigen::MatrixXd QGB(GB.rows(), GB.cols());
  for (Eigen::Index j = 0; j < GB.cols(); ++j) QGB.col(j) = q.apply_Q(GB.col(j));
  return -(k.F_dense * priors.m.cov).transpose() * QGB;
}

/// Marginal posterior of b, dense Euclidean moment (desk scale).
inline Eigen::MatrixXd marginal_post_b_moment(const KernelMatrices& k, const DesignWeights& dw,
                                              const PriorPair& priors, int size_guard = 4000) {
  const int nb = static_cast<int>(k.G_dense.cols());
  if (nb > size_guard) throw std::runtime_error("marginal_post_b_moment: size guard exceeded");
  const QFactor q(k, dw);
  Eigen::MatrixXd Gb(nb, nb);
  for (int j = 0; j < nb; ++j) Gb.col(j) = priors.b.moment_apply(Eigen::VectorXd::Unit(nb, j));
  const Eigen::MatrixXd GG = k.G_dense * Gb;
  Eigen::MatrixXd QGG(GG.rows(), GG.cols());
  for (Eigen::Index j = 0; j < GG.cols(); ++j) QGG.col(j) = q.apply_Q(GG.col(j));
  return Gb - GG.transpose() * QGG;
}

}  // namespace moed
