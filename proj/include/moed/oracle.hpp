#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "moed/posterior.hpp"

namespace moed {
namespace oracle {

/// Fully dense description of a (tiny) problem instance. Gm/Gb are the
/// Euclidean second-moment matrices of the priors; m1/m2 are the diagonals of
/// the inner-product weight matrices. Adjoints are E* = M^{-1} E^T throughout.
struct DenseProblem {
  Eigen::MatrixXd F;   // n_d x n_m
  Eigen::MatrixXd G;   // n_d x n_b
  Eigen::MatrixXd Gm;  // n_m x n_m SPD
  Eigen::MatrixXd Gb;  // n_b x n_b SPD
  Eigen::VectorXd m1;  // M1 diagonal, positive
  Eigen::VectorXd m2;  // M2 diagonal, positive
  Eigen::VectorXd sigma;
  Eigen::VectorXd m_pr;
  Eigen::VectorXd b_pr;

  int n_d() const { return static_cast<int>(F.rows()); }
  int n_m() const { return static_cast<int>(F.cols()); }
  int n_b() const { return static_cast<int>(G.cols()); }
};

struct DensePosterior {
  Eigen::MatrixXd cov;       // full (n x n) Euclidean moment matrix
  Eigen::MatrixXd cov_m;     // m-block
  Eigen::MatrixXd cov_b;     // b-block
  Eigen::MatrixXd cov_mb;    // cross block
  Eigen::VectorXd m_map;
  Eigen::VectorXd b_map;
  double trace_m = 0.0;      // tr(cov_m M1): the marginalized A-criterion
};

/// Brute-force posterior: assemble the full block precision
/// E^T W_sigma E + Gpr^{-1} in Euclidean moment form, invert densely, and
/// extract marginal blocks by index. Independent of the measurement-space
/// fast path.
inline DensePosterior dense_posterior(const DenseProblem& p, const Eigen::VectorXd& w,
                                      const Eigen::VectorXd& y, int size_guard = 4000) {
  const int nm = p.n_m(), nb = p.n_b(), n = nm + nb;
  if (n > size_guard) throw std::runtime_error("dense_posterior: size guard exceeded");
  const Eigen::VectorXd ws = w.cwiseQuotient(p.sigma.cwiseAbs2());
  Eigen::MatrixXd E(p.n_d(), n);
  E << p.F, p.G;
  Eigen::MatrixXd prec = E.transpose() * ws.asDiagonal() * E;
  prec.topLeftCorner(nm, nm) += p.Gm.inverse();
  prec.bottomRightCorner(nb, nb) += p.Gb.inverse();

  DensePosterior out;
  out.cov = prec.inverse();
  out.cov_m = out.cov.topLeftCorner(nm, nm);
  out.cov_b = out.cov.bottomRightCorner(nb, nb);
  out.cov_mb = out.cov.topRightCorner(nm, nb);
  out.trace_m = out.cov_m.diagonal().dot(p.m1);

  Eigen::VectorXd rhs = E.transpose() * ws.cwiseProduct(y);
  rhs.head(nm) += p.Gm.llt().solve(p.m_pr);
  rhs.tail(nb) += p.Gb.llt().solve(p.b_pr);
  const Eigen::VectorXd theta = prec.llt().solve(rhs);
  out.m_map = theta.head(nm);
  out.b_map = theta.tail(nb);
  return out;
}

/// Schur-complement route for the marginal m-block (second dense route).
inline Eigen::MatrixXd schur_post_m(const DenseProblem& p, const Eigen::VectorXd& w) {
  const Eigen::VectorXd ws = w.cwiseQuotient(p.sigma.cwiseAbs2());
  const Eigen::MatrixXd FtWF = p.F.transpose() * ws.asDiagonal() * p.F;
  const Eigen::MatrixXd FtWG = p.F.transpose() * ws.asDiagonal() * p.G;
  const Eigen::MatrixXd GtWG = p.G.transpose() * ws.asDiagonal() * p.G;
  const Eigen::MatrixXd inner = (p.Gb.inverse() + GtWG).inverse();
  const Eigen::MatrixXd prec_m =
      p.Gm.inverse() + FtWF - FtWG * inner * FtWG.transpose();
  return prec_m.inverse();
}

/// Both sides of the measurement-space covariance identity, as operators in
/// the M-weighted spaces (left: n x n inverse; right: n_d x n_d inverse).
/// Returned as Euclidean moment matrices for direct comparison.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> covariance_identity_sides(
    const DenseProblem& p, const Eigen::VectorXd& w) {
  const int nm = p.n_m(), nb = p.n_b(), n = nm + nb;
  const Eigen::VectorXd ws = w.cwiseQuotient(p.sigma.cwiseAbs2());
  Eigen::MatrixXd E(p.n_d(), n);
  E << p.F, p.G;
  Eigen::MatrixXd Gpr = Eigen::MatrixXd::Zero(n, n);
  Gpr.topLeftCorner(nm, nm) = p.Gm;
  Gpr.bottomRightCorner(nb, nb) = p.Gb;

  // left side in moment form: (E^T W E + Gpr^{-1})^{-1}
  const Eigen::MatrixXd left =
      (E.transpose() * ws.asDiagonal() * E + Gpr.inverse()).inverse();

  // right side: Gpr - Gpr E* (I + W E Gpr E*)^{-1} W E Gpr, with E* = M^{-1}E^T;
  // in moment form the M factors cancel to plain transposes.
  const Eigen::MatrixXd EGE = E * Gpr * E.transpose();
  const Eigen::MatrixXd inner =
      (Eigen::MatrixXd::Identity(p.n_d(), p.n_d()) + ws.asDiagonal() * EGE).inverse();
  const Eigen::MatrixXd right =
      Gpr - Gpr * E.transpose() * inner * ws.asDiagonal() * E * Gpr;
  return {left, right};
}

struct FdGradient {
  Eigen::VectorXd grad;
  bool one_sided_fallback = false;
};

/// Central finite differences; falls back to a one-sided stencil (flagged)
/// where the box boundary is closer than h.
inline FdGradient fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                              const Eigen::VectorXd& w, double h) {
  FdGradient out;
  out.grad.resize(w.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    Eigen::VectorXd wp = w, wm = w;
    if (w(j) + h <= 1.0 && w(j) - h >= 0.0) {
      wp(j) += h;
      wm(j) -= h;
      out.grad(j) = (f(wp) - f(wm)) / (2.0 * h);
    } else {
      out.one_sided_fallback = true;
      if (w(j) + h <= 1.0) {
        wp(j) += h;
        out.grad(j) = (f(wp) - f(w)) / h;
      } else {
        wm(j) -= h;
        out.grad(j) = (f(w) - f(wm)) / h;
      }
    }
  }
  return out;
}

struct ExhaustiveResult {
  std::vector<int> best_design;
  double best_value = 0.0;
  std::vector<std::pair<std::vector<int>, double>> table;
};

/// Evaluate the criterion on every binary design with exactly K active
/// sensors; ties resolve to the lexicographically smallest design.
inline ExhaustiveResult exhaustive_designs(
    const std::function<double(const Eigen::VectorXd&)>& criterion, int K, int n_d,
    long combinatorial_guard = 1000000) {
  if (K < 1 || K > n_d) throw std::invalid_argument("exhaustive_designs: K out of range");
  double ncomb = 1.0;
  for (int i = 0; i < K; ++i) ncomb *= double(n_d - i) / double(i + 1);
  if (ncomb > double(combinatorial_guard))
    throw std::runtime_error("exhaustive_designs: combinatorial guard exceeded");

  ExhaustiveResult out;
  std::vector<int> idx(K);
  for (int i = 0; i < K; ++i) idx[i] = i;
  bool first = true;
  while (true) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n_d);
    for (int i : idx) w(i) = 1.0;
    const double v = criterion(w);
    out.table.emplace_back(idx, v);
    if (first || v < out.best_value) {  // lexicographic enumeration: ties keep first
      out.best_value = v;
      out.best_design = idx;
      first = false;
    }
    // next combination
    int k = K - 1;
    while (k >= 0 && idx[k] == n_d - K + k) --k;
    if (k < 0) break;
    ++idx[k];
    for (int i = k + 1; i < K; ++i) idx[i] = idx[i - 1] + 1;
  }
  return out;
}

struct StudyRow {
  int b_sample = -1;        // -1: truth b0
  int noise_sample = 0;
  double err_moed = 0.0;
  double err_oed_truth = 0.0;
  double err_oed_draw = 0.0;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  double median_moed = 0.0;
  double median_oed_truth = 0.0;
  double median_oed_draw = 0.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Monte-Carlo MAP-error study: synthesize data from truth (m_t, b_t) plus
/// noise, then compare the mOED MAP against classical MAPs computed with
/// b0 = truth and with b0 drawn from the prior. Errors are relative
/// M1-weighted norms against the truth.
inline StudyResult map_error_study(const KernelMatrices& k, const DesignWeights& dw,
                                   const PriorPair& priors, const Eigen::VectorXd& m_truth,
                                   const Eigen::VectorXd& b_truth, int n_b_samples,
                                   int n_noise_samples, std::uint64_t seed) {
  StudyResult out;
  const Eigen::VectorXd y0 = k.F_dense * m_truth + k.G_dense * b_truth;
  const double m_norm = std::sqrt(m_truth.dot(priors.m.quad_weights.cwiseProduct(m_truth)));
  auto rel_err = [&](const Eigen::VectorXd& m) {
    const Eigen::VectorXd d = m - m_truth;
    return std::sqrt(d.dot(priors.m.quad_weights.cwiseProduct(d))) / m_norm;
  };

  std::mt19937_64 b_rng(seed);
  std::vector<Eigen::VectorXd> b_draws;
  for (int i = 0; i < n_b_samples; ++i) b_draws.push_back(priors.b.sample(b_rng));

  std::vector<double> e_moed, e_truth, e_draw;
  for (int jn = 0; jn < n_noise_samples; ++jn) {
    std::mt19937_64 noise_rng(seed ^ (0x9e3779b97f4a7c15ULL * (jn + 1)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd y = y0;
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += dw.sigma(i) * gauss(noise_rng);

    const double err_m = rel_err(map_estimate(k, dw, priors, y).m_map);
    const double err_t = rel_err(classical_post_m(k, dw, priors, b_truth, y).m_map);
    e_moed.push_back(err_m);
    e_truth.push_back(err_t);

    for (int jb = 0; jb < n_b_samples; ++jb) {
      const double err_d = rel_err(classical_post_m(k, dw, priors, b_draws[jb], y).m_map);
      e_draw.push_back(err_d);
      StudyRow row;
      row.b_sample = jb;
      row.noise_sample = jn;
      row.err_moed = err_m;
      row.err_oed_truth = err_t;
      row.err_oed_draw = err_d;
      out.rows.push_back(row);
    }
  }
  out.median_moed = median_of(e_moed);
  out.median_oed_truth = median_of(e_truth);
  out.median_oed_draw = median_of(e_draw);
  return out;
}

}  // namespace oracle
}  // namespace moed
