#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "moed/posterior.hpp"

namespace moed {

struct CriterionEval {
  double value = 0.0;
  Eigen::VectorXd gradient;  // empty unless requested
  long n_obj_evals = 0;
};

/// mOED objective Psi(w) = -sum_i (w_i/sigma_i^2) (D Y)_ii with
/// Y = (I + W_sigma C)^{-1}. Phi(w) = tr(Gpr_m) + Psi(w).
inline double psi_value(const Eigen::MatrixXd& C, const Eigen::MatrixXd& D,
                        const DesignWeights& dw) {
  // Extended precision internally: |Psi| can be O(1e3)-O(1e4) while finite
  // difference checks of the gradient need the value accurate to ~1 ulp.
  using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  const int nd = static_cast<int>(C.rows());
  const VecL ws = dw.wsigma().cast<long double>();
  const MatL Cl = C.cast<long double>();
  const MatL Dl = D.cast<long double>();
  Eigen::PartialPivLU<MatL> lu(MatL::Identity(nd, nd) + ws.asDiagonal() * Cl);
  const MatL Y = lu.solve(MatL::Identity(nd, nd));
  long double psi = 0.0;
  for (int i = 0; i < nd; ++i) psi -= ws(i) * Dl.row(i).dot(Y.col(i));
  return static_cast<double>(psi);
}

/// Psi and its analytic gradient from one shared factorization; the extra
/// cost over the objective is the two products C Y and D Y.
inline CriterionEval psi_with_gradient(const Eigen::MatrixXd& C, const Eigen::MatrixXd& D,
                                       const DesignWeights& dw) {
  const int nd = static_cast<int>(C.rows());
  const Eigen::VectorXd ws = dw.wsigma();
  const Eigen::VectorXd inv_s2 = dw.sigma.cwiseAbs2().cwiseInverse();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(nd, nd) +
                                          ws.asDiagonal() * C);
  const Eigen::MatrixXd Y = lu.solve(Eigen::MatrixXd::Identity(nd, nd));
  const Eigen::MatrixXd CY = C * Y;
  const Eigen::MatrixXd DY = D * Y;

  CriterionEval out;
  for (int i = 0; i < nd; ++i) out.value -= ws(i) * DY(i, i);
  out.gradient = Eigen::VectorXd::Zero(nd);
  for (int j = 0; j < nd; ++j) {
    double g = -inv_s2(j) * DY(j, j);
    for (int i = 0; i < nd; ++i) g += ws(i) * inv_s2(j) * CY(j, i) * DY(i, j);
    out.gradient(j) = g;
  }
  out.n_obj_evals = 1;
  return out;
}

inline double psi_marginal(const KernelMatrices& k, const DesignWeights& dw) {
  return psi_value(k.C, k.D, dw);
}

inline CriterionEval grad_psi(const KernelMatrices& k, const DesignWeights& dw) {
  return psi_with_gradient(k.C, k.D, dw);
}

inline double phi_marginal(const KernelMatrices& k, const DesignWeights& dw,
                           const PriorPair& priors) {
  return priors.m.trace() + psi_marginal(k, dw);
}

/// Classical A-optimality criterion psi(w) = tr[(F* W_sigma F + Gpr_m^-1)^-1],
/// realized through the same measurement-space machinery with C_F = F Gpr_m F*
/// and the identical D.
inline double psi_classical(const KernelMatrices& k, const DesignWeights& dw,
                            const PriorPair& priors) {
  return priors.m.trace() + psi_value(classical_cf(k, priors), k.D, dw);
}

inline CriterionEval grad_psi_classical(const KernelMatrices& k, const DesignWeights& dw,
                                        const PriorPair& priors) {
  return psi_with_gradient(classical_cf(k, priors), k.D, dw);
}

struct GreedyTrace {
  std::vector<int> chosen;
  std::vector<double> values;
  long total_evals = 0;
};

/// One-sensor-at-a-time selection; ties break toward the lowest index.
/// Total evaluations: K*n_d - (K-1)K/2.
inline GreedyTrace greedy_select(const std::function<double(const Eigen::VectorXd&)>& criterion,
                                 int K, int n_d) {
  if (K < 1 || K > n_d) throw std::invalid_argument("greedy_select: K out of range");
  GreedyTrace trace;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n_d);
  std::vector<bool> active(n_d, false);
  for (int step = 0; step < K; ++step) {
    int best = -1;
    double best_val = 0.0;
    for (int j = 0; j < n_d; ++j) {
      if (active[j]) continue;
      w(j) = 1.0;
      const double v = criterion(w);
      ++trace.total_evals;
      w(j) = 0.0;
      if (best < 0 || v < best_val) {
        best = j;
        best_val = v;
      }
    }
    active[best] = true;
    w(best) = 1.0;
    trace.chosen.push_back(best);
    trace.values.push_back(best_val);
  }
  return trace;
}

struct BoxSolverResult {
  Eigen::VectorXd w;
  double value = 0.0;
  long iterations = 0;
  long n_obj_evals = 0;
  bool converged = false;
  bool line_search_failed = false;
};

struct BoxSolverOptions {
  double tol = 1e-8;
  long max_iters = 5000;
  double armijo_c = 1e-4;
  double step0 = 1.0;
  double min_step = 1e-16;
};

/// Projected gradient with Armijo backtracking on [0,1]^n.
inline BoxSolverResult box_solver(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
    const Eigen::VectorXd& w0, const BoxSolverOptions& opts = {}) {
  auto project = [](Eigen::VectorXd v) {
    return v.cwiseMax(0.0).cwiseMin(1.0).eval();
  };
  BoxSolverResult res;
  res.w = project(w0);
  res.value = f(res.w);
  ++res.n_obj_evals;
  double step = opts.step0;
  for (long it = 0; it < opts.max_iters; ++it) {
    const Eigen::VectorXd g = grad(res.w);
    const Eigen::VectorXd pg = res.w - project(res.w - g);
    if (pg.norm() <= opts.tol * (1.0 + std::abs(res.value))) {
      res.converged = true;
      return res;
    }
    // backtracking along the projected path
    double t = std::min(step * 2.0, opts.step0 * 64.0);
    bool accepted = false;
    while (t >= opts.min_step) {
      const Eigen::VectorXd trial = project(res.w - t * g);
      const double fv = f(trial);
      ++res.n_obj_evals;
      const double decrease = g.dot(res.w - trial);
      if (fv <= res.value - opts.armijo_c * decrease) {
        res.w = trial;
        res.value = fv;
        step = t;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    ++res.iterations;
    if (!accepted) {
      res.line_search_failed = true;
      return res;
    }
  }
  return res;
}

struct ContinuationResult {
  Eigen::VectorXd w_relaxed;
  Eigen::VectorXd w_binary;
  std::vector<double> epsilon_schedule;
  double gamma = 0.0;
  std::vector<long> iterations_per_stage;
  long total_obj_evals = 0;
  double value_relaxed = 0.0;
  double value_binary = 0.0;
  bool all_converged = true;
};

/// Regularized l0 continuation: stage 0 solves with the l1 penalty P(w)=sum w_i,
/// then each epsilon stage uses p_eps(t) = t/(t+eps), warm-started from the
/// previous stage; the final weights threshold at 0.5 (0.5 rounds up).
inline ContinuationResult sparsify_l0(
    const std::function<double(const Eigen::VectorXd&)>& psi,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_psi_fn,
    double gamma, int n_d,
    const std::vector<double>& schedule = {1.0, 0.1, 0.01, 0.001},
    const BoxSolverOptions& opts = {}) {
  if (gamma < 0.0) throw std::invalid_argument("sparsify_l0: gamma must be nonnegative");
  ContinuationResult out;
  out.gamma = gamma;
  out.epsilon_schedule = schedule;

  Eigen::VectorXd w = Eigen::VectorXd::Constant(n_d, 0.5);
  {
    auto f = [&](const Eigen::VectorXd& v) { return psi(v) + gamma * v.sum(); };
    auto g = [&](const Eigen::VectorXd& v) {
      return (grad_psi_fn(v).array() + gamma).matrix().eval();
    };
    const BoxSolverResult r = box_solver(f, g, w, opts);
    w = r.w;
    out.iterations_per_stage.push_back(r.iterations);
    out.total_obj_evals += r.n_obj_evals;
    out.all_converged = out.all_converged && r.converged;
  }
  for (const double eps : schedule) {
    auto pen = [eps](double t) { return t / (t + eps); };
    auto dpen = [eps](double t) { return eps / ((t + eps) * (t + eps)); };
    auto f = [&](const Eigen::VectorXd& v) {
      double p = 0.0;
      for (Eigen::Index i = 0; i < v.size(); ++i) p += pen(v(i));
      return psi(v) + gamma * p;
    };
    auto g = [&](const Eigen::VectorXd& v) {
      Eigen::VectorXd gr = grad_psi_fn(v);
      for (Eigen::Index i = 0; i < v.size(); ++i) gr(i) += gamma * dpen(v(i));
      return gr;
    };
    const BoxSolverResult r = box_solver(f, g, w, opts);
    w = r.w;
    out.iterations_per_stage.push_back(r.iterations);
    out.total_obj_evals += r.n_obj_evals;
    out.all_converged = out.all_converged && r.converged;
  }
  out.w_relaxed = w;
  out.w_binary = (w.array() >= 0.5).cast<double>().matrix();
  out.value_relaxed = psi(w);
  out.value_binary = psi(out.w_binary);
  return out;
}

/// Bisection on log10(gamma) to reach a target active-sensor count; returns
/// the continuation result whose binary count is closest to the target.
inline ContinuationResult tune_gamma_for_count(
    const std::function<double(const Eigen::VectorXd&)>& psi,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_psi_fn,
    int target_count, int n_d, double gamma_lo = 1e-6, double gamma_hi = 1e6,
    int max_bisections = 20, const std::vector<double>& schedule = {1.0, 0.1, 0.01, 0.001},
    const BoxSolverOptions& opts = {}) {
  auto run = [&](double gamma) { return sparsify_l0(psi, grad_psi_fn, gamma, n_d, schedule, opts); };
  auto count = [](const ContinuationResult& r) {
    return static_cast<int>(r.w_binary.sum() + 0.5);
  };
  ContinuationResult lo = run(gamma_lo), hi = run(gamma_hi);
  ContinuationResult best = (std::abs(count(lo) - target_count) <= std::abs(count(hi) - target_count))
                                ? lo
                                : hi;
  if (count(lo) < target_count || count(hi) > target_count) return best;
  double a = std::log10(gamma_lo), b = std::log10(gamma_hi);
  for (int it = 0; it < max_bisections; ++it) {
    const double mid = 0.5 * (a + b);
    ContinuationResult r = run(std::pow(10.0, mid));
    const int c = count(r);
    if (std::abs(c - target_count) < std::abs(count(best) - target_count)) best = std::move(r);
    if (count(best) == target_count) break;
    if (c > target_count)
      a = mid;  // too many sensors: raise gamma
    else
      b = mid;
  }
  return best;
}

}  // namespace moed
