#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "moed/grids.hpp"

namespace moed {

struct PDEConfig {
  double kappa = 0.001;
  std::string velocity_field = "vortex";  // "vortex" or "zero"
  double velocity_scale = 1.0;
  double source_x = 0.5;
  double source_y = 0.35;
  double source_width = 0.05;
};

/// Divergence-free analytic velocity with zero normal component on the
/// boundary of the unit square.
inline std::pair<double, double> velocity_at(const PDEConfig& cfg, double x, double y) {
  if (cfg.velocity_field == "zero") return {0.0, 0.0};
  if (cfg.velocity_field == "vortex") {
    const double pi = 3.14159265358979323846;
    return {cfg.velocity_scale * std::sin(pi * x) * std::cos(pi * y),
            -cfg.velocity_scale * std::cos(pi * x) * std::sin(pi * y)};
  }
  throw std::invalid_argument("unknown velocity field: " + cfg.velocity_field);
}

struct ObservationSetup {
  std::vector<int> sensor_nodes;   // snapped grid nodes, duplicate-free
  Eigen::VectorXd time_weights;    // length n_m; nonzero only inside the window
  double t_a = 0.95, t_b = 0.99;

  int n_d() const { return static_cast<int>(sensor_nodes.size()); }
};

/// Snap sensor coordinates to grid nodes and build the windowed time-average
/// weights (trapezoid over the snapped window nodes, normalized to an
/// average; degenerate window falls back to a pointwise sample).
inline ObservationSetup make_observation_setup(const SpaceGrid& grid, const TimeGrid& tg,
                                               const std::vector<std::pair<double, double>>& coords,
                                               double t_a, double t_b) {
  if (coords.empty()) throw std::invalid_argument("observation setup: need at least one sensor");
  if (t_a > t_b) throw std::invalid_argument("observation setup: window reversed");
  if (t_a < tg.t0 || t_b > tg.t_final)
    throw std::invalid_argument("observation setup: window outside time grid");
  ObservationSetup s;
  s.t_a = t_a;
  s.t_b = t_b;
  std::set<int> seen;
  for (const auto& [px, py] : coords) {
    const int node = grid.nearest_node(px, py);
    if (!seen.insert(node).second)
      throw std::invalid_argument("observation setup: sensors snap to duplicate grid nodes");
    s.sensor_nodes.push_back(node);
  }
  auto nearest_time = [&](double t) {
    int best = 0;
    double bd = 1e300;
    for (int k = 0; k < tg.n_m; ++k) {
      const double d = std::abs(tg.nodes(k) - t);
      if (d < bd - 1e-15) {
        bd = d;
        best = k;
      }
    }
    return best;
  };
  const int ka = nearest_time(t_a), kb = nearest_time(t_b);
  s.time_weights = Eigen::VectorXd::Zero(tg.n_m);
  if (ka == kb) {
    s.time_weights(ka) = 1.0;
  } else {
    const double dt = tg.dt();
    for (int k = ka; k <= kb; ++k)
      s.time_weights(k) = (k == ka || k == kb) ? 0.5 * dt : dt;
    s.time_weights /= s.time_weights.sum();
  }
  return s;
}

struct SolveCounters {
  long forward = 0;
  long adjoint = 0;
};

/// Implicit-Euler advection-diffusion solver providing the actions of the
/// parameter-to-observable maps F, G and their discrete adjoints.
///
/// One time step: (M2 + dt*A) u^{k+1} = M2 u^k + dt * delta_h * m(t_{k+1}),
/// with A = kappa*(-Lap_h) + upwind advection and zero-flux boundaries.
/// Adjoints are realized as exact transposes of the assembled one-step map.
class ForwardMaps {
 public:
  ForwardMaps(const SpaceGrid& grid, const TimeGrid& tg, const PDEConfig& cfg,
              ObservationSetup obs)
      : grid_(grid), tg_(tg), cfg_(cfg), obs_(std::move(obs)) {
    assemble_operator();
    source_ = source_vector();
    const Eigen::SparseMatrix<double> T = mass_matrix() + tg_.dt() * A_;
    lu_ = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
    lu_->compute(T);
    if (lu_->info() != Eigen::Success)
      throw std::runtime_error("ForwardMaps: time-step matrix factorization failed");
    Eigen::SparseMatrix<double> Tt = T.transpose();
    lu_t_ = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
    lu_t_->compute(Tt);
    if (lu_t_->info() != Eigen::Success)
      throw std::runtime_error("ForwardMaps: transposed time-step factorization failed");
  }

  int n_m() const { return tg_.n_m; }
  int n_b() const { return grid_.n_nodes(); }
  int n_d() const { return obs_.n_d(); }
  const TimeGrid& time_grid() const { return tg_; }
  const SpaceGrid& space_grid() const { return grid_; }
  const ObservationSetup& observation() const { return obs_; }
  const SolveCounters& counters() const { return counters_; }
  void reset_counters() { counters_ = {}; }

  /// Full state trajectory, one row per time node. Counts one forward solve.
  Eigen::MatrixXd solve_forward(const Eigen::VectorXd& m, const Eigen::VectorXd& b) const {
    check_dims(m, b);
    ++counters_.forward;
    Eigen::MatrixXd traj(tg_.n_m, n_b());
    Eigen::VectorXd u = b;
    traj.row(0) = u;
    const Eigen::VectorXd m2 = grid_.cell_weights;
    for (int k = 1; k < tg_.n_m; ++k) {
      Eigen::VectorXd rhs = m2.cwiseProduct(u) + tg_.dt() * m(k) * source_;
      u = lu_->solve(rhs);
      traj.row(k) = u;
    }
    return traj;
  }

  Eigen::VectorXd observe(const Eigen::MatrixXd& traj) const {
    Eigen::VectorXd y(n_d());
    for (int s = 0; s < n_d(); ++s) {
      double acc = 0.0;
      for (int k = 0; k < tg_.n_m; ++k)
        if (obs_.time_weights(k) != 0.0) acc += obs_.time_weights(k) * traj(k, obs_.sensor_nodes[s]);
      y(s) = acc;
    }
    return y;
  }

  Eigen::VectorXd apply_F(const Eigen::VectorXd& m) const {
    return observe(solve_forward(m, Eigen::VectorXd::Zero(n_b())));
  }

  Eigen::VectorXd apply_G(const Eigen::VectorXd& b) const {
    return observe(solve_forward(Eigen::VectorXd::Zero(n_m()), b));
  }

  /// F* y = M1^{-1} F^T y via one backward sweep with the transposed one-step
  /// map. Counts one adjoint solve.
  Eigen::VectorXd apply_F_adj(const Eigen::VectorXd& y) const {
    const auto [ft, gt] = adjoint_sweep(y);
    (void)gt;
    return ft.cwiseQuotient(tg_.quad_weights);
  }

  /// G* y = M2^{-1} G^T y. Counts one adjoint solve.
  Eigen::VectorXd apply_G_adj(const Eigen::VectorXd& y) const {
    const auto [ft, gt] = adjoint_sweep(y);
    (void)ft;
    return gt.cwiseQuotient(grid_.cell_weights);
  }

  /// Both transposes F^T y and G^T y from a single backward sweep.
  /// Counts one adjoint solve.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> adjoint_sweep(const Eigen::VectorXd& y) const {
    if (y.size() != n_d()) throw std::invalid_argument("adjoint_sweep: bad data length");
    ++counters_.adjoint;
    const Eigen::VectorXd by = scatter(y);  // B^T y in state space
    Eigen::VectorXd ft(n_m());
    Eigen::VectorXd p = Eigen::VectorXd::Zero(n_b());
    ft(0) = 0.0;  // m(t_0) never enters the stepping
    for (int k = tg_.n_m - 1; k >= 1; --k) {
      Eigen::VectorXd rhs = obs_.time_weights(k) * by + grid_.cell_weights.cwiseProduct(p);
      p = lu_t_->solve(rhs);
      ft(k) = tg_.dt() * source_.dot(p);
    }
    Eigen::VectorXd gt = obs_.time_weights(0) * by + grid_.cell_weights.cwiseProduct(p);
    return {ft, gt};
  }

  /// Dense F (n_d x n_m) and G (n_d x n_b) built column-by-column from unit
  /// vectors; n_m + n_b forward solves. Oracle support, desk scale only.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> assemble_dense(int size_guard = 4000) const {
    if (n_m() > size_guard || n_b() > size_guard)
      throw std::runtime_error("assemble_dense: size guard exceeded");
    Eigen::MatrixXd F(n_d(), n_m()), G(n_d(), n_b());
    for (int j = 0; j < n_m(); ++j)
      F.col(j) = apply_F(Eigen::VectorXd::Unit(n_m(), j));
    for (int j = 0; j < n_b(); ++j)
      G.col(j) = apply_G(Eigen::VectorXd::Unit(n_b(), j));
    return {F, G};
  }

  Eigen::VectorXd source_term() const { return source_; }

 private:
  void check_dims(const Eigen::VectorXd& m, const Eigen::VectorXd& b) const {
    if (m.size() != n_m() || b.size() != n_b())
      throw std::invalid_argument("solve_forward: dimension mismatch");
  }

  Eigen::SparseMatrix<double> mass_matrix() const {
    return Eigen::SparseMatrix<double>(grid_.cell_weights.asDiagonal());
  }

  /// delta_h: mollified point source evaluated at grid nodes, weighted by
  /// cell areas so that dt*delta_h*m enters the M2-weighted step consistently.
  Eigen::VectorXd source_vector() const {
    const double L = cfg_.source_width;
    const double pi = 3.14159265358979323846;
    Eigen::VectorXd d(n_b());
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i) {
        const double dx = grid_.x(i) - cfg_.source_x;
        const double dy = grid_.y(j) - cfg_.source_y;
        d(grid_.index(i, j)) = 1.0 / (2.0 * pi * L) * std::exp(-(dx * dx + dy * dy) / (2.0 * L * L));
      }
    return grid_.cell_weights.cwiseProduct(d);
  }

  /// A = kappa*S + upwind advection, scaled as an M2-weighted operator
  /// (rows carry cell areas) so that A*1 = 0 and constants are conserved.
  void assemble_operator() {
    std::vector<Eigen::Triplet<double>> trips;
    const double h = grid_.h;
    for (int j = 0; j < grid_.ny; ++j) {
      for (int i = 0; i < grid_.nx; ++i) {
        const int a = grid_.index(i, j);
        const double w = grid_.cell_weights(a);
        double diag = 0.0;
        // diffusion: 5-point with reflected Neumann ghosts
        const int di[4] = {1, -1, 0, 0};
        const int dj[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int ii = i + di[k], jj = j + dj[k];
          if (ii < 0 || ii >= grid_.nx || jj < 0 || jj >= grid_.ny) continue;
          const double c = cfg_.kappa * w / (h * h);
          trips.emplace_back(a, grid_.index(ii, jj), -c);
          diag += c;
        }
        // advection: first-order upwind, v has zero normal boundary component
        const auto [vx, vy] = velocity_at(cfg_, grid_.x(i), grid_.y(j));
        if (vx > 0.0 && i > 0) {
          trips.emplace_back(a, grid_.index(i - 1, j), -w * vx / h);
          diag += w * vx / h;
        } else if (vx < 0.0 && i < grid_.nx - 1) {
          trips.emplace_back(a, grid_.index(i + 1, j), w * vx / h);
          diag += -w * vx / h;
        }
        if (vy > 0.0 && j > 0) {
          trips.emplace_back(a, grid_.index(i, j - 1), -w * vy / h);
          diag += w * vy / h;
        } else if (vy < 0.0 && j < grid_.ny - 1) {
          trips.emplace_back(a, grid_.index(i, j + 1), w * vy / h);
          diag += -w * vy / h;
        }
        trips.emplace_back(a, a, diag);
      }
    }
    A_.resize(n_b(), n_b());
    A_.setFromTriplets(trips.begin(), trips.end());
  }

  Eigen::VectorXd scatter(const Eigen::VectorXd& y) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n_b());
    for (int s = 0; s < n_d(); ++s) v(obs_.sensor_nodes[s]) += y(s);
    return v;
  }

  SpaceGrid grid_;
  TimeGrid tg_;
  PDEConfig cfg_;
  ObservationSetup obs_;
  Eigen::SparseMatrix<double> A_;
  Eigen::VectorXd source_;
  // shared_ptr: SparseLU is noncopyable, the maps object should not be
  std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_;
  std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_t_;
  mutable SolveCounters counters_;
};

}  // namespace moed
