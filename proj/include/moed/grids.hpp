#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace moed {

/// Uniform time grid on [t0, t_final] with composite-trapezoid quadrature
/// weights. The weights form the diagonal of the L2(T) weight matrix M1.
struct TimeGrid {
  double t0 = 0.0;
  double t_final = 1.0;
  int n_m = 0;
  Eigen::VectorXd nodes;
  Eigen::VectorXd quad_weights;

  static TimeGrid uniform(double t0, double t_final, int n_m) {
    if (n_m < 2) throw std::invalid_argument("TimeGrid: need at least 2 nodes");
    if (!(t_final > t0)) throw std::invalid_argument("TimeGrid: t_final must exceed t0");
    TimeGrid g;
    g.t0 = t0;
    g.t_final = t_final;
    g.n_m = n_m;
    g.nodes = Eigen::VectorXd::LinSpaced(n_m, t0, t_final);
    const double dt = (t_final - t0) / (n_m - 1);
    g.quad_weights = Eigen::VectorXd::Constant(n_m, dt);
    g.quad_weights(0) = 0.5 * dt;
    g.quad_weights(n_m - 1) = 0.5 * dt;
    return g;
  }

  double dt() const { return (t_final - t0) / (n_m - 1); }
};

/// Regular node-centered grid on the unit square. cell_weights holds the
/// diagonal of M2 (trapezoid cell areas: h^2 interior, h^2/2 edge, h^2/4
/// corner); they sum to the domain area.
struct SpaceGrid {
  int nx = 0;
  int ny = 0;
  double h = 0.0;
  Eigen::VectorXd cell_weights;

  static SpaceGrid unit_square(int nx, int ny) {
    if (nx < 2 || ny < 2) throw std::invalid_argument("SpaceGrid: need at least 2 nodes per axis");
    SpaceGrid g;
    g.nx = nx;
    g.ny = ny;
    g.h = 1.0 / (nx - 1);
    const double hy = 1.0 / (ny - 1);
    g.cell_weights.resize(nx * ny);
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const double wx = (i == 0 || i == nx - 1) ? 0.5 * g.h : g.h;
        const double wy = (j == 0 || j == ny - 1) ? 0.5 * hy : hy;
        g.cell_weights(g.index(i, j)) = wx * wy;
      }
    }
    return g;
  }

  int n_nodes() const { return nx * ny; }
  int index(int i, int j) const { return j * nx + i; }
  double x(int i) const { return i * (1.0 / (nx - 1)); }
  double y(int j) const { return j * (1.0 / (ny - 1)); }
  bool on_boundary(int i, int j) const {
    return i == 0 || j == 0 || i == nx - 1 || j == ny - 1;
  }

  /// Nearest node to (px, py); ties resolve toward the lower index.
  int nearest_node(double px, double py) const {
    int best = 0;
    double best_d = 1e300;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const double dx = x(i) - px, dy = y(j) - py;
        const double d = dx * dx + dy * dy;
        if (d < best_d - 1e-15) {
          best_d = d;
          best = index(i, j);
        }
      }
    }
    return best;
  }
};

}  // namespace moed
