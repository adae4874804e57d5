#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "moed/config.hpp"
#include "moed/forward.hpp"
#include "moed/io.hpp"
#include "moed/oed.hpp"
#include "moed/oracle.hpp"
#include "moed/posterior.hpp"
#include "moed/priors.hpp"

namespace moed {

struct Problem {
  TimeGrid time_grid;
  SpaceGrid space_grid;
  PriorPair priors;
};

inline Problem build_problem(const ExperimentConfig& cfg) {
  cfg.validate();
  Problem p;
  p.time_grid = TimeGrid::uniform(cfg.t0, cfg.t_final, cfg.n_m);
  p.space_grid = SpaceGrid::unit_square(cfg.nx, cfg.ny);
  p.priors.m = build_time_prior(p.time_grid, cfg.matern_sigma, cfg.matern_ell, cfg.m_prior_mean);
  p.priors.b = build_spatial_prior(p.space_grid, cfg.laplace_eps, cfg.laplace_alpha,
                                   cfg.effective_robin(), cfg.b_prior_mean);
  return p;
}

inline ForwardMaps build_forward(const ExperimentConfig& cfg, const Problem& p) {
  PDEConfig pde;
  pde.kappa = cfg.kappa;
  pde.velocity_field = cfg.velocity_field;
  pde.velocity_scale = cfg.velocity_scale;
  pde.source_x = cfg.source_x;
  pde.source_y = cfg.source_y;
  pde.source_width = cfg.source_width;
  const ObservationSetup obs =
      make_observation_setup(p.space_grid, p.time_grid, cfg.sensors, cfg.window_a, cfg.window_b);
  return ForwardMaps(p.space_grid, p.time_grid, pde, obs);
}

inline Eigen::VectorXd truth_m_vector(const ExperimentConfig& cfg, const TimeGrid& tg) {
  Eigen::VectorXd m(tg.n_m);
  for (int k = 0; k < tg.n_m; ++k) m(k) = cfg.truth_m(tg.nodes(k));
  return m;
}

/// Truth secondary parameter: one fixed prior draw keyed off the config seed.
inline Eigen::VectorXd truth_b_vector(const ExperimentConfig& cfg, const PriorPair& priors) {
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 17);
  return priors.b.sample(rng);
}

inline void snapshot_config(const ExperimentConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(std::filesystem::path(dir) / "config.snapshot");
  out << cfg.canonical() << "\n";
}

struct AssembleReport {
  bool cache_hit = false;
  long forward_solves = 0;
  long adjoint_solves = 0;
};

/// `assemble`: run the kernel precompute (or verify an existing cache) and
/// write kernels/{C,D,F,G}.csv + meta.json. All later commands run off the
/// cache with zero PDE solves.
inline AssembleReport cmd_assemble(const ExperimentConfig& cfg, const std::string& out_dir,
                                   bool export_trajectory = false) {
  AssembleReport rep;
  snapshot_config(cfg, out_dir);
  if (io::kernel_cache_exists(out_dir)) {
    io::load_kernel_cache(out_dir, cfg);  // throws on fingerprint/checksum mismatch
    rep.cache_hit = true;
    const auto meta = io::read_json(
        (std::filesystem::path(out_dir) / "kernels" / "meta.json").string());
    rep.forward_solves = meta.at("forward_solves").get<long>();
    rep.adjoint_solves = meta.at("adjoint_solves").get<long>();
    return rep;
  }
  const Problem p = build_problem(cfg);
  const ForwardMaps maps = build_forward(cfg, p);
  const KernelMatrices k = precompute_kernels(maps, p.priors);
  io::write_kernel_cache(out_dir, cfg, k);
  rep.forward_solves = k.n_forward_solves;
  rep.adjoint_solves = k.n_adjoint_solves;
  if (export_trajectory) {
    // visualization aid; solves for it are not part of the kernel counters
    const Eigen::MatrixXd traj =
        maps.solve_forward(truth_m_vector(cfg, p.time_grid), truth_b_vector(cfg, p.priors));
    io::write_trajectory_bin((std::filesystem::path(out_dir) / "trajectory.bin").string(), traj);
  }
  return rep;
}

struct DesignReport {
  Eigen::VectorXd w;
  double psi = 0.0;        // mOED objective at w
  double phi = 0.0;        // tr marginal posterior covariance
  double psi_cls = 0.0;    // classical A-criterion at w
  long n_obj_evals = 0;
  std::string method;
  std::string criterion;   // "marginal" or "classical"
};

/// `design`: load the cache and optimize; no PDE solves.
inline DesignReport cmd_design(const ExperimentConfig& cfg, const std::string& out_dir,
                               const std::string& method, const std::string& criterion,
                               std::optional<int> K, std::optional<double> gamma) {
  const Problem p = build_problem(cfg);
  const KernelMatrices k = io::load_kernel_cache(out_dir, cfg);
  const int nd = k.n_d();
  const Eigen::VectorXd sigma = Eigen::VectorXd::Constant(nd, cfg.noise_std);

  const Eigen::MatrixXd& Cm =
      (criterion == "classical") ? classical_cf(k, p.priors) : k.C;
  long evals = 0;
  auto obj = [&](const Eigen::VectorXd& w) {
    ++evals;
    return psi_value(Cm, k.D, DesignWeights(w, sigma));
  };
  auto grad = [&](const Eigen::VectorXd& w) {
    return psi_with_gradient(Cm, k.D, DesignWeights(w, sigma)).gradient;
  };

  DesignReport rep;
  rep.method = method;
  rep.criterion = criterion;
  const int target = K.value_or(cfg.target_sensors);
  BoxSolverOptions opts;
  opts.tol = cfg.box_tol;
  opts.max_iters = cfg.box_max_iters;

  if (method == "greedy") {
    const GreedyTrace t = greedy_select(obj, target, nd);
    rep.w = Eigen::VectorXd::Zero(nd);
    for (const int i : t.chosen) rep.w(i) = 1.0;
    rep.n_obj_evals = t.total_evals;
  } else if (method == "l0") {
    ContinuationResult r =
        gamma ? sparsify_l0(obj, grad, *gamma, nd, cfg.epsilon_schedule, opts)
              : tune_gamma_for_count(obj, grad, target, nd, 1e-6, 1e6, 20,
                                     cfg.epsilon_schedule, opts);
    rep.w = r.w_binary;
    rep.n_obj_evals = evals;
  } else if (method == "l1") {
    const double g = gamma.value_or(cfg.gamma);
    auto f = [&](const Eigen::VectorXd& v) { return obj(v) + g * v.sum(); };
    auto gr = [&](const Eigen::VectorXd& v) {
      return (grad(v).array() + g).matrix().eval();
    };
    const BoxSolverResult r = box_solver(f, gr, Eigen::VectorXd::Constant(nd, 0.5), opts);
    rep.w = (r.w.array() >= 0.5).cast<double>().matrix();
    rep.n_obj_evals = evals;
  } else {
    throw std::invalid_argument("unknown design method: " + method);
  }

  const DesignWeights dw(rep.w, sigma);
  rep.psi = psi_marginal(k, dw);
  rep.phi = phi_marginal(k, dw, p.priors);
  rep.psi_cls = psi_classical(k, dw, p.priors);

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "design");
  const std::string tag = method + "_" + criterion;
  io::write_csv((fs::path(out_dir) / "design" / (tag + "_weights.csv")).string(),
                rep.w.transpose(), {});
  nlohmann::json j;
  j["method"] = method;
  j["criterion"] = criterion;
  j["active_sensors"] = static_cast<int>(rep.w.sum() + 0.5);
  j["psi"] = rep.psi;
  j["phi"] = rep.phi;
  j["psi_classical"] = rep.psi_cls;
  j["objective_evaluations"] = rep.n_obj_evals;
  io::write_json((fs::path(out_dir) / "design" / (tag + ".json")).string(), j);
  return rep;
}

struct MapReport {
  Eigen::VectorXd m_map;
  Eigen::VectorXd b_map;
  Eigen::VectorXd post_std_m;  // pointwise marginal posterior std of m
  double phi = 0.0;
};

/// `map`: MAP pair and marginal posterior standard deviation of m for a
/// given design; data synthesized from the truth pair when none supplied.
inline MapReport cmd_map(const ExperimentConfig& cfg, const std::string& out_dir,
                         const Eigen::VectorXd& w,
                         std::optional<Eigen::VectorXd> data = std::nullopt,
                         int dense_size_guard = 4000) {
  const Problem p = build_problem(cfg);
  const KernelMatrices k = io::load_kernel_cache(out_dir, cfg);
  const DesignWeights dw(w, Eigen::VectorXd::Constant(k.n_d(), cfg.noise_std));

  Eigen::VectorXd y;
  if (data) {
    y = *data;
  } else {
    y = k.F_dense * truth_m_vector(cfg, p.time_grid) + k.G_dense * truth_b_vector(cfg, p.priors);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += cfg.noise_std * gauss(rng);
  }

  MapReport rep;
  const MapPair mp = map_estimate(k, dw, p.priors, y);
  rep.m_map = mp.m_map;
  rep.b_map = mp.b_map;
  const MarginalPosteriorM post(k, dw, p.priors);
  rep.post_std_m = post.dense_moment(dense_size_guard).diagonal().cwiseSqrt();
  rep.phi = post.trace();

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "map");
  io::write_csv((fs::path(out_dir) / "map" / "m_map.csv").string(), rep.m_map, {"m_map"});
  io::write_csv((fs::path(out_dir) / "map" / "b_map.csv").string(), rep.b_map, {"b_map"});
  io::write_csv((fs::path(out_dir) / "map" / "post_std_m.csv").string(), rep.post_std_m,
                {"post_std_m"});
  return rep;
}

/// `study`: Monte-Carlo MAP-error study for a design; writes one CSV row per
/// replicate plus a JSON summary with medians.
inline oracle::StudyResult cmd_study(const ExperimentConfig& cfg, const std::string& out_dir,
                                     const Eigen::VectorXd& w) {
  const Problem p = build_problem(cfg);
  const KernelMatrices k = io::load_kernel_cache(out_dir, cfg);
  const DesignWeights dw(w, Eigen::VectorXd::Constant(k.n_d(), cfg.noise_std));
  const oracle::StudyResult res = oracle::map_error_study(
      k, dw, p.priors, truth_m_vector(cfg, p.time_grid), truth_b_vector(cfg, p.priors),
      cfg.study_b_samples, cfg.study_noise_samples, cfg.seed);

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "study");
  Eigen::MatrixXd table(res.rows.size(), 5);
  for (size_t i = 0; i < res.rows.size(); ++i) {
    const auto& r = res.rows[i];
    table.row(i) << r.b_sample, r.noise_sample, r.err_moed, r.err_oed_truth, r.err_oed_draw;
  }
  io::write_csv((fs::path(out_dir) / "study" / "replicates.csv").string(), table,
                {"b_sample", "noise_sample", "err_moed", "err_oed_truth", "err_oed_draw"});
  nlohmann::json j;
  j["median_moed"] = res.median_moed;
  j["median_oed_truth"] = res.median_oed_truth;
  j["median_oed_draw"] = res.median_oed_draw;
  j["b_samples"] = cfg.study_b_samples;
  j["noise_samples"] = cfg.study_noise_samples;
  io::write_json((fs::path(out_dir) / "study" / "summary.json").string(), j);
  return res;
}

}  // namespace moed
