#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "moed/commands.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitNumericalFailure = 3;
constexpr int kExitGuardExceeded = 4;

moed::ExperimentConfig load_config(const std::string& config_path, const std::string& preset,
                                   std::optional<std::uint64_t> seed,
                                   const std::string& out_override) {
  moed::ExperimentConfig cfg =
      config_path.empty() ? moed::preset_config(preset) : moed::parse_config_file(config_path);
  if (seed) cfg.seed = *seed;
  if (!out_override.empty()) cfg.out_dir = out_override;
  cfg.validate();
  return cfg;
}

Eigen::VectorXd load_weights(const std::string& path, int n_d) {
  if (path.empty()) return Eigen::VectorXd::Ones(n_d);
  const Eigen::MatrixXd M = moed::io::read_csv(path);
  Eigen::VectorXd w = (M.rows() == 1) ? Eigen::VectorXd(M.row(0).transpose())
                                      : Eigen::VectorXd(M.col(0));
  if (w.size() != n_d) throw moed::ConfigError("design file has wrong length");
  return w;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"marginalized A-optimal sensor placement for linear inverse problems"};
  app.require_subcommand(1);
  app.fallthrough(true);  // allow global options after the subcommand

  std::string config_path, preset = "desk", out_dir, method = "greedy", criterion = "marginal";
  std::string design_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> sensors;
  std::optional<double> gamma;
  bool export_trajectory = false;

  app.add_option("--config", config_path, "experiment config file");
  app.add_option("--preset", preset, "named preset (paper5|desk)")
      ->check(CLI::IsMember({"paper5", "desk"}));
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out_dir, "output directory (overrides config)");

  auto* assemble = app.add_subcommand("assemble", "precompute and cache the kernel matrices");
  assemble->add_flag("--export-trajectory", export_trajectory,
                     "also write the truth state trajectory (extra solves)");

  auto* design = app.add_subcommand("design", "compute an optimal sensor placement");
  design->add_option("--method", method, "greedy|l0|l1")
      ->check(CLI::IsMember({"greedy", "l0", "l1"}));
  design->add_option("--criterion", criterion, "marginal|classical")
      ->check(CLI::IsMember({"marginal", "classical"}));
  design->add_option("--sensors", sensors, "target number of sensors");
  design->add_option("--gamma", gamma, "penalty weight (l0/l1)");

  auto* map = app.add_subcommand("map", "MAP estimates and marginal posterior std");
  map->add_option("--design", design_path, "weights CSV (default: all sensors active)");

  auto* study = app.add_subcommand("study", "Monte-Carlo MAP-error study");
  study->add_option("--design", design_path, "weights CSV (default: all sensors active)");

  CLI11_PARSE(app, argc, argv);

  try {
    const moed::ExperimentConfig cfg = load_config(config_path, preset, seed, out_dir);
    const std::string dir = cfg.out_dir;

    if (assemble->parsed()) {
      const auto rep = moed::cmd_assemble(cfg, dir, export_trajectory);
      std::cout << (rep.cache_hit ? "cache hit" : "assembled") << ": " << rep.forward_solves
                << " forward, " << rep.adjoint_solves << " adjoint solves\n";
    } else if (design->parsed()) {
      const auto rep = moed::cmd_design(cfg, dir, method, criterion, sensors, gamma);
      std::cout << method << "/" << criterion << ": " << int(rep.w.sum() + 0.5)
                << " sensors, psi=" << rep.psi << " phi=" << rep.phi
                << " psi_classical=" << rep.psi_cls << " (" << rep.n_obj_evals << " evals)\n";
    } else if (map->parsed()) {
      moed::ExperimentConfig probe = cfg;
      const int n_d = static_cast<int>(probe.sensors.size());
      const auto rep = moed::cmd_map(cfg, dir, load_weights(design_path, n_d));
      std::cout << "map: phi=" << rep.phi << ", outputs in " << dir << "/map\n";
    } else if (study->parsed()) {
      const int n_d = static_cast<int>(cfg.sensors.size());
      const auto res = moed::cmd_study(cfg, dir, load_weights(design_path, n_d));
      std::cout << "study medians: moed=" << res.median_moed
                << " oed_truth=" << res.median_oed_truth << " oed_draw=" << res.median_oed_draw
                << "\n";
    }
  } catch (const moed::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    std::cerr << "error: " << msg << "\n";
    return msg.find("guard") != std::string::npos ? kExitGuardExceeded : kExitNumericalFailure;
  }
  return 0;
}
