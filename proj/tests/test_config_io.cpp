#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "moed/commands.hpp"
#include "moed/config.hpp"
#include "moed/io.hpp"
#include "test_support.hpp"

using namespace moed;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("moed_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("presets") {
  const ExperimentConfig desk = preset_config("desk");
  CHECK(desk.nx == 24);
  CHECK(desk.ny == 24);
  CHECK(desk.n_m == 65);
  CHECK(desk.sensors.size() == 25);
  CHECK(desk.study_b_samples == 20);
  CHECK(desk.study_noise_samples == 50);
  CHECK_NOTHROW(desk.validate());

  const ExperimentConfig paper = preset_config("paper5");
  CHECK(paper.nx == 40);
  CHECK(paper.n_m == 257);
  CHECK(paper.sensors.size() == 100);
  CHECK(paper.study_b_samples == 200);
  CHECK(paper.study_noise_samples == 500);
  // paper section 5 defaults
  CHECK(paper.kappa == 0.001);
  CHECK(paper.source_width == 0.05);
  CHECK(paper.source_x == 0.5);
  CHECK(paper.source_y == 0.35);
  CHECK(paper.matern_sigma == 80.0);
  CHECK(paper.matern_ell == 0.17);
  CHECK(paper.m_prior_mean == 65.0);
  CHECK(paper.laplace_eps == 4.5e-3);
  CHECK(paper.laplace_alpha == 2.2e-1);
  CHECK(paper.b_prior_mean == 50.0);
  CHECK(paper.noise_std == 0.25);
  CHECK(paper.window_a == 0.95);
  CHECK(paper.window_b == 0.99);
  CHECK(paper.effective_robin() == Catch::Approx(std::sqrt(4.5e-3 * 2.2e-1)));

  CHECK_THROWS_AS(preset_config("nope"), ConfigError);

  const auto lat = lattice_sensors(5);
  CHECK(lat.size() == 25);
  CHECK(lat.front() == std::pair<double, double>{0.1, 0.1});
  CHECK(lat.back().first == Catch::Approx(0.9));
  CHECK(lat.back().second == Catch::Approx(0.9));
}

TEST_CASE("config validation") {
  ExperimentConfig c = preset_config("desk");
  c.kappa = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = preset_config("desk");
  c.sensors.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = preset_config("desk");
  c.window_a = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = preset_config("desk");
  c.noise_std = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config parsing") {
  SECTION("overrides and sections") {
    std::istringstream in(
        "# comment\n"
        "preset = desk\n"
        "nx = 12\n"
        "seed = 7\n"
        "[pde]\n"
        "kappa = 0.002\n"
        "[prior]\n"
        "matern_ell = 0.2\n"
        "[observation]\n"
        "sensor = 0.25, 0.75\n"
        "sensor = 0.5, 0.5\n"
        "noise_std = 0.1\n"
        "[optimizer]\n"
        "epsilon_schedule = 1, 0.1, 0.01\n"
        "[study]\n"
        "b_samples = 3\n");
    const ExperimentConfig c = parse_config(in);
    CHECK(c.nx == 12);
    CHECK(c.ny == 24);  // untouched desk default
    CHECK(c.seed == 7);
    CHECK(c.kappa == 0.002);
    CHECK(c.matern_ell == 0.2);
    CHECK(c.sensors.size() == 2);
    CHECK(c.sensors[0] == std::pair<double, double>{0.25, 0.75});
    CHECK(c.noise_std == 0.1);
    CHECK(c.epsilon_schedule == std::vector<double>{1.0, 0.1, 0.01});
    CHECK(c.study_b_samples == 3);
  }

  SECTION("no sensors given keeps the preset lattice") {
    std::istringstream in("preset = desk\nnx = 30\n");
    CHECK(parse_config(in).sensors.size() == 25);
  }

  SECTION("line-precise errors") {
    std::istringstream bad_key("nx = 12\n\n[pde]\nwhatever = 3\n");
    CHECK_THROWS_WITH(parse_config(bad_key),
                      Catch::Matchers::ContainsSubstring("line 4"));
    std::istringstream bad_num("[pde]\nkappa = fast\n");
    CHECK_THROWS_WITH(parse_config(bad_num),
                      Catch::Matchers::ContainsSubstring("line 2"));
    std::istringstream bad_line("[pde]\nkappa\n");
    CHECK_THROWS_WITH(parse_config(bad_line),
                      Catch::Matchers::ContainsSubstring("line 2"));
    std::istringstream bad_section("[pde\nkappa = 0.1\n");
    CHECK_THROWS_WITH(parse_config(bad_section),
                      Catch::Matchers::ContainsSubstring("line 1"));
    std::istringstream bad_sensor("[observation]\nsensor = 0.5\n");
    CHECK_THROWS_WITH(parse_config(bad_sensor),
                      Catch::Matchers::ContainsSubstring("line 2"));
  }

  CHECK_THROWS_AS(parse_config_file("/nonexistent/path.cfg"), ConfigError);
}

TEST_CASE("fingerprint") {
  const ExperimentConfig a = preset_config("desk");
  ExperimentConfig b = preset_config("desk");
  CHECK(a.fingerprint() == b.fingerprint());
  b.kappa = 0.002;
  CHECK(a.fingerprint() != b.fingerprint());
  b = preset_config("desk");
  b.sensors[3].first += 1e-6;
  CHECK(a.fingerprint() != b.fingerprint());
  // run metadata does not enter the fingerprint
  b = preset_config("desk");
  b.seed = 99;
  b.out_dir = "elsewhere";
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("csv round trip") {
  const fs::path dir = temp_dir("csv");
  std::mt19937_64 rng(55);
  const Eigen::MatrixXd M = moed::testing::randn_mat(rng, 7, 3);
  const std::string path = (dir / "m.csv").string();
  io::write_csv(path, M, {"a", "b", "c"});
  const Eigen::MatrixXd R = io::read_csv(path);
  REQUIRE(R.rows() == 7);
  REQUIRE(R.cols() == 3);
  CHECK((R - M).norm() == 0.0);  // 17 significant digits: bit-exact round trip

  // RFC-4180 style line endings
  std::ifstream raw(path, std::ios::binary);
  std::string first;
  std::getline(raw, first);
  REQUIRE(!first.empty());
  CHECK(first.back() == '\r');
  CHECK(first == "a,b,c\r");
}

TEST_CASE("trajectory round trip") {
  const fs::path dir = temp_dir("traj");
  std::mt19937_64 rng(56);
  const Eigen::MatrixXd T = moed::testing::randn_mat(rng, 5, 9);
  const std::string path = (dir / "t.bin").string();
  io::write_trajectory_bin(path, T);
  CHECK((io::read_trajectory_bin(path) - T).norm() == 0.0);
  CHECK_THROWS_AS(io::read_trajectory_bin((dir / "missing.bin").string()),
                  std::runtime_error);
}

TEST_CASE("kernel cache") {
  const fs::path dir = temp_dir("cache");
  ExperimentConfig cfg = moed::testing::tiny_config();
  cfg.out_dir = dir.string();

  CHECK_FALSE(io::kernel_cache_exists(dir.string()));
  const AssembleReport rep = cmd_assemble(cfg, dir.string());
  CHECK_FALSE(rep.cache_hit);
  CHECK(rep.forward_solves == 3 * 9);
  CHECK(rep.adjoint_solves == 2 * 9);
  CHECK(io::kernel_cache_exists(dir.string()));
  CHECK(fs::exists(dir / "config.snapshot"));

  SECTION("cache hit on rerun") {
    const AssembleReport rep2 = cmd_assemble(cfg, dir.string());
    CHECK(rep2.cache_hit);
    CHECK(rep2.forward_solves == rep.forward_solves);
  }

  SECTION("fingerprint mismatch rejected") {
    ExperimentConfig other = cfg;
    other.kappa *= 2.0;
    CHECK_THROWS_WITH(io::load_kernel_cache(dir.string(), other),
                      Catch::Matchers::ContainsSubstring("fingerprint"));
  }

  SECTION("corrupted file rejected") {
    std::ofstream((dir / "kernels" / "C.csv").string(), std::ios::app) << "tampered\n";
    CHECK_THROWS_WITH(io::load_kernel_cache(dir.string(), cfg),
                      Catch::Matchers::ContainsSubstring("checksum"));
  }

  SECTION("loaded kernels identical to written ones") {
    const Problem p = build_problem(cfg);
    const ForwardMaps maps = build_forward(cfg, p);
    const KernelMatrices k = precompute_kernels(maps, p.priors);
    const KernelMatrices loaded = io::load_kernel_cache(dir.string(), cfg);
    CHECK((loaded.C - k.C).norm() == 0.0);
    CHECK((loaded.D - k.D).norm() == 0.0);
    CHECK((loaded.F_dense - k.F_dense).norm() == 0.0);
    CHECK((loaded.G_dense - k.G_dense).norm() == 0.0);
  }
}

TEST_CASE("design, map and study commands") {
  const fs::path dir = temp_dir("cmds");
  ExperimentConfig cfg = moed::testing::tiny_config();
  cfg.out_dir = dir.string();
  cfg.target_sensors = 4;
  cfg.study_b_samples = 3;
  cfg.study_noise_samples = 4;
  cmd_assemble(cfg, dir.string());
  const int nd = 9;

  SECTION("greedy design") {
    const DesignReport r = cmd_design(cfg, dir.string(), "greedy", "marginal", 4, {});
    CHECK(int(r.w.sum() + 0.5) == 4);
    CHECK(r.n_obj_evals == 4 * nd - 3 * 4 / 2);
    CHECK(fs::exists(dir / "design" / "greedy_marginal_weights.csv"));
    const auto j = io::read_json((dir / "design" / "greedy_marginal.json").string());
    CHECK(j.at("active_sensors").get<int>() == 4);
    CHECK(j.at("psi").get<double>() == Catch::Approx(r.psi));
  }

  SECTION("l1 design produces a binary design") {
    const DesignReport r = cmd_design(cfg, dir.string(), "l1", "marginal", {}, 0.5);
    CHECK(((r.w.array() == 0.0) || (r.w.array() == 1.0)).all());
  }

  SECTION("map command") {
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(nd);
    const MapReport r = cmd_map(cfg, dir.string(), w);
    CHECK(r.m_map.size() == cfg.n_m);
    CHECK(r.b_map.size() == cfg.nx * cfg.ny);
    CHECK((r.post_std_m.array() >= 0.0).all());
    // diagonal of the posterior moment recovers Phi through the M1 weights
    const Problem p = build_problem(cfg);
    const double diag_trace =
        r.post_std_m.cwiseAbs2().dot(p.time_grid.quad_weights);
    CHECK(diag_trace == Catch::Approx(r.phi).epsilon(1e-8));
    CHECK(fs::exists(dir / "map" / "m_map.csv"));
    CHECK(fs::exists(dir / "map" / "post_std_m.csv"));

    // w = 0: the posterior std equals the prior std
    const MapReport r0 = cmd_map(cfg, dir.string(), Eigen::VectorXd::Zero(nd));
    const Eigen::VectorXd prior_std = p.priors.m.cov.diagonal().cwiseSqrt();
    CHECK((r0.post_std_m - prior_std).norm() <= 1e-10 * prior_std.norm());
  }

  SECTION("study command deterministic") {
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(nd);
    const auto a = cmd_study(cfg, dir.string(), w);
    const auto b = cmd_study(cfg, dir.string(), w);
    CHECK(a.median_moed == b.median_moed);
    CHECK(a.median_oed_draw == b.median_oed_draw);
    CHECK(a.rows.size() == 3 * 4);
    CHECK(fs::exists(dir / "study" / "replicates.csv"));
    const auto j = io::read_json((dir / "study" / "summary.json").string());
    CHECK(j.at("median_moed").get<double>() == a.median_moed);
  }
}

TEST_CASE("cli exit codes") {
  // locate the binary relative to the test executable's build tree
  const fs::path exe = fs::path(BUILD_DIR) / "moed";
  REQUIRE(fs::exists(exe));
  const fs::path dir = temp_dir("cli");

  auto run = [&](const std::string& args) {
    return std::system((exe.string() + " " + args + " >/dev/null 2>&1").c_str());
  };
  CHECK(WEXITSTATUS(run("assemble --config /nonexistent.cfg")) == 2);

  std::ofstream(dir / "bad.cfg") << "[pde]\nkappa = -1\n";
  CHECK(WEXITSTATUS(run("assemble --config " + (dir / "bad.cfg").string())) == 2);

  std::ofstream(dir / "tiny.cfg") << "preset = desk\nnx = 10\nny = 10\nn_m = 9\n"
                                  << "[observation]\nsensor_lattice = 2\n";
  CHECK(WEXITSTATUS(run("assemble --config " + (dir / "tiny.cfg").string() +
                        " --out " + (dir / "run").string())) == 0);
  CHECK(WEXITSTATUS(run("design --config " + (dir / "tiny.cfg").string() +
                        " --method greedy --sensors 2 --out " +
                        (dir / "run").string())) == 0);
}
