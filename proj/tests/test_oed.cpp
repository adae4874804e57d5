#include <catch2/catch_amalgamated.hpp>

#include "moed/oed.hpp"
#include "moed/oracle.hpp"
#include "test_support.hpp"

using namespace moed;
using moed::testing::kernels_from_instance;
using moed::testing::random_pair;
using moed::testing::random_weights;
using moed::testing::randn;

TEST_CASE("psi basics") {
  std::mt19937_64 rng(31);
  const auto sp = random_pair(rng, 5, 7, 6);
  const KernelMatrices k = kernels_from_instance(sp.p);

  // w = 0: Psi = 0 and Phi = tr(Gpr_m)
  const DesignWeights dw0(Eigen::VectorXd::Zero(5), sp.p.sigma);
  CHECK(psi_marginal(k, dw0) == 0.0);
  CHECK(phi_marginal(k, dw0, sp.priors) == Catch::Approx(sp.priors.m.trace()));

  // scalar case: Psi = -D/(1+C) at w = 1, sigma = 1
  KernelMatrices k1;
  k1.C = Eigen::MatrixXd::Constant(1, 1, 3.0);
  k1.D = Eigen::MatrixXd::Constant(1, 1, 2.0);
  const DesignWeights dw1(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1));
  CHECK(psi_value(k1.C, k1.D, dw1) == Catch::Approx(-0.5).epsilon(1e-14));

  // random design: Psi = tr(post) - tr(prior) against the dense oracle
  const Eigen::VectorXd w = random_weights(rng, 5);
  const DesignWeights dw(w, sp.p.sigma);
  const oracle::DensePosterior dp = oracle::dense_posterior(sp.p, w, randn(rng, 5));
  CHECK(psi_marginal(k, dw) ==
        Catch::Approx(dp.trace_m - sp.priors.m.trace()).epsilon(1e-8));
  CHECK(phi_marginal(k, dw, sp.priors) == Catch::Approx(dp.trace_m).epsilon(1e-8));

  // sign conventions: Psi <= 0, Phi >= 0
  for (int rep = 0; rep < 10; ++rep) {
    const DesignWeights d(random_weights(rng, 5), sp.p.sigma);
    CHECK(psi_marginal(k, d) <= 1e-12);
    CHECK(phi_marginal(k, d, sp.priors) >= -1e-12);
  }
}

TEST_CASE("gradient") {
  std::mt19937_64 rng(32);
  const auto sp = random_pair(rng, 6, 8, 5);
  const KernelMatrices k = kernels_from_instance(sp.p);

  SECTION("w = 0 closed form") {
    const DesignWeights dw(Eigen::VectorXd::Zero(6), sp.p.sigma);
    const CriterionEval e = grad_psi(k, dw);
    for (int j = 0; j < 6; ++j) {
      const double want = -k.D(j, j) / (sp.p.sigma(j) * sp.p.sigma(j));
      CHECK(e.gradient(j) == Catch::Approx(want).epsilon(1e-12));
    }
  }

  SECTION("scalar closed form") {
    KernelMatrices k1;
    k1.C = Eigen::MatrixXd::Constant(1, 1, 3.0);
    k1.D = Eigen::MatrixXd::Constant(1, 1, 2.0);
    const double w = 0.4;
    const DesignWeights dw(Eigen::VectorXd::Constant(1, w), Eigen::VectorXd::Ones(1));
    const CriterionEval e = psi_with_gradient(k1.C, k1.D, dw);
    // d/dw [-Dw/(1+wC)] = -D/(1+wC)^2
    const double want = -2.0 / ((1.0 + 3.0 * w) * (1.0 + 3.0 * w));
    CHECK(e.gradient(0) == Catch::Approx(want).epsilon(1e-12));
    CHECK(e.value == Catch::Approx(-2.0 * w / (1.0 + 3.0 * w)).epsilon(1e-12));
  }

  SECTION("finite differences") {
    std::uniform_real_distribution<double> u(0.1, 0.9);
    for (int rep = 0; rep < 3; ++rep) {
      Eigen::VectorXd w(6);
      for (int j = 0; j < 6; ++j) w(j) = u(rng);
      const DesignWeights dw(w, sp.p.sigma);
      const CriterionEval e = grad_psi(k, dw);
      const auto fd = oracle::fd_gradient(
          [&](const Eigen::VectorXd& v) {
            return psi_value(k.C, k.D, DesignWeights(v, sp.p.sigma));
          },
          w, 1e-5);
      CHECK_FALSE(fd.one_sided_fallback);
      const double floor = 1e-12 * e.gradient.cwiseAbs().maxCoeff();
      for (int j = 0; j < 6; ++j)
        CHECK(std::abs(e.gradient(j) - fd.grad(j)) <=
              1e-6 * (std::abs(e.gradient(j)) + floor));
    }
  }
}

TEST_CASE("classical criterion") {
  std::mt19937_64 rng(33);
  auto sp = random_pair(rng, 5, 6, 4);

  SECTION("matches the direct dense trace") {
    const KernelMatrices k = kernels_from_instance(sp.p);
    const Eigen::VectorXd w = random_weights(rng, 5);
    const DesignWeights dw(w, sp.p.sigma);
    const Eigen::MatrixXd prec =
        sp.p.F.transpose() * dw.wsigma().asDiagonal() * sp.p.F + sp.p.Gm.inverse();
    const double want = prec.inverse().diagonal().dot(sp.p.m1);
    CHECK(psi_classical(k, dw, sp.priors) == Catch::Approx(want).epsilon(1e-8));
    // w = 0 -> prior trace
    CHECK(psi_classical(k, DesignWeights(Eigen::VectorXd::Zero(5), sp.p.sigma),
                        sp.priors) == Catch::Approx(sp.priors.m.trace()));
  }

  SECTION("equals Phi when G = 0") {
    sp.p.G.setZero();
    const KernelMatrices k = kernels_from_instance(sp.p);
    for (int rep = 0; rep < 5; ++rep) {
      const DesignWeights dw(random_weights(rng, 5), sp.p.sigma);
      CHECK(psi_classical(k, dw, sp.priors) ==
            Catch::Approx(phi_marginal(k, dw, sp.priors)).epsilon(1e-12));
    }
  }
}

TEST_CASE("convexity midpoint property") {
  std::mt19937_64 rng(34);
  const auto sp = random_pair(rng, 6, 8, 6);
  const KernelMatrices k = kernels_from_instance(sp.p);
  for (int rep = 0; rep < 30; ++rep) {
    const Eigen::VectorXd u = random_weights(rng, 6);
    const Eigen::VectorXd v = random_weights(rng, 6);
    const double fu = psi_value(k.C, k.D, DesignWeights(u, sp.p.sigma));
    const double fv = psi_value(k.C, k.D, DesignWeights(v, sp.p.sigma));
    const double fm = psi_value(k.C, k.D, DesignWeights(0.5 * (u + v), sp.p.sigma));
    CHECK(fm <= 0.5 * (fu + fv) + 1e-10);
  }
}

TEST_CASE("greedy selection") {
  std::mt19937_64 rng(35);
  const auto sp = random_pair(rng, 12, 8, 6);
  const KernelMatrices k = kernels_from_instance(sp.p);
  auto obj = [&](const Eigen::VectorXd& w) {
    return psi_value(k.C, k.D, DesignWeights(w, sp.p.sigma));
  };

  const int K = 5, nd = 12;
  const GreedyTrace t = greedy_select(obj, K, nd);
  CHECK(t.total_evals == K * nd - (K - 1) * K / 2);
  CHECK(static_cast<int>(t.chosen.size()) == K);
  for (size_t i = 1; i < t.values.size(); ++i) CHECK(t.values[i] <= t.values[i - 1] + 1e-14);

  // K = n_d exhausts all sensors and lands at the all-ones criterion
  const GreedyTrace full = greedy_select(obj, nd, nd);
  CHECK(full.values.back() ==
        Catch::Approx(obj(Eigen::VectorXd::Ones(nd))).epsilon(1e-12));

  // ties break toward the lowest index
  const GreedyTrace ties = greedy_select(
      [](const Eigen::VectorXd& w) { return -w.sum(); }, 3, 6);
  CHECK(ties.chosen == std::vector<int>{0, 1, 2});

  CHECK_THROWS_AS(greedy_select(obj, 0, nd), std::invalid_argument);
  CHECK_THROWS_AS(greedy_select(obj, nd + 1, nd), std::invalid_argument);
}

TEST_CASE("box solver") {
  SECTION("quadratic with a known box-constrained minimizer") {
    // f(w) = 0.5|w - c|^2 with c partly outside the box
    Eigen::VectorXd c(4);
    c << -0.5, 0.3, 1.7, 0.9;
    auto f = [&](const Eigen::VectorXd& w) { return 0.5 * (w - c).squaredNorm(); };
    auto g = [&](const Eigen::VectorXd& w) { return (w - c).eval(); };
    const BoxSolverResult r = box_solver(f, g, Eigen::VectorXd::Constant(4, 0.5));
    REQUIRE(r.converged);
    Eigen::VectorXd want(4);
    want << 0.0, 0.3, 1.0, 0.9;
    CHECK((r.w - want).norm() <= 1e-6);
  }

  SECTION("starting at the optimum returns immediately") {
    Eigen::VectorXd c(3);
    c << 0.2, 0.8, 0.5;
    auto f = [&](const Eigen::VectorXd& w) { return 0.5 * (w - c).squaredNorm(); };
    auto g = [&](const Eigen::VectorXd& w) { return (w - c).eval(); };
    const BoxSolverResult r = box_solver(f, g, c);
    CHECK(r.converged);
    CHECK(r.iterations == 0);
  }

  SECTION("two starts agree on convex psi") {
    std::mt19937_64 rng(36);
    const auto sp = random_pair(rng, 6, 8, 5);
    const KernelMatrices k = kernels_from_instance(sp.p);
    auto f = [&](const Eigen::VectorXd& w) {
      return psi_value(k.C, k.D, DesignWeights(w, sp.p.sigma));
    };
    auto g = [&](const Eigen::VectorXd& w) {
      return psi_with_gradient(k.C, k.D, DesignWeights(w, sp.p.sigma)).gradient;
    };
    const BoxSolverResult a = box_solver(f, g, Eigen::VectorXd::Constant(6, 0.1));
    const BoxSolverResult b = box_solver(f, g, Eigen::VectorXd::Constant(6, 0.9));
    CHECK(a.value == Catch::Approx(b.value).epsilon(1e-8));
  }
}

TEST_CASE("l0 continuation") {
  std::mt19937_64 rng(37);
  const auto sp = random_pair(rng, 10, 8, 6);
  const KernelMatrices k = kernels_from_instance(sp.p);
  auto f = [&](const Eigen::VectorXd& w) {
    return psi_value(k.C, k.D, DesignWeights(w, sp.p.sigma));
  };
  auto g = [&](const Eigen::VectorXd& w) {
    return psi_with_gradient(k.C, k.D, DesignWeights(w, sp.p.sigma)).gradient;
  };

  SECTION("gamma dominates: empty design") {
    // gamma far above |Psi| but small enough that the relative stopping rule
    // 1e-8*(1+|f|) does not trigger spuriously at the starting point
    const ContinuationResult r = sparsify_l0(f, g, 1e4, 10);
    CHECK(r.w_binary.sum() == 0.0);
  }

  SECTION("binary weights and stage accounting") {
    const ContinuationResult r = sparsify_l0(f, g, 0.05, 10);
    CHECK(((r.w_binary.array() == 0.0) || (r.w_binary.array() == 1.0)).all());
    CHECK(r.iterations_per_stage.size() == 5);  // l1 stage + 4 epsilon stages
    CHECK(r.value_binary == Catch::Approx(f(r.w_binary)));
    CHECK_THROWS_AS(sparsify_l0(f, g, -1.0, 10), std::invalid_argument);
  }

  SECTION("gamma bisection reaches a target count") {
    const int target = 4;
    const ContinuationResult r = tune_gamma_for_count(f, g, target, 10);
    const int got = static_cast<int>(r.w_binary.sum() + 0.5);
    CHECK(std::abs(got - target) <= 1);
  }
}
