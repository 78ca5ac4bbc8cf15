#include <gtest/gtest.h>

#include <Eigen/Cholesky>

#include <random>

#include "support/toy.hpp"
#include "vhi/solver.hpp"

namespace {

using vhi::Matrix;
using vhi::SolverConfig;
using vhi::Vector;
using vhi::VhiData;
using vhi::VhiInstance;
using vhi::testing::ToyData;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

VhiInstance scalar_instance(double m, double load, double lo, double hi, double beta = 0.0, double rho = 0.0) {
  ToyData t;
  t.M = Matrix::Constant(1, 1, m);
  t.f = vec({load});
  t.lo = vec({lo});
  t.hi = vec({hi});
  if (beta > 0.0) {
    t.c = beta;
    t.rho = rho;
    t.j_coords = {0};
  }
  return vhi::testing::make_toy_instance(t);
}

TEST(Solve, ScalarClampedQuadraticMatchesGridOracle) {
  // Oracle: minimize 1/2 u^2 - 1.5 u on a 1e-6 grid over [0, 2].
  double best = 1e300, arg = 0.0;
  for (long i = 0; i <= 2000000; ++i) {
    const double u = 1e-6 * double(i);
    const double e = 0.5 * u * u - 1.5 * u;
    if (e < best) {
      best = e;
      arg = u;
    }
  }
  const auto inst = scalar_instance(1.0, 1.5, 0.0, 2.0);
  const auto r = vhi::solve(inst, SolverConfig{});
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.u(0), arg, 1e-6);
  EXPECT_NEAR(r.u(0), 1.5, 1e-9);
}

TEST(Solve, ScalarBoundIsForced) {
  const auto r = vhi::solve(scalar_instance(1.0, 5.0, 0.0, 2.0), SolverConfig{});
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.u(0), 2.0, 1e-12);
}

ToyData grid_aligned_toy() {
  // Solution constructed at the grid point u* = (0.25, -0.4): the load is the
  // operator plus a subgradient of the nonsmooth terms at u*.
  ToyData t;
  t.M.resize(2, 2);
  t.M << 3.0, 0.5, 0.5, 2.5;
  t.c = 1.0;
  t.rho = 0.5;  // u*_0 = 0.25 sits on the rising branch; k(0.25) = 0.25
  t.j_coords = {0};
  t.friction = {{0, 1, 0.8}};
  t.lo = vec({-1.0, -1.0});
  t.hi = vec({1.0, 1.0});
  const Vector us = vec({0.25, -0.4});
  t.f = t.M * us + t.xi(us);
  t.f(1) += 0.8 * 0.25 * -1.0;  // mu u0^+ sign(u1)
  return t;
}

TEST(Solve, NonconvexTwoDofMatchesGridOracle) {
  const ToyData t = grid_aligned_toy();
  const Vector grid = vhi::testing::grid_argmin_violation(t, 1e-3);
  EXPECT_NEAR(grid(0), 0.25, 1e-12);
  EXPECT_NEAR(grid(1), -0.4, 1e-12);
  const auto inst = vhi::testing::make_toy_instance(t);
  const auto r = vhi::solve(inst, SolverConfig{});
  ASSERT_TRUE(r.converged);
  EXPECT_LE((r.u - grid).norm(), 1e-4);
  EXPECT_LE(r.vi_residual, 1e-9);
}

TEST(Solve, UniqueFromDistinctStarts) {
  const auto inst = vhi::testing::make_toy_instance(grid_aligned_toy());
  SolverConfig cfg;
  const auto a = vhi::solve(inst, cfg, vec({-1.0, 1.0}));
  const auto b = vhi::solve(inst, cfg, vec({0.9, -0.9}));
  ASSERT_TRUE(a.converged && b.converged);
  EXPECT_LE((a.u - b.u).norm(), 10.0 * cfg.outer_tol);
}

TEST(Solve, InfeasibleStartIsProjected) {
  const auto r = vhi::solve(scalar_instance(1.0, 1.5, 0.0, 2.0), SolverConfig{}, vec({50.0}));
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.u(0), 1.5, 1e-9);
}

TEST(Solve, RejectsSmallnessViolation) {
  ToyData t;
  t.M = Matrix::Constant(1, 1, 1.0);
  t.f = vec({1.0});
  t.lo = vec({-1.0});
  t.hi = vec({1.0});
  t.c = 1.0;
  t.rho = 0.1;
  t.j_coords = {0};
  try {
    vhi::testing::make_toy_instance(t);
    FAIL() << "expected NonContractive";
  } catch (const vhi::Error& e) {
    EXPECT_EQ(e.code(), vhi::ErrorCode::NonContractive);
  }
}

TEST(Solve, SinglePointSetReturnsImmediately) {
  const auto r = vhi::solve(scalar_instance(1.0, 3.0, 0.7, 0.7), SolverConfig{});
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.outer_iters, 0);
  EXPECT_DOUBLE_EQ(r.u(0), 0.7);
}

TEST(Solve, OuterCapReturnsBestIterateUnconverged) {
  SolverConfig cfg;
  cfg.outer_max_iter = 3;
  const auto r = vhi::solve(scalar_instance(2.0, 2.2, -5.0, 5.0, 1.9, 1.0), cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.outer_iters, 3);
  EXPECT_EQ(r.u.size(), 1);
}

TEST(Solve, InnerFailureIsReported) {
  SolverConfig cfg;
  cfg.inner_max_iter = 1;
  cfg.inner_tol = 1e-14;
  // Ill-conditioned 2x2 so that one inner step cannot finish.
  ToyData t;
  t.M.resize(2, 2);
  t.M << 100.0, 0.0, 0.0, 1.0;
  t.f = vec({1.0, 1.0});
  t.lo = vec({-10.0, -10.0});
  t.hi = vec({10.0, 10.0});
  try {
    vhi::solve(vhi::testing::make_toy_instance(t), cfg);
    FAIL() << "expected InnerSolveFailed";
  } catch (const vhi::Error& e) {
    EXPECT_EQ(e.code(), vhi::ErrorCode::InnerSolveFailed);
  }
}

TEST(Solve, IteratesStayFeasible) {
  // Step one outer iteration at a time and check each iterate.
  ToyData t = grid_aligned_toy();
  t.f *= 4.0;  // pushes the solution onto the box boundary
  auto inst = vhi::testing::make_toy_instance(t);
  SolverConfig cfg;
  cfg.outer_max_iter = 1;
  Vector u = vec({0.0, 0.0});
  for (int k = 0; k < 30; ++k) {
    const auto r = vhi::solve(inst, cfg, u);
    u = r.u;
    EXPECT_TRUE((u.array() <= t.hi.array()).all() && (u.array() >= t.lo.array()).all());
  }
}

TEST(InnerSolve, UnconstrainedQuadraticIsLinearSolve) {
  Matrix M(3, 3);
  M << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  const Vector f = vec({1.0, -2.0, 0.5});
  VhiData d;
  d.dim = 3;
  d.apply_A = [M](const Vector& u) { return Vector(M * u); };
  d.potential_A = [M](const Vector& u) { return 0.5 * u.dot(M * u); };
  d.project_K = [](const Vector& v) { return v; };
  d.f_pairing = [f](const Vector& v) { return f.dot(v); };
  d.constants.m = 1.0;
  const VhiInstance inst(std::move(d));
  const Vector exact = M.ldlt().solve(f);
  for (auto rule : {vhi::StepRule::fixed, vhi::StepRule::backtracking}) {
    vhi::InnerProblem p;
    p.instance = &inst;
    p.step_rule = rule;
    const auto r = vhi::inner_solve(p, 1e-13, 10000);
    EXPECT_LE((r.w - exact).norm(), 1e-11);
  }
}

TEST(InnerSolve, ScalarClamp) {
  const auto inst = scalar_instance(1.0, 1.0, 0.0, 0.3);
  vhi::InnerProblem p;
  p.instance = &inst;
  const auto r = vhi::inner_solve(p, 1e-13, 100);
  EXPECT_NEAR(r.w(0), 0.3, 1e-14);
}

TEST(InnerSolve, FrictionWeightMatchesGridOracle) {
  // Frozen energy: 1/2 w^T M w - f.w + 1 * |w_1| on [-1, 1]^2.
  ToyData t;
  t.M.resize(2, 2);
  t.M << 2.0, 0.3, 0.3, 1.5;
  t.f = vec({0.4, 1.2});
  t.lo = vec({-1.0, -1.0});
  t.hi = vec({1.0, 1.0});
  t.friction = {{0, 1, 0.5}};
  const auto inst = vhi::testing::make_toy_instance(t);
  auto energy = [&](double a, double b) {
    const Vector w = vec({a, b});
    return 0.5 * w.dot(t.M * w) - t.f.dot(w) + std::abs(b);
  };
  // 1e-4 grid, restricted to the quadrant found on a 1e-2 pre-scan of the whole box.
  double best = 1e300, ba = 0, bb = 0;
  for (double a = -1.0; a <= 1.0 + 1e-12; a += 1e-2)
    for (double b = -1.0; b <= 1.0 + 1e-12; b += 1e-2)
      if (energy(a, b) < best) best = energy(a, b), ba = a, bb = b;
  const double ca = ba, cb = bb;
  for (double a = ca - 0.02; a <= ca + 0.02; a += 1e-4)
    for (double b = cb - 0.02; b <= cb + 0.02; b += 1e-4)
      if (energy(a, b) < best) best = energy(a, b), ba = a, bb = b;

  for (auto rule : {vhi::StepRule::fixed, vhi::StepRule::backtracking}) {
    vhi::InnerProblem p;
    p.instance = &inst;
    p.friction_weights = vec({1.0});
    p.step_rule = rule;
    const auto r = vhi::inner_solve(p, 1e-12, 10000);
    EXPECT_LE(std::hypot(r.w(0) - ba, r.w(1) - bb), 2e-4);
  }
}

TEST(InnerSolve, BacktrackingEnergyIsMonotone) {
  ToyData t = grid_aligned_toy();
  t.M(0, 0) = 40.0;
  const auto inst = vhi::testing::make_toy_instance(t);
  vhi::InnerProblem p;
  p.instance = &inst;
  p.friction_weights = vec({0.7});
  p.xi = vec({0.3, -0.1});
  p.start = vec({-1.0, 1.0});
  p.step_rule = vhi::StepRule::backtracking;
  p.lipschitz = 0.5;  // deliberately low to exercise backtracking
  const auto r = vhi::inner_solve(p, 1e-12, 10000);
  ASSERT_GE(r.energy.size(), 2u);
  // Monotone up to the roundoff of evaluating the energy itself.
  for (std::size_t k = 1; k < r.energy.size(); ++k)
    EXPECT_LE(r.energy[k], r.energy[k - 1] + 1e-13 * (1.0 + std::abs(r.energy[k - 1])));
}

TEST(InnerSolve, CapRaisesMaxIterations) {
  ToyData t = grid_aligned_toy();
  t.M(0, 0) = 1e4;
  const auto inst = vhi::testing::make_toy_instance(t);
  vhi::InnerProblem p;
  p.instance = &inst;
  p.start = vec({1.0, 1.0});
  try {
    vhi::inner_solve(p, 1e-15, 2);
    FAIL();
  } catch (const vhi::Error& e) {
    EXPECT_EQ(e.code(), vhi::ErrorCode::MaxIterations);
  }
}

TEST(CheckResidual, ExactPerturbedAndInfeasible) {
  const auto inst = scalar_instance(1.0, 1.5, 0.0, 2.0);
  EXPECT_LE(vhi::check_residual(inst, vec({1.5}), 8).value, 1e-9);
  const auto perturbed = vhi::check_residual(inst, vec({1.2}), 8);
  EXPECT_TRUE(perturbed.feasible);
  EXPECT_GT(perturbed.value, 0.0);
  const auto outside = vhi::check_residual(inst, vec({2.5}), 8);
  EXPECT_FALSE(outside.feasible);
  EXPECT_GT(outside.infeasibility, 0.0);
}

TEST(ContractionFactor, LinearProblemConvergesInOneStep) {
  const auto r = vhi::solve(scalar_instance(1.0, 1.5, 0.0, 2.0), SolverConfig{});
  EXPECT_LE(vhi::contraction_factor(r), 1e-12);
}

TEST(ContractionFactor, ConstructedThetaIsRespected) {
  // m u + beta k_rho(u) = f with the root on the descending branch: the outer ratio is
  // exactly beta / m there.
  for (double theta : {0.5, 0.95}) {
    const double m = 2.0, beta = theta * m, rho = 1.0;
    const double target = 1.5;  // in (rho, 2 rho)
    const double load = m * target + beta * vhi::k_rho(target, rho);
    const auto inst = scalar_instance(m, load, -10.0, 10.0, beta, rho);
    EXPECT_NEAR(inst.theta(), theta, 1e-15);
    const auto r = vhi::solve(inst, SolverConfig{});
    ASSERT_TRUE(r.converged) << theta;
    // A-posteriori contraction bound: |u - u*| <= theta / (1 - theta) * last increment.
    EXPECT_NEAR(r.u(0), target, theta / (1.0 - theta) * r.increment_history.back() + 1e-12);
    const double q = vhi::contraction_factor(r);
    if (theta == 0.5) {
      EXPECT_LE(q, 0.55);
    }
    EXPECT_LE(q, 1.0);
    EXPECT_LE(q, theta + 0.05);
  }
}

TEST(ContractionFactor, InsufficientHistory) {
  vhi::SolveResult r;
  r.increment_history = {1.0};
  EXPECT_THROW(vhi::contraction_factor(r), vhi::Error);
}

TEST(VhiInstance, StrongMonotonicitySpotCheck) {
  const ToyData t = grid_aligned_toy();
  const auto inst = vhi::testing::make_toy_instance(t);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int i = 0; i < 200; ++i) {
    const Vector a = vec({g(rng), g(rng)}), b = vec({g(rng), g(rng)});
    EXPECT_GE((inst.apply_A(a) - inst.apply_A(b)).dot(a - b),
              inst.constants().m * (a - b).squaredNorm() * (1.0 - 1e-12));
    const Vector pa = inst.project_K(a);
    EXPECT_LE((inst.project_K(pa) - pa).norm(), 1e-15);
    EXPECT_LE((pa - inst.project_K(b)).norm(), (a - b).norm() + 1e-15);
  }
}

}  // namespace
