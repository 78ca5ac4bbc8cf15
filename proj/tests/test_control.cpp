#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "vhi/control.hpp"

namespace {

using vhi::Control;
using vhi::ControlSpec;
using vhi::ElasticLaw;
using vhi::ErrorCode;
using vhi::Eta;
using vhi::FemModel;
using vhi::Matrix;
using vhi::SolverConfig;
using vhi::Vector;

FemModel rod() { return vhi::build_model(vhi::rod_mesh(8), ElasticLaw{0.0, 2.0}); }

// Tip pushed past rho0 when unobstructed, so the thickness decides the tip position.
ControlSpec rod_spec(const FemModel& m, int resolution = 101) {
  ControlSpec s;
  s.eta.rho = 0.1;
  s.eta.f0 = Matrix::Constant(m.n_nodes(), 1, 12.0);
  s.g0 = 1.5;
  s.rho0 = 1.0;
  s.h0 = 1.0;
  s.target = Vector::Zero(1);
  s.g_resolution = resolution;
  s.s_resolution = 1;
  return s;
}

Vector tip_target(const FemModel& m, const ControlSpec& s, double g) {
  const auto sol = vhi::solve_contact(m, s.parameters(Control{g, 0.0}), SolverConfig{});
  return m.normal_displacement(sol.result.u);
}

// Condensed rod: with the interior eliminated the energy in the tip value t is
// S t^2 / 2 - F t + j_rho(t), convex here, so t*(g) = min(g, t_free).
double oracle_cost(const FemModel& m, const ControlSpec& s, double g) {
  const Matrix K(m.stiffness());
  const Vector f = m.load_vector(s.eta.f0, Matrix());
  const Eigen::Index n = K.rows(), tip = n - 1;
  const Matrix Kii = K.topLeftCorner(n - 1, n - 1);
  const Vector kit = K.col(tip).head(n - 1);
  const Eigen::LDLT<Matrix> ldlt(Kii);
  const double S = K(tip, tip) - kit.dot(ldlt.solve(kit));
  const double F = f(tip) - kit.dot(ldlt.solve(f.head(n - 1)));
  double lo = -10.0, hi = 10.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (S * mid + vhi::k_rho(mid, s.eta.rho) < F ? lo : hi) = mid;
  }
  const double t = std::min(g, 0.5 * (lo + hi));
  return (t - s.target(0)) * (t - s.target(0));
}

TEST(Cost, NodalQuadrature) {
  const auto m = rod();
  Vector u = Vector::Zero(m.n_dofs());
  u(m.n_dofs() - 1) = 0.3;
  EXPECT_NEAR(vhi::cost(m, u, Vector::Constant(1, 0.1)), m.contact_nodes()[0].weight * 0.04, 1e-16);
  EXPECT_EQ(vhi::cost(m, u, Vector::Constant(1, 0.3)), 0.0);

  const auto sq = vhi::build_model(vhi::square_mesh(3), ElasticLaw{1.0, 3.0});
  Vector v = Vector::LinSpaced(sq.n_dofs(), -1.0, 2.0);
  const Vector phi = Vector::Constant(3, 0.25);
  const Vector un = sq.normal_displacement(v);
  // Doubling the misfit everywhere quadruples the cost.
  EXPECT_NEAR(vhi::cost(sq, v, Vector(un - 2.0 * (un - phi))), 4.0 * vhi::cost(sq, v, phi), 1e-12);
  EXPECT_THROW(vhi::cost(sq, v, Vector::Zero(2)), vhi::Error);
}

TEST(SolveControl, RecoversThicknessFromManufacturedTarget) {
  const auto m = rod();
  auto spec = rod_spec(m);
  const double g_true = 0.4373;
  spec.target = tip_target(m, spec, g_true);
  const auto q = vhi::solve_control(m, spec, SolverConfig{});
  EXPECT_NEAR(q.q_star.g, g_true, 2e-3);
  EXPECT_LE(q.cost, 1e-8);
  EXPECT_EQ(q.q_star.s, 0.0);
  EXPECT_GT(q.evaluations, 101);
}

TEST(SolveControl, UnreachableTargetsPushToTheBounds) {
  const auto m = rod();
  for (double phi : {50.0, -50.0}) {
    auto spec = rod_spec(m, 21);
    spec.target = Vector::Constant(1, phi);
    vhi::J_Evaluator J(m, spec, SolverConfig{});
    const auto q = vhi::solve_control(J);
    EXPECT_NEAR(q.q_star.g, phi > 0 ? spec.g_max() : spec.g_min(), 1e-9) << phi;
    for (int i = 1; i < J.g_points(); ++i) {
      if (phi > 0) EXPECT_LE(J.grid(i, 0), J.grid(i - 1, 0));
      else EXPECT_GE(J.grid(i, 0), J.grid(i - 1, 0));
    }
  }
}

TEST(SolveControl, BeatsFineGridOracle) {
  const auto m = rod();
  auto spec = rod_spec(m);
  spec.target = Vector::Constant(1, 0.61234);
  const auto q = vhi::solve_control(m, spec, SolverConfig{});
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 900; ++i) best = std::min(best, oracle_cost(m, spec, 0.1 + 1e-3 * i));
  EXPECT_LE(q.cost, best + 1e-6);
  EXPECT_GE(q.q_star.g, spec.g_min());
  EXPECT_LE(q.q_star.g, spec.g_max());
}

TEST(SolveControl, OptimalStateMatchesForwardSolve) {
  const auto m = rod();
  auto spec = rod_spec(m, 31);
  spec.target = Vector::Constant(1, 0.7);
  const auto q = vhi::solve_control(m, spec, SolverConfig{});
  const auto fresh = vhi::solve_contact(m, spec.parameters(q.q_star), SolverConfig{});
  EXPECT_LT(m.norm_V(fresh.result.u - q.u_star), 1e-8);
  EXPECT_NEAR(vhi::cost(m, q.u_star, spec), q.cost, 1e-15);
}

TEST(SolveControl, TractionAxisOnSquare) {
  const auto m = vhi::build_model(vhi::square_mesh(2), ElasticLaw{1.0, 3.0});
  ControlSpec spec;
  spec.eta.rho = 0.0;
  spec.eta.mu = 0.3;
  spec.g0 = 0.2;
  spec.rho0 = 0.2;
  spec.h0 = 2.0;
  spec.f2_profile = Matrix::Zero(m.n_nodes(), 2);
  for (const auto& c : m.contact_nodes()) spec.f2_profile(c.node, 1) = -1.0;  // presses into the layer
  spec.g_resolution = 11;
  spec.s_resolution = 11;
  spec.target =
      m.normal_displacement(vhi::solve_contact(m, spec.parameters(Control{0.13, 1.3}), SolverConfig{}).result.u);
  vhi::J_Evaluator J(m, spec, SolverConfig{});
  const auto q = vhi::solve_control(J);
  EXPECT_EQ(J.memo().size(), 121u);
  EXPECT_LE(std::abs(q.q_star.s) * m.l2_norm_contact(spec.f2_profile), spec.h0 * (1.0 + 1e-12));
  EXPECT_LE(q.cost, 1e-8);
}

TEST(SolveControl, EmptyAdmissibleSet) {
  const auto m = rod();
  auto spec = rod_spec(m, 5);
  spec.eta.rho = 2.0;
  spec.g0 = 1.0;
  try {
    vhi::solve_control(m, spec, SolverConfig{});
    ADD_FAILURE();
  } catch (const vhi::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyAdmissibleSet);
  }
  const auto v = spec.violations(m);
  EXPECT_NE(std::find(v.begin(), v.end(), "F(η) empty: ρ ≤ g ≤ ρ₀ unsatisfiable with g ≤ g₀"), v.end());
}

TEST(SolveControl, GridCostsAreReproducible) {
  const auto m = rod();
  auto spec = rod_spec(m, 41);
  spec.target = Vector::Constant(1, 0.5);
  vhi::J_Evaluator a(m, spec, SolverConfig{});
  spec.jobs = 3;
  vhi::J_Evaluator b(m, spec, SolverConfig{});
  vhi::solve_control(a);
  vhi::solve_control(b);
  EXPECT_EQ(a.landscape_csv().str(), b.landscape_csv().str());
  EXPECT_EQ(a.landscape_csv().rows().size(), 41u);
}

TEST(SolveControl, TiesGoToSmallestThickness) {
  // Every g above the free tip position gives the same state and the same cost.
  const auto m = rod();
  auto spec = rod_spec(m, 11);
  spec.eta.f0 = Matrix::Constant(m.n_nodes(), 1, 4.0);  // free tip at 0.44
  spec.target = Vector::Constant(1, 5.0);
  const auto q = vhi::solve_control(m, spec, SolverConfig{});
  EXPECT_NEAR(q.q_star.g, 0.46, 0.03);
}

TEST(CostContinuity, AlongSolverIterates) {
  const auto m = rod();
  auto spec = rod_spec(m);
  spec.target = Vector::Constant(1, 0.3);
  const auto params = spec.parameters(Control{0.8, 0.0});
  const auto limit = vhi::solve_contact(m, params, SolverConfig{});
  double prev = std::numeric_limits<double>::infinity();
  for (int k : {1, 2, 4, 8, 16}) {
    SolverConfig c;
    c.outer_max_iter = k;
    const auto uk = vhi::solve(vhi::assemble(m, params).instance, c).u;
    const double gap = std::abs(vhi::cost(m, uk, spec) - vhi::cost(m, limit.result.u, spec));
    EXPECT_LE(gap, prev * (1.0 + 1e-12) + 1e-14);
    prev = gap;
  }
  EXPECT_LT(prev, 1e-8);
}

TEST(Perturbed, ConstantEtaGivesIdenticalRows) {
  const auto m = rod();
  auto spec = rod_spec(m, 21);
  spec.target = Vector::Constant(1, 0.5);
  const auto r = vhi::perturbed_control_experiment(m, spec, [&](int) { return spec.eta; }, 4, SolverConfig{});
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.g_star, r.limit.q_star.g);
    EXPECT_LT(row.state_error, 1e-12);
  }
  EXPECT_TRUE(r.control_converged);
  EXPECT_EQ(r.tail_cluster.size(), 4u);
}

TEST(Perturbed, ShrinkingLowerBoundConverges) {
  const auto m = rod();
  auto spec = rod_spec(m, 21);
  spec.target = Vector::Constant(1, 0.1);  // optimum sits on the lower bound rho
  auto rule = [&](int n) {
    Eta e = spec.eta;
    e.rho += 0.2 / n;
    return e;
  };
  vhi::PerturbedControlOptions opt;
  opt.state_tol = 0.2 / 12 * 1.01;
  const auto r = vhi::perturbed_control_experiment(m, spec, rule, 12, SolverConfig{}, opt);
  EXPECT_NEAR(r.limit.q_star.g, 0.1, 1e-9);
  for (const auto& row : r.rows) EXPECT_NEAR(row.g_star, 0.1 + 0.2 / row.n, 1e-9);
  EXPECT_LT(r.rows.back().cost, r.rows.front().cost);
  EXPECT_TRUE(r.state_converged);
  EXPECT_EQ(r.to_csv().rows().size(), 12u);
}

TEST(AdmissibleMosco, IntervalFamily) {
  const auto m = rod();
  auto spec = rod_spec(m, 5);
  spec.f2_profile = Matrix::Zero(m.n_nodes(), 1);
  spec.f2_profile(m.n_nodes() - 1, 0) = 1.0;
  const auto constant = vhi::admissible_set_mosco_check(m, spec, [&](int) { return spec.eta; }, 32, 1e-12);
  EXPECT_TRUE(constant.pass);
  for (double e : constant.recovery_errors) EXPECT_EQ(e, 0.0);

  auto rule = [&](int n) {
    Eta e = spec.eta;
    e.rho += 0.5 / n;
    return e;
  };
  const auto moving = vhi::admissible_set_mosco_check(m, spec, rule, 64, 1e-12);
  EXPECT_TRUE(moving.pass);
  for (std::size_t i = 0; i < moving.recovery_errors.size(); ++i)
    EXPECT_LE(moving.recovery_errors[i], 0.5 / double(i + 1) + 1e-15);

  auto empty = [&](int n) {
    Eta e = spec.eta;
    e.rho += 5.0 / n;
    return e;
  };
  EXPECT_THROW(vhi::admissible_set_mosco_check(m, spec, empty, 8, 1e-12), vhi::Error);
}

}  // namespace
