#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "vhi/convergence.hpp"

namespace {

using vhi::ElasticLaw;
using vhi::ErrorCode;
using vhi::FemModel;
using vhi::Matrix;
using vhi::ParameterComponent;
using vhi::ParameterVector;
using vhi::SolverConfig;
using vhi::Vector;

FemModel rod_model() {
  return vhi::build_model(vhi::rod_mesh(8), ElasticLaw{0.0, 2.0}, vhi::ConvexSet::interval(-0.1, 0.1));
}

ParameterVector rod_params(const FemModel& m) {
  ParameterVector p;
  p.omega = 0.5;
  p.rho = 0.5;
  p.g = 2.0;
  p.f2 = Matrix::Zero(m.n_nodes(), 1);
  p.f2(m.n_nodes() - 1, 0) = 3.0;
  return p;
}

SolverConfig tight() {
  SolverConfig c;
  c.outer_tol = 1e-11;
  return c;
}

TEST(Richardson, ExactOnFirstOrderSequences) {
  std::vector<double> x;
  for (int n = 1; n <= 64; ++n) x.push_back(3.0 - 2.0 / n);
  EXPECT_NEAR(vhi::richardson_limit(x), 3.0, 1e-13);
  EXPECT_DOUBLE_EQ(vhi::richardson_limit(std::vector<double>{5.0}), 5.0);
  EXPECT_THROW(vhi::richardson_limit(std::vector<double>{}), vhi::Error);
}

TEST(Sequence, MovesOneComponentAtRateOneOverN) {
  const auto m = rod_model();
  const auto p = rod_params(m);
  const auto s = vhi::single_parameter_sequence(p, ParameterComponent::rho, 0.1, 10);
  EXPECT_DOUBLE_EQ(s.at(1).rho, 0.6);
  EXPECT_DOUBLE_EQ(s.at(4).rho, 0.525);
  EXPECT_DOUBLE_EQ(s.at(4).omega, p.omega);
  const auto f = vhi::single_parameter_sequence(p, ParameterComponent::f2, 0.5, 10);
  EXPECT_DOUBLE_EQ(f.at(2).f2(m.n_nodes() - 1, 0), 3.75);
  EXPECT_NEAR(vhi::parameter_distance(m, f.at(2), p), 0.75, 1e-14);
  EXPECT_EQ(vhi::parse_component("g"), ParameterComponent::g);
  EXPECT_FALSE(vhi::parse_component("kappa"));
}

class MoscoTest : public ::testing::Test {
 protected:
  FemModel m = vhi::build_model(vhi::square_mesh(2), ElasticLaw{1.0, 3.0});
  std::vector<Vector> probes(double g) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal;
    std::vector<Vector> out;
    for (int k = 0; k < 8; ++k) {
      Vector v(m.n_dofs());
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
      out.push_back(vhi::project_contact_set(m, g, v));
    }
    return out;
  }
};

TEST_F(MoscoTest, ShrinkingThicknessFromAbove) {
  std::vector<double> gs;
  for (int n = 1; n <= 64; ++n) gs.push_back(0.5 + 1.0 / n);
  const auto r = vhi::mosco_check_Kg(m, gs, 0.5, probes(0.5), 1e-10);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.limit_excess.size(), 24u);
  EXPECT_LT(r.recovery_errors.back(), r.recovery_errors.front());
}

TEST_F(MoscoTest, GrowingThicknessFromBelow) {
  std::vector<double> gs;
  for (int n = 1; n <= 64; ++n) gs.push_back(0.5 - 0.25 / n);
  EXPECT_TRUE(vhi::mosco_check_Kg(m, gs, 0.5, probes(0.5), 1e-10).pass);
}

TEST_F(MoscoTest, ZeroThicknessUsesProjection) {
  std::vector<double> gs;
  for (int n = 1; n <= 64; ++n) gs.push_back(1.0 / n);
  const auto r = vhi::mosco_check_Kg(m, gs, 0.0, probes(0.0), 1e-10);
  EXPECT_TRUE(r.pass);
  for (double e : r.recovery_errors) EXPECT_EQ(e, 0.0);
}

TEST_F(MoscoTest, NonconvergentFamilyIsCaught) {
  const std::vector<double> gs(64, 1.0);
  const auto r = vhi::mosco_check_Kg(m, gs, 0.5, probes(0.5), 1e-10);
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.membership_violations, 0);
  EXPECT_GT(r.recovery_violations, 0);
}

TEST_F(MoscoTest, RejectsNegativeThicknessAndInfeasibleProbes) {
  try {
    vhi::mosco_check_Kg(m, {0.1, -0.1}, 0.0, probes(0.0), 1e-10);
    ADD_FAILURE();
  } catch (const vhi::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NegativeThickness);
  }
  Vector bad = Vector::Zero(m.n_dofs());
  bad(m.contact_nodes()[0].dofs[1]) = -1.0;  // u_nu = 1 > g
  EXPECT_THROW(vhi::mosco_check_Kg(m, {0.5}, 0.5, {bad}, 1e-10), vhi::Error);
}

TEST(Continuity, CompliancePerturbationConverges) {
  const auto m = rod_model();
  const auto seq = vhi::single_parameter_sequence(rod_params(m), ParameterComponent::rho, 1e-3, 64);
  const auto r = vhi::continuity_experiment(m, seq, tight());
  ASSERT_EQ(r.rows.size(), 64u);
  EXPECT_TRUE(r.below_tol);
  EXPECT_TRUE(r.tail_nonincreasing);
  EXPECT_GT(r.rows.front().solution_error, 0.0);
  for (const auto& row : r.rows) {
    EXPECT_NEAR(row.param_distance, 1e-3 / row.n, 1e-15);
    EXPECT_NEAR(row.theoretical_bound, 2e-3 / row.n, 1e-15);
  }
}

TEST(Continuity, ParallelRunMatchesSerialRun) {
  const auto m = rod_model();
  const auto seq = vhi::single_parameter_sequence(rod_params(m), ParameterComponent::omega, 1e-3, 12);
  vhi::ContinuityOptions serial, threaded;
  threaded.jobs = 3;
  const auto a = vhi::continuity_experiment(m, seq, tight(), serial);
  const auto b = vhi::continuity_experiment(m, seq, tight(), threaded);
  EXPECT_EQ(vhi::continuity_csv(a).str(), vhi::continuity_csv(b).str());
  EXPECT_EQ(vhi::continuity_csv(a).str().substr(0, 51), "n,param_distance,solution_error,theoretical_bound\r\n");
}

TEST(Continuity, LoadSequenceHasNoBoundColumn) {
  const auto m = rod_model();
  const auto seq = vhi::single_parameter_sequence(rod_params(m), ParameterComponent::f2, 1e-3, 8);
  const auto r = vhi::continuity_experiment(m, seq, tight());
  EXPECT_TRUE(std::isnan(r.rows[0].theoretical_bound));
  // The trace of a tip load is its nodal value on a one-point boundary.
  EXPECT_NEAR(r.rows[0].param_distance, 3e-3, 1e-15);
}

TEST(Audit, AssumptionsHoldOnRodAndSquare) {
  const auto rod = rod_model();
  const auto ra = vhi::assumption_audit(rod, rod_params(rod), 300, 3);
  EXPECT_TRUE(ra.pass());
  ASSERT_NE(ra.find("strong_monotonicity"), nullptr);
  EXPECT_GE(ra.find("strong_monotonicity")->measured, rod.m_F() * (1.0 - 1e-9));
  EXPECT_EQ(ra.find("friction_coupling")->measured, 0.0);  // no tangential direction in 1D

  const auto sq = vhi::build_model(vhi::square_mesh(3), ElasticLaw{1.0, 3.0}, vhi::ConvexSet::ball(3, 0.05));
  ParameterVector p;
  p.omega = 0.7;
  p.mu = 0.4;
  p.rho = 0.02;
  p.g = 0.1;
  const auto sa = vhi::assumption_audit(sq, p, 300, 4);
  for (const auto& e : sa.entries) EXPECT_TRUE(e.pass) << e.name << " " << e.measured << " " << e.bound;
  EXPECT_GT(sa.find("friction_coupling")->measured, 0.0);
  EXPECT_LE(sa.find("trace_inequality")->measured, sq.gamma() * (1.0 + 1e-9));
}

TEST(Audit, HypothesesHoldAlongEachComponent) {
  const auto sq = vhi::build_model(vhi::square_mesh(2), ElasticLaw{1.0, 3.0}, vhi::ConvexSet::ball(3, 0.05));
  ParameterVector p;
  p.omega = 0.7;
  p.mu = 0.4;
  p.rho = 0.02;
  p.g = 0.1;
  p.f0 = vhi::uniform_field(sq, Vector::Constant(2, -1.0));
  for (auto c : {ParameterComponent::omega, ParameterComponent::mu, ParameterComponent::rho, ParameterComponent::g,
                 ParameterComponent::f0}) {
    const auto rep = vhi::hypothesis_audit(sq, vhi::single_parameter_sequence(p, c, 0.05, 32), 200, 9);
    for (const auto& e : rep.entries) EXPECT_TRUE(e.pass) << vhi::to_string(c) << ": " << e.name << " " << e.measured;
  }
}

TEST(Audit, OperatorExcessIsTightForOmega) {
  // With a small B most strains leave it, so ||A_{p_n} v - A_p v|| approaches F_n ||v||.
  const auto rod = rod_model();
  const auto rep = vhi::hypothesis_audit(rod, vhi::single_parameter_sequence(rod_params(rod), ParameterComponent::omega, 0.2, 16), 160);
  const auto* e = rep.find("operator_perturbation_excess");
  ASSERT_NE(e, nullptr);
  EXPECT_TRUE(e->pass);
  EXPECT_LT(e->measured, 0.0);
}

}  // namespace
