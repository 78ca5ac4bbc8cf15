#pragma once

// Frictional contact with a rigid foundation covered by a deformable layer of
// thickness g, with nonconvex normal compliance j_rho and friction mu u_nu^+ |v_tau|.
// Assembles the discrete problem as a VhiInstance over a FemModel.

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vhi/errors.hpp"
#include "vhi/mesh.hpp"
#include "vhi/nonsmooth.hpp"
#include "vhi/solver.hpp"

namespace vhi {

/// p = (omega, mu, rho, g, f0, f2). Fields are nodal, n_nodes x d; an empty field is zero.
struct ParameterVector {
  double omega = 0.0;
  double mu = 0.0;
  double rho = 0.0;
  double g = 0.0;
  Matrix f0;
  Matrix f2;
};

/// |omega| + |mu| + |rho| + |g| + ||f0||_{L2(Omega)} + ||f2||_{L2(Gamma_3)} of p - q.
inline double parameter_distance(const FemModel& model, const ParameterVector& p, const ParameterVector& q) {
  auto diff = [&](const Matrix& a, const Matrix& b) -> Matrix {
    if (a.size() == 0 && b.size() == 0) return Matrix();
    const Matrix za = a.size() ? a : Matrix::Zero(model.n_nodes(), model.dimension());
    const Matrix zb = b.size() ? b : Matrix::Zero(model.n_nodes(), model.dimension());
    return za - zb;
  };
  return std::abs(p.omega - q.omega) + std::abs(p.mu - q.mu) + std::abs(p.rho - q.rho) + std::abs(p.g - q.g) +
         model.l2_norm_domain(diff(p.f0, q.f0)) + model.l2_norm_contact(diff(p.f2, q.f2));
}

/// Nodal field equal to `value` at every node.
inline Matrix uniform_field(const FemModel& model, const Vector& value) {
  if (value.size() != model.dimension()) throw Error(ErrorCode::DimensionMismatch, "field value has wrong dimension");
  Matrix f(model.n_nodes(), model.dimension());
  for (Eigen::Index i = 0; i < f.rows(); ++i) f.row(i) = value.transpose();
  return f;
}

/// Largest admissible m~0 below m_F - ||gamma||^2.
inline double default_m_tilde0(const FemModel& model) {
  const double gap = model.m_F() - model.gamma() * model.gamma();
  return gap > 0.0 ? (1.0 - 1e-6) * gap : 0.0;
}

struct ContactOptions {
  /// Bound of mu ||gamma||^2 in the parameter set; defaults to default_m_tilde0.
  std::optional<double> m_tilde0;
};

/// One entry per violated parameter constraint; empty when p is admissible.
inline std::vector<std::string> parameter_violations(const FemModel& model, const ParameterVector& p,
                                                     const ContactOptions& opt = {}) {
  std::vector<std::string> out;
  if (!(p.omega >= 0.0)) out.push_back("ω ≥ 0 (set Σ)");
  if (!(p.mu >= 0.0)) out.push_back("μ ≥ 0 (set Σ)");
  if (!(p.rho >= 0.0)) out.push_back("ρ ≥ 0 (set Σ)");
  if (!(p.g >= 0.0)) out.push_back("g ≥ 0 (set U)");
  const double gamma2 = model.gamma() * model.gamma();
  const double gap = model.m_F() - gamma2;
  if (!(gap > 0.0)) {
    out.push_back("m_F > ‖γ‖² (model), m_F = " + std::to_string(model.m_F()) + ", ‖γ‖² = " + std::to_string(gamma2));
    return out;
  }
  const double m0 = opt.m_tilde0.value_or(default_m_tilde0(model));
  if (!(m0 > 0.0 && m0 < gap)) out.push_back("0 < m̃₀ < m_F − ‖γ‖² (model)");
  else if (!(p.mu * gamma2 <= m0))
    out.push_back("μ‖γ‖² ≤ m̃₀ (set Λ), μ‖γ‖² = " + std::to_string(p.mu * gamma2) +
                  ", m̃₀ = " + std::to_string(m0));
  const auto check = [&](const Matrix& f, const char* name) {
    if (f.size() != 0 && (f.rows() != model.n_nodes() || f.cols() != model.dimension()))
      out.push_back(std::string(name) + " must be an n_nodes x d field");
  };
  check(p.f0, "f0");
  check(p.f2, "f2");
  return out;
}

struct AssembledContact {
  VhiInstance instance;
  ParameterVector params;
  /// Lipschitz bound L_F + 2 omega of A_p.
  double lipschitz_bound = 0.0;
  Vector load;
};

namespace detail {

/// A_p u = K u + omega sum_e |e| B_e^T (eps_e - P_B eps_e).
inline Vector apply_contact_operator(const FemModel& model, double omega, const Vector& u) {
  Vector out = model.stiffness() * u;
  if (omega == 0.0) return out;
  Matrix eps = model.strains(u);
  for (Eigen::Index e = 0; e < eps.cols(); ++e) eps.col(e) -= project(model.B(), Vector(eps.col(e)));
  return out + omega * model.strain_transpose(eps);
}

inline double contact_potential(const FemModel& model, double omega, const Vector& u) {
  double val = 0.5 * u.dot(model.stiffness() * u);
  if (omega == 0.0) return val;
  const Matrix eps = model.strains(u);
  for (Eigen::Index e = 0; e < eps.cols(); ++e) {
    const double dist = distance(model.B(), Vector(eps.col(e)));
    val += 0.5 * omega * model.element_measure(e) * dist * dist;
  }
  return val;
}

}  // namespace detail

/// Operator A_p of the contact problem, for audits and perturbation checks.
inline Vector apply_A(const FemModel& model, double omega, const Vector& u) {
  if (u.size() != model.n_dofs()) throw Error(ErrorCode::DimensionMismatch, "displacement has wrong size");
  return detail::apply_contact_operator(model, omega, u);
}

/// phi_p(u, v) = sum_i w_i mu u_nu,i^+ |v_tau,i|.
inline double contact_phi(const FemModel& model, double mu, const Vector& u, const Vector& v) {
  if (model.dimension() == 1 || mu == 0.0) return 0.0;
  const Vector un = model.normal_displacement(u);
  const Vector vt = model.tangential_displacement(v);
  double acc = 0.0;
  const auto& cn = model.contact_nodes();
  for (std::size_t i = 0; i < cn.size(); ++i)
    acc += cn[i].weight * mu * std::max(un(Eigen::Index(i)), 0.0) * std::abs(vt(Eigen::Index(i)));
  return acc;
}

/// j_p(v) = sum_i w_i j_rho(v_nu,i).
inline double contact_j(const FemModel& model, double rho, const Vector& v) {
  const Vector vn = model.normal_displacement(v);
  double acc = 0.0;
  const auto& cn = model.contact_nodes();
  for (std::size_t i = 0; i < cn.size(); ++i) acc += cn[i].weight * j_rho(vn(Eigen::Index(i)), rho);
  return acc;
}

/// Euclidean projection onto K_p: nodal clamp of u_nu to (-inf, g].
inline Vector project_contact_set(const FemModel& model, double g, const Vector& v) {
  Vector out = v;
  const int dim = model.dimension();
  for (const auto& c : model.contact_nodes()) {
    double s = 0.0;
    for (int k = 0; k < dim; ++k) s += c.normal(k) * v(c.dofs[std::size_t(k)]);
    if (s > g)
      for (int k = 0; k < dim; ++k) out(c.dofs[std::size_t(k)]) -= (s - g) * c.normal(k);
  }
  return out;
}

/// Build the discrete problem for p. Throws ParameterOutsideLambda or SmallnessViolated.
inline AssembledContact assemble(const FemModel& model, const ParameterVector& p, const ContactOptions& opt = {}) {
  const double gamma = model.gamma();
  const double gamma2 = gamma * gamma;
  if (!(model.m_F() > gamma2))
    throw Error(ErrorCode::SmallnessViolated, "m_F = " + std::to_string(model.m_F()) + " <= ||gamma||^2 = " +
                                                  std::to_string(gamma2));
  const auto violations = parameter_violations(model, p, opt);
  if (!violations.empty()) throw Error(ErrorCode::ParameterOutsideLambda, violations.front());
  if (!((p.mu + 1.0) * gamma2 < model.m_F()))
    throw Error(ErrorCode::SmallnessViolated, "(mu + 1) ||gamma||^2 = " + std::to_string((p.mu + 1.0) * gamma2) +
                                                  " >= m_F = " + std::to_string(model.m_F()));

  const Vector load = model.load_vector(p.f0, p.f2);
  const int dim = model.dimension();
  const double omega = p.omega, mu = p.mu, rho = p.rho, g = p.g;

  VhiData d;
  d.dim = model.n_dofs();
  d.apply_A = [model, omega](const Vector& u) { return detail::apply_contact_operator(model, omega, u); };
  d.potential_A = [model, omega](const Vector& u) { return detail::contact_potential(model, omega, u); };
  d.phi = [model, mu](const Vector& u, const Vector& v) { return contact_phi(model, mu, u, v); };
  if (dim == 2) {
    for (const auto& c : model.contact_nodes()) {
      FrictionBlock b;
      b.dofs = {c.dofs[0], c.dofs[1]};
      b.directions = Matrix(1, 2);
      b.directions << c.tangent(0), c.tangent(1);
      d.friction_blocks.push_back(std::move(b));
    }
    d.phi_linearize = [model, mu](const Vector& u) {
      const Vector un = model.normal_displacement(u);
      Vector w(un.size());
      const auto& cn = model.contact_nodes();
      for (Eigen::Index i = 0; i < un.size(); ++i) w(i) = cn[std::size_t(i)].weight * mu * std::max(un(i), 0.0);
      return w;
    };
  }
  d.j_subgradient = [model, rho](const Vector& u) {
    Vector xi = Vector::Zero(u.size());
    const Vector un = model.normal_displacement(u);
    const auto& cn = model.contact_nodes();
    for (std::size_t i = 0; i < cn.size(); ++i) {
      const double s = cn[i].weight * k_rho(un(Eigen::Index(i)), rho);
      for (int k = 0; k < model.dimension(); ++k) xi(cn[i].dofs[std::size_t(k)]) += s * cn[i].normal(k);
    }
    return xi;
  };
  // j_rho is C^1, so the generalized directional derivative is the derivative.
  d.j_dir = [model, rho](const Vector& u, const Vector& w) {
    const Vector un = model.normal_displacement(u);
    const Vector wn = model.normal_displacement(w);
    const auto& cn = model.contact_nodes();
    double acc = 0.0;
    for (std::size_t i = 0; i < cn.size(); ++i)
      acc += cn[i].weight * k_rho(un(Eigen::Index(i)), rho) * wn(Eigen::Index(i));
    return acc;
  };
  d.project_K = [model, g](const Vector& v) { return project_contact_set(model, g, v); };
  d.f_pairing = [load](const Vector& v) { return load.dot(v); };
  d.constants.m = model.m_F();
  d.constants.alpha = mu * gamma2;
  d.constants.beta = gamma2;
  d.constants.c0 = 2.0 * rho * std::sqrt(2.0 * model.meas_contact()) * gamma;
  d.constants.c1 = std::sqrt(2.0) * gamma2;
  d.constants.d0 = model.d0();
  d.gram = model.gram();

  return AssembledContact{VhiInstance(std::move(d)), p, model.L_F() + 2.0 * omega, load};
}

enum class ContactStatus { separated, stick, slip };

inline const char* to_string(ContactStatus s) {
  switch (s) {
    case ContactStatus::separated: return "separated";
    case ContactStatus::stick: return "stick";
    case ContactStatus::slip: return "slip";
  }
  return "unknown";
}

struct ContactNodeState {
  int node = 0;
  double normal = 0.0;
  double tangential = 0.0;
  bool at_bound = false;  ///< u_nu = g
  ContactStatus status = ContactStatus::separated;
};

struct ContactSolution {
  SolveResult result;
  std::vector<ContactNodeState> nodes;
  std::vector<int> active_nodes;
};

/// Per-node contact diagnostics. A node is in contact when u_nu > 0 (the layer is
/// compressed); it sticks when additionally |u_tau| <= tol.
inline std::vector<ContactNodeState> contact_states(const FemModel& model, const ParameterVector& p, const Vector& u,
                                                    double tol = 1e-8) {
  const Vector un = model.normal_displacement(u);
  const Vector ut = model.tangential_displacement(u);
  std::vector<ContactNodeState> out;
  const auto& cn = model.contact_nodes();
  for (std::size_t i = 0; i < cn.size(); ++i) {
    ContactNodeState s;
    s.node = cn[i].node;
    s.normal = un(Eigen::Index(i));
    s.tangential = ut(Eigen::Index(i));
    s.at_bound = s.normal >= p.g - tol * (1.0 + p.g);
    if (s.normal > tol)
      s.status = std::abs(s.tangential) <= tol ? ContactStatus::stick : ContactStatus::slip;
    out.push_back(s);
  }
  return out;
}

inline ContactSolution solve_contact(const FemModel& model, const ParameterVector& p, const SolverConfig& config,
                                     const ContactOptions& opt = {},
                                     const std::optional<Vector>& u0 = std::nullopt) {
  const AssembledContact ac = assemble(model, p, opt);
  ContactSolution out;
  out.result = solve(ac.instance, config, u0);
  const double tol = std::max(1e-8, 100.0 * config.outer_tol);
  out.nodes = contact_states(model, p, out.result.u, tol);
  for (const auto& s : out.nodes)
    if (s.at_bound) out.active_nodes.push_back(s.node);
  return out;
}

}  // namespace vhi
