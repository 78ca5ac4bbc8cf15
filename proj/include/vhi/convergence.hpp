#pragma once

// Numerical checks of the stability theory: Mosco convergence of the thickness
// family K_g, continuity p -> u(p) along parameter sequences, and sampled audits of
// the structural hypotheses. In finite dimensions weak and strong convergence
// coincide, so every limit below is taken in norm.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vhi/contact.hpp"
#include "vhi/csv.hpp"
#include "vhi/errors.hpp"
#include "vhi/parallel.hpp"
#include "vhi/solver.hpp"

namespace vhi {

enum class ParameterComponent { omega, mu, rho, g, f0, f2 };

inline const char* to_string(ParameterComponent c) {
  switch (c) {
    case ParameterComponent::omega: return "omega";
    case ParameterComponent::mu: return "mu";
    case ParameterComponent::rho: return "rho";
    case ParameterComponent::g: return "g";
    case ParameterComponent::f0: return "f0";
    case ParameterComponent::f2: return "f2";
  }
  return "unknown";
}

inline std::optional<ParameterComponent> parse_component(const std::string& s) {
  for (auto c : {ParameterComponent::omega, ParameterComponent::mu, ParameterComponent::rho, ParameterComponent::g,
                 ParameterComponent::f0, ParameterComponent::f2})
    if (s == to_string(c)) return c;
  return std::nullopt;
}

struct ParameterSequence {
  ParameterVector base;
  std::function<ParameterVector(int)> rule;  ///< n = 1, 2, ..., length
  int length = 64;

  ParameterVector at(int n) const { return rule ? rule(n) : base; }
};

inline ParameterSequence constant_sequence(const ParameterVector& base, int length = 64) {
  return ParameterSequence{base, [base](int) { return base; }, length};
}

/// Moves one component at rate 1/n: scalars by amplitude / n, fields by the factor
/// (1 + amplitude / n).
inline ParameterSequence single_parameter_sequence(const ParameterVector& base, ParameterComponent c,
                                                   double amplitude, int length = 64) {
  if (length < 1) throw Error(ErrorCode::InvalidArgument, "sequence length must be >= 1");
  auto rule = [base, c, amplitude](int n) {
    ParameterVector p = base;
    const double step = amplitude / static_cast<double>(n);
    switch (c) {
      case ParameterComponent::omega: p.omega += step; break;
      case ParameterComponent::mu: p.mu += step; break;
      case ParameterComponent::rho: p.rho += step; break;
      case ParameterComponent::g: p.g += step; break;
      case ParameterComponent::f0: p.f0 *= 1.0 + step; break;
      case ParameterComponent::f2: p.f2 *= 1.0 + step; break;
    }
    return p;
  };
  return ParameterSequence{base, rule, length};
}

/// Limit estimate of x_n = a + b / n from the last quarter of the sequence
/// (x[i] holds n = i + 1). Exact for sequences of that form.
inline double richardson_limit(const std::vector<double>& x) {
  const std::size_t N = x.size();
  if (N == 0) throw Error(ErrorCode::InsufficientHistory, "empty sequence");
  if (N == 1) return x[0];
  const std::size_t M = N - std::max<std::size_t>(1, N / 4);
  const double n = static_cast<double>(N), m = static_cast<double>(M);
  return (n * x[N - 1] - m * x[M - 1]) / (n - m);
}

inline Vector richardson_limit(const std::vector<Vector>& x) {
  const std::size_t N = x.size();
  if (N == 0) throw Error(ErrorCode::InsufficientHistory, "empty sequence");
  if (N == 1) return x[0];
  const std::size_t M = N - std::max<std::size_t>(1, N / 4);
  const double n = static_cast<double>(N), m = static_cast<double>(M);
  return (n * x[N - 1] - m * x[M - 1]) / (n - m);
}

// --- Mosco convergence ------------------------------------------------------

struct MoscoReport {
  /// Per sequence index: largest recovery error over probes, and its affine bound.
  std::vector<double> recovery_errors;
  std::vector<double> recovery_bounds;
  int recovery_violations = 0;
  /// Per probe and selection: how far the limit point exceeds the limit set (>= 0).
  std::vector<double> limit_excess;
  int membership_violations = 0;
  bool pass = false;
  std::string note = "finite-dimensional: weak limits are taken as strong limits";
};

/// Recovery sequences and limit membership for K_{g_n} -> K_g.
///
/// (M1) v_n = v g_n / g for g > 0, or the projection of v onto K_{g_n} for g = 0;
///      the error must not exceed ||v|| |g_n - g| / g (0 when g = 0) by more than tol.
///      The extrapolated limit of the error must vanish.
/// (M2) selections v_n = P_{K_{g_n}}(v + z / n) for an outward push z and a random z,
///      and one pressed onto the boundary of every K_{g_n}; the extrapolated limit
///      must satisfy v_nu <= g + tol at every contact node.
inline MoscoReport mosco_check_Kg(const FemModel& model, const std::vector<double>& g_seq, double g,
                                  const std::vector<Vector>& probes, double tol, unsigned seed = 0) {
  if (g < 0.0) throw Error(ErrorCode::NegativeThickness, "limit thickness g < 0");
  for (double gn : g_seq)
    if (gn < 0.0) throw Error(ErrorCode::NegativeThickness, "sequence thickness g_n < 0");
  if (g_seq.empty()) throw Error(ErrorCode::InvalidArgument, "empty thickness sequence");
  for (const auto& v : probes) {
    if (v.size() != model.n_dofs()) throw Error(ErrorCode::DimensionMismatch, "probe has wrong size");
    if (model.normal_displacement(v).size() && model.normal_displacement(v).maxCoeff() > g + tol)
      throw Error(ErrorCode::InfeasiblePoint, "probe is not in K_g");
  }

  MoscoReport rep;
  const std::size_t N = g_seq.size();
  rep.recovery_errors.assign(N, 0.0);
  rep.recovery_bounds.assign(N, 0.0);
  auto max_normal = [&](const Vector& v) {
    const Vector vn = model.normal_displacement(v);
    return vn.size() ? vn.maxCoeff() : -std::numeric_limits<double>::infinity();
  };

  std::vector<double> errs(N);
  for (const auto& v : probes) {
    const double nv = model.norm_V(v);
    for (std::size_t i = 0; i < N; ++i) {
      const double gn = g_seq[i];
      const Vector vn = g > 0.0 ? Vector(v * (gn / g)) : project_contact_set(model, gn, v);
      if (max_normal(vn) > gn + tol) ++rep.recovery_violations;
      const double err = model.norm_V(vn - v);
      const double bound = g > 0.0 ? nv * std::abs(gn - g) / g : 0.0;
      if (err > bound + tol) ++rep.recovery_violations;
      rep.recovery_errors[i] = std::max(rep.recovery_errors[i], err);
      rep.recovery_bounds[i] = std::max(rep.recovery_bounds[i], bound);
      errs[i] = err;
    }
    if (std::abs(richardson_limit(errs)) > tol) ++rep.recovery_violations;
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector push = Vector::Zero(model.n_dofs());
  for (const auto& c : model.contact_nodes())
    for (int k = 0; k < model.dimension(); ++k) push(c.dofs[std::size_t(k)]) += c.normal(k);
  for (const auto& v : probes) {
    Vector noise(model.n_dofs());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = normal(rng);
    const double gmax = *std::max_element(g_seq.begin(), g_seq.end());
    for (int kind = 0; kind < 3; ++kind) {
      std::vector<Vector> sel;
      for (std::size_t i = 0; i < N; ++i) {
        const double n = static_cast<double>(i + 1);
        const Vector w = kind == 0 ? Vector(v + push / n) : kind == 1 ? Vector(v + noise / n)
                                                                     : Vector(v + (2.0 * gmax + 1.0) * push);
        sel.push_back(project_contact_set(model, g_seq[i], w));
      }
      const Vector limit = richardson_limit(sel);
      const double excess = std::max(0.0, max_normal(limit) - g);
      rep.limit_excess.push_back(excess);
      if (excess > tol) ++rep.membership_violations;
    }
  }
  rep.pass = rep.recovery_violations == 0 && rep.membership_violations == 0;
  return rep;
}

// --- continuity --------------------------------------------------------------

struct ContinuityRow {
  int n = 0;
  double param_distance = 0.0;
  double solution_error = 0.0;
  /// 2 |rho_n - rho| (compliance slope) or 2 |omega_n - omega| (operator); NaN otherwise.
  double theoretical_bound = std::numeric_limits<double>::quiet_NaN();
};

struct ContinuityOptions {
  double tol = 1e-4;
  int tail = 16;
  double jitter = 1e-8;
  int jobs = 1;
  ContactOptions contact;
};

struct ContinuityResult {
  std::vector<ContinuityRow> rows;
  Vector base_solution;
  bool below_tol = false;          ///< error at n = N below tol
  bool tail_nonincreasing = false; ///< last `tail` errors nonincreasing within jitter
  bool flagged() const { return !below_tol; }
};

inline ContinuityResult continuity_experiment(const FemModel& model, const ParameterSequence& seq,
                                              const SolverConfig& config, const ContinuityOptions& opt = {}) {
  if (seq.length < 1) throw Error(ErrorCode::InvalidArgument, "sequence length must be >= 1");
  const ParameterVector& p = seq.base;
  const auto base = solve_contact(model, p, config, opt.contact);
  if (!base.result.converged) throw Error(ErrorCode::MaxIterations, "base problem did not converge");
  const Vector u = base.result.u;

  ContinuityResult out;
  out.base_solution = u;
  out.rows.resize(static_cast<std::size_t>(seq.length));
  parallel_for(out.rows.size(), opt.jobs, [&](std::size_t i) {
    const int n = static_cast<int>(i) + 1;
    const ParameterVector pn = seq.at(n);
    const auto sol = solve_contact(model, pn, config, opt.contact, u);
    if (!sol.result.converged) throw Error(ErrorCode::MaxIterations, "solve at n = " + std::to_string(n) + " did not converge");
    ContinuityRow r;
    r.n = n;
    r.param_distance = parameter_distance(model, pn, p);
    r.solution_error = model.norm_V(sol.result.u - u);
    if (pn.rho != p.rho) r.theoretical_bound = 2.0 * std::abs(pn.rho - p.rho);
    else if (pn.omega != p.omega) r.theoretical_bound = 2.0 * std::abs(pn.omega - p.omega);
    out.rows[i] = r;
  });
  out.below_tol = out.rows.back().solution_error < opt.tol;
  out.tail_nonincreasing = true;
  const std::size_t start = out.rows.size() > std::size_t(opt.tail) ? out.rows.size() - std::size_t(opt.tail) : 0;
  for (std::size_t i = start + 1; i < out.rows.size(); ++i)
    if (out.rows[i].solution_error > out.rows[i - 1].solution_error + opt.jitter) out.tail_nonincreasing = false;
  return out;
}

inline csv::Table continuity_csv(const ContinuityResult& r) {
  csv::Table t({"n", "param_distance", "solution_error", "theoretical_bound"});
  for (const auto& row : r.rows)
    t.add_row(std::vector<double>{double(row.n), row.param_distance, row.solution_error, row.theoretical_bound});
  return t;
}

// --- hypothesis audits ---------------------------------------------------------

struct AuditEntry {
  std::string name;
  double measured = 0.0;
  double bound = std::numeric_limits<double>::quiet_NaN();  ///< NaN: no fixed bound
  int samples = 0;
  int violations = 0;
  bool pass = false;
  std::string note;
};

struct AuditReport {
  std::vector<AuditEntry> entries;
  std::string note = "finite-dimensional: weak convergence is audited in norm; limsup values are extrapolated estimates";
  bool pass() const {
    return std::all_of(entries.begin(), entries.end(), [](const AuditEntry& e) { return e.pass; });
  }
  const AuditEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

namespace detail {

/// Normal vectors with log-uniform scale in [1e-3, 10] so samples cross every
/// branch of k_rho and both sides of P_B.
inline Vector multiscale_sample(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> expo(-3.0, 1.0);
  const double s = std::pow(10.0, expo(rng));
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = s * normal(rng);
  return v;
}

}  // namespace detail

/// Structural assumptions of one assembled model on random samples: strong
/// monotonicity (m_F), Lipschitz continuity (L_F + 2 omega), the friction coupling
/// bound (mu ||gamma||^2), the one-sided compliance bound (||gamma||^2), the trace
/// inequality, and the bound d0 of v -> (v, gamma v).
inline AuditReport assumption_audit(const FemModel& model, const ParameterVector& p, int samples, unsigned seed = 0,
                                    double rel_tol = 1e-9, const ContactOptions& opt = {}) {
  if (samples < 1) throw Error(ErrorCode::InvalidArgument, "samples must be >= 1");
  const AssembledContact ac = assemble(model, p, opt);
  const VhiInstance& I = ac.instance;
  const double gamma2 = model.gamma() * model.gamma();
  const Eigen::Index n = model.n_dofs();
  std::mt19937_64 rng(seed);

  AuditEntry mono{"strong_monotonicity", std::numeric_limits<double>::infinity(), model.m_F(), samples};
  AuditEntry lip{"lipschitz", 0.0, ac.lipschitz_bound, samples};
  AuditEntry fric{"friction_coupling", 0.0, p.mu * gamma2, samples};
  AuditEntry comp{"compliance_one_sided", 0.0, gamma2, samples};
  AuditEntry trace{"trace_inequality", 0.0, model.gamma(), samples};
  AuditEntry pi{"pi_bound", 0.0, model.d0(), samples};

  for (int s = 0; s < samples; ++s) {
    const Vector u = detail::multiscale_sample(rng, n);
    const Vector v = detail::multiscale_sample(rng, n);
    const Vector w = detail::multiscale_sample(rng, n);
    const Vector z = detail::multiscale_sample(rng, n);
    const Vector du = u - v;
    const double nd = model.norm_V(du);
    const Vector dA = I.apply_A(u) - I.apply_A(v);

    const double mono_ratio = dA.dot(du) / (nd * nd);
    mono.measured = std::min(mono.measured, mono_ratio);
    if (mono_ratio < mono.bound * (1.0 - rel_tol)) ++mono.violations;

    const double lip_ratio = model.norm_dual(dA) / nd;
    lip.measured = std::max(lip.measured, lip_ratio);
    if (lip_ratio > lip.bound * (1.0 + rel_tol)) ++lip.violations;

    const double quad = I.phi(u, z) - I.phi(u, w) + I.phi(v, w) - I.phi(v, z);
    const double denom = nd * model.norm_V(w - z);
    fric.measured = std::max(fric.measured, std::abs(quad) / denom);
    if (std::abs(quad) > fric.bound * denom * (1.0 + rel_tol)) ++fric.violations;

    const double one_sided = I.j_dir(u, Vector(v - u)) + I.j_dir(v, Vector(u - v));
    comp.measured = std::max(comp.measured, one_sided / (nd * nd));
    if (one_sided > comp.bound * nd * nd * (1.0 + rel_tol)) ++comp.violations;

    const double nu = model.norm_V(u);
    const double tr = model.trace_norm_sq(u);
    trace.measured = std::max(trace.measured, std::sqrt(tr) / nu);
    if (tr > gamma2 * nu * nu * (1.0 + rel_tol)) ++trace.violations;

    const double py = std::sqrt(u.dot(model.mass() * u) + tr);
    pi.measured = std::max(pi.measured, py / nu);
    if (py > pi.bound * nu * (1.0 + rel_tol)) ++pi.violations;
  }
  AuditReport rep;
  for (auto* e : {&mono, &lip, &fric, &comp, &trace, &pi}) {
    e->pass = e->violations == 0;
    rep.entries.push_back(*e);
  }
  return rep;
}

/// Sampled audit of the perturbation hypotheses along a parameter sequence, followed
/// by the structural audit of the limit model.
inline AuditReport hypothesis_audit(const FemModel& model, const ParameterSequence& seq, int samples,
                                    unsigned seed = 0, double tol = 1e-6, const ContactOptions& opt = {}) {
  if (samples < 1) throw Error(ErrorCode::InvalidArgument, "samples must be >= 1");
  const int N = seq.length;
  const ParameterVector& p = seq.base;
  const AssembledContact base = assemble(model, p, opt);
  const Eigen::Index n = model.n_dofs();
  const double gamma = model.gamma(), gamma2 = gamma * gamma;
  std::mt19937_64 rng(seed);

  AuditEntry op{"operator_perturbation_excess", -std::numeric_limits<double>::infinity(), 0.0};
  std::vector<double> Fn, c0n, c1n, alphan, load_dist;
  double smallness = std::numeric_limits<double>::infinity();
  std::vector<ParameterVector> ps;
  std::vector<Vector> loads;
  for (int k = 1; k <= N; ++k) {
    ps.push_back(seq.at(k));
    const auto& pk = ps.back();
    const AssembledContact ak = assemble(model, pk, opt);
    const auto& c = ak.instance.constants();
    Fn.push_back(2.0 * std::abs(pk.omega - p.omega));
    c0n.push_back(c.c0);
    c1n.push_back(c.c1);
    alphan.push_back(c.alpha);
    smallness = std::min(smallness, c.m - c.alpha - c.beta);
    load_dist.push_back(model.norm_dual(ak.load - base.load));
    loads.push_back(ak.load);
  }
  const int per_n = std::max(1, samples / std::max(1, N));
  for (int k = 1; k <= N; ++k) {
    for (int s = 0; s < per_n; ++s) {
      const Vector v = detail::multiscale_sample(rng, n);
      const double nv = model.norm_V(v);
      const Vector d = apply_A(model, ps[std::size_t(k - 1)].omega, v) - apply_A(model, p.omega, v);
      const double excess = (model.norm_dual(d) - Fn[std::size_t(k - 1)] * nv) / nv;
      op.measured = std::max(op.measured, excess);
      ++op.samples;
      if (excess > 1e-9 * (model.L_F() + 2.0 * p.omega)) ++op.violations;
    }
  }
  op.pass = op.violations == 0;
  op.note = "||A_{p_n} v - A_p v|| - F_n ||v|| with F_n = 2 |omega_n - omega|";

  AuditReport rep;
  rep.entries.push_back(op);
  const double F_lim = richardson_limit(Fn);
  rep.entries.push_back({"operator_perturbation_limit", std::abs(F_lim), tol, N, 0, std::abs(F_lim) <= tol,
                         "extrapolated limit of F_n"});

  // limsup of the coupled terms along u_n = u + a / n, v_n = v + b / n.
  const int pairs = std::max(1, std::min(samples, 32));
  double phi_excess = -std::numeric_limits<double>::infinity();
  double j_excess = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < pairs; ++s) {
    const Vector u = detail::multiscale_sample(rng, n), v = detail::multiscale_sample(rng, n);
    const Vector a = detail::multiscale_sample(rng, n), b = detail::multiscale_sample(rng, n);
    // Both terms are continuous, so the limsup is a limit; extrapolate from far out.
    auto terms = [&](double k) {
      const ParameterVector pk = seq.at(static_cast<int>(k));
      const Vector un = u + a / k, vn = v + b / k;
      const Vector unu = model.normal_displacement(un), dnu = model.normal_displacement(Vector(vn - un));
      double jd = 0.0;
      for (std::size_t i = 0; i < model.contact_nodes().size(); ++i)
        jd += model.contact_nodes()[i].weight * k_rho(unu(Eigen::Index(i)), pk.rho) * dnu(Eigen::Index(i));
      return std::pair{contact_phi(model, pk.mu, un, vn) - contact_phi(model, pk.mu, un, un), jd};
    };
    const double far = std::ldexp(1.0, 20);
    const auto [phi1, j1] = terms(far);
    const auto [phi2, j2] = terms(2.0 * far);
    const double lim_phi = 2.0 * phi2 - phi1, lim_j = 2.0 * j2 - j1;
    const double tphi = contact_phi(model, p.mu, u, v) - contact_phi(model, p.mu, u, u);
    const double tj = base.instance.j_dir(u, Vector(v - u));
    phi_excess = std::max(phi_excess, (lim_phi - tphi) / (1.0 + std::abs(tphi)));
    j_excess = std::max(j_excess, (lim_j - tj) / (1.0 + std::abs(tj)));
  }
  rep.entries.push_back({"friction_limsup", phi_excess, tol, pairs, 0, phi_excess <= tol,
                         "limsup estimate minus limit value, relative"});
  rep.entries.push_back({"compliance_limsup", j_excess, tol, pairs, 0, j_excess <= tol,
                         "limsup estimate minus limit value, relative"});

  const double load_lim = std::abs(richardson_limit(load_dist));
  rep.entries.push_back({"load_convergence", load_lim, tol, N, 0, load_lim <= tol,
                         "extrapolated limit of ||f_{p_n} - f_p|| in the dual norm"});
  rep.entries.push_back({"uniform_smallness", smallness, 0.0, N, 0, smallness > 0.0, "min_n m_n - alpha_n - beta_n"});

  const double c0_sup = *std::max_element(c0n.begin(), c0n.end());
  const double c1_sup = *std::max_element(c1n.begin(), c1n.end());
  rep.entries.push_back({"c0_bounded", c0_sup, std::numeric_limits<double>::quiet_NaN(), N, 0, std::isfinite(c0_sup),
                         "sup_n c0_n"});
  rep.entries.push_back({"c1_bounded", c1_sup, std::numeric_limits<double>::quiet_NaN(), N, 0, std::isfinite(c1_sup),
                         "sup_n c1_n"});
  const double alpha_gap = std::abs(richardson_limit(alphan) - p.mu * gamma2);
  rep.entries.push_back({"alpha_convergence", alpha_gap, tol, N, 0, alpha_gap <= tol,
                         "extrapolated alpha_n = mu_n ||gamma||^2 against alpha_p"});

  for (auto& e : assumption_audit(model, p, samples, seed + 1, 1e-9, opt).entries) rep.entries.push_back(e);
  return rep;
}

}  // namespace vhi
