#pragma once

// Optimal choice of the layer thickness g and a surface-traction coefficient s so that
// the normal displacement on the contact boundary matches a target profile.
// Controls are q = (g, s) with f2 = s * profile, admissible when
// rho <= g <= min(g0, rho0) and ||f2|| <= h0.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vhi/contact.hpp"
#include "vhi/convergence.hpp"
#include "vhi/csv.hpp"
#include "vhi/errors.hpp"
#include "vhi/parallel.hpp"
#include "vhi/solver.hpp"

namespace vhi {

/// Uncontrolled data eta = (omega, mu, rho, f0).
struct Eta {
  double omega = 0.0;
  double mu = 0.0;
  double rho = 0.0;
  Matrix f0;
};

struct Control {
  double g = 0.0;
  double s = 0.0;
};

struct ControlSpec {
  Eta eta;
  double g0 = 1.0;
  double h0 = 1.0;
  double rho0 = 1.0;
  Matrix f2_profile;  ///< n_nodes x d; empty disables the s axis
  Vector target;      ///< phi at each contact node
  int g_resolution = 101;
  int s_resolution = 101;
  double refine_tol = 1e-10;  ///< golden-section bracket width
  int refine_rounds = 20;     ///< alternating g / s refinements when both axes are active
  /// Grid costs within this relative gap count as ties (smallest g, then smallest s, wins).
  double tie_rel_tol = 1e-12;
  int jobs = 1;
  ContactOptions contact;

  double g_min() const noexcept { return eta.rho; }
  double g_max() const noexcept { return std::min(g0, rho0); }

  /// Largest |s| with ||s profile||_{L2(Gamma_3)} <= h0.
  double s_max(const FemModel& model) const {
    const double pn = model.l2_norm_contact(f2_profile);
    return pn > 0.0 ? h0 / pn : 0.0;
  }

  ParameterVector parameters(const Control& q) const {
    ParameterVector p;
    p.omega = eta.omega;
    p.mu = eta.mu;
    p.rho = eta.rho;
    p.g = q.g;
    p.f0 = eta.f0;
    if (f2_profile.size()) p.f2 = q.s * f2_profile;
    return p;
  }

  /// One message per violated constraint of U, Sigma and F(eta).
  std::vector<std::string> violations(const FemModel& model) const {
    std::vector<std::string> out;
    if (!(g0 > 0.0)) out.push_back("g₀ > 0 (set U)");
    if (!(h0 > 0.0)) out.push_back("h₀ > 0 (set U)");
    if (!(rho0 > 0.0)) out.push_back("ρ₀ > 0 (set Σ)");
    if (!(eta.rho <= rho0)) out.push_back("ρ ≤ ρ₀ (set Σ)");
    if (!(eta.rho <= g0))
      out.push_back("F(η) empty: ρ ≤ g ≤ ρ₀ unsatisfiable with g ≤ g₀");
    if (g_resolution < 1 || s_resolution < 1) out.push_back("grid resolutions must be >= 1");
    if (target.size() != static_cast<Eigen::Index>(model.contact_nodes().size()))
      out.push_back("target needs one value per contact node");
    if (f2_profile.size() && (f2_profile.rows() != model.n_nodes() || f2_profile.cols() != model.dimension()))
      out.push_back("f2 profile must be an n_nodes x d field");
    for (const auto& v : parameter_violations(model, parameters(Control{std::max(eta.rho, 0.0), 0.0}), contact)) {
      if (v.rfind("g ≥ 0", 0) != 0) out.push_back(v);
    }
    return out;
  }
};

/// Nodal quadrature of the squared misfit of u_nu against the target on Gamma_3.
inline double cost(const FemModel& model, const Vector& u, const Vector& target) {
  const Vector un = model.normal_displacement(u);
  if (un.size() != target.size()) throw Error(ErrorCode::DimensionMismatch, "target has wrong size");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < un.size(); ++i) {
    const double d = un(i) - target(i);
    acc += model.contact_nodes()[std::size_t(i)].weight * d * d;
  }
  return acc;
}

inline double cost(const FemModel& model, const Vector& u, const ControlSpec& spec) {
  return cost(model, u, spec.target);
}

struct OptimalPair {
  Control q_star;
  Vector u_star;
  double cost = 0.0;
  int evaluations = 0;
};

/// J(q) = cost(u(q)) with grid values memoized by grid index.
class J_Evaluator {
 public:
  J_Evaluator(FemModel model, ControlSpec spec, SolverConfig config)
      : model_(std::move(model)), spec_(std::move(spec)), config_(config) {
    const auto v = spec_.violations(model_);
    for (const auto& msg : v)
      if (msg.rfind("F(η) empty", 0) == 0 || msg.rfind("ρ ≤ ρ₀", 0) == 0)
        throw Error(ErrorCode::EmptyAdmissibleSet, msg);
    if (!v.empty()) throw Error(ErrorCode::InvalidArgument, v.front());
    s_max_ = spec_.s_max(model_);
  }

  const FemModel& model() const noexcept { return model_; }
  const ControlSpec& spec() const noexcept { return spec_; }
  const SolverConfig& config() const noexcept { return config_; }
  int evaluations() const noexcept { return evaluations_; }

  int g_points() const noexcept { return spec_.g_max() > spec_.g_min() ? spec_.g_resolution : 1; }
  int s_points() const noexcept { return s_max_ > 0.0 ? spec_.s_resolution : 1; }
  double s_max() const noexcept { return s_max_; }

  double g_at(int i) const {
    const int n = g_points();
    return n == 1 ? spec_.g_min() : spec_.g_min() + (spec_.g_max() - spec_.g_min()) * i / (n - 1);
  }
  double s_at(int j) const {
    const int n = s_points();
    return n == 1 ? 0.0 : -s_max_ + 2.0 * s_max_ * j / (n - 1);
  }

  /// Fresh forward solve at q, not memoized.
  std::pair<double, Vector> evaluate(const Control& q) const {
    const auto sol = solve_contact(model_, spec_.parameters(q), config_, spec_.contact);
    if (!sol.result.converged)
      throw Error(ErrorCode::MaxIterations, "forward solve at g = " + csv::format(q.g) + " did not converge");
    {
      std::lock_guard<std::mutex> lock(mutex_);
      ++evaluations_;
    }
    return {cost(model_, sol.result.u, spec_.target), sol.result.u};
  }

  double grid(int i, int j) {
    const auto key = std::make_pair(i, j);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    const double c = evaluate(Control{g_at(i), s_at(j)}).first;
    std::lock_guard<std::mutex> lock(mutex_);
    return memo_.emplace(key, c).first->second;
  }

  /// Fills every grid point; results are keyed by index so the order of completion
  /// never matters.
  void evaluate_grid(int jobs) {
    const int ng = g_points(), ns = s_points();
    parallel_for(std::size_t(ng) * std::size_t(ns), jobs,
                 [&](std::size_t k) { grid(int(k / std::size_t(ns)), int(k % std::size_t(ns))); });
  }

  const std::map<std::pair<int, int>, double>& memo() const noexcept { return memo_; }

  csv::Table landscape_csv() const {
    csv::Table t({"g", "s", "J"});
    for (const auto& [key, c] : memo_) t.add_row(std::vector<double>{g_at(key.first), s_at(key.second), c});
    return t;
  }

 private:
  FemModel model_;
  ControlSpec spec_;
  SolverConfig config_;
  double s_max_ = 0.0;
  std::map<std::pair<int, int>, double> memo_;
  mutable std::mutex mutex_;
  mutable int evaluations_ = 0;
};

namespace detail {

/// Golden-section minimization of f on [a, b]; returns the better of the final pair.
inline std::pair<double, double> golden_section(const std::function<double(double)>& f, double a, double b,
                                                double tol) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - r * (b - a), x2 = a + r * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - r * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + r * (b - a);
      f2 = f(x2);
    }
  }
  return f1 <= f2 ? std::pair{x1, f1} : std::pair{x2, f2};
}

}  // namespace detail

/// Exhaustive grid search, then golden-section refinement in g and s around the best
/// grid point.
inline OptimalPair solve_control(J_Evaluator& J) {
  const auto& spec = J.spec();
  J.evaluate_grid(spec.jobs);
  const int ng = J.g_points(), ns = J.s_points();
  int bi = 0, bj = 0;
  double best = J.grid(0, 0);
  for (int i = 0; i < ng; ++i)
    for (int j = 0; j < ns; ++j) {
      const double c = J.grid(i, j);
      if (c < best - spec.tie_rel_tol * std::abs(best)) {
        best = c;
        bi = i;
        bj = j;
      }
    }

  // Alternate one-dimensional refinements within one grid cell of the current point.
  Control q{J.g_at(bi), J.s_at(bj)};
  double qc = best;
  const double hg = ng > 1 ? J.g_at(1) - J.g_at(0) : 0.0;
  const double hs = ns > 1 ? J.s_at(1) - J.s_at(0) : 0.0;
  for (int round = 0; round < spec.refine_rounds; ++round) {
    const double before = qc;
    if (ng > 1) {
      const auto [g, c] = detail::golden_section([&](double x) { return J.evaluate(Control{x, q.s}).first; },
                                                 std::max(spec.g_min(), q.g - hg), std::min(spec.g_max(), q.g + hg),
                                                 spec.refine_tol);
      if (c < qc) q.g = g, qc = c;
    }
    if (ns > 1) {
      const auto [s, c] = detail::golden_section([&](double x) { return J.evaluate(Control{q.g, x}).first; },
                                                 std::max(-J.s_max(), q.s - hs), std::min(J.s_max(), q.s + hs),
                                                 spec.refine_tol);
      if (c < qc) q.s = s, qc = c;
    }
    if (ns == 1 || !(qc < before)) break;
  }
  auto [c, u] = J.evaluate(q);
  return OptimalPair{q, std::move(u), c, J.evaluations()};
}

inline OptimalPair solve_control(const FemModel& model, const ControlSpec& spec, const SolverConfig& config) {
  J_Evaluator J(model, spec, config);
  return solve_control(J);
}

// --- perturbations -------------------------------------------------------------

struct PerturbedControlRow {
  int n = 0;
  double g_star = 0.0;
  double s_star = 0.0;
  double cost = 0.0;
  double state_error = 0.0;  ///< ||u*_n - u*||_V
};

struct PerturbedControlOptions {
  int jobs = 1;
  double state_tol = 1e-3;
};

struct PerturbedControlResult {
  OptimalPair limit;
  std::vector<PerturbedControlRow> rows;
  double grid_spacing = 0.0;
  /// Indices n of the cluster of {g*_n} holding g*_N; clusters split where sorted
  /// values jump by more than twice the grid spacing.
  std::vector<int> tail_cluster;
  double cluster_distance = 0.0;  ///< max |g*_n - g*| over the last quarter of the cluster
  bool control_converged = false; ///< cluster_distance <= grid spacing
  bool state_converged = false;   ///< ||u*_N - u*|| <= state_tol
  std::string note = "convergence is subsequential; the tail cluster stands in for the subsequence";

  csv::Table to_csv() const {
    csv::Table t({"n", "g_star", "s_star", "cost", "state_error"});
    for (const auto& r : rows) t.add_row(std::vector<double>{double(r.n), r.g_star, r.s_star, r.cost, r.state_error});
    return t;
  }
};

inline PerturbedControlResult perturbed_control_experiment(const FemModel& model, const ControlSpec& spec,
                                                           const std::function<Eta(int)>& eta_rule, int N,
                                                           const SolverConfig& config,
                                                           const PerturbedControlOptions& opt = {}) {
  if (N < 1) throw Error(ErrorCode::InvalidArgument, "N must be >= 1");
  PerturbedControlResult out;
  {
    ControlSpec s = spec;
    s.jobs = opt.jobs;
    out.limit = solve_control(model, s, config);
  }
  out.rows.resize(std::size_t(N));
  parallel_for(std::size_t(N), opt.jobs, [&](std::size_t k) {
    const int n = int(k) + 1;
    ControlSpec sn = spec;
    sn.eta = eta_rule(n);
    sn.jobs = 1;
    const OptimalPair q = solve_control(model, sn, config);
    out.rows[k] = PerturbedControlRow{n, q.q_star.g, q.q_star.s, q.cost, model.norm_V(q.u_star - out.limit.u_star)};
  });

  const int ng = spec.g_resolution;
  out.grid_spacing = ng > 1 ? (spec.g_max() - spec.g_min()) / (ng - 1) : 0.0;
  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return out.rows[std::size_t(a)].g_star < out.rows[std::size_t(b)].g_star; });
  std::vector<int> cluster_of(std::size_t(N), 0);
  int cid = 0;
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (out.rows[std::size_t(order[k])].g_star - out.rows[std::size_t(order[k - 1])].g_star > 2.0 * out.grid_spacing)
      ++cid;
    cluster_of[std::size_t(order[k])] = cid;
  }
  const int tail_id = cluster_of[std::size_t(N - 1)];
  for (int i = 0; i < N; ++i)
    if (cluster_of[std::size_t(i)] == tail_id) out.tail_cluster.push_back(i + 1);
  const std::size_t q0 = out.tail_cluster.size() - std::max<std::size_t>(1, out.tail_cluster.size() / 4);
  for (std::size_t k = q0; k < out.tail_cluster.size(); ++k)
    out.cluster_distance = std::max(out.cluster_distance,
                                    std::abs(out.rows[std::size_t(out.tail_cluster[k] - 1)].g_star - out.limit.q_star.g));
  out.control_converged = out.cluster_distance <= std::max(out.grid_spacing, spec.refine_tol);
  out.state_converged = out.rows.back().state_error <= opt.state_tol;
  return out;
}

/// Mosco check of the boxes F(eta_n) = [rho_n, min(g0, rho0)] x [-S, S] against F(eta).
/// Recovery by affine rescaling of the g interval; the s axis does not move.
inline MoscoReport admissible_set_mosco_check(const FemModel& model, const ControlSpec& spec,
                                              const std::function<Eta(int)>& eta_rule, int N, double tol,
                                              int random_probes = 16, unsigned seed = 0) {
  if (N < 1) throw Error(ErrorCode::InvalidArgument, "N must be >= 1");
  const double gmax = spec.g_max(), rho = spec.eta.rho, S = spec.s_max(model);
  if (!(rho <= gmax)) throw Error(ErrorCode::EmptyAdmissibleSet, "F(η) empty: ρ ≤ g ≤ ρ₀ unsatisfiable with g ≤ g₀");
  std::vector<double> rho_n;
  for (int n = 1; n <= N; ++n) {
    rho_n.push_back(eta_rule(n).rho);
    if (!(rho_n.back() <= gmax))
      throw Error(ErrorCode::EmptyAdmissibleSet, "F(eta_n) empty at n = " + std::to_string(n));
  }

  std::vector<Control> probes{{rho, -S}, {rho, S}, {gmax, -S}, {gmax, S}, {0.5 * (rho + gmax), 0.0}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ug(rho, gmax), us(-S, S);
  for (int k = 0; k < random_probes; ++k) probes.push_back({ug(rng), S > 0.0 ? us(rng) : 0.0});

  auto recover = [&](double g, double rn) {
    return gmax > rho ? rn + (g - rho) * (gmax - rn) / (gmax - rho) : rn;
  };
  MoscoReport rep;
  rep.recovery_errors.assign(std::size_t(N), 0.0);
  rep.recovery_bounds.assign(std::size_t(N), 0.0);
  for (const auto& q : probes) {
    std::vector<double> errs;
    for (int i = 0; i < N; ++i) {
      const double rn = rho_n[std::size_t(i)];
      const double gn = recover(q.g, rn);
      if (gn < rn - tol || gn > gmax + tol) ++rep.recovery_violations;
      const double err = std::abs(gn - q.g);
      const double bound = std::abs(rn - rho);
      if (err > bound + tol) ++rep.recovery_violations;
      rep.recovery_errors[std::size_t(i)] = std::max(rep.recovery_errors[std::size_t(i)], err);
      rep.recovery_bounds[std::size_t(i)] = std::max(rep.recovery_bounds[std::size_t(i)], bound);
      errs.push_back(err);
    }
    if (std::abs(richardson_limit(errs)) > tol) ++rep.recovery_violations;
  }
  // Selections pinned to the lower end, the upper end and a fixed interior fraction.
  for (double t : {0.0, 1.0, 0.37}) {
    std::vector<double> sel;
    for (int i = 0; i < N; ++i) sel.push_back(rho_n[std::size_t(i)] + t * (gmax - rho_n[std::size_t(i)]));
    const double lim = richardson_limit(sel);
    const double excess = std::max({0.0, rho - lim, lim - gmax});
    rep.limit_excess.push_back(excess);
    if (excess > tol) ++rep.membership_violations;
  }
  rep.pass = rep.recovery_violations == 0 && rep.membership_violations == 0;
  rep.note = "interval family in g; the s interval is fixed";
  return rep;
}

}  // namespace vhi
