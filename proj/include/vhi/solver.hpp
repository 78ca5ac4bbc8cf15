#pragma once

// Fixed-point solver for discretized variational-hemivariational inequalities
//
//   u in K,  <A u, v - u> + phi(u, v) - phi(u, u) + j0(u; v - u) >= (f, pi v - pi u)  for all v in K.
//
// Each outer step freezes the first argument of phi and a subgradient selection
// xi in dj(u^k); the remaining problem is convex and solved by a projected
// proximal-gradient inner loop. Under alpha + beta < m the outer map is a
// contraction with factor theta = (alpha + beta) / m.

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "vhi/errors.hpp"
#include "vhi/nonsmooth.hpp"

namespace vhi {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Degrees of freedom on which a frozen friction term w * ||D v_dofs|| acts.
/// Rows of `directions` are orthonormal.
struct FrictionBlock {
  std::vector<Eigen::Index> dofs;
  Matrix directions;
};

struct VhiConstants {
  double m = 0.0;      ///< strong monotonicity of A
  double alpha = 0.0;  ///< coupling constant of phi
  double beta = 0.0;   ///< one-sided Lipschitz constant of j0
  double c0 = 0.0;     ///< subgradient growth: |xi| <= c0 + c1 |v|
  double c1 = 0.0;
  double d0 = 1.0;     ///< bound of the operator pi
};

/// Raw problem data; VhiInstance validates and freezes it.
struct VhiData {
  Eigen::Index dim = 0;
  std::function<Vector(const Vector&)> apply_A;
  /// Optional; required by the backtracking inner rule.
  std::function<double(const Vector&)> potential_A;
  std::function<double(const Vector&, const Vector&)> phi;
  /// Per friction block weight w_b(u) so that phi(u, v) = sum_b w_b(u) ||D_b v_b||.
  std::function<Vector(const Vector&)> phi_linearize;
  std::vector<FrictionBlock> friction_blocks;
  std::function<Vector(const Vector&)> j_subgradient;
  std::function<double(const Vector&, const Vector&)> j_dir;
  std::function<Vector(const Vector&)> project_K;
  /// Linear functional v -> (f, pi v).
  std::function<double(const Vector&)> f_pairing;
  VhiConstants constants;
  /// Gram matrix of the norm on X; empty means the Euclidean norm.
  SparseMatrix gram;
};

class VhiInstance {
 public:
  explicit VhiInstance(VhiData data) : d_(std::move(data)) {
    if (d_.dim < 1) throw Error(ErrorCode::InvalidArgument, "instance dimension must be >= 1");
    if (!d_.apply_A || !d_.project_K || !d_.f_pairing)
      throw Error(ErrorCode::InvalidArgument, "apply_A, project_K and f_pairing are required");
    const auto& c = d_.constants;
    if (!(c.m > 0.0) || c.alpha < 0.0 || c.beta < 0.0)
      throw Error(ErrorCode::InvalidArgument, "constants must satisfy m > 0, alpha, beta >= 0");
    if (!(c.alpha + c.beta < c.m))
      throw Error(ErrorCode::NonContractive, "smallness alpha + beta < m violated (alpha=" +
                                                 std::to_string(c.alpha) + ", beta=" + std::to_string(c.beta) +
                                                 ", m=" + std::to_string(c.m) + ")");
    if (d_.gram.size() != 0 && (d_.gram.rows() != d_.dim || d_.gram.cols() != d_.dim))
      throw Error(ErrorCode::DimensionMismatch, "gram matrix size differs from dim");
    if (!d_.phi) d_.phi = [](const Vector&, const Vector&) { return 0.0; };
    if (!d_.j_subgradient) {
      const auto n = d_.dim;
      d_.j_subgradient = [n](const Vector&) { return Vector(Vector::Zero(n)); };
    }
    if (!d_.j_dir) d_.j_dir = [](const Vector&, const Vector&) { return 0.0; };
    if (!d_.friction_blocks.empty() && !d_.phi_linearize)
      throw Error(ErrorCode::InvalidArgument, "friction blocks need phi_linearize");
    for (const auto& b : d_.friction_blocks) {
      if (b.directions.cols() != static_cast<Eigen::Index>(b.dofs.size()))
        throw Error(ErrorCode::DimensionMismatch, "friction block directions/dofs mismatch");
      for (auto i : b.dofs)
        if (i < 0 || i >= d_.dim) throw Error(ErrorCode::DimensionMismatch, "friction dof out of range");
    }

    load_.resize(d_.dim);
    Vector e = Vector::Zero(d_.dim);
    const double f0 = d_.f_pairing(e);
    for (Eigen::Index i = 0; i < d_.dim; ++i) {
      e(i) = 1.0;
      load_(i) = d_.f_pairing(e) - f0;
      e(i) = 0.0;
    }
  }

  Eigen::Index dim() const noexcept { return d_.dim; }
  const VhiConstants& constants() const noexcept { return d_.constants; }
  const VhiData& data() const noexcept { return d_; }

  /// Certified contraction factor (alpha + beta) / m.
  double theta() const noexcept { return (d_.constants.alpha + d_.constants.beta) / d_.constants.m; }

  /// Representer of the load functional in coefficient space.
  const Vector& load() const noexcept { return load_; }

  Vector apply_A(const Vector& u) const { return d_.apply_A(u); }
  double phi(const Vector& u, const Vector& v) const { return d_.phi(u, v); }
  double j_dir(const Vector& u, const Vector& w) const { return d_.j_dir(u, w); }
  Vector j_subgradient(const Vector& u) const { return d_.j_subgradient(u); }
  Vector project_K(const Vector& v) const { return d_.project_K(v); }
  double f_pairing(const Vector& v) const { return d_.f_pairing(v); }

  Vector friction_weights(const Vector& u) const {
    if (d_.friction_blocks.empty()) return Vector();
    Vector w = d_.phi_linearize(u);
    if (w.size() != static_cast<Eigen::Index>(d_.friction_blocks.size()))
      throw Error(ErrorCode::DimensionMismatch, "phi_linearize returned wrong number of weights");
    return w;
  }

  double inner(const Vector& a, const Vector& b) const {
    if (d_.gram.size() == 0) return a.dot(b);
    return a.dot(d_.gram * b);
  }
  double norm(const Vector& v) const { return std::sqrt(std::max(0.0, inner(v, v))); }

 private:
  VhiData d_;
  Vector load_;
};

enum class StepRule { fixed, backtracking };

struct SolverConfig {
  double outer_tol = 1e-10;
  int outer_max_iter = 1000;
  double inner_tol = 1e-11;
  int inner_max_iter = 50000;
  StepRule inner_step_rule = StepRule::backtracking;
  int residual_directions = 32;
  unsigned seed = 0;

  void validate() const {
    if (!(outer_tol > 0.0) || !(inner_tol > 0.0))
      throw Error(ErrorCode::InvalidArgument, "solver tolerances must be > 0");
    if (outer_max_iter < 1 || inner_max_iter < 1 || residual_directions < 1)
      throw Error(ErrorCode::InvalidArgument, "iteration caps and residual directions must be >= 1");
  }
};

struct SolveResult {
  Vector u;
  int outer_iters = 0;
  std::vector<double> increment_history;
  std::vector<double> contraction_estimates;
  double vi_residual = 0.0;
  bool converged = false;
  /// Set when some increment ratio exceeded theta + 0.05; informative only.
  bool preasymptotic_ratio_flag = false;
  int inner_iters_total = 0;
};

/// Convex subproblem with phi(u^k, .) and xi^k frozen.
struct InnerProblem {
  const VhiInstance* instance = nullptr;
  Vector friction_weights;
  Vector xi;
  Vector start;
  StepRule step_rule = StepRule::backtracking;
  /// Upper estimate of the Lipschitz constant of A; <= 0 triggers power iteration.
  double lipschitz = 0.0;
};

struct InnerResult {
  Vector w;
  int iterations = 0;
  double residual = 0.0;
  double lipschitz = 0.0;
  /// Composite energy at each accepted iterate (backtracking rule only).
  std::vector<double> energy;
};

namespace detail {

inline void apply_friction_prox(const std::vector<FrictionBlock>& blocks, const Vector& weights, double step,
                                Vector& x) {
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    const double w = weights(static_cast<Eigen::Index>(b)) * step;
    Vector local(static_cast<Eigen::Index>(blk.dofs.size()));
    for (std::size_t i = 0; i < blk.dofs.size(); ++i) local(static_cast<Eigen::Index>(i)) = x(blk.dofs[i]);
    const Vector t = blk.directions * local;
    const Vector delta = blk.directions.transpose() * (prox_weighted_norm(w, t) - t);
    for (std::size_t i = 0; i < blk.dofs.size(); ++i) x(blk.dofs[i]) += delta(static_cast<Eigen::Index>(i));
  }
}

inline double friction_energy(const std::vector<FrictionBlock>& blocks, const Vector& weights, const Vector& x) {
  double acc = 0.0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    Vector local(static_cast<Eigen::Index>(blk.dofs.size()));
    for (std::size_t i = 0; i < blk.dofs.size(); ++i) local(static_cast<Eigen::Index>(i)) = x(blk.dofs[i]);
    acc += weights(static_cast<Eigen::Index>(b)) * (blk.directions * local).norm();
  }
  return acc;
}

/// Power iteration on d -> A(c + d) - A(c); exact for linear A.
inline double estimate_lipschitz(const VhiInstance& inst, const Vector& center, int iters = 60) {
  const Eigen::Index n = inst.dim();
  Vector d = Vector::Ones(n) / std::sqrt(static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) d(i) += 1e-3 * static_cast<double>(i % 7) / std::sqrt(double(n));
  d.normalize();
  const Vector ac = inst.apply_A(center);
  double lambda = 0.0;
  for (int k = 0; k < iters; ++k) {
    Vector y = inst.apply_A(center + d) - ac;
    const double ny = y.norm();
    if (ny == 0.0) break;
    const double prev = lambda;
    lambda = ny;
    d = y / ny;
    if (std::abs(lambda - prev) <= 1e-10 * lambda) break;
  }
  return std::max(lambda, 1e-12);
}

}  // namespace detail

/// Projected proximal gradient on  v -> Psi(v) - f.v + xi.v + sum_b w_b ||D_b v_b||  over K.
///
/// The prox of (friction + indicator of K) is evaluated as friction shrink followed by
/// projection, which is exact when K does not couple friction directions with other
/// coordinates (nodal contact constraints, or 1D blocks with interval bounds).
inline InnerResult inner_solve(const InnerProblem& p, double tol, int max_iter) {
  if (p.instance == nullptr) throw Error(ErrorCode::InvalidArgument, "inner problem without instance");
  const VhiInstance& inst = *p.instance;
  const auto& blocks = inst.data().friction_blocks;
  for (Eigen::Index i = 0; i < p.friction_weights.size(); ++i)
    if (p.friction_weights(i) < 0.0) throw Error(ErrorCode::InvalidArgument, "negative friction weight");
  if (p.step_rule == StepRule::backtracking && !inst.data().potential_A)
    throw Error(ErrorCode::InvalidArgument, "backtracking rule needs potential_A");

  const Vector& load = inst.load();
  const Vector xi = p.xi.size() == 0 ? Vector(Vector::Zero(inst.dim())) : p.xi;
  const Vector weights = p.friction_weights.size() == 0 ? Vector(Vector::Zero(Eigen::Index(blocks.size())))
                                                        : p.friction_weights;
  Vector x = inst.project_K(p.start.size() == 0 ? Vector(Vector::Zero(inst.dim())) : p.start);

  auto grad = [&](const Vector& v) -> Vector { return inst.apply_A(v) - load + xi; };
  auto smooth = [&](const Vector& v) { return inst.data().potential_A(v) - load.dot(v) + xi.dot(v); };
  auto composite = [&](const Vector& v) { return smooth(v) + detail::friction_energy(blocks, weights, v); };
  auto prox_step = [&](const Vector& y, const Vector& g, double L) -> Vector {
    Vector z = y - g / L;
    detail::apply_friction_prox(blocks, weights, 1.0 / L, z);
    return inst.project_K(z);
  };

  double L = p.lipschitz > 0.0 ? p.lipschitz : 1.01 * detail::estimate_lipschitz(inst, x);
  InnerResult out;

  Vector gx = grad(x);
  auto residual_at = [&](const Vector& v, const Vector& gv) { return (v - prox_step(v, gv, L)).norm(); };
  double res = residual_at(x, gx);
  if (res <= tol) {
    out.w = std::move(x);
    out.residual = res;
    out.lipschitz = L;
    return out;
  }

  Vector y = x;
  double t = 1.0;
  if (p.step_rule == StepRule::fixed) {
    // FISTA with gradient restart; secant check doubles L if the estimate was too small.
    for (int it = 1; it <= max_iter; ++it) {
      const Vector gy = (it == 1) ? gx : grad(y);
      Vector z;
      for (int guard = 0; guard < 60; ++guard) {
        z = prox_step(y, gy, L);
        const Vector dz = z - y;
        const double nd = dz.norm();
        if (nd == 0.0 || (grad(z) - gy).norm() <= L * nd * (1.0 + 1e-12)) break;
        L *= 2.0;
      }
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      if ((y - z).dot(z - x) > 0.0) {
        y = z;
        t = 1.0;
      } else {
        y = z + ((t - 1.0) / t_next) * (z - x);
        t = t_next;
      }
      x = std::move(z);
      gx = grad(x);
      res = residual_at(x, gx);
      out.iterations = it;
      if (res <= tol) break;
    }
  } else {
    // Monotone FISTA with backtracking on the quadratic upper model.
    double Fx = composite(x);
    out.energy.push_back(Fx);
    for (int it = 1; it <= max_iter; ++it) {
      // A step from x itself descends in exact arithmetic; rejecting it would stall.
      const bool plain_step = (y - x).squaredNorm() == 0.0;
      const Vector gy = grad(y);
      const double sy = smooth(y);
      Vector z;
      for (int guard = 0; guard < 60; ++guard) {
        z = prox_step(y, gy, L);
        const Vector dz = z - y;
        const double model = sy + gy.dot(dz) + 0.5 * L * dz.squaredNorm();
        if (smooth(z) <= model + 1e-13 * (1.0 + std::abs(sy))) break;
        L *= 2.0;
      }
      const double Fz = composite(z);
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      // Ties within floating-point resolution count as descent, otherwise the
      // iteration freezes once energy differences drop below roundoff.
      const bool accept =
          plain_step || Fz <= Fx + 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(Fx));
      Vector x_next = accept ? z : x;
      const double F_next = accept ? Fz : Fx;
      y = x_next + (t / t_next) * (z - x_next) + ((t - 1.0) / t_next) * (x_next - x);
      t = t_next;
      if (!accept) {
        // Restart momentum from the kept point.
        y = x_next;
        t = 1.0;
      }
      x = std::move(x_next);
      Fx = F_next;
      out.energy.push_back(Fx);
      gx = grad(x);
      res = residual_at(x, gx);
      out.iterations = it;
      if (res <= tol) break;
    }
  }
  out.w = std::move(x);
  out.residual = res;
  out.lipschitz = L;
  if (res > tol)
    throw Error(ErrorCode::MaxIterations,
                "inner solve stopped at residual " + std::to_string(res) + " > " + std::to_string(tol));
  return out;
}

struct ResidualReport {
  /// Largest sampled violation of the inequality; meaningful only when feasible.
  double value = 0.0;
  bool feasible = true;
  double infeasibility = 0.0;
};

/// Samples v in K along +-basis directions and random directions at several step
/// lengths, and reports max(0, (f, v - u) - LHS(u, v)).
inline ResidualReport check_residual(const VhiInstance& inst, const Vector& u, int n_directions,
                                     unsigned seed = 0) {
  if (n_directions < 1) throw Error(ErrorCode::InvalidArgument, "n_directions must be >= 1");
  if (u.size() != inst.dim()) throw Error(ErrorCode::DimensionMismatch, "residual point has wrong dimension");
  ResidualReport rep;
  const Vector pu = inst.project_K(u);
  rep.infeasibility = (pu - u).norm();
  if (rep.infeasibility > 1e-10 * (1.0 + u.norm())) {
    rep.feasible = false;
    return rep;
  }

  const Vector Au = inst.apply_A(u);
  const double phi_uu = inst.phi(u, u);
  const double scale = 1.0 + inst.norm(u);
  auto violation = [&](const Vector& v) {
    const Vector d = v - u;
    const double lhs = Au.dot(d) + inst.phi(u, v) - phi_uu + inst.j_dir(u, d);
    return inst.load().dot(d) - lhs;
  };

  std::vector<Vector> dirs;
  const Eigen::Index n = inst.dim();
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector e = Vector::Zero(n);
    e(i) = 1.0;
    dirs.push_back(e);
    dirs.push_back(-e);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  for (int k = 0; k < n_directions; ++k) {
    Vector d(n);
    for (Eigen::Index i = 0; i < n; ++i) d(i) = normal(rng);
    dirs.push_back(d);
  }

  double worst = 0.0;
  for (auto& d : dirs) {
    const double nd = inst.norm(d);
    if (nd == 0.0) continue;
    d /= nd;
    for (double t : {1.0, 1e-1, 1e-2, 1e-3}) worst = std::max(worst, violation(inst.project_K(u + t * scale * d)));
  }
  rep.value = worst;
  return rep;
}

/// Geometric-mean increment ratio over the last half of the history.
inline double contraction_factor(const SolveResult& r) {
  const auto& h = r.increment_history;
  const std::size_t n = h.size();
  if (n < 2) throw Error(ErrorCode::InsufficientHistory, "need at least three recorded iterates");
  const std::size_t first = std::min(n / 2, n - 2);
  const std::size_t steps = n - 1 - first;
  if (h[first] == 0.0) return 0.0;
  const double ratio = h[n - 1] / h[first];
  if (ratio == 0.0) return 0.0;
  return std::pow(ratio, 1.0 / static_cast<double>(steps));
}

namespace detail {

inline bool single_point_set(const VhiInstance& inst) {
  const Eigen::Index n = inst.dim();
  const Vector p0 = inst.project_K(Vector::Zero(n));
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> normal(0.0, 10.0);
  for (int k = 0; k < 3; ++k) {
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = normal(rng);
    if ((inst.project_K(x) - p0).norm() > 1e-14 * (1.0 + p0.norm())) return false;
  }
  return true;
}

}  // namespace detail

/// Outer fixed-point iteration. Throws InnerSolveFailed if an inner solve cannot reach
/// config.inner_tol; returns converged = false when the outer cap is hit.
inline SolveResult solve(const VhiInstance& inst, const SolverConfig& config,
                         const std::optional<Vector>& u0 = std::nullopt) {
  config.validate();
  if (!(inst.theta() < 1.0)) throw Error(ErrorCode::NonContractive, "smallness condition violated");
  const Eigen::Index n = inst.dim();
  if (u0 && u0->size() != n) throw Error(ErrorCode::DimensionMismatch, "initial iterate has wrong dimension");

  SolveResult result;
  Vector u = inst.project_K(u0 ? *u0 : Vector(Vector::Zero(n)));

  if (detail::single_point_set(inst)) {
    result.u = u;
    result.converged = true;
    result.vi_residual = check_residual(inst, u, config.residual_directions, config.seed).value;
    return result;
  }

  const double lipschitz = 1.01 * detail::estimate_lipschitz(inst, u);
  const double theta = inst.theta();
  double last_increment = std::numeric_limits<double>::infinity();

  for (int k = 0; k < config.outer_max_iter; ++k) {
    InnerProblem p;
    p.instance = &inst;
    p.friction_weights = inst.friction_weights(u);
    p.xi = inst.j_subgradient(u);
    p.start = u;
    p.step_rule = config.inner_step_rule;
    p.lipschitz = lipschitz;

    // Inner accuracy tracks the outer increment so it never pollutes the ratios.
    const double floor = 1e-15 * (1.0 + u.norm());
    const double tol = std::max(std::min(config.inner_tol, 1e-3 * last_increment), floor);
    InnerResult inner;
    try {
      inner = inner_solve(p, tol, config.inner_max_iter);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MaxIterations) throw;
      // Accept a tightened solve that still meets the user tolerance.
      p.start = u;
      try {
        inner = inner_solve(p, config.inner_tol, config.inner_max_iter);
      } catch (const Error& e2) {
        throw Error(ErrorCode::InnerSolveFailed, e2.what());
      }
    }
    result.inner_iters_total += inner.iterations;

    const double inc = inst.norm(inner.w - u);
    u = std::move(inner.w);
    result.increment_history.push_back(inc);
    ++result.outer_iters;
    if (result.increment_history.size() >= 2) {
      const double prev = result.increment_history[result.increment_history.size() - 2];
      const double ratio = prev > 0.0 ? inc / prev : 0.0;
      result.contraction_estimates.push_back(ratio);
      if (ratio > theta + 0.05) result.preasymptotic_ratio_flag = true;
    }
    last_increment = inc;

    if (inc <= config.outer_tol) {
      const double res = check_residual(inst, u, config.residual_directions, config.seed).value;
      result.vi_residual = res;
      if (res <= 10.0 * config.outer_tol) {
        result.converged = true;
        break;
      }
    }
  }
  result.u = u;
  if (!result.converged)
    result.vi_residual = check_residual(inst, u, config.residual_directions, config.seed).value;
  return result;
}

}  // namespace vhi
