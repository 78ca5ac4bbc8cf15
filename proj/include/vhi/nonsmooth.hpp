#pragma once

// Scalar nonsmooth primitives of the nonconvex normal-compliance law and the
// convex projections / proximal maps used by the inner solver.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <variant>
#include <vector>

#include "vhi/errors.hpp"

namespace vhi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Stiffness coefficient of the normal compliance law. Always >= 0.
class StiffnessParam {
 public:
  constexpr StiffnessParam() = default;
  explicit StiffnessParam(double rho) : rho_(rho) {
    if (!(rho >= 0.0)) throw Error(ErrorCode::InvalidArgument, "stiffness rho must be >= 0");
  }
  constexpr double value() const noexcept { return rho_; }

 private:
  double rho_ = 0.0;
};

/// Piecewise-linear compliance slope:
///   0 for r < 0, r on [0, rho), 2 rho - r on [rho, 2 rho), r - 2 rho beyond.
/// Lipschitz with constant 1, not monotone.
inline double k_rho(double r, double rho) noexcept {
  if (r < 0.0) return 0.0;
  if (rho == 0.0) return r;
  if (r < rho) return r;
  if (r < 2.0 * rho) return 2.0 * rho - r;
  return r - 2.0 * rho;
}

/// Antiderivative of k_rho with j_rho(0) = 0. C^1, piecewise quadratic, nonconvex for rho > 0.
inline double j_rho(double r, double rho) noexcept {
  if (r < 0.0) return 0.0;
  if (rho == 0.0) return 0.5 * r * r;
  if (r < rho) return 0.5 * r * r;
  if (r < 2.0 * rho) return 0.5 * rho * rho + 2.0 * rho * (r - rho) - 0.5 * (r * r - rho * rho);
  const double t = r - 2.0 * rho;
  return rho * rho + 0.5 * t * t;
}

/// Generalized directional derivative of j_rho at r in direction s. j_rho is regular
/// and C^1, so this is just k_rho(r) * s.
inline double j_rho_dir(double r, double s, double rho) noexcept { return k_rho(r, rho) * s; }

inline double k_rho(double r, StiffnessParam rho) noexcept { return k_rho(r, rho.value()); }
inline double j_rho(double r, StiffnessParam rho) noexcept { return j_rho(r, rho.value()); }
inline double j_rho_dir(double r, double s, StiffnessParam rho) noexcept {
  return j_rho_dir(r, s, rho.value());
}

// --- convex sets ----------------------------------------------------------

namespace sets {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Closed Euclidean ball centred at the origin.
struct Ball {
  Eigen::Index dim = 1;
  double radius = 0.0;
};

struct Box {
  Vector lo;
  Vector hi;
};

/// { x : normals.row(i) . x <= offsets(i) for all i }.
struct HalfSpaces {
  Matrix normals;
  Vector offsets;
};

/// Escape hatch for sets outside the built-in kinds.
struct Custom {
  Eigen::Index dim = 1;
  std::function<Vector(const Vector&)> projection;
};

}  // namespace sets

/// Nonempty closed convex subset of R^n, identified by its kind.
class ConvexSet {
 public:
  using Kind = std::variant<sets::Interval, sets::Ball, sets::Box, sets::HalfSpaces, sets::Custom>;

  static ConvexSet interval(double lo, double hi) {
    if (!(lo <= hi)) throw Error(ErrorCode::InvalidArgument, "interval requires lo <= hi");
    return ConvexSet(sets::Interval{lo, hi});
  }
  static ConvexSet ball(Eigen::Index dim, double radius) {
    if (dim < 1 || !(radius >= 0.0))
      throw Error(ErrorCode::InvalidArgument, "ball requires dim >= 1 and radius >= 0");
    return ConvexSet(sets::Ball{dim, radius});
  }
  static ConvexSet box(Vector lo, Vector hi) {
    if (lo.size() != hi.size() || lo.size() == 0)
      throw Error(ErrorCode::DimensionMismatch, "box bounds must have equal nonzero size");
    if (((hi - lo).array() < 0.0).any())
      throw Error(ErrorCode::InvalidArgument, "box requires lo <= hi componentwise");
    return ConvexSet(sets::Box{std::move(lo), std::move(hi)});
  }
  /// Nonemptiness of a half-space intersection is the caller's responsibility.
  static ConvexSet half_spaces(Matrix normals, Vector offsets) {
    if (normals.rows() != offsets.size() || normals.rows() == 0 || normals.cols() == 0)
      throw Error(ErrorCode::DimensionMismatch, "half-space normals/offsets mismatch");
    for (Eigen::Index i = 0; i < normals.rows(); ++i)
      if (normals.row(i).norm() == 0.0)
        throw Error(ErrorCode::InvalidArgument, "half-space normal must be nonzero");
    return ConvexSet(sets::HalfSpaces{std::move(normals), std::move(offsets)});
  }
  static ConvexSet custom(Eigen::Index dim, std::function<Vector(const Vector&)> projection) {
    if (!projection) throw Error(ErrorCode::InvalidArgument, "custom set needs a projection");
    return ConvexSet(sets::Custom{dim, std::move(projection)});
  }

  Eigen::Index dim() const {
    return std::visit(
        [](const auto& s) -> Eigen::Index {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, sets::Interval>) return 1;
          else if constexpr (std::is_same_v<T, sets::Ball>) return s.dim;
          else if constexpr (std::is_same_v<T, sets::Box>) return s.lo.size();
          else if constexpr (std::is_same_v<T, sets::HalfSpaces>) return s.normals.cols();
          else return s.dim;
        },
        kind_);
  }

  const Kind& kind() const noexcept { return kind_; }

 private:
  explicit ConvexSet(Kind k) : kind_(std::move(k)) {}
  Kind kind_;
};

namespace detail {

// Dykstra's alternating projections onto an intersection of half-spaces.
inline Vector project_half_spaces(const sets::HalfSpaces& h, const Vector& x) {
  const Eigen::Index m = h.normals.rows();
  auto project_one = [&](Eigen::Index i, const Vector& y) -> Vector {
    const double viol = h.normals.row(i).dot(y) - h.offsets(i);
    if (viol <= 0.0) return y;
    return y - (viol / h.normals.row(i).squaredNorm()) * h.normals.row(i).transpose();
  };
  if (m == 1) return project_one(0, x);

  Vector y = x;
  std::vector<Vector> corrections(static_cast<std::size_t>(m), Vector::Zero(x.size()));
  for (int sweep = 0; sweep < 100000; ++sweep) {
    const Vector prev = y;
    for (Eigen::Index i = 0; i < m; ++i) {
      Vector& c = corrections[static_cast<std::size_t>(i)];
      const Vector z = project_one(i, y + c);
      c = y + c - z;
      y = z;
    }
    if ((y - prev).norm() <= 1e-15 * (1.0 + y.norm())) break;
  }
  return y;
}

}  // namespace detail

/// Euclidean projection onto a convex set.
inline Vector project(const ConvexSet& set, const Vector& x) {
  if (x.size() != set.dim())
    throw Error(ErrorCode::DimensionMismatch, "projection argument has wrong dimension");
  return std::visit(
      [&](const auto& s) -> Vector {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, sets::Interval>) {
          Vector y(1);
          y(0) = std::clamp(x(0), s.lo, s.hi);
          return y;
        } else if constexpr (std::is_same_v<T, sets::Ball>) {
          const double n = x.norm();
          if (n <= s.radius) return x;
          return (s.radius / n) * x;
        } else if constexpr (std::is_same_v<T, sets::Box>) {
          return x.cwiseMax(s.lo).cwiseMin(s.hi);
        } else if constexpr (std::is_same_v<T, sets::HalfSpaces>) {
          return detail::project_half_spaces(s, x);
        } else {
          return s.projection(x);
        }
      },
      set.kind());
}

/// Distance from x to the set.
inline double distance(const ConvexSet& set, const Vector& x) { return (x - project(set, x)).norm(); }

/// argmin_y w ||y|| + 1/2 ||y - x||^2, i.e. block soft thresholding.
inline Vector prox_weighted_norm(double w, const Vector& x) {
  if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "prox weight must be >= 0");
  const double n = x.norm();
  if (n <= w || n == 0.0) return Vector::Zero(x.size());
  return (1.0 - w / n) * x;
}

}  // namespace vhi
