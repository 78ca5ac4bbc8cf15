#pragma once

// P1 finite elements on rods (d = 1) and triangulated plane-strain bodies (d = 2).
//
// Strains are stored as vectors (e11) or (e11, e22, sqrt(2) e12), so the Euclidean
// norm of a strain vector equals the Frobenius norm of the tensor. The space V is
// normed by (u, v)_V = int eps(u) . eps(v) dx, represented by the Gram matrix.

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vhi/errors.hpp"
#include "vhi/nonsmooth.hpp"

namespace vhi {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Raw mesh description. Faces are node lists: one node in 1D, an edge in 2D.
struct MeshInput {
  int dimension = 1;
  Matrix nodes;                               ///< n_nodes x dimension
  std::vector<std::vector<int>> elements;     ///< 2 nodes (1D) or 3 nodes (2D)
  std::vector<int> clamped;                   ///< Dirichlet nodes (Gamma_1)
  std::vector<std::vector<int>> traction;     ///< Gamma_2 faces
  std::vector<std::vector<int>> contact;      ///< Gamma_3 faces
};

/// Unit rod [0, 1] with n elements, clamped at x = 0, contact at x = 1.
inline MeshInput rod_mesh(int n) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "rod needs at least one element");
  MeshInput m;
  m.dimension = 1;
  m.nodes.resize(n + 1, 1);
  for (int i = 0; i <= n; ++i) m.nodes(i, 0) = static_cast<double>(i) / n;
  for (int i = 0; i < n; ++i) m.elements.push_back({i, i + 1});
  m.clamped = {0};
  m.contact = {{n}};
  return m;
}

/// Unit square split into n x n quads, each cut into two triangles. Gamma_1 is the
/// left edge, Gamma_3 the bottom edge, Gamma_2 the top and right edges.
inline MeshInput square_mesh(int n) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "square needs at least one cell per side");
  MeshInput m;
  m.dimension = 2;
  const int side = n + 1;
  auto id = [side](int i, int j) { return j * side + i; };
  m.nodes.resize(side * side, 2);
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) {
      m.nodes(id(i, j), 0) = static_cast<double>(i) / n;
      m.nodes(id(i, j), 1) = static_cast<double>(j) / n;
    }
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      m.elements.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      m.elements.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  for (int j = 0; j <= n; ++j) m.clamped.push_back(id(0, j));
  for (int i = 0; i < n; ++i) {
    m.contact.push_back({id(i, 0), id(i + 1, 0)});
    m.traction.push_back({id(i, n), id(i + 1, n)});
  }
  for (int j = 0; j < n; ++j) m.traction.push_back({id(n, j), id(n, j + 1)});
  return m;
}

/// Isotropic Hooke law F eps = 2 mu eps + lambda tr(eps) I. In 1D, F eps = (lambda + 2 mu) eps.
struct ElasticLaw {
  double lambda = 0.0;
  double mu = 1.0;

  /// Strong monotonicity constant m_F of F on symmetric tensors.
  double monotonicity(int dim) const { return dim == 1 ? lambda + 2.0 * mu : std::min(2.0 * mu, 2.0 * mu + 2.0 * lambda); }
  /// Lipschitz constant L_F of F.
  double lipschitz(int dim) const { return dim == 1 ? lambda + 2.0 * mu : std::max(2.0 * mu, 2.0 * mu + 2.0 * lambda); }
};

struct ContactNode {
  int node = 0;
  double weight = 0.0;                  ///< lumped quadrature weight on Gamma_3
  Eigen::Vector2d normal{0.0, 0.0};     ///< outward unit normal (first dim entries used)
  Eigen::Vector2d tangent{0.0, 0.0};    ///< 2D only
  std::array<Eigen::Index, 2> dofs{-1, -1};
};

namespace detail {

struct Element {
  std::vector<int> nodes;
  double measure = 0.0;
  Matrix strain;                        ///< strain_dim x local dofs
  std::vector<Eigen::Index> dofs;       ///< free dof per local dof, -1 if clamped
};

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration.
inline double power_iteration_dense(const Matrix& S, double tol = 1e-15, int max_iter = 1000000) {
  if (S.rows() == 0) return 0.0;
  Vector x = Vector::Ones(S.rows());
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += 1e-2 * static_cast<double>(i % 5);
  x.normalize();
  double lambda = 0.0;
  for (int k = 0; k < max_iter; ++k) {
    Vector y = S * x;
    const double ny = y.norm();
    if (ny == 0.0) return 0.0;
    const double rq = x.dot(y);
    x = y / ny;
    if (std::abs(rq - lambda) <= tol * std::abs(rq)) return std::max(rq, x.dot(S * x));
    lambda = rq;
  }
  return std::max(lambda, x.dot(S * x));
}

struct ModelData {
  int dim = 1;
  int strain_dim = 1;
  Matrix nodes;
  std::vector<Element> elements;
  std::vector<std::array<Eigen::Index, 2>> node_dofs;
  Eigen::Index n_dofs = 0;
  std::vector<int> clamped;
  std::vector<ContactNode> contact;     ///< free Gamma_3 nodes only
  std::vector<double> contact_weight_all;  ///< per node weight on Gamma_3 (clamped included)
  double meas_contact = 0.0;
  double meas_clamped = 0.0;
  ElasticLaw law;
  ConvexSet B = ConvexSet::ball(1, 0.0);
  SparseMatrix stiffness, gram, mass, mass_full;
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> gram_ldlt;
  double gamma = 0.0;
  double mass_ratio = 0.0;              ///< lambda_max(M, G)
};

}  // namespace detail

/// Assembled P1 model: stiffness, Gram and mass matrices, boundary traces, and the
/// discrete constants. Copies share the immutable data.
class FemModel {
 public:
  explicit FemModel(std::shared_ptr<const detail::ModelData> d) : d_(std::move(d)) {}

  int dimension() const noexcept { return d_->dim; }
  int strain_dim() const noexcept { return d_->strain_dim; }
  Eigen::Index n_nodes() const noexcept { return d_->nodes.rows(); }
  Eigen::Index n_dofs() const noexcept { return d_->n_dofs; }
  Eigen::Index n_elements() const noexcept { return static_cast<Eigen::Index>(d_->elements.size()); }
  const Matrix& nodes() const noexcept { return d_->nodes; }
  const ElasticLaw& law() const noexcept { return d_->law; }
  const ConvexSet& B() const noexcept { return d_->B; }
  const std::vector<ContactNode>& contact_nodes() const noexcept { return d_->contact; }
  const std::vector<int>& clamped_nodes() const noexcept { return d_->clamped; }
  double meas_contact() const noexcept { return d_->meas_contact; }
  double meas_clamped() const noexcept { return d_->meas_clamped; }

  /// Free dof index of (node, component), or -1 on Gamma_1.
  Eigen::Index dof(int node, int component) const { return d_->node_dofs[std::size_t(node)][std::size_t(component)]; }

  const SparseMatrix& stiffness() const noexcept { return d_->stiffness; }
  const SparseMatrix& gram() const noexcept { return d_->gram; }
  const SparseMatrix& mass() const noexcept { return d_->mass; }
  /// Consistent mass over all nodes, used for L2 norms of nodal fields.
  const SparseMatrix& mass_full() const noexcept { return d_->mass_full; }

  double m_F() const { return d_->law.monotonicity(d_->dim); }
  double L_F() const { return d_->law.lipschitz(d_->dim); }
  /// Norm of the trace map V -> L2(Gamma_3)^d.
  double gamma() const noexcept { return d_->gamma; }
  /// Bound of v -> (v, gamma v) from V into L2(Omega)^d x L2(Gamma_3)^d.
  double d0() const noexcept { return std::sqrt(d_->mass_ratio + d_->gamma * d_->gamma); }

  /// Per-element strain vectors as columns.
  Matrix strains(const Vector& u) const {
    Matrix out(d_->strain_dim, n_elements());
    for (std::size_t e = 0; e < d_->elements.size(); ++e) {
      const auto& el = d_->elements[e];
      Vector local(static_cast<Eigen::Index>(el.dofs.size()));
      for (std::size_t k = 0; k < el.dofs.size(); ++k) local(Eigen::Index(k)) = el.dofs[k] >= 0 ? u(el.dofs[k]) : 0.0;
      out.col(Eigen::Index(e)) = el.strain * local;
    }
    return out;
  }

  /// sum_e |e| B_e^T s_e for per-element strain-like columns s.
  Vector strain_transpose(const Matrix& s) const {
    Vector out = Vector::Zero(d_->n_dofs);
    for (std::size_t e = 0; e < d_->elements.size(); ++e) {
      const auto& el = d_->elements[e];
      const Vector local = el.measure * (el.strain.transpose() * s.col(Eigen::Index(e)));
      for (std::size_t k = 0; k < el.dofs.size(); ++k)
        if (el.dofs[k] >= 0) out(el.dofs[k]) += local(Eigen::Index(k));
    }
    return out;
  }

  double element_measure(Eigen::Index e) const { return d_->elements[std::size_t(e)].measure; }

  double norm_V(const Vector& v) const { return std::sqrt(std::max(0.0, v.dot(d_->gram * v))); }
  /// Dual norm on V*, computed with the Gram matrix factorization.
  double norm_dual(const Vector& r) const {
    const Vector z = d_->gram_ldlt->solve(r);
    return std::sqrt(std::max(0.0, r.dot(z)));
  }

  /// Normal displacement at each free contact node.
  Vector normal_displacement(const Vector& u) const {
    Vector out(static_cast<Eigen::Index>(d_->contact.size()));
    for (std::size_t i = 0; i < d_->contact.size(); ++i) out(Eigen::Index(i)) = node_dot(u, d_->contact[i], d_->contact[i].normal);
    return out;
  }
  /// Tangential displacement at each free contact node (zero in 1D).
  Vector tangential_displacement(const Vector& u) const {
    Vector out = Vector::Zero(static_cast<Eigen::Index>(d_->contact.size()));
    if (d_->dim == 1) return out;
    for (std::size_t i = 0; i < d_->contact.size(); ++i) out(Eigen::Index(i)) = node_dot(u, d_->contact[i], d_->contact[i].tangent);
    return out;
  }

  /// ||gamma v||^2 with nodal quadrature on Gamma_3.
  double trace_norm_sq(const Vector& v) const {
    double acc = 0.0;
    for (const auto& c : d_->contact)
      for (int k = 0; k < d_->dim; ++k) acc += c.weight * v(c.dofs[std::size_t(k)]) * v(c.dofs[std::size_t(k)]);
    return acc;
  }

  /// Restriction of a nodal field (n_nodes x d) to free dofs.
  Vector restrict_field(const Matrix& field) const {
    Vector out = Vector::Zero(d_->n_dofs);
    for (Eigen::Index n = 0; n < n_nodes(); ++n)
      for (int k = 0; k < d_->dim; ++k)
        if (dof(int(n), k) >= 0) out(dof(int(n), k)) = field(n, k);
    return out;
  }
  /// Nodal field (n_nodes x d) of a free-dof vector, zero on Gamma_1.
  Matrix expand(const Vector& u) const {
    Matrix out = Matrix::Zero(n_nodes(), d_->dim);
    for (Eigen::Index n = 0; n < n_nodes(); ++n)
      for (int k = 0; k < d_->dim; ++k)
        if (dof(int(n), k) >= 0) out(n, k) = u(dof(int(n), k));
    return out;
  }

  /// Representer of v -> int f0 . v dx + int_{Gamma_3} f2 . v da on free dofs.
  Vector load_vector(const Matrix& f0, const Matrix& f2) const {
    Vector out = Vector::Zero(d_->n_dofs);
    if (f0.size() != 0) {
      check_field(f0);
      for (int k = 0; k < d_->dim; ++k) {
        const Vector mk = d_->mass_full * Vector(f0.col(k));
        for (Eigen::Index n = 0; n < n_nodes(); ++n)
          if (dof(int(n), k) >= 0) out(dof(int(n), k)) += mk(n);
      }
    }
    if (f2.size() != 0) {
      check_field(f2);
      for (const auto& c : d_->contact)
        for (int k = 0; k < d_->dim; ++k) out(c.dofs[std::size_t(k)]) += c.weight * f2(c.node, k);
    }
    return out;
  }

  /// ||f||_{L2(Omega)^d} with the consistent mass matrix.
  double l2_norm_domain(const Matrix& f) const {
    if (f.size() == 0) return 0.0;
    check_field(f);
    double acc = 0.0;
    for (int k = 0; k < d_->dim; ++k) acc += f.col(k).dot(d_->mass_full * Vector(f.col(k)));
    return std::sqrt(std::max(0.0, acc));
  }
  /// ||f||_{L2(Gamma_3)^d} with nodal quadrature (clamped contact nodes included).
  double l2_norm_contact(const Matrix& f) const {
    if (f.size() == 0) return 0.0;
    check_field(f);
    double acc = 0.0;
    for (Eigen::Index n = 0; n < n_nodes(); ++n) acc += d_->contact_weight_all[std::size_t(n)] * f.row(n).squaredNorm();
    return std::sqrt(acc);
  }

  const detail::ModelData& data() const noexcept { return *d_; }

 private:
  double node_dot(const Vector& u, const ContactNode& c, const Eigen::Vector2d& dir) const {
    double s = 0.0;
    for (int k = 0; k < d_->dim; ++k) s += dir(k) * u(c.dofs[std::size_t(k)]);
    return s;
  }
  void check_field(const Matrix& f) const {
    if (f.rows() != n_nodes() || f.cols() != d_->dim)
      throw Error(ErrorCode::DimensionMismatch, "nodal field must be n_nodes x dimension");
  }

  std::shared_ptr<const detail::ModelData> d_;
};

namespace detail {

inline void check_nodes(const MeshInput& m, const std::vector<int>& ids, const char* what) {
  for (int i : ids)
    if (i < 0 || i >= m.nodes.rows())
      throw Error(ErrorCode::NonconformingMesh, std::string(what) + " references node " + std::to_string(i) +
                                                    " outside [0, " + std::to_string(m.nodes.rows()) + ")");
}

/// Largest eigenvalue of (M, G) on the full dof space by power iteration on G^{-1} M.
inline double generalized_max(const SparseMatrix& M, const Eigen::SimplicialLDLT<SparseMatrix>& G_ldlt,
                              const SparseMatrix& G) {
  const Eigen::Index n = M.rows();
  Vector x = Vector::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) += 1e-2 * static_cast<double>(i % 5);
  double lambda = 0.0;
  for (int k = 0; k < 100000; ++k) {
    Vector y = G_ldlt.solve(Vector(M * x));
    const double gy = std::sqrt(y.dot(G * y));
    if (gy == 0.0) return 0.0;
    x = y / gy;
    const double rq = x.dot(M * x);
    if (std::abs(rq - lambda) <= 1e-15 * rq) return rq;
    lambda = rq;
  }
  return lambda;
}

}  // namespace detail

/// Assemble a P1 model. Throws EmptyClampedBoundary when Gamma_1 has zero measure and
/// NonconformingMesh for bad indices, degenerate elements, or boundary tags off the boundary.
inline FemModel build_model(const MeshInput& m, const ElasticLaw& law, const ConvexSet& B) {
  auto d = std::make_shared<detail::ModelData>();
  if (m.dimension != 1 && m.dimension != 2) throw Error(ErrorCode::InvalidArgument, "dimension must be 1 or 2");
  const int dim = m.dimension;
  d->dim = dim;
  d->strain_dim = dim == 1 ? 1 : 3;
  if (m.nodes.cols() != dim || m.nodes.rows() < dim + 1)
    throw Error(ErrorCode::NonconformingMesh, "node array must be n_nodes x dimension with enough nodes");
  if (!(law.monotonicity(dim) > 0.0)) throw Error(ErrorCode::InvalidArgument, "elastic law is not strongly monotone");
  if (B.dim() != d->strain_dim) throw Error(ErrorCode::DimensionMismatch, "set B must live in strain space");
  if (project(B, Vector::Zero(d->strain_dim)).norm() > 1e-14) throw Error(ErrorCode::InvalidArgument, "set B must contain 0");
  d->nodes = m.nodes;
  d->law = law;
  d->B = B;
  const Eigen::Index n_nodes = m.nodes.rows();
  const std::size_t nv = static_cast<std::size_t>(dim + 1);

  // Element validity and face incidence.
  std::map<std::vector<int>, std::vector<int>> face_owner;  // sorted face -> owning element's opposite node
  std::vector<int> used(static_cast<std::size_t>(n_nodes), 0);
  for (const auto& el : m.elements) {
    if (el.size() != nv) throw Error(ErrorCode::NonconformingMesh, "element has wrong number of nodes");
    detail::check_nodes(m, el, "element");
    if (std::set<int>(el.begin(), el.end()).size() != nv) throw Error(ErrorCode::NonconformingMesh, "element repeats a node");
    for (std::size_t a = 0; a < nv; ++a) {
      std::vector<int> face;
      for (std::size_t b = 0; b < nv; ++b)
        if (b != a) face.push_back(el[b]);
      std::sort(face.begin(), face.end());
      face_owner[face].push_back(el[a]);
      ++used[std::size_t(el[a])];
    }
  }
  if (m.elements.empty()) throw Error(ErrorCode::NonconformingMesh, "mesh has no elements");
  for (Eigen::Index i = 0; i < n_nodes; ++i)
    if (!used[std::size_t(i)]) throw Error(ErrorCode::NonconformingMesh, "node " + std::to_string(i) + " is in no element");
  for (const auto& [face, owners] : face_owner)
    if (owners.size() > 2) throw Error(ErrorCode::NonconformingMesh, "face shared by more than two elements");
  // Hanging nodes: a node strictly inside a boundary edge.
  if (dim == 2) {
    for (const auto& [face, owners] : face_owner) {
      if (owners.size() != 1) continue;
      const Eigen::Vector2d a = m.nodes.row(face[0]).transpose(), b = m.nodes.row(face[1]).transpose();
      const double len2 = (b - a).squaredNorm();
      for (Eigen::Index i = 0; i < n_nodes; ++i) {
        if (i == face[0] || i == face[1]) continue;
        const Eigen::Vector2d p = m.nodes.row(i).transpose();
        const double t = (p - a).dot(b - a) / len2;
        const double cross = (b - a).x() * (p - a).y() - (b - a).y() * (p - a).x();
        if (t > 1e-12 && t < 1 - 1e-12 && std::abs(cross) <= 1e-12 * len2)
          throw Error(ErrorCode::NonconformingMesh, "hanging node " + std::to_string(i) + " on a boundary edge");
      }
    }
  }

  auto boundary_face = [&](std::vector<int> face, const char* what) -> std::pair<double, Eigen::Vector2d> {
    if (face.size() != static_cast<std::size_t>(dim))
      throw Error(ErrorCode::NonconformingMesh, std::string(what) + " face has wrong number of nodes");
    detail::check_nodes(m, face, what);
    std::vector<int> key = face;
    std::sort(key.begin(), key.end());
    auto it = face_owner.find(key);
    if (it == face_owner.end() || it->second.size() != 1)
      throw Error(ErrorCode::NonconformingMesh, std::string(what) + " face is not on the boundary");
    const int opposite = it->second.front();
    Eigen::Vector2d n(0.0, 0.0);
    if (dim == 1) {
      n(0) = m.nodes(face[0], 0) > m.nodes(opposite, 0) ? 1.0 : -1.0;
      return {1.0, n};
    }
    const Eigen::Vector2d a = m.nodes.row(face[0]).transpose(), b = m.nodes.row(face[1]).transpose();
    const Eigen::Vector2d c = m.nodes.row(opposite).transpose();
    n = Eigen::Vector2d((b - a).y(), -(b - a).x());
    if (n.dot(c - a) > 0.0) n = -n;
    const double len = n.norm();
    return {len, n / len};
  };

  // Gamma_1.
  detail::check_nodes(m, m.clamped, "clamped");
  std::vector<char> clamped(static_cast<std::size_t>(n_nodes), 0);
  for (int i : m.clamped) clamped[std::size_t(i)] = 1;
  d->clamped.assign(m.clamped.begin(), m.clamped.end());
  std::sort(d->clamped.begin(), d->clamped.end());
  d->clamped.erase(std::unique(d->clamped.begin(), d->clamped.end()), d->clamped.end());
  if (dim == 1) {
    d->meas_clamped = static_cast<double>(d->clamped.size());
  } else {
    for (const auto& [face, owners] : face_owner)
      if (owners.size() == 1 && clamped[std::size_t(face[0])] && clamped[std::size_t(face[1])])
        d->meas_clamped += (m.nodes.row(face[0]) - m.nodes.row(face[1])).norm();
  }
  if (!(d->meas_clamped > 0.0)) throw Error(ErrorCode::EmptyClampedBoundary, "clamped boundary has zero measure");

  for (const auto& f : m.traction) boundary_face(f, "traction");

  // Dof numbering: node-major, components contiguous.
  d->node_dofs.assign(static_cast<std::size_t>(n_nodes), {-1, -1});
  Eigen::Index next = 0;
  for (Eigen::Index i = 0; i < n_nodes; ++i)
    if (!clamped[std::size_t(i)])
      for (int k = 0; k < dim; ++k) d->node_dofs[std::size_t(i)][std::size_t(k)] = next++;
  d->n_dofs = next;
  if (next == 0) throw Error(ErrorCode::InvalidArgument, "every node is clamped");

  // Gamma_3 nodal weights and normals.
  d->contact_weight_all.assign(static_cast<std::size_t>(n_nodes), 0.0);
  std::vector<Eigen::Vector2d> normal_acc(static_cast<std::size_t>(n_nodes), Eigen::Vector2d::Zero());
  for (const auto& f : m.contact) {
    const auto [len, n] = boundary_face(f, "contact");
    d->meas_contact += len;
    for (int node : f) {
      d->contact_weight_all[std::size_t(node)] += len / static_cast<double>(f.size());
      normal_acc[std::size_t(node)] += len * n;
    }
  }
  for (Eigen::Index i = 0; i < n_nodes; ++i) {
    const double w = d->contact_weight_all[std::size_t(i)];
    if (w <= 0.0 || clamped[std::size_t(i)]) continue;
    ContactNode c;
    c.node = static_cast<int>(i);
    c.weight = w;
    c.normal = normal_acc[std::size_t(i)].normalized();
    if (dim == 2) c.tangent = Eigen::Vector2d(-c.normal.y(), c.normal.x());
    for (int k = 0; k < dim; ++k) c.dofs[std::size_t(k)] = d->node_dofs[std::size_t(i)][std::size_t(k)];
    d->contact.push_back(c);
  }

  // Element matrices.
  const std::size_t nloc = nv * static_cast<std::size_t>(dim);
  Matrix D(d->strain_dim, d->strain_dim);
  if (dim == 1) {
    D(0, 0) = law.lambda + 2.0 * law.mu;
  } else {
    D.setZero();
    D.diagonal().setConstant(2.0 * law.mu);
    D.topLeftCorner(2, 2).array() += law.lambda;
  }
  std::vector<Eigen::Triplet<double>> tk, tg, tm, tmf;
  for (const auto& el_nodes : m.elements) {
    detail::Element el;
    el.nodes = el_nodes;
    el.strain = Matrix::Zero(d->strain_dim, Eigen::Index(nloc));
    Matrix local_mass(nv, nv);
    if (dim == 1) {
      const double dx = m.nodes(el_nodes[1], 0) - m.nodes(el_nodes[0], 0);
      if (!(std::abs(dx) > 0.0)) throw Error(ErrorCode::NonconformingMesh, "degenerate element");
      el.measure = std::abs(dx);
      el.strain(0, 0) = -1.0 / dx;
      el.strain(0, 1) = 1.0 / dx;
      local_mass << 2, 1, 1, 2;
      local_mass *= el.measure / 6.0;
    } else {
      Eigen::Matrix3d P;
      for (int a = 0; a < 3; ++a) P.row(a) << 1.0, m.nodes(el_nodes[std::size_t(a)], 0), m.nodes(el_nodes[std::size_t(a)], 1);
      const double det = P.determinant();
      if (!(std::abs(det) > 1e-14)) throw Error(ErrorCode::NonconformingMesh, "degenerate element");
      el.measure = 0.5 * std::abs(det);
      const Eigen::Matrix3d C = P.inverse();  // column a: coefficients of basis function a
      for (int a = 0; a < 3; ++a) {
        const double bx = C(1, a), by = C(2, a);
        el.strain(0, 2 * a) = bx;
        el.strain(1, 2 * a + 1) = by;
        el.strain(2, 2 * a) = by / std::sqrt(2.0);
        el.strain(2, 2 * a + 1) = bx / std::sqrt(2.0);
      }
      local_mass << 2, 1, 1, 1, 2, 1, 1, 1, 2;
      local_mass *= el.measure / 12.0;
    }
    for (std::size_t a = 0; a < nv; ++a)
      for (int k = 0; k < dim; ++k) el.dofs.push_back(d->node_dofs[std::size_t(el_nodes[a])][std::size_t(k)]);
    const Matrix ke = el.measure * el.strain.transpose() * D * el.strain;
    const Matrix ge = el.measure * el.strain.transpose() * el.strain;
    for (std::size_t i = 0; i < nloc; ++i)
      for (std::size_t j = 0; j < nloc; ++j) {
        const auto di = el.dofs[i], dj = el.dofs[j];
        if (di < 0 || dj < 0) continue;
        tk.emplace_back(di, dj, ke(Eigen::Index(i), Eigen::Index(j)));
        tg.emplace_back(di, dj, ge(Eigen::Index(i), Eigen::Index(j)));
      }
    for (std::size_t a = 0; a < nv; ++a)
      for (std::size_t b = 0; b < nv; ++b) {
        const double v = local_mass(Eigen::Index(a), Eigen::Index(b));
        tmf.emplace_back(el_nodes[a], el_nodes[b], v);
        for (int k = 0; k < dim; ++k) {
          const auto di = d->node_dofs[std::size_t(el_nodes[a])][std::size_t(k)];
          const auto dj = d->node_dofs[std::size_t(el_nodes[b])][std::size_t(k)];
          if (di >= 0 && dj >= 0) tm.emplace_back(di, dj, v);
        }
      }
    d->elements.push_back(std::move(el));
  }
  const Eigen::Index n = d->n_dofs;
  d->stiffness.resize(n, n);
  d->stiffness.setFromTriplets(tk.begin(), tk.end());
  d->gram.resize(n, n);
  d->gram.setFromTriplets(tg.begin(), tg.end());
  d->mass.resize(n, n);
  d->mass.setFromTriplets(tm.begin(), tm.end());
  d->mass_full.resize(n_nodes, n_nodes);
  d->mass_full.setFromTriplets(tmf.begin(), tmf.end());

  d->gram_ldlt = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(d->gram);
  if (d->gram_ldlt->info() != Eigen::Success || (d->gram_ldlt->vectorD().array() <= 0.0).any())
    throw Error(ErrorCode::EmptyClampedBoundary, "clamped boundary does not remove rigid motions");

  // Trace norm: the nonzero spectrum of (M_Gamma, G) equals that of
  // W^{1/2} T G^{-1} T^T W^{1/2}, with T selecting contact dofs.
  const Eigen::Index t = static_cast<Eigen::Index>(d->contact.size()) * dim;
  Matrix S(t, t);
  std::vector<Eigen::Index> tdofs;
  std::vector<double> sw;
  for (const auto& c : d->contact)
    for (int k = 0; k < dim; ++k) {
      tdofs.push_back(c.dofs[std::size_t(k)]);
      sw.push_back(std::sqrt(c.weight));
    }
  for (Eigen::Index j = 0; j < t; ++j) {
    Vector e = Vector::Zero(n);
    e(tdofs[std::size_t(j)]) = sw[std::size_t(j)];
    const Vector col = d->gram_ldlt->solve(e);
    for (Eigen::Index i = 0; i < t; ++i) S(i, j) = sw[std::size_t(i)] * col(tdofs[std::size_t(i)]);
  }
  S = 0.5 * (S + S.transpose()).eval();
  d->gamma = std::sqrt(detail::power_iteration_dense(S));
  d->mass_ratio = detail::generalized_max(d->mass, *d->gram_ldlt, d->gram);
  return FemModel(std::move(d));
}

inline FemModel build_model(const MeshInput& m, const ElasticLaw& law) {
  return build_model(m, law, ConvexSet::ball(m.dimension == 1 ? 1 : 3, 0.0));
}

/// Operator norm of the trace map, ||v||_{L2(Gamma_3)^d} <= ||gamma|| ||v||_V.
inline double trace_norm(const FemModel& model) { return model.gamma(); }

}  // namespace vhi
