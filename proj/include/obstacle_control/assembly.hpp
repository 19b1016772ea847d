#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>

#include "errors.hpp"
#include "mesh.hpp"

namespace obstacle_control {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;

/// Heat flux on Gamma2 as a function of position.
using BoundaryFunction = std::function<double(Point)>;

/// One instance of the Robin-type or Dirichlet-limit control problem.
struct ProblemData
{
  double alpha = 1.0;  // heat transfer coefficient on Gamma1
  double b = 1.0;      // environment temperature on Gamma1
  BoundaryFunction q = [](Point) { return 0.0; };
  double M_cost = 1.0; // weight of the control term
  ScalarField g;       // distributed control, one value per node

  void validate(const Mesh& mesh, bool needs_alpha = true) const
  {
    if (needs_alpha && !(alpha > 0.0 && std::isfinite(alpha)))
      throw InvalidParameter("alpha must be positive");
    if (!(b > 0.0 && std::isfinite(b)))
      throw InvalidParameter("b must be positive");
    if (!(M_cost > 0.0 && std::isfinite(M_cost)))
      throw InvalidParameter("M_cost must be positive");
    if (!q)
      throw InvalidParameter("q is not set");
    if (g.size() != static_cast<Eigen::Index>(mesh.num_nodes()))
      throw DimensionMismatch("control field size does not match node count");
    if (!g.allFinite())
      throw InvalidParameter("control field has non-finite entries");
  }
};

/// Exact P1 matrices on one mesh. Load functionals that depend on the data
/// (q, b, g) are built separately by `load_vector`.
struct AssembledSystem
{
  SparseMatrix K;   // a(u, v) = int grad u . grad v
  SparseMatrix M_H; // (u, v)_H on the domain
  SparseMatrix M_R; // (u, v)_R on Gamma1
  Vector gamma1_hat; // int_{Gamma1} phi_i
};

namespace detail {

inline void add_block(std::vector<Eigen::Triplet<double>>& out,
                      const int* idx,
                      int n,
                      const double* block)
{
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out.emplace_back(idx[i], idx[j], block[i * n + j]);
}

} // namespace detail

/// Local stiffness matrix of a P1 triangle, row-major.
inline std::array<double, 9> local_stiffness(const Point& a, const Point& b, const Point& c)
{
  const double area2 = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
  const std::array<std::array<double, 2>, 3> grad{{
    {b.y - c.y, c.x - b.x},
    {c.y - a.y, a.x - c.x},
    {a.y - b.y, b.x - a.x},
  }};
  std::array<double, 9> k{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      k[i * 3 + j] = (grad[i][0] * grad[j][0] + grad[i][1] * grad[j][1]) / (2.0 * area2);
  return k;
}

inline AssembledSystem assemble(const Mesh& mesh)
{
  const auto n = static_cast<Eigen::Index>(mesh.num_nodes());
  std::vector<Eigen::Triplet<double>> kt, mt, rt;
  kt.reserve(9 * mesh.num_triangles());
  mt.reserve(9 * mesh.num_triangles());

  const double area_tol = 1e-14 * mesh.h() * mesh.h();
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const double area = mesh.signed_area(t);
    if (area <= area_tol)
      throw AssemblyError("degenerate triangle " + std::to_string(t) + " (area " +
                          std::to_string(area) + ")");
    const auto& p = mesh.nodes();
    const auto k = local_stiffness(p[tri[0]], p[tri[1]], p[tri[2]]);
    std::array<double, 9> m{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        m[i * 3 + j] = area / 12.0 * (i == j ? 2.0 : 1.0);
    detail::add_block(kt, tri.data(), 3, k.data());
    detail::add_block(mt, tri.data(), 3, m.data());
  }

  Vector hat = Vector::Zero(n);
  for (const auto& e : mesh.gamma1_edges()) {
    const double len = mesh.edge_length(e);
    const std::array<double, 4> r{len / 3.0, len / 6.0, len / 6.0, len / 3.0};
    detail::add_block(rt, e.data(), 2, r.data());
    hat[e[0]] += 0.5 * len;
    hat[e[1]] += 0.5 * len;
  }

  AssembledSystem sys;
  sys.K.resize(n, n);
  sys.M_H.resize(n, n);
  sys.M_R.resize(n, n);
  sys.K.setFromTriplets(kt.begin(), kt.end());
  sys.M_H.setFromTriplets(mt.begin(), mt.end());
  sys.M_R.setFromTriplets(rt.begin(), rt.end());
  sys.gamma1_hat = std::move(hat);
  return sys;
}

/// A_alpha = K + alpha M_R.
inline SparseMatrix robin_matrix(const AssembledSystem& sys, double alpha)
{
  if (!(alpha > 0.0))
    throw InvalidParameter("robin_matrix: alpha must be positive");
  SparseMatrix a = sys.K + alpha * sys.M_R;
  a.makeCompressed();
  return a;
}

/// (q, phi_i)_Q on Gamma2, three-point Gauss rule per edge.
inline Vector flux_load(const Mesh& mesh, const BoundaryFunction& q)
{
  static constexpr std::array<double, 3> xi{0.5 - 0.38729833462074170, 0.5, 0.5 + 0.38729833462074170};
  static constexpr std::array<double, 3> w{5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

  Vector out = Vector::Zero(static_cast<Eigen::Index>(mesh.num_nodes()));
  for (const auto& e : mesh.gamma2_edges()) {
    const Point& a = mesh.nodes()[e[0]];
    const Point& b = mesh.nodes()[e[1]];
    const double len = mesh.edge_length(e);
    for (int k = 0; k < 3; ++k) {
      const Point p{a.x + xi[k] * (b.x - a.x), a.y + xi[k] * (b.y - a.y)};
      const double qv = q(p);
      if (!std::isfinite(qv))
        throw EvaluationError("flux_load: non-finite q on Gamma2");
      out[e[0]] += w[k] * len * qv * (1.0 - xi[k]);
      out[e[1]] += w[k] * len * qv * xi[k];
    }
  }
  return out;
}

/// Right-hand side (g, .)_H - (q, .)_Q + alpha (b, .)_R of the Robin system.
inline Vector load_vector(const Mesh& mesh, const AssembledSystem& sys, const ProblemData& data)
{
  data.validate(mesh);
  return sys.M_H * data.g - flux_load(mesh, data.q) + data.alpha * data.b * sys.gamma1_hat;
}

/// Right-hand side (g, .)_H - (q, .)_Q of the Dirichlet-limit system.
inline Vector dirichlet_load_vector(const Mesh& mesh, const AssembledSystem& sys, const ProblemData& data)
{
  data.validate(mesh, false);
  return sys.M_H * data.g - flux_load(mesh, data.q);
}

struct Norms
{
  double H = 0.0;
  double V = 0.0;
  double R = 0.0;
};

inline double quadratic_form(const SparseMatrix& a, const Vector& v)
{
  if (a.rows() != v.size())
    throw DimensionMismatch("field size does not match matrix dimension");
  return v.dot(a * v);
}

inline double h_norm(const AssembledSystem& sys, const Vector& v)
{
  return std::sqrt(std::max(0.0, quadratic_form(sys.M_H, v)));
}

inline double r_norm(const AssembledSystem& sys, const Vector& v)
{
  return std::sqrt(std::max(0.0, quadratic_form(sys.M_R, v)));
}

inline double v_norm(const AssembledSystem& sys, const Vector& v)
{
  return std::sqrt(std::max(0.0, quadratic_form(sys.K, v) + quadratic_form(sys.M_H, v)));
}

inline Norms norms(const AssembledSystem& sys, const Vector& v)
{
  return {h_norm(sys, v), v_norm(sys, v), r_norm(sys, v)};
}

/// Smallest eigenvalue of the pencil (A_alpha, K + M_H): the best constant
/// in a_alpha(v, v) >= lambda ||v||_V^2 on the discrete space. Dense, so only
/// meant for small meshes.
inline double coercivity_estimate(const AssembledSystem& sys, double alpha)
{
  const Eigen::MatrixXd a = Eigen::MatrixXd(robin_matrix(sys, alpha));
  const Eigen::MatrixXd g = Eigen::MatrixXd(SparseMatrix(sys.K + sys.M_H));
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(a, g, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw MatrixError("coercivity_estimate: eigenvalue solver failed");
  return es.eigenvalues().minCoeff();
}

/// Debug dump: one `i j value` line per stored entry.
inline void write_triplets(std::ostream& os, const SparseMatrix& a)
{
  const auto old_precision = os.precision(17);
  for (int k = 0; k < a.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(a, k); it; ++it)
      os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
  os.precision(old_precision);
}

} // namespace obstacle_control
