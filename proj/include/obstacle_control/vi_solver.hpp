#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "assembly.hpp"
#include "errors.hpp"
#include "mesh.hpp"

namespace obstacle_control {

struct DirichletValue
{
  int node = 0;
  double value = 0.0;
};

/// Find u >= lower_bound (with u fixed on Dirichlet nodes) such that
/// (A u - F) . (v - u) >= 0 for every admissible v.
struct VIProblem
{
  SparseMatrix A;
  Vector F;
  Vector lower_bound;
  std::vector<DirichletValue> dirichlet;

  Eigen::Index size() const { return A.rows(); }

  void validate() const
  {
    if (A.rows() != A.cols() || F.size() != A.rows() || lower_bound.size() != A.rows())
      throw DimensionMismatch("VIProblem: matrix, load and obstacle sizes disagree");
    for (const auto& d : dirichlet) {
      if (d.node < 0 || d.node >= A.rows())
        throw DimensionMismatch("VIProblem: Dirichlet node out of range");
      if (d.value < lower_bound[d.node])
        throw InvalidParameter("VIProblem: Dirichlet value violates the obstacle");
    }
  }
};

struct VIReport
{
  ScalarField solution;
  int iterations = 0;
  double residual = 0.0;      // max_i |min(u_i - l_i, (A u - F)_i)| over free nodes
  std::vector<int> active_set; // free nodes with u_i == l_i
};

enum class SolverKind
{
  active_set,
  psor,
};

struct SolverOptions
{
  double tol = 1e-10;
  int max_iter = -1; // -1: solver default (1e5 for PSOR, 100 for active set)
  double omega = 1.5;
  double dual_tol = 1e-12;
  std::optional<Vector> initial; // full-size initial iterate
};

namespace detail {

/// The VI restricted to non-Dirichlet nodes.
struct ReducedProblem
{
  SparseMatrix A;
  Vector F;
  Vector lower;
  std::vector<int> free; // reduced index -> full index
  Vector full_template;  // full vector with Dirichlet values in place
};

inline ReducedProblem reduce(const VIProblem& p)
{
  p.validate();
  const Eigen::Index n = p.size();
  std::vector<int> to_reduced(static_cast<std::size_t>(n), 0);
  Vector fixed = Vector::Zero(n);
  std::vector<char> is_fixed(static_cast<std::size_t>(n), 0);
  for (const auto& d : p.dirichlet) {
    is_fixed[d.node] = 1;
    fixed[d.node] = d.value;
  }

  ReducedProblem r;
  for (int i = 0; i < n; ++i) {
    if (is_fixed[i]) {
      to_reduced[i] = -1;
    } else {
      to_reduced[i] = static_cast<int>(r.free.size());
      r.free.push_back(i);
    }
  }

  // symmetric elimination: move the Dirichlet columns to the right-hand side
  const Vector lifted = p.F - p.A * fixed;
  const auto m = static_cast<Eigen::Index>(r.free.size());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(p.A.nonZeros()));
  for (int k = 0; k < p.A.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(p.A, k); it; ++it) {
      const int i = to_reduced[it.row()];
      const int j = to_reduced[it.col()];
      if (i >= 0 && j >= 0)
        trip.emplace_back(i, j, it.value());
    }
  }
  r.A.resize(m, m);
  r.A.setFromTriplets(trip.begin(), trip.end());
  r.F.resize(m);
  r.lower.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    r.F[i] = lifted[r.free[i]];
    r.lower[i] = p.lower_bound[r.free[i]];
  }
  r.full_template = fixed;
  return r;
}

inline Vector expand(const ReducedProblem& r, const Vector& reduced)
{
  Vector full = r.full_template;
  for (std::size_t i = 0; i < r.free.size(); ++i)
    full[r.free[i]] = reduced[static_cast<Eigen::Index>(i)];
  return full;
}

inline Vector restrict_initial(const ReducedProblem& r, const SolverOptions& opt)
{
  Vector u(static_cast<Eigen::Index>(r.free.size()));
  if (opt.initial) {
    if (opt.initial->size() != r.full_template.size())
      throw DimensionMismatch("initial iterate has the wrong size");
    for (std::size_t i = 0; i < r.free.size(); ++i)
      u[static_cast<Eigen::Index>(i)] = (*opt.initial)[r.free[i]];
  } else {
    u = r.lower;
  }
  return u;
}

inline double complementarity_residual(const SparseMatrix& a, const Vector& f, const Vector& lower, const Vector& u)
{
  const Vector grad = a * u - f;
  double res = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i)
    res = std::max(res, std::abs(std::min(u[i] - lower[i], grad[i])));
  return res;
}

inline VIReport finish(const ReducedProblem& r, Vector u, int iterations)
{
  u = u.cwiseMax(r.lower);
  VIReport rep;
  rep.iterations = iterations;
  rep.residual = complementarity_residual(r.A, r.F, r.lower, u);
  for (std::size_t i = 0; i < r.free.size(); ++i) {
    if (u[static_cast<Eigen::Index>(i)] <= r.lower[static_cast<Eigen::Index>(i)])
      rep.active_set.push_back(r.free[i]);
  }
  rep.solution = expand(r, u);
  return rep;
}

/// Principal submatrix A(rows, rows) for an index list in ascending order.
inline SparseMatrix principal_submatrix(const SparseMatrix& a, const std::vector<int>& idx)
{
  std::vector<int> pos(static_cast<std::size_t>(a.rows()), -1);
  for (std::size_t k = 0; k < idx.size(); ++k)
    pos[idx[k]] = static_cast<int>(k);
  std::vector<Eigen::Triplet<double>> trip;
  for (int col : idx) {
    for (SparseMatrix::InnerIterator it(a, col); it; ++it) {
      if (pos[it.row()] >= 0)
        trip.emplace_back(pos[it.row()], pos[col], it.value());
    }
  }
  const auto m = static_cast<Eigen::Index>(idx.size());
  SparseMatrix sub(m, m);
  sub.setFromTriplets(trip.begin(), trip.end());
  return sub;
}

} // namespace detail

/// Projected successive over-relaxation.
inline VIReport solve_psor(const VIProblem& p, const SolverOptions& opt = {})
{
  if (!(opt.tol > 0.0))
    throw InvalidParameter("solve_psor: tol must be positive");
  if (!(opt.omega > 0.0 && opt.omega < 2.0))
    throw InvalidParameter("solve_psor: omega must lie in (0, 2)");
  const int max_iter = opt.max_iter < 0 ? 100000 : opt.max_iter;

  auto r = detail::reduce(p);
  Vector u = detail::restrict_initial(r, opt).cwiseMax(r.lower);
  const Eigen::Index n = u.size();
  if (n == 0)
    return detail::finish(r, u, 0);

  // A is symmetric, so column i doubles as row i
  Vector diag(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    diag[i] = r.A.coeff(i, i);
    if (!(diag[i] > 0.0))
      throw MatrixError("solve_psor: non-positive diagonal entry at free node " +
                        std::to_string(r.free[static_cast<std::size_t>(i)]));
  }

  double res = detail::complementarity_residual(r.A, r.F, r.lower, u);
  int it = 0;
  while (res > opt.tol) {
    if (it >= max_iter)
      throw NonConvergence("solve_psor: iteration limit reached", res);
    for (Eigen::Index i = 0; i < n; ++i) {
      double row = 0.0;
      for (SparseMatrix::InnerIterator e(r.A, i); e; ++e)
        row += e.value() * u[e.row()];
      const double step = opt.omega * (r.F[i] - row) / diag[i];
      u[i] = std::max(r.lower[i], u[i] + step);
    }
    ++it;
    res = detail::complementarity_residual(r.A, r.F, r.lower, u);
    if (!std::isfinite(res))
      throw MatrixError("solve_psor: iteration diverged; matrix is not positive definite");
  }
  return detail::finish(r, u, it);
}

/// Primal-dual active set method (semismooth Newton on the complementarity
/// function). Each step fixes the active nodes at the obstacle and solves the
/// linear system on the rest.
inline VIReport solve_active_set(const VIProblem& p, const SolverOptions& opt = {})
{
  if (!(opt.tol > 0.0))
    throw InvalidParameter("solve_active_set: tol must be positive");
  const int max_iter = opt.max_iter < 0 ? 100 : opt.max_iter;

  auto r = detail::reduce(p);
  Vector u = detail::restrict_initial(r, opt);
  const Eigen::Index n = u.size();
  if (n == 0)
    return detail::finish(r, u, 0);

  // complementarity scaling: compare multipliers with gaps in comparable units
  const double c = r.A.diagonal().mean();
  Vector lambda = (r.A * u - r.F).cwiseMax(0.0);

  std::vector<char> active(static_cast<std::size_t>(n), 0);
  std::vector<char> previous;
  Vector u_previous = u;
  double res = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i)
      active[i] = (lambda[i] - c * (u[i] - r.lower[i]) > opt.dual_tol) ? 1 : 0;

    std::vector<int> inactive;
    Vector pinned = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (active[i]) {
        u[i] = r.lower[i];
        pinned[i] = r.lower[i];
      } else {
        inactive.push_back(static_cast<int>(i));
      }
    }

    if (!inactive.empty()) {
      const Vector rhs = r.F - r.A * pinned;
      const SparseMatrix sub = detail::principal_submatrix(r.A, inactive);
      Eigen::SimplicialLLT<SparseMatrix> llt(sub);
      if (llt.info() != Eigen::Success)
        throw MatrixError("solve_active_set: inactive block is not positive definite");
      Vector sub_rhs(static_cast<Eigen::Index>(inactive.size()));
      for (std::size_t k = 0; k < inactive.size(); ++k)
        sub_rhs[static_cast<Eigen::Index>(k)] = rhs[inactive[k]];
      const Vector sub_u = llt.solve(sub_rhs);
      for (std::size_t k = 0; k < inactive.size(); ++k)
        u[inactive[k]] = sub_u[static_cast<Eigen::Index>(k)];
    }

    const Vector grad = r.A * u - r.F;
    for (Eigen::Index i = 0; i < n; ++i)
      lambda[i] = active[i] ? grad[i] : 0.0;

    res = detail::complementarity_residual(r.A, r.F, r.lower, u.cwiseMax(r.lower));
    // a flip on a degenerate node (zero gap and zero multiplier) moves nothing
    const bool settled = active == previous || (u - u_previous).cwiseAbs().maxCoeff() <= opt.tol;
    if (it > 1 && settled && res <= opt.tol)
      return detail::finish(r, u, it);
    previous = active;
    u_previous = u;
  }
  throw NonConvergence("solve_active_set: iteration limit reached", res);
}

inline VIReport solve(const VIProblem& p, SolverKind kind, const SolverOptions& opt = {})
{
  return kind == SolverKind::psor ? solve_psor(p, opt) : solve_active_set(p, opt);
}

/// Which discrete state system to build.
enum class Family
{
  robin,           // obstacle u >= 0, Robin condition with coefficient alpha on Gamma1
  dirichlet_limit, // obstacle u >= 0, u = b on Gamma1
};

inline const char* family_name(Family f)
{
  return f == Family::robin ? "robin" : "dirichlet_limit";
}

/// Assembles the VI for one state system and control.
inline VIProblem build_state_problem(const Mesh& mesh,
                                     const AssembledSystem& sys,
                                     const ProblemData& data,
                                     Family family)
{
  VIProblem p;
  p.lower_bound = Vector::Zero(static_cast<Eigen::Index>(mesh.num_nodes()));
  if (family == Family::robin) {
    p.A = robin_matrix(sys, data.alpha);
    p.F = load_vector(mesh, sys, data);
  } else {
    p.A = sys.K;
    p.F = dirichlet_load_vector(mesh, sys, data);
    for (int node : mesh.gamma1_nodes())
      p.dirichlet.push_back({node, data.b});
  }
  return p;
}

struct StateOptions
{
  SolverKind solver = SolverKind::active_set;
  SolverOptions solver_options;
  bool cross_check = false;
};

/// Solves the Robin or Dirichlet-limit state system for `data.g`. With
/// cross_check set, both algorithms run and must agree to 10 tol.
inline VIReport solve_state(const Mesh& mesh,
                            const AssembledSystem& sys,
                            const ProblemData& data,
                            Family family,
                            const StateOptions& opt = {})
{
  const VIProblem p = build_state_problem(mesh, sys, data, family);
  VIReport rep = solve(p, opt.solver, opt.solver_options);
  if (opt.cross_check) {
    const SolverKind other = opt.solver == SolverKind::psor ? SolverKind::active_set : SolverKind::psor;
    const VIReport alt = solve(p, other, opt.solver_options);
    const double gap = (alt.solution - rep.solution).cwiseAbs().maxCoeff();
    if (gap > 10.0 * opt.solver_options.tol)
      throw Error("solve_state: PSOR and active-set solutions differ by " + std::to_string(gap));
  }
  return rep;
}

} // namespace obstacle_control
