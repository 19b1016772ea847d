#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "assembly.hpp"
#include "control.hpp"
#include "errors.hpp"
#include "mesh.hpp"
#include "presets.hpp"
#include "vi_solver.hpp"

namespace obstacle_control {

struct RateRow
{
  double parameter = 0.0;
  double error = 0.0;
  std::string norm;
};

/// Least-squares slope of log(error) against log(parameter). Zero errors are
/// skipped.
inline double fit_order(std::span<const RateRow> rows)
{
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) {
    if (r.error > 0.0 && r.parameter > 0.0)
      pts.emplace_back(std::log(r.parameter), std::log(r.error));
  }
  if (pts.size() < 2)
    throw InsufficientData("fit_order: fewer than two nonzero rows");
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxy = 0.0, sxx = 0.0;
  for (const auto& [x, y] : pts) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
  }
  if (sxx == 0.0)
    throw InsufficientData("fit_order: all parameters are equal");
  return sxy / sxx;
}

struct RateTable
{
  std::string parameter_name;
  std::vector<RateRow> rows;
  double fitted_order = std::numeric_limits<double>::quiet_NaN();
  std::string reference;
  int rows_excluded_from_fit = 0; // zero errors or errors below the solver floor

  bool has_fit() const { return std::isfinite(fitted_order); }

  bool strictly_decreasing() const
  {
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (!(rows[i].error < rows[i - 1].error))
        return false;
    return true;
  }

  bool non_increasing(double slack) const
  {
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].error > rows[i - 1].error + slack)
        return false;
    return true;
  }

  /// Fits only rows with error >= floor; leaves fitted_order NaN when fewer
  /// than two rows qualify.
  void fit(double floor)
  {
    std::vector<RateRow> usable;
    for (const auto& r : rows)
      if (r.error > 0.0 && r.error >= floor)
        usable.push_back(r);
    rows_excluded_from_fit = static_cast<int>(rows.size() - usable.size());
    fitted_order = usable.size() >= 2 ? fit_order(usable) : std::numeric_limits<double>::quiet_NaN();
  }
};

/// Nested meshes of the unit square produced by repeated uniform refinement,
/// with their assembled systems and a cache of state solves. Lattice points
/// are keyed by (level, alpha, family, control tag) so sweeps that meet at the
/// same point reuse one solve.
class MeshHierarchy
{
public:
  MeshHierarchy(int coarsest_n, int levels, SideSet gamma1 = Side::bottom)
    : coarsest_n_(coarsest_n)
  {
    if (levels < 1)
      throw InvalidParameter("MeshHierarchy: need at least one level");
    meshes_.push_back(std::make_unique<Mesh>(build_unit_square(coarsest_n, gamma1)));
    for (int l = 1; l < levels; ++l) {
      auto r = refine_with_map(*meshes_.back());
      meshes_.push_back(std::make_unique<Mesh>(r.fine));
      parents_.push_back(std::move(r.parents));
    }
    for (const auto& m : meshes_)
      systems_.push_back(assemble(*m));
  }

  int levels() const { return static_cast<int>(meshes_.size()); }
  int subdivisions(int level) const { return coarsest_n_ << level; }
  const Mesh& mesh(int level) const { return *meshes_.at(static_cast<std::size_t>(level)); }
  const AssembledSystem& system(int level) const { return systems_.at(static_cast<std::size_t>(level)); }

  /// Level whose structured grid has n subdivisions per side.
  int level_of(int n) const
  {
    for (int l = 0; l < levels(); ++l)
      if (subdivisions(l) == n)
        return l;
    throw InvalidParameter("MeshHierarchy: no level with n = " + std::to_string(n));
  }

  /// Exact transfer of a P1 field from level `from` to a finer level `to`.
  ScalarField prolongate(const ScalarField& v, int from, int to) const
  {
    if (from > to)
      throw InvalidParameter("prolongate: target level is coarser");
    ScalarField out = v;
    for (int l = from; l < to; ++l) {
      const auto& par = parents_[static_cast<std::size_t>(l)];
      ScalarField next(static_cast<Eigen::Index>(par.size()));
      for (std::size_t i = 0; i < par.size(); ++i)
        next[static_cast<Eigen::Index>(i)] = 0.5 * (out[par[i][0]] + out[par[i][1]]);
      out = std::move(next);
    }
    return out;
  }

private:
  int coarsest_n_;
  std::vector<std::unique_ptr<Mesh>> meshes_;
  std::vector<std::vector<std::array<int, 2>>> parents_;
  std::vector<AssembledSystem> systems_;
};

/// Shared state solves for the sweeps over one scenario.
class SweepContext
{
public:
  SweepContext(Scenario scenario, int coarsest_n, int levels, StateOptions opt = {})
    : scenario_(std::move(scenario)),
      hierarchy_(coarsest_n, levels, scenario_.gamma1),
      opt_(std::move(opt))
  {}

  const Scenario& scenario() const { return scenario_; }
  const MeshHierarchy& hierarchy() const { return hierarchy_; }
  const StateOptions& state_options() const { return opt_; }

  /// Cost and state for the scenario's control at (level, alpha, family).
  /// alpha is ignored for the Dirichlet-limit family.
  const CostReport& state(int level, double alpha, Family family)
  {
    const double a = family == Family::robin ? alpha : 0.0;
    auto key = std::make_tuple(level, a, family);
    auto it = cache_.find(key);
    if (it != cache_.end())
      return it->second;
    const Mesh& m = hierarchy_.mesh(level);
    ProblemData d = scenario_.data_on(m);
    if (family == Family::robin)
      d.alpha = alpha;
    return cache_.emplace(key, cost(m, hierarchy_.system(level), d, family, opt_)).first->second;
  }

  std::size_t solves() const { return cache_.size(); }

private:
  Scenario scenario_;
  MeshHierarchy hierarchy_;
  StateOptions opt_;
  std::map<std::tuple<int, double, Family>, CostReport> cache_;
};

namespace detail {

inline double fit_floor(const StateOptions& opt)
{
  return 100.0 * opt.solver_options.tol;
}

inline std::string reference_label(const char* what, int n)
{
  return std::string("surrogate_reference: ") + what + " on n=" + std::to_string(n) + " mesh";
}

} // namespace detail

/// V-norm error of the Robin state on each listed level against the
/// solution on `reference_n`, both compared on the reference mesh.
inline RateTable h_sweep_state(SweepContext& ctx, double alpha, const std::vector<int>& levels_n, int reference_n)
{
  const auto& hier = ctx.hierarchy();
  const int ref = hier.level_of(reference_n);
  const auto& ref_sys = hier.system(ref);
  const ScalarField u_ref = ctx.state(ref, alpha, Family::robin).state.solution;

  RateTable t;
  t.parameter_name = "h";
  t.reference = detail::reference_label("Robin state", reference_n);
  for (int n : levels_n) {
    const int l = hier.level_of(n);
    if (l >= ref)
      throw InvalidParameter("h_sweep_state: level not coarser than the reference");
    const ScalarField u = hier.prolongate(ctx.state(l, alpha, Family::robin).state.solution, l, ref);
    t.rows.push_back({hier.mesh(l).h(), v_norm(ref_sys, u - u_ref), "V"});
  }
  t.fit(detail::fit_floor(ctx.state_options()));
  return t;
}

/// |J_h(g) - J_ref(g)| for the scenario's control on each listed level.
inline RateTable h_sweep_cost(SweepContext& ctx, double alpha, const std::vector<int>& levels_n, int reference_n)
{
  const auto& hier = ctx.hierarchy();
  const int ref = hier.level_of(reference_n);
  const double j_ref = ctx.state(ref, alpha, Family::robin).value;

  RateTable t;
  t.parameter_name = "h";
  t.reference = detail::reference_label("Robin cost", reference_n);
  for (int n : levels_n) {
    const int l = hier.level_of(n);
    if (l >= ref)
      throw InvalidParameter("h_sweep_cost: level not coarser than the reference");
    t.rows.push_back({hier.mesh(l).h(), std::abs(ctx.state(l, alpha, Family::robin).value - j_ref), "J"});
  }
  t.fit(detail::fit_floor(ctx.state_options()));
  return t;
}

struct AlphaSweep
{
  RateTable trace; // R-norm error, parameter alpha - 1
  RateTable volume; // V-norm error, parameter alpha
};

/// Distance of the Robin state from the Dirichlet-limit state on one mesh as
/// alpha grows.
inline AlphaSweep alpha_sweep_state(SweepContext& ctx, int n, const std::vector<double>& alphas)
{
  const auto& hier = ctx.hierarchy();
  const int l = hier.level_of(n);
  const auto& sys = hier.system(l);
  const ScalarField u_lim = ctx.state(l, 0.0, Family::dirichlet_limit).state.solution;

  AlphaSweep out;
  out.trace.parameter_name = "alpha-1";
  out.volume.parameter_name = "alpha";
  out.trace.reference = out.volume.reference = "Dirichlet-limit state on n=" + std::to_string(n);
  for (double a : alphas) {
    if (!(a > 1.0))
      throw InvalidParameter("alpha_sweep_state: alpha values must exceed 1");
    const ScalarField diff = ctx.state(l, a, Family::robin).state.solution - u_lim;
    out.trace.rows.push_back({a - 1.0, r_norm(sys, diff), "R"});
    out.volume.rows.push_back({a, v_norm(sys, diff), "V"});
  }
  out.trace.fit(detail::fit_floor(ctx.state_options()));
  out.volume.fit(detail::fit_floor(ctx.state_options()));
  return out;
}

struct DiagramPoint
{
  int n = 0;
  double h = 0.0;
  double alpha = 0.0; // +inf for the Dirichlet-limit corner
  double J_opt = 0.0;
  double g_norm = 0.0;
  double d1 = std::numeric_limits<double>::quiet_NaN();
  double d2 = std::numeric_limits<double>::quiet_NaN();
  double d3 = std::numeric_limits<double>::quiet_NaN();
  bool surrogate_reference = false;
  bool diagonal = false;
  ScalarField g_opt;
  ScalarField u_opt;
};

struct DiagramReport
{
  std::vector<int> levels_n;
  std::vector<double> alphas;
  int reference_n = 0;
  std::vector<DiagramPoint> points; // lattice, then the Dirichlet-limit column, then references
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }

  const DiagramPoint& at(int n, double alpha) const
  {
    for (const auto& p : points)
      if (p.n == n && p.alpha == alpha)
        return p;
    throw InvalidParameter("DiagramReport: no such lattice point");
  }
};

struct DiagramOptions
{
  int extra_levels = 2; // reference mesh is this many refinements beyond the finest level
  double slack = 1e-10;
  OptimizeOptions optimizer;
};

/// Discrete optimal controls on an (h, alpha) lattice plus the corners that
/// stand in for the continuous problems, and the three distance sequences:
///   d1(h)   fixed alpha, distance to the reference-mesh Robin optimum;
///   d2(alpha) fixed h, distance to the Dirichlet-limit optimum on that mesh;
///   d3      along the diagonal alpha_k = alphas[k], distance to the
///           reference-mesh Dirichlet-limit optimum.
/// All distances are H-norms measured on the reference mesh.
inline DiagramReport diagram(const Scenario& scenario,
                             std::vector<int> levels_n,
                             std::vector<double> alphas,
                             const DiagramOptions& opt = {})
{
  if (levels_n.size() < 2 || alphas.size() != levels_n.size())
    throw InvalidParameter("diagram: need matching level and alpha lists with at least two entries");
  if (!std::is_sorted(levels_n.begin(), levels_n.end()) || !std::is_sorted(alphas.begin(), alphas.end()))
    throw InvalidParameter("diagram: levels and alphas must be increasing");
  for (std::size_t k = 1; k < levels_n.size(); ++k)
    if (levels_n[k] != 2 * levels_n[k - 1])
      throw InvalidParameter("diagram: levels must double");

  const int levels = static_cast<int>(levels_n.size()) + opt.extra_levels;
  const MeshHierarchy hier(levels_n.front(), levels, scenario.gamma1);
  const int ref = levels - 1;
  const auto& ref_sys = hier.system(ref);

  DiagramReport rep;
  rep.levels_n = levels_n;
  rep.alphas = alphas;
  rep.reference_n = hier.subdivisions(ref);

  auto solve_point = [&](int level, double alpha, Family family) {
    const Mesh& m = hier.mesh(level);
    ProblemData d = scenario.data_on(m);
    if (family == Family::robin)
      d.alpha = alpha;
    const OptimizeReport o = optimize(m, hier.system(level), d, family, opt.optimizer);
    DiagramPoint p;
    p.n = hier.subdivisions(level);
    p.h = m.h();
    p.alpha = family == Family::robin ? alpha : std::numeric_limits<double>::infinity();
    p.J_opt = o.J_opt;
    p.g_norm = h_norm(hier.system(level), o.g_opt);
    p.g_opt = hier.prolongate(o.g_opt, level, ref);
    p.u_opt = hier.prolongate(o.state.solution, level, ref);
    return p;
  };

  std::vector<DiagramPoint> ref_alpha;
  for (double a : alphas) {
    ref_alpha.push_back(solve_point(ref, a, Family::robin));
    ref_alpha.back().surrogate_reference = true;
  }
  DiagramPoint ref_limit = solve_point(ref, 0.0, Family::dirichlet_limit);
  ref_limit.surrogate_reference = true;

  std::vector<DiagramPoint> limit_column;
  for (std::size_t i = 0; i < levels_n.size(); ++i)
    limit_column.push_back(solve_point(static_cast<int>(i), 0.0, Family::dirichlet_limit));

  auto dist = [&](const ScalarField& a, const ScalarField& b) { return h_norm(ref_sys, a - b); };

  for (std::size_t i = 0; i < levels_n.size(); ++i) {
    for (std::size_t j = 0; j < alphas.size(); ++j) {
      DiagramPoint p = solve_point(static_cast<int>(i), alphas[j], Family::robin);
      p.d1 = dist(p.g_opt, ref_alpha[j].g_opt);
      p.d2 = dist(p.g_opt, limit_column[i].g_opt);
      if (i == j) {
        p.diagonal = true;
        p.d3 = dist(p.g_opt, ref_limit.g_opt);
      }
      rep.points.push_back(std::move(p));
    }
  }
  for (std::size_t i = 0; i < levels_n.size(); ++i) {
    limit_column[i].d3 = dist(limit_column[i].g_opt, ref_limit.g_opt);
    rep.points.push_back(std::move(limit_column[i]));
  }
  for (auto& p : ref_alpha) {
    p.d2 = dist(p.g_opt, ref_limit.g_opt);
    rep.points.push_back(std::move(p));
  }
  ref_limit.d1 = ref_limit.d2 = ref_limit.d3 = 0.0;
  rep.points.push_back(std::move(ref_limit));

  // monotonicity audit
  auto fmt = [](double v) { return std::to_string(v); };
  for (double a : alphas) {
    for (std::size_t i = 1; i < levels_n.size(); ++i) {
      const double prev = rep.at(levels_n[i - 1], a).d1;
      const double cur = rep.at(levels_n[i], a).d1;
      if (!(cur < prev + opt.slack))
        rep.failures.push_back("d1 not decreasing at alpha=" + fmt(a) + " n=" + std::to_string(levels_n[i]));
    }
  }
  for (int n : levels_n) {
    for (std::size_t j = 1; j < alphas.size(); ++j) {
      const double prev = rep.at(n, alphas[j - 1]).d2;
      const double cur = rep.at(n, alphas[j]).d2;
      if (!(cur < prev + opt.slack))
        rep.failures.push_back("d2 not decreasing at n=" + std::to_string(n) + " alpha=" + fmt(alphas[j]));
    }
  }
  for (std::size_t k = 1; k < levels_n.size(); ++k) {
    const double prev = rep.at(levels_n[k - 1], alphas[k - 1]).d3;
    const double cur = rep.at(levels_n[k], alphas[k]).d3;
    if (!(cur < prev))
      rep.failures.push_back("d3 not strictly decreasing at diagonal point " + std::to_string(k));
  }
  return rep;
}

struct InterpolationSweep
{
  RateTable l2; // ||f - Pi_h f||_{L2}
  RateTable h1; // ||f - Pi_h f||_{H1}
};

namespace detail {

struct TriangleQuadPoint
{
  double l0, l1, l2, weight;
};

/// 7-point rule, exact for polynomials of degree 5; weights sum to 1.
inline const std::array<TriangleQuadPoint, 7>& degree5_rule()
{
  static const std::array<TriangleQuadPoint, 7> rule = [] {
    const double s = std::sqrt(15.0);
    const double a = (6.0 - s) / 21.0, b = (6.0 + s) / 21.0;
    const double wa = (155.0 - s) / 1200.0, wb = (155.0 + s) / 1200.0;
    return std::array<TriangleQuadPoint, 7>{{{1.0 / 3, 1.0 / 3, 1.0 / 3, 9.0 / 40.0},
                                             {a, a, 1 - 2 * a, wa},
                                             {a, 1 - 2 * a, a, wa},
                                             {1 - 2 * a, a, a, wa},
                                             {b, b, 1 - 2 * b, wb},
                                             {b, 1 - 2 * b, b, wb},
                                             {1 - 2 * b, b, b, wb}}};
  }();
  return rule;
}

} // namespace detail

/// L2 and H1 norms of f - Pi_h f. Exact when f is a polynomial of degree <= 2.
template <typename F, typename G>
std::pair<double, double> interpolation_error(const Mesh& mesh, F&& f, G&& grad_f)
{
  const ScalarField v = interpolate(mesh, f);
  double l2 = 0.0, semi = 0.0;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const Point& p0 = mesh.nodes()[tri[0]];
    const Point& p1 = mesh.nodes()[tri[1]];
    const Point& p2 = mesh.nodes()[tri[2]];
    const double area = mesh.signed_area(t);
    // gradient of the linear interpolant on this triangle
    const double det = 2.0 * area;
    const double gx = (v[tri[0]] * (p1.y - p2.y) + v[tri[1]] * (p2.y - p0.y) + v[tri[2]] * (p0.y - p1.y)) / det;
    const double gy = (v[tri[0]] * (p2.x - p1.x) + v[tri[1]] * (p0.x - p2.x) + v[tri[2]] * (p1.x - p0.x)) / det;
    for (const auto& q : detail::degree5_rule()) {
      const double x = q.l0 * p0.x + q.l1 * p1.x + q.l2 * p2.x;
      const double y = q.l0 * p0.y + q.l1 * p1.y + q.l2 * p2.y;
      const double e = f(x, y) - (q.l0 * v[tri[0]] + q.l1 * v[tri[1]] + q.l2 * v[tri[2]]);
      const auto [fx, fy] = grad_f(x, y);
      l2 += q.weight * area * e * e;
      semi += q.weight * area * ((fx - gx) * (fx - gx) + (fy - gy) * (fy - gy));
    }
  }
  return {std::sqrt(l2), std::sqrt(l2 + semi)};
}

/// Interpolation errors on unit-square meshes with n subdivisions, fitted
/// against h.
template <typename F, typename G>
InterpolationSweep interpolation_sweep(F&& f, G&& grad_f, const std::vector<int>& levels_n, SideSet gamma1 = Side::bottom)
{
  InterpolationSweep out;
  out.l2.parameter_name = out.h1.parameter_name = "h";
  out.l2.reference = out.h1.reference = "exact function, degree-5 quadrature";
  for (int n : levels_n) {
    const Mesh m = build_unit_square(n, gamma1);
    const auto [l2, h1] = interpolation_error(m, f, grad_f);
    out.l2.rows.push_back({m.h(), l2, "L2"});
    out.h1.rows.push_back({m.h(), h1, "H1"});
  }
  out.l2.fit(0.0);
  out.h1.fit(0.0);
  return out;
}

} // namespace obstacle_control
