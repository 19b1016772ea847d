#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>

#include "assembly.hpp"
#include "errors.hpp"
#include "mesh.hpp"
#include "vi_solver.hpp"

namespace obstacle_control {

/// J(g) = 1/2 ||u_g||_H^2 + M/2 ||g||_H^2, split into its two terms.
struct CostReport
{
  double value = 0.0;
  double state_term = 0.0;
  double control_term = 0.0;
  VIReport state;
};

inline CostReport cost(const Mesh& mesh,
                       const AssembledSystem& sys,
                       const ProblemData& data,
                       Family family,
                       const StateOptions& opt = {})
{
  CostReport rep;
  rep.state = solve_state(mesh, sys, data, family, opt);
  rep.state_term = 0.5 * quadratic_form(sys.M_H, rep.state.solution);
  rep.control_term = 0.5 * data.M_cost * quadratic_form(sys.M_H, data.g);
  rep.value = rep.state_term + rep.control_term;
  return rep;
}

namespace detail {

/// M g + p, where p solves A_II p_I = (M_H u)_I on the nodes not in `fixed`
/// and vanishes on `fixed`.
inline Vector gradient_with_fixed(const AssembledSystem& sys,
                                  const VIProblem& p,
                                  const ProblemData& data,
                                  const ScalarField& u,
                                  const std::vector<char>& fixed)
{
  const Eigen::Index n = p.size();
  std::vector<int> inactive;
  for (int i = 0; i < n; ++i)
    if (!fixed[i])
      inactive.push_back(i);

  Vector adjoint = Vector::Zero(n);
  if (!inactive.empty()) {
    const Vector source = sys.M_H * u;
    const SparseMatrix sub = principal_submatrix(p.A, inactive);
    Eigen::SimplicialLLT<SparseMatrix> llt(sub);
    if (llt.info() != Eigen::Success)
      throw MatrixError("adjoint: inactive block is not positive definite");
    Vector rhs(static_cast<Eigen::Index>(inactive.size()));
    for (std::size_t k = 0; k < inactive.size(); ++k)
      rhs[static_cast<Eigen::Index>(k)] = source[inactive[k]];
    const Vector sol = llt.solve(rhs);
    for (std::size_t k = 0; k < inactive.size(); ++k)
      adjoint[inactive[k]] = sol[static_cast<Eigen::Index>(k)];
  }
  return data.M_cost * data.g + adjoint;
}

inline std::vector<char> fixed_mask(const VIProblem& p, const VIReport& state)
{
  std::vector<char> fixed(static_cast<std::size_t>(p.size()), 0);
  for (int i : state.active_set)
    fixed[i] = 1;
  for (const auto& d : p.dirichlet)
    fixed[d.node] = 1;
  return fixed;
}

} // namespace detail

/// H-Riesz representative of the derivative of J at `data.g`, with the
/// contact set (and any Dirichlet nodes) held fixed: M g + p, where p solves
/// the adjoint system A_II p_I = (M_H u)_I on the free nodes and vanishes
/// elsewhere. Exact wherever the state depends smoothly on g.
inline Vector frozen_active_set_gradient(const Mesh& mesh,
                                         const AssembledSystem& sys,
                                         const ProblemData& data,
                                         Family family,
                                         const VIReport& state)
{
  const VIProblem p = build_state_problem(mesh, sys, data, family);
  return detail::gradient_with_fixed(sys, p, data, state.solution, detail::fixed_mask(p, state));
}

/// One-sided gradients at a point where the contact set is about to change:
/// the frozen gradient plus, for each weakly active node (small multiplier)
/// and each nearly touching node (small gap), the gradient with that node's
/// status flipped, and the gradients with all of them flipped at once.
inline std::vector<Vector> kink_gradients(const Mesh& mesh,
                                          const AssembledSystem& sys,
                                          const ProblemData& data,
                                          Family family,
                                          const VIReport& state,
                                          double threshold = 1e-4,
                                          std::size_t max_flips = 8)
{
  const VIProblem p = build_state_problem(mesh, sys, data, family);
  const ScalarField& u = state.solution;
  const Vector multiplier = p.A * u - p.F;
  const std::vector<char> base = detail::fixed_mask(p, state);
  std::vector<char> dirichlet(base.size(), 0);
  for (const auto& d : p.dirichlet)
    dirichlet[d.node] = 1;

  const double lam_scale = std::max({1e-300, p.F.cwiseAbs().maxCoeff(), (p.A * u).cwiseAbs().maxCoeff()});
  const double u_scale = std::max(1e-300, u.cwiseAbs().maxCoeff());

  std::vector<std::pair<double, int>> weak, near;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (dirichlet[i])
      continue;
    const auto k = static_cast<Eigen::Index>(i);
    if (base[i] && multiplier[k] <= threshold * lam_scale)
      weak.emplace_back(multiplier[k] / lam_scale, static_cast<int>(i));
    if (!base[i] && u[k] - p.lower_bound[k] <= threshold * u_scale)
      near.emplace_back((u[k] - p.lower_bound[k]) / u_scale, static_cast<int>(i));
  }
  std::sort(weak.begin(), weak.end());
  std::sort(near.begin(), near.end());
  weak.resize(std::min(weak.size(), max_flips));
  near.resize(std::min(near.size(), max_flips));

  std::vector<Vector> out{detail::gradient_with_fixed(sys, p, data, u, base)};
  auto flip_group = [&](const std::vector<std::pair<double, int>>& group, char value) {
    if (group.empty())
      return;
    std::vector<char> all = base;
    for (const auto& [score, i] : group) {
      std::vector<char> one = base;
      one[i] = value;
      all[i] = value;
      out.push_back(detail::gradient_with_fixed(sys, p, data, u, one));
    }
    if (group.size() > 1)
      out.push_back(detail::gradient_with_fixed(sys, p, data, u, all));
  };
  flip_group(weak, 0);
  flip_group(near, 1);
  return out;
}

enum class OptimizeMethod
{
  proj_grad_adjoint,
  coord_search,
};

inline const char* method_name(OptimizeMethod m)
{
  return m == OptimizeMethod::proj_grad_adjoint ? "proj_grad_adjoint" : "coord_search";
}

struct OptimizeOptions
{
  OptimizeMethod method = OptimizeMethod::proj_grad_adjoint;
  double tol = 1e-8;     // gradient H-norm (gradient method) or final step (compass search)
  int max_iter = 2000;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  double initial_step = 1.0;
  int max_backtracks = 60;
  bool bb_step = false; // start each line search at the Barzilai-Borwein step instead of initial_step
  std::size_t gs_samples = 64; // gradient-sampling fallback: sample count cap
  double gs_radius = 1e-2;     // gradient-sampling fallback: largest radius relative to max(1, ||g||_H)
  StateOptions state;
  std::optional<Vector> initial_control;
};

struct OptimizeReport
{
  ScalarField g_opt;
  double J_opt = 0.0;
  int iterations = 0;
  double gradient_norm_final = 0.0;
  OptimizeMethod method = OptimizeMethod::proj_grad_adjoint;
  std::vector<double> history;
  VIReport state;
  // stopped because the predicted decrease fell below the rounding level of J
  bool noise_floor = false;
};

namespace detail {

/// Minimum H-norm point of the convex hull of the candidates, by Wolfe's
/// min-norm-point algorithm on their Gram matrix.
inline Vector min_norm_combination(const SparseMatrix& mass, const std::vector<Vector>& candidates)
{
  const auto k = static_cast<Eigen::Index>(candidates.size());
  Eigen::MatrixXd basis(candidates.front().size(), k);
  for (Eigen::Index j = 0; j < k; ++j)
    basis.col(j) = candidates[static_cast<std::size_t>(j)];
  const Eigen::MatrixXd gram = basis.transpose() * (mass * basis);
  const double scale = std::max(1e-300, gram.diagonal().maxCoeff());
  constexpr double tol = 1e-12;

  Eigen::Index first = 0;
  gram.diagonal().minCoeff(&first);
  std::vector<Eigen::Index> support{first};
  Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
  w[first] = 1.0;

  for (int major = 0; major < 1000; ++major) {
    const Eigen::VectorXd gw = gram * w;
    const double xx = w.dot(gw);
    Eigen::Index j = 0;
    const double xj = gw.minCoeff(&j);
    if (xx - xj <= tol * scale || std::find(support.begin(), support.end(), j) != support.end())
      break;
    support.push_back(j);
    for (int minor = 0; minor < 1000; ++minor) {
      // affine min-norm point of the support: [G 1; 1' 0] [v; mu] = [0; 1]
      const auto s = static_cast<Eigen::Index>(support.size());
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
      for (Eigen::Index a = 0; a < s; ++a) {
        for (Eigen::Index b = 0; b < s; ++b)
          kkt(a, b) = gram(support[a], support[b]);
        kkt(a, s) = kkt(s, a) = 1.0;
      }
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(s + 1);
      rhs[s] = 1.0;
      const Eigen::VectorXd v = kkt.completeOrthogonalDecomposition().solve(rhs).head(s);
      if (v.minCoeff() > tol) {
        w.setZero();
        for (Eigen::Index a = 0; a < s; ++a)
          w[support[a]] = v[a];
        break;
      }
      double theta = 1.0;
      for (Eigen::Index a = 0; a < s; ++a) {
        const double wa = w[support[a]];
        if (v[a] <= tol && wa - v[a] > 0.0)
          theta = std::min(theta, wa / (wa - v[a]));
      }
      for (Eigen::Index a = 0; a < s; ++a)
        w[support[a]] += theta * (v[a] - w[support[a]]);
      std::vector<Eigen::Index> kept;
      for (Eigen::Index idx : support)
        if (w[idx] > tol)
          kept.push_back(idx);
        else
          w[idx] = 0.0;
      support = std::move(kept);
      w /= w.sum();
    }
  }
  return basis * w;
}

inline OptimizeReport gradient_descent(const Mesh& mesh,
                                       const AssembledSystem& sys,
                                       ProblemData data,
                                       Family family,
                                       const OptimizeOptions& opt)
{
  StateOptions state_opt = opt.state;
  CostReport current = cost(mesh, sys, data, family, state_opt);
  OptimizeReport rep;
  rep.method = OptimizeMethod::proj_grad_adjoint;
  rep.history.push_back(current.value);

  constexpr double eps = std::numeric_limits<double>::epsilon();

  // Armijo backtracking along -dir with model slope dir_sq, up to rounding in J
  ProblemData trial = data;
  CostReport next;
  double first_step = opt.initial_step;
  auto line_search = [&](const Vector& dir, double dir_sq) {
    double step = first_step;
    state_opt.solver_options.initial = current.state.solution;
    for (int k = 0; k < opt.max_backtracks; ++k, step *= opt.backtrack) {
      trial.g = data.g - step * dir;
      next = cost(mesh, sys, trial, family, state_opt);
      const double slack = 4.0 * eps * std::abs(current.value);
      if (next.value < current.value && next.value <= current.value - opt.armijo_c * step * dir_sq + slack)
        return true;
    }
    return false;
  };

  Vector prev_g, prev_grad;
  for (int it = 0;; ++it) {
    rep.iterations = it;
    const Vector grad = frozen_active_set_gradient(mesh, sys, data, family, current.state);
    const double grad_sq = quadratic_form(sys.M_H, grad);
    first_step = opt.initial_step;
    if (opt.bb_step && it > 0) {
      const Vector s = data.g - prev_g;
      const Vector y = grad - prev_grad;
      const double sy = s.dot(sys.M_H * y);
      if (sy > 0.0)
        first_step = std::clamp(quadratic_form(sys.M_H, s) / sy, 1e-12 * opt.initial_step, 1e12 * opt.initial_step);
    }
    prev_g = data.g;
    prev_grad = grad;
    rep.gradient_norm_final = std::sqrt(std::max(0.0, grad_sq));
    if (rep.gradient_norm_final <= opt.tol)
      break;
    if (it >= opt.max_iter)
      throw OptimizerNonConvergence("optimize: iteration limit reached", rep.gradient_norm_final, data.g);

    if (!line_search(grad, grad_sq)) {
      // The contact set changes arbitrarily close to g: descend along the
      // minimum-norm combination of the one-sided gradients instead.
      const Vector dir = min_norm_combination(sys.M_H, kink_gradients(mesh, sys, data, family, current.state));
      const double dir_sq = quadratic_form(sys.M_H, dir);
      rep.gradient_norm_final = std::sqrt(std::max(0.0, dir_sq));
      if (rep.gradient_norm_final <= opt.tol)
        break;
      bool moved = false, stationary = false;
      double sampled_sq = dir_sq;
      if (!line_search(dir, dir_sq)) {
        // Gradient sampling: min-norm element of the convex hull of gradients
        // at random points in shrinking H-balls around g.
        std::mt19937_64 rng(static_cast<std::uint64_t>(it) + 1);
        std::normal_distribution<double> normal;
        std::uniform_real_distribution<double> unit;
        const std::size_t samples = std::min<std::size_t>(static_cast<std::size_t>(data.g.size()) + 1, opt.gs_samples);
        const double g_scale = std::max(1.0, std::sqrt(quadratic_form(sys.M_H, data.g)));
        for (double radius = opt.gs_radius * g_scale; radius >= 1e-6 * opt.gs_radius * g_scale; radius *= 0.1) {
          std::vector<Vector> cands = kink_gradients(mesh, sys, data, family, current.state);
          ProblemData probe = data;
          for (std::size_t k = 0; k < samples; ++k) {
            Vector z(data.g.size());
            for (Eigen::Index i = 0; i < z.size(); ++i)
              z[i] = normal(rng);
            probe.g = data.g + (radius * unit(rng) / std::sqrt(quadratic_form(sys.M_H, z))) * z;
            const CostReport c = cost(mesh, sys, probe, family, state_opt);
            cands.push_back(frozen_active_set_gradient(mesh, sys, probe, family, c.state));
          }
          const Vector sampled = min_norm_combination(sys.M_H, cands);
          sampled_sq = quadratic_form(sys.M_H, sampled);
          if (std::sqrt(std::max(0.0, sampled_sq)) <= opt.tol) {
            stationary = true;
            continue;
          }
          stationary = false;
          if (line_search(sampled, sampled_sq)) {
            moved = true;
            break;
          }
        }
        if (stationary) {
          rep.gradient_norm_final = std::sqrt(std::max(0.0, sampled_sq));
          break;
        }
      } else {
        moved = true;
      }
      if (!moved) {
        // achievable decrease ~ |grad|^2 / (2 L) with L ~ M + 1
        if (std::min({grad_sq, dir_sq, sampled_sq}) / (data.M_cost + 1.0) <= 1e3 * eps * std::abs(current.value)) {
          rep.noise_floor = true;
          break;
        }
        throw StallError("optimize: line search failed (gradient norm " +
                           std::to_string(rep.gradient_norm_final) + ")",
                         data.g,
                         current.value);
      }
    }
    data.g = trial.g;
    current = std::move(next);
    rep.history.push_back(current.value);
  }

  rep.g_opt = data.g;
  rep.J_opt = current.value;
  rep.state = current.state;
  return rep;
}

/// Derivative-free compass search over the nodal basis. First improvement
/// wins; nodes are scanned in index order, + before -.
inline OptimizeReport compass_search(const Mesh& mesh,
                                     const AssembledSystem& sys,
                                     ProblemData data,
                                     Family family,
                                     const OptimizeOptions& opt)
{
  CostReport best = cost(mesh, sys, data, family, opt.state);
  OptimizeReport rep;
  rep.method = OptimizeMethod::coord_search;
  rep.history.push_back(best.value);

  double step = opt.initial_step;
  const Eigen::Index n = data.g.size();
  int it = 0;
  while (step > opt.tol) {
    if (it >= opt.max_iter)
      throw OptimizerNonConvergence("coord_search: iteration limit reached", step, data.g);
    ++it;
    bool improved = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (double sign : {1.0, -1.0}) {
        ProblemData trial = data;
        trial.g[i] += sign * step;
        CostReport c = cost(mesh, sys, trial, family, opt.state);
        if (c.value < best.value) {
          data = std::move(trial);
          best = std::move(c);
          rep.history.push_back(best.value);
          improved = true;
          break;
        }
      }
    }
    if (!improved)
      step *= 0.5;
  }

  rep.iterations = it;
  rep.g_opt = data.g;
  rep.J_opt = best.value;
  rep.state = best.state;
  rep.gradient_norm_final =
    std::sqrt(quadratic_form(sys.M_H, frozen_active_set_gradient(mesh, sys, data, family, best.state)));
  return rep;
}

} // namespace detail

/// Minimizes J over the nodal control space starting from
/// `opt.initial_control` (zero by default). `data.g` is ignored.
inline OptimizeReport optimize(const Mesh& mesh,
                               const AssembledSystem& sys,
                               const ProblemData& data,
                               Family family,
                               const OptimizeOptions& opt = {})
{
  ProblemData start = data;
  start.g = opt.initial_control ? *opt.initial_control
                                : Vector::Zero(static_cast<Eigen::Index>(mesh.num_nodes()));
  start.validate(mesh, family == Family::robin);
  if (!(opt.tol > 0.0))
    throw InvalidParameter("optimize: tol must be positive");
  return opt.method == OptimizeMethod::proj_grad_adjoint
           ? detail::gradient_descent(mesh, sys, std::move(start), family, opt)
           : detail::compass_search(mesh, sys, std::move(start), family, opt);
}

struct CombinationStates
{
  ScalarField u3; // mu u(g1) + (1 - mu) u(g2)
  ScalarField u4; // u(mu g1 + (1 - mu) g2)
};

inline CombinationStates convex_combination_states(const Mesh& mesh,
                                                   const AssembledSystem& sys,
                                                   const ProblemData& data,
                                                   const ScalarField& g1,
                                                   const ScalarField& g2,
                                                   double mu,
                                                   Family family = Family::robin,
                                                   const StateOptions& opt = {})
{
  if (!(mu >= 0.0 && mu <= 1.0))
    throw InvalidParameter("convex_combination_states: mu must lie in [0, 1]");
  ProblemData d = data;
  d.g = g1;
  const ScalarField u1 = solve_state(mesh, sys, d, family, opt).solution;
  d.g = g2;
  const ScalarField u2 = solve_state(mesh, sys, d, family, opt).solution;
  d.g = mu * g1 + (1.0 - mu) * g2;
  return {mu * u1 + (1.0 - mu) * u2, solve_state(mesh, sys, d, family, opt).solution};
}

struct ConjectureTrial
{
  int trial = 0;
  double mu = 0.0;
  double min_margin_pointwise = 0.0; // min_i (u3 - u4)_i
  double h_norm_margin = 0.0;        // ||u3||_H - ||u4||_H
  double convexity_gap = 0.0;        // mu J1 + (1-mu) J2 - J3 - M/2 mu(1-mu) ||g2-g1||^2
  double identity_residual = 0.0;
  double min_u4 = 0.0;
  ScalarField g1;
  ScalarField g2;
};

struct ConjectureReport
{
  std::vector<ConjectureTrial> trials;
  int pointwise_violations = 0; // u4 <= u3 fails somewhere
  int norm_violations = 0;      // ||u4|| <= ||u3|| fails
  int convexity_violations = 0; // strict-convexity inequality fails
  double max_identity_residual = 0.0;

  std::vector<const ConjectureTrial*> witnesses() const
  {
    std::vector<const ConjectureTrial*> out;
    for (const auto& t : trials)
      if (t.min_margin_pointwise < -1e-9 || t.h_norm_margin < -1e-9 || t.convexity_gap < -1e-9)
        out.push_back(&t);
    return out;
  }
};

struct ConjectureOptions
{
  double g_low = -30.0; // random nodal controls are uniform in [g_low, g_high]
  double g_high = 10.0;
  double check_tol = 1e-9;
  StateOptions state;
};

/// Random search for counterexamples to the two open comparison inequalities
/// between u4 and u3. Outcomes are recorded, not enforced; only u4 >= 0 is
/// enforced, since u4 is a state.
inline ConjectureReport check_open_problems(const Mesh& mesh,
                                            const AssembledSystem& sys,
                                            const ProblemData& data,
                                            int trials,
                                            std::uint64_t seed,
                                            const ConjectureOptions& opt = {})
{
  if (trials < 1)
    throw InvalidParameter("check_open_problems: trials must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> gdist(opt.g_low, opt.g_high);
  std::uniform_real_distribution<double> mdist(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(mesh.num_nodes());

  auto random_control = [&] {
    ScalarField g(n);
    for (Eigen::Index i = 0; i < n; ++i)
      g[i] = gdist(rng);
    return g;
  };

  ConjectureReport rep;
  for (int t = 0; t < trials; ++t) {
    ConjectureTrial tr;
    tr.trial = t;
    tr.g1 = random_control();
    tr.g2 = random_control();
    tr.mu = mdist(rng);

    ProblemData d = data;
    d.g = tr.g1;
    const CostReport c1 = cost(mesh, sys, d, Family::robin, opt.state);
    d.g = tr.g2;
    const CostReport c2 = cost(mesh, sys, d, Family::robin, opt.state);
    d.g = tr.mu * tr.g1 + (1.0 - tr.mu) * tr.g2;
    const CostReport c3 = cost(mesh, sys, d, Family::robin, opt.state);

    const ScalarField& u1 = c1.state.solution;
    const ScalarField& u2 = c2.state.solution;
    const ScalarField u3 = tr.mu * u1 + (1.0 - tr.mu) * u2;
    const ScalarField& u4 = c3.state.solution;

    const double w = tr.mu * (1.0 - tr.mu);
    const double dg2 = quadratic_form(sys.M_H, tr.g2 - tr.g1);
    const double du2 = quadratic_form(sys.M_H, u2 - u1);
    const double raw_gap = tr.mu * c1.value + (1.0 - tr.mu) * c2.value - c3.value;
    const double u3sq = quadratic_form(sys.M_H, u3);
    const double u4sq = quadratic_form(sys.M_H, u4);

    tr.min_u4 = u4.minCoeff();
    tr.min_margin_pointwise = (u3 - u4).minCoeff();
    tr.h_norm_margin = std::sqrt(u3sq) - std::sqrt(u4sq);
    tr.convexity_gap = raw_gap - 0.5 * data.M_cost * w * dg2;
    tr.identity_residual = std::abs(tr.convexity_gap - 0.5 * w * du2 - 0.5 * (u3sq - u4sq));

    if (tr.min_u4 < -1e-12)
      throw Error("check_open_problems: state u4 is negative at trial " + std::to_string(t));
    if (tr.min_margin_pointwise < -opt.check_tol)
      ++rep.pointwise_violations;
    if (tr.h_norm_margin < -opt.check_tol)
      ++rep.norm_violations;
    if (tr.convexity_gap < -opt.check_tol)
      ++rep.convexity_violations;
    rep.max_identity_residual = std::max(rep.max_identity_residual, tr.identity_residual);
    rep.trials.push_back(std::move(tr));
  }
  return rep;
}

} // namespace obstacle_control
