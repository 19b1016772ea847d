#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include <Eigen/SparseCholesky>

#include <obstacle_control/assembly.hpp>
#include <obstacle_control/presets.hpp>
#include <obstacle_control/vi_solver.hpp>

#include "oracles.hpp"

using namespace obstacle_control;

namespace {

constexpr SolverKind kinds[] = {SolverKind::active_set, SolverKind::psor};

const char* name(SolverKind k)
{
  return k == SolverKind::psor ? "psor" : "active_set";
}

struct Instance
{
  Mesh mesh;
  ProblemData data;
  Family family;
};

// Random (g, q, alpha, b) instance; q is constant per side.
ProblemData random_problem(const Mesh& m, std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> gd(-30.0, 10.0), qd(-2.0, 2.0), ad(0.5, 10.0), bd(0.2, 3.0);
  ProblemData d;
  d.alpha = ad(rng);
  d.b = bd(rng);
  d.q = per_side_flux({qd(rng), qd(rng), qd(rng), qd(rng)});
  d.g.resize(static_cast<Eigen::Index>(m.num_nodes()));
  for (Eigen::Index i = 0; i < d.g.size(); ++i)
    d.g[i] = gd(rng);
  return d;
}

// Enumeration oracle on independently assembled dense matrices.
oracle::LcpSolution oracle_solution(const Mesh& m, const ProblemData& d, Family family)
{
  const auto sys = oracle::dense_system(m);
  const ScalarField g = d.g;
  auto gf = [&](double x, double y) { return evaluate(m, g, {x, y}); };
  const oracle::Vec lower = oracle::Vec::Zero(static_cast<Eigen::Index>(m.num_nodes()));
  if (family == Family::robin)
    return oracle::enumerate_active_sets(sys.K + d.alpha * sys.MR, oracle::load(m, gf, d.q, d.alpha, d.b), lower);
  std::vector<std::pair<int, double>> fixed;
  for (int i : m.gamma1_nodes())
    fixed.emplace_back(i, d.b);
  return oracle::enumerate_active_sets(sys.K, oracle::load(m, gf, d.q, 0.0, d.b), lower, fixed);
}

StateOptions tight(SolverKind k)
{
  StateOptions o;
  o.solver = k;
  o.solver_options.tol = 1e-13;
  return o;
}

void expect_report_invariants(const VIProblem& p, const VIReport& r, double tol)
{
  for (Eigen::Index i = 0; i < r.solution.size(); ++i)
    EXPECT_GE(r.solution[i], p.lower_bound[i] - 1e-12);
  for (const auto& dv : p.dirichlet)
    EXPECT_NEAR(r.solution[dv.node], dv.value, 1e-12);
  EXPECT_LE(r.residual, tol);
  const Vector lam = p.A * r.solution - p.F;
  for (int i : r.active_set) {
    EXPECT_EQ(r.solution[i], p.lower_bound[i]);
    EXPECT_GE(lam[i], -tol);
  }
}

} // namespace

TEST(StateSolve, ConstantSolutionForZeroData)
{
  for (int n : {1, 3, 8}) {
    const Mesh m = build_unit_square(n, parse_sides("bottom,left"));
    const AssembledSystem sys = assemble(m);
    ProblemData d;
    d.alpha = 2.5;
    d.b = 1.75;
    d.g = Vector::Zero(static_cast<Eigen::Index>(m.num_nodes()));
    for (SolverKind k : kinds) {
      for (Family f : {Family::robin, Family::dirichlet_limit}) {
        const VIReport r = solve_state(m, sys, d, f, tight(k));
        EXPECT_LT((r.solution.array() - 1.75).abs().maxCoeff(), 1e-9) << name(k) << " " << family_name(f);
        EXPECT_TRUE(r.active_set.empty());
      }
    }
  }
}

TEST(StateSolve, InactiveConstraintMatchesLinearSolve)
{
  const Mesh m = build_unit_square(6);
  const AssembledSystem sys = assemble(m);
  ProblemData d;
  d.alpha = 1.5;
  d.b = 1.0;
  d.q = [](Point) { return -0.5; }; // heat flowing in
  d.g = interpolate(m, [](double x, double y) { return 2.0 + x * y; });
  const VIProblem p = build_state_problem(m, sys, d, Family::robin);
  Eigen::SimplicialLLT<SparseMatrix> llt(p.A);
  const Vector lin = llt.solve(p.F);
  ASSERT_GT(lin.minCoeff(), 0.0);
  for (SolverKind k : kinds) {
    const VIReport r = solve(p, k, tight(k).solver_options);
    EXPECT_LT((r.solution - lin).cwiseAbs().maxCoeff(), 1e-9) << name(k);
    EXPECT_TRUE(r.active_set.empty());
  }
}

TEST(StateSolve, CentralSinkMatchesEnumerationOracle)
{
  const Mesh m = build_unit_square(2);
  const AssembledSystem sys = assemble(m);
  ProblemData d;
  d.alpha = 2.0;
  d.b = 1.0;
  d.q = [](Point) { return 1.0; };
  d.g = interpolate(m, box_indicator(-20.0, 0.25, 0.75, 0.25, 0.75));
  const auto ref = oracle_solution(m, d, Family::robin);
  EXPECT_FALSE(ref.active.empty());
  for (SolverKind k : kinds) {
    const VIReport r = solve_state(m, sys, d, Family::robin, tight(k));
    EXPECT_LT((r.solution - ref.u).cwiseAbs().maxCoeff(), 1e-10) << name(k);
    EXPECT_EQ(r.active_set, ref.active) << name(k);
  }
}

TEST(StateSolve, OracleEquivalenceOnRandomInstances)
{
  std::mt19937_64 rng(20240601);
  std::vector<std::pair<Mesh, Family>> cases{
    {build_unit_square(1), Family::robin},
    {build_unit_square(2), Family::robin},
    {build_unit_square(2, parse_sides("bottom,right")), Family::robin},
    {build_unit_square(2), Family::dirichlet_limit},
    {build_unit_square(3), Family::dirichlet_limit},
  };
  int with_contact = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto& [m, family] = cases[static_cast<std::size_t>(trial) % cases.size()];
    const AssembledSystem sys = assemble(m);
    const ProblemData d = random_problem(m, rng);
    const auto ref = oracle_solution(m, d, family);
    with_contact += !ref.active.empty();
    for (SolverKind k : kinds) {
      const VIReport r = solve_state(m, sys, d, family, tight(k));
      EXPECT_LT((r.solution - ref.u).cwiseAbs().maxCoeff(), 1e-10)
        << "trial " << trial << " " << name(k) << " " << family_name(family);
    }
  }
  EXPECT_GE(with_contact, 10);
}

TEST(StateSolve, ReportInvariantsAndCrossCheck)
{
  std::mt19937_64 rng(5);
  for (int n : {4, 8}) {
    const Mesh m = build_unit_square(n);
    const AssembledSystem sys = assemble(m);
    for (int k = 0; k < 4; ++k) {
      const ProblemData d = random_problem(m, rng);
      for (Family f : {Family::robin, Family::dirichlet_limit}) {
        const VIProblem p = build_state_problem(m, sys, d, f);
        for (SolverKind s : kinds)
          expect_report_invariants(p, solve(p, s), 1e-10);
        StateOptions o;
        o.cross_check = true;
        EXPECT_NO_THROW(solve_state(m, sys, d, f, o));
      }
    }
  }
}

TEST(StateSolve, UniqueFromDifferentInitialIterates)
{
  std::mt19937_64 rng(99);
  const Mesh m = build_unit_square(8);
  const AssembledSystem sys = assemble(m);
  const auto n = static_cast<Eigen::Index>(m.num_nodes());
  for (int inst = 0; inst < 3; ++inst) {
    const ProblemData d = random_problem(m, rng);
    for (Family f : {Family::robin, Family::dirichlet_limit}) {
      const VIProblem p = build_state_problem(m, sys, d, f);
      std::vector<Vector> starts{Vector::Zero(n), Vector::Constant(n, 5.0), Vector::Constant(n, 100.0)};
      std::uniform_real_distribution<double> u(0.0, 10.0);
      for (int k = 0; k < 2; ++k) {
        Vector s(n);
        for (Eigen::Index i = 0; i < n; ++i)
          s[i] = u(rng);
        starts.push_back(s);
      }
      const Vector base = solve(p, SolverKind::active_set).solution;
      for (SolverKind kind : kinds) {
        for (const auto& s : starts) {
          SolverOptions o;
          o.initial = s;
          const Vector sol = solve(p, kind, o).solution;
          EXPECT_LT(v_norm(sys, sol - base), 1e-8) << name(kind);
        }
      }
    }
  }
}

TEST(StateSolve, LipschitzInControl)
{
  std::mt19937_64 rng(12);
  const Mesh m = build_unit_square(4);
  const AssembledSystem sys = assemble(m);
  const double lam = coercivity_estimate(sys, 1.0);
  for (int k = 0; k < 20; ++k) {
    ProblemData d1 = random_problem(m, rng);
    d1.alpha = 1.0;
    ProblemData d2 = d1;
    d2.g = random_problem(m, rng).g;
    const Vector u1 = solve_state(m, sys, d1, Family::robin).solution;
    const Vector u2 = solve_state(m, sys, d2, Family::robin).solution;
    EXPECT_LE(v_norm(sys, u2 - u1), h_norm(sys, d2.g - d1.g) / lam + 1e-8);
  }
}

TEST(StateSolve, APrioriBoundAcrossRefinement)
{
  const Scenario sc = contact_v1();
  double coarse = 0.0;
  for (int n : {16, 32, 64}) {
    const Mesh m = build_unit_square(n);
    const AssembledSystem sys = assemble(m);
    const double v = v_norm(sys, solve_state(m, sys, sc.data_on(m), Family::robin).solution);
    if (n == 16)
      coarse = v;
    EXPECT_LE(v, 1.05 * coarse) << "n=" << n;
  }
}

TEST(StateSolve, MonotoneLoadIsRecordedNotAsserted)
{
  std::mt19937_64 rng(8);
  const Mesh m = build_unit_square(6);
  const AssembledSystem sys = assemble(m);
  int violations = 0;
  for (int k = 0; k < 20; ++k) {
    ProblemData d = random_problem(m, rng);
    const Vector u1 = solve_state(m, sys, d, Family::robin).solution;
    d.g.array() += std::uniform_real_distribution<double>(0.0, 5.0)(rng);
    const Vector u2 = solve_state(m, sys, d, Family::robin).solution;
    violations += (u2 - u1).minCoeff() < -1e-9;
  }
  RecordProperty("monotone_load_violations", violations);
}

TEST(Solvers, Errors)
{
  const Mesh m = build_unit_square(2);
  const AssembledSystem sys = assemble(m);
  ProblemData d;
  d.g = Vector::Constant(9, 5.0);
  d.q = [](Point) { return 1.0; };
  const VIProblem p = build_state_problem(m, sys, d, Family::robin);

  SolverOptions bad;
  bad.tol = 0.0;
  EXPECT_THROW(solve_psor(p, bad), InvalidParameter);
  EXPECT_THROW(solve_active_set(p, bad), InvalidParameter);

  SolverOptions few;
  few.max_iter = 1;
  try {
    solve_psor(p, few);
    FAIL() << "expected NonConvergence";
  } catch (const NonConvergence& e) {
    EXPECT_GT(e.last_residual(), 0.0);
  }

  VIProblem neg = p;
  neg.A = -p.A;
  EXPECT_THROW(solve_psor(neg), MatrixError);
  EXPECT_THROW(solve_active_set(neg), MatrixError);

  VIProblem wrong = p;
  wrong.F = Vector::Zero(4);
  EXPECT_THROW(solve(wrong, SolverKind::active_set), DimensionMismatch);

  VIProblem below = p;
  below.dirichlet.push_back({0, -1.0});
  EXPECT_THROW(solve(below, SolverKind::psor), InvalidParameter);

  SolverOptions wrong_start;
  wrong_start.initial = Vector::Zero(3);
  EXPECT_THROW(solve(p, SolverKind::active_set, wrong_start), DimensionMismatch);
}

TEST(Solvers, GeneralObstacle)
{
  // shifted obstacle l = c: solution of the shifted problem plus c
  const Mesh m = build_unit_square(4);
  const AssembledSystem sys = assemble(m);
  ProblemData d;
  d.g = interpolate(m, box_indicator(-20.0, 0.25, 0.75, 0.25, 0.75));
  d.q = [](Point) { return 1.0; };
  const VIProblem p = build_state_problem(m, sys, d, Family::robin);
  VIProblem shifted = p;
  const double c = 0.3;
  const Vector cvec = Vector::Constant(p.size(), c);
  shifted.lower_bound = cvec;
  shifted.F = p.F + p.A * cvec;
  for (SolverKind k : kinds) {
    const Vector a = solve(p, k).solution;
    const Vector b = solve(shifted, k).solution;
    EXPECT_LT((b - a - cvec).cwiseAbs().maxCoeff(), 1e-9) << name(k);
  }
}
