// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
// Usage: acceptance [output directory for CLI runs]

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>

#include <obstacle_cli/app.hpp>
#include <obstacle_control/control.hpp>
#include <obstacle_control/convergence.hpp>
#include <obstacle_control/presets.hpp>

#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace obstacle_control;

namespace {

constexpr double oracle_tol = 1e-10;     // criterion 1, max-norm
constexpr double solver_tol_tight = 1e-13;
constexpr double uniqueness_tol = 1e-8;  // criterion 2, V-norm
constexpr double lipschitz_slack = 1e-8; // criterion 3
constexpr double h_order_floor = 0.45;   // criteria 4, 5
constexpr double alpha_slope_cap = -0.45; // criterion 6
constexpr double alpha_v_slack = 1e-10;  // criterion 6
constexpr double coercivity_factor = 10.0; // criterion 7
constexpr double bound_slack = 1e-8;     // criterion 8
constexpr double cross_check_tol = 1e-6; // criterion 8, J
constexpr double identity_tol = 1e-9;    // criterion 10

fs::path out_root = "acceptance_out";

struct Verdict
{
  bool pass = true;
  std::string detail;
};

std::string num(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

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

StateOptions tight(SolverKind k = SolverKind::active_set)
{
  StateOptions o;
  o.solver = k;
  o.solver_options.tol = solver_tol_tight;
  return o;
}

double h_norm_of(const AssembledSystem& sys, const Vector& v)
{
  return std::sqrt(quadratic_form(sys.M_H, v));
}

int run_cli(std::vector<std::string> args)
{
  args.insert(args.begin(), "obstacle-control");
  std::vector<const char*> argv;
  for (const auto& a : args)
    argv.push_back(a.c_str());
  std::ostringstream log, err;
  const int code = obstacle_cli::run(static_cast<int>(argv.size()), argv.data(), log, err);
  if (code != 0)
    std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

std::string slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict oracle_equivalence()
{
  struct Case
  {
    int n;
    SideSet gamma1;
    Family family;
  };
  // free-node counts: 4, 9, 9, 6, 12
  const std::vector<Case> cases{{1, Side::bottom, Family::robin},
                                {2, Side::bottom, Family::robin},
                                {2, Side::bottom | Side::right, Family::robin},
                                {2, Side::bottom, Family::dirichlet_limit},
                                {3, Side::bottom, Family::dirichlet_limit}};
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  int instances = 0;
  for (const Case& c : cases) {
    const Mesh m = build_unit_square(c.n, c.gamma1);
    const AssembledSystem sys = assemble(m);
    const auto ds = oracle::dense_system(m);
    const oracle::Vec lower = oracle::Vec::Zero(static_cast<Eigen::Index>(m.num_nodes()));
    for (int k = 0; k < 24; ++k, ++instances) {
      const ProblemData d = random_problem(m, rng);
      auto gf = [&](double x, double y) { return evaluate(m, d.g, {x, y}); };
      oracle::LcpSolution ref;
      if (c.family == Family::robin) {
        ref = oracle::enumerate_active_sets(ds.K + d.alpha * ds.MR, oracle::load(m, gf, d.q, d.alpha, d.b), lower);
      } else {
        std::vector<std::pair<int, double>> fixed;
        for (int i : m.gamma1_nodes())
          fixed.emplace_back(i, d.b);
        ref = oracle::enumerate_active_sets(ds.K, oracle::load(m, gf, d.q, 0.0, d.b), lower, fixed);
      }
      for (SolverKind kind : {SolverKind::active_set, SolverKind::psor}) {
        const Vector u = solve_state(m, sys, d, c.family, tight(kind)).solution;
        worst = std::max(worst, (u - ref.u).cwiseAbs().maxCoeff());
      }
    }
  }
  return {worst <= oracle_tol,
          std::to_string(instances) + " instances x 2 solvers, max diff " + num(worst) + " (tol " + num(oracle_tol) + ")"};
}

Verdict uniqueness()
{
  std::mt19937_64 rng(77);
  double worst = 0.0;
  int instances = 0;
  for (int n : {4, 8}) {
    const Mesh m = build_unit_square(n, Side::bottom | Side::left);
    const AssembledSystem sys = assemble(m);
    const auto nn = static_cast<Eigen::Index>(m.num_nodes());
    for (int k = 0; k < 10; ++k, ++instances) {
      const ProblemData d = random_problem(m, rng);
      std::uniform_real_distribution<double> ud(0.0, 50.0);
      Vector noisy(nn);
      for (Eigen::Index i = 0; i < nn; ++i)
        noisy[i] = ud(rng);
      const std::vector<Vector> starts{Vector::Zero(nn), Vector::Constant(nn, d.b), Vector::Constant(nn, 100.0), noisy,
                                       -noisy};
      for (Family f : {Family::robin, Family::dirichlet_limit}) {
        for (SolverKind kind : {SolverKind::active_set, SolverKind::psor}) {
          std::vector<Vector> sols;
          for (const Vector& s : starts) {
            StateOptions o = tight(kind);
            o.solver_options.initial = s;
            sols.push_back(solve_state(m, sys, d, f, o).solution);
          }
          for (std::size_t j = 1; j < sols.size(); ++j)
            worst = std::max(worst, v_norm(sys, sols[j] - sols[0]));
        }
      }
    }
  }
  return {worst <= uniqueness_tol,
          std::to_string(instances) + " instances x 5 starts x 2 families x 2 solvers, max V-spread " + num(worst) +
            " (tol " + num(uniqueness_tol) + ")"};
}

Verdict lipschitz()
{
  std::mt19937_64 rng(99);
  const Mesh m = build_unit_square(8);
  const AssembledSystem sys = assemble(m);
  double worst_margin = -1e300;
  for (double alpha : {0.5, 1.0, 4.0}) {
    const double lambda = coercivity_estimate(sys, alpha);
    for (int k = 0; k < 50; ++k) {
      ProblemData d1 = random_problem(m, rng);
      d1.alpha = alpha;
      ProblemData d2 = d1;
      std::uniform_real_distribution<double> gd(-30.0, 10.0);
      for (Eigen::Index i = 0; i < d2.g.size(); ++i)
        d2.g[i] = gd(rng);
      const Vector u1 = solve_state(m, sys, d1, Family::robin, tight()).solution;
      const Vector u2 = solve_state(m, sys, d2, Family::robin, tight()).solution;
      const double lhs = v_norm(sys, u2 - u1);
      const double rhs = h_norm_of(sys, d2.g - d1.g) / lambda + lipschitz_slack;
      worst_margin = std::max(worst_margin, lhs - rhs);
    }
  }
  return {worst_margin <= 0.0, "150 pairs, max(lhs - rhs) " + num(worst_margin) + " (slack " + num(lipschitz_slack) + ")"};
}

Verdict h_rate(bool cost_gap)
{
  SweepContext ctx(contact_v1(), 4, 5);
  const RateTable t = cost_gap ? h_sweep_cost(ctx, 2.0, {4, 8, 16, 32}, 64) : h_sweep_state(ctx, 2.0, {4, 8, 16, 32}, 64);
  std::string errs;
  for (const auto& r : t.rows)
    errs += num(r.error) + " ";
  const bool ok = t.strictly_decreasing() && t.has_fit() && t.fitted_order >= h_order_floor;
  return {ok, "errors " + errs + "order " + num(t.fitted_order) + " (floor " + num(h_order_floor) + ", ref n=64)"};
}

Verdict alpha_rate()
{
  SweepContext ctx(contact_v1(), 16, 1);
  std::vector<double> alphas;
  for (double a = 2.0; a <= 16384.0; a *= 2.0)
    alphas.push_back(a);
  const AlphaSweep sw = alpha_sweep_state(ctx, 16, alphas);
  const bool slope_ok = sw.trace.has_fit() && sw.trace.fitted_order <= alpha_slope_cap;
  const bool mono_ok = sw.volume.non_increasing(alpha_v_slack);
  return {slope_ok && mono_ok,
          "trace slope " + num(sw.trace.fitted_order) + " (cap " + num(alpha_slope_cap) + "), V non-increasing " +
            (mono_ok ? "yes" : "no") + " (slack " + num(alpha_v_slack) + ")"};
}

Verdict coercivity()
{
  std::mt19937_64 rng(13);
  const Mesh m = build_unit_square(8);
  const AssembledSystem sys = assemble(m);
  ProblemData d = contact_v1().data_on(m);
  ProblemData zero = d;
  zero.g.setZero();
  const double C = coercivity_factor * h_norm_of(sys, solve_state(m, sys, zero, Family::robin).solution);
  bool ok = true;
  double worst_margin = 1e300;
  for (int k = 0; k < 20; ++k) {
    Vector dir(d.g.size());
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    for (Eigen::Index i = 0; i < dir.size(); ++i)
      dir[i] = ud(rng);
    dir /= h_norm_of(sys, dir);
    double previous = -1.0;
    for (double s : {1.0, 10.0, 100.0, 1000.0}) {
      d.g = s * dir;
      const double J = cost(m, sys, d, Family::robin).value;
      const double margin = J - (0.5 * d.M_cost * s * s - C * s);
      worst_margin = std::min(worst_margin, margin);
      ok = ok && margin >= 0.0 && J > previous;
      previous = J;
    }
  }
  return {ok, "20 directions x norms 1..1000, J increasing, min bound margin " + num(worst_margin)};
}

Verdict optimizer_bound()
{
  double worst = -1e300;
  int runs = 0;
  for (int n : {4, 8}) {
    const Mesh m = build_unit_square(n);
    const AssembledSystem sys = assemble(m);
    for (const Scenario& sc : {contact_v1(), constant_v1()}) {
      for (double M : {0.1, 1.0, 10.0, 1e6}) {
        for (Family f : {Family::robin, Family::dirichlet_limit}) {
          ProblemData d = sc.data_on(m);
          d.M_cost = M;
          ProblemData zero = d;
          zero.g.setZero();
          const double u0 = h_norm_of(sys, solve_state(m, sys, zero, f).solution);
          const OptimizeReport r = optimize(m, sys, d, f);
          worst = std::max(worst, h_norm_of(sys, r.g_opt) - (u0 / std::sqrt(M) + bound_slack));
          ++runs;
        }
      }
    }
  }
  const Mesh m = build_unit_square(2);
  const AssembledSystem sys = assemble(m);
  ProblemData d;
  d.alpha = 1.0;
  d.b = 1.0;
  d.M_cost = 1.0;
  d.q = [](Point) { return 1.0; };
  d.g = Vector::Zero(9);
  OptimizeOptions grad;
  grad.state = tight();
  OptimizeOptions compass = grad;
  compass.method = OptimizeMethod::coord_search;
  compass.tol = 1e-9;
  compass.max_iter = 100000;
  const double gap = std::abs(optimize(m, sys, d, Family::robin, grad).J_opt -
                              optimize(m, sys, d, Family::robin, compass).J_opt);
  return {worst <= 0.0 && gap <= cross_check_tol,
          std::to_string(runs) + " runs, max(||g_opt|| - bound) " + num(worst) + "; n=2 compass J gap " + num(gap) +
            " (tol " + num(cross_check_tol) + ")"};
}

Verdict diagram_cli()
{
  const fs::path out = out_root / "diagram";
  const int code = run_cli({"diagram", "--preset", "constant-v1", "--out", out.string()});
  const std::string summary = slurp(out / "summary.txt");
  const bool ok = code == 0 && summary.find("FAIL") == std::string::npos;
  return {ok, "constant-v1 lattice n=2..16, reference n=64, exit " + std::to_string(code)};
}

Verdict identity()
{
  const Mesh m = build_unit_square(4);
  const AssembledSystem sys = assemble(m);
  const ProblemData d = contact_v1().data_on(m, 1.0);
  try {
    const ConjectureReport r = check_open_problems(m, sys, d, 200, 42);
    const fs::path out = out_root / "conjecture";
    const int code = run_cli({"conjecture", "--preset", "contact-v1", "--set", "n=4", "--set", "alpha=1", "--seed", "42",
                              "--out", out.string()});
    const bool ok = r.max_identity_residual <= identity_tol && code == 0 && fs::exists(out / "conjecture.csv");
    return {ok, "200 trials, max identity residual " + num(r.max_identity_residual) + " (tol " + num(identity_tol) +
                  "); findings: pointwise " + std::to_string(r.pointwise_violations) + ", norm " +
                  std::to_string(r.norm_violations) + ", convexity " + std::to_string(r.convexity_violations)};
  } catch (const Error& e) {
    return {false, e.what()};
  }
}

Verdict determinism()
{
  const std::vector<std::vector<std::string>> runs{
    {"state", "--preset", "constant-v1"},
    {"state", "--preset", "contact-v1"},
    {"optimize", "--preset", "contact-v1", "--set", "n=8"},
    {"sweep-h", "--preset", "contact-v1"},
    {"sweep-alpha", "--preset", "contact-v1"},
    {"conjecture", "--preset", "contact-v1", "--set", "n=4", "--set", "alpha=1", "--set", "trials=50", "--seed", "5"},
    {"interp-check"},
  };
  int files = 0;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    std::vector<fs::path> dirs;
    for (const char* tag : {"a", "b"}) {
      const fs::path dir = out_root / "determinism" / (std::to_string(k) + tag);
      fs::remove_all(dir);
      auto args = runs[k];
      args.insert(args.end(), {"--out", dir.string()});
      if (run_cli(args) != 0)
        return {false, "run " + runs[k][0] + " failed"};
      dirs.push_back(dir);
    }
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
      if (entry.path().extension() != ".csv")
        continue;
      if (slurp(entry.path()) != slurp(dirs[1] / entry.path().filename()))
        return {false, "differs: " + entry.path().string()};
      ++files;
    }
  }
  return {files > 0, std::to_string(files) + " CSV files byte-identical across reruns"};
}

} // namespace

int main(int argc, char** argv)
{
  if (argc > 1)
    out_root = argv[1];
  fs::create_directories(out_root);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
    {"1 oracle equivalence", oracle_equivalence},
    {"2 uniqueness", uniqueness},
    {"3 Lipschitz dependence", lipschitz},
    {"4 h-rate (state)", [] { return h_rate(false); }},
    {"5 cost-gap rate", [] { return h_rate(true); }},
    {"6 alpha-rate", alpha_rate},
    {"7 cost coercivity", coercivity},
    {"8 optimizer bound", optimizer_bound},
    {"9 diagram", diagram_cli},
    {"10 convexity-gap identity", identity},
    {"11 determinism", determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
