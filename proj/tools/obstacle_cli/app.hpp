#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <obstacle_control/assembly.hpp>
#include <obstacle_control/control.hpp>
#include <obstacle_control/convergence.hpp>
#include <obstacle_control/errors.hpp>
#include <obstacle_control/mesh.hpp>
#include <obstacle_control/vi_solver.hpp>

#include "config.hpp"

namespace obstacle_cli {

enum ExitCode : int
{
  exit_ok = 0,
  exit_internal = 1,
  exit_config = 2,
  exit_nonconvergence = 3,
  exit_check_failed = 4,
};

/// Output file with the standard comment header.
class Output
{
public:
  Output(const RunConfig& cfg, const std::string& name, const std::vector<std::string>& notes = {})
    : path_(std::filesystem::path(cfg.out) / name), os_(path_, std::ios::binary)
  {
    if (!os_)
      throw ConfigError("cannot write " + path_.string());
    os_ << "# obstacle_control " << cfg.command << "\n"
        << "# config_hash: " << config_hash(cfg) << "\n"
        << "# preset: " << cfg.preset << "\n";
    for (const auto& n : notes)
      os_ << "# " << n << "\n";
  }

  std::ostream& stream() { return os_; }

  template <typename T>
  Output& operator<<(const T& v)
  {
    os_ << v;
    return *this;
  }

private:
  std::filesystem::path path_;
  std::ofstream os_;
};

inline std::string fd(double v)
{
  return format_double(v);
}

inline void write_rate_table(const RunConfig& cfg, const std::string& name, const oc::RateTable& t)
{
  std::vector<std::string> notes{"reference: " + t.reference};
  if (t.rows_excluded_from_fit > 0)
    notes.push_back(std::to_string(t.rows_excluded_from_fit) +
                    " rows excluded from fit (zero errors or errors below 100x solver tolerance)");
  notes.push_back("fitted_order: " + (t.has_fit() ? fd(t.fitted_order) : std::string("none")));
  Output out(cfg, name, notes);
  out << "param,value,error,norm\n";
  for (const auto& r : t.rows)
    out << t.parameter_name << "," << fd(r.parameter) << "," << fd(r.error) << "," << r.norm << "\n";
}

/// One line per acceptance check in the summary file.
struct CheckList
{
  std::vector<std::pair<std::string, bool>> items;
  std::vector<std::string> notes;

  void add(const std::string& what, bool ok) { items.emplace_back(what, ok); }

  bool all_ok() const
  {
    for (const auto& [w, ok] : items)
      if (!ok)
        return false;
    return true;
  }

  void write(const RunConfig& cfg, const std::string& name, std::ostream& log) const
  {
    Output out(cfg, name);
    for (const auto& n : notes) {
      out << n << "\n";
      log << n << "\n";
    }
    for (const auto& [w, ok] : items) {
      out << (ok ? "PASS " : "FAIL ") << w << "\n";
      log << (ok ? "PASS " : "FAIL ") << w << "\n";
    }
  }
};

inline std::string fit_note(const std::string& label, const oc::RateTable& t)
{
  std::string s = label + ": fitted order " + (t.has_fit() ? fd(t.fitted_order) : std::string("none"));
  if (t.rows_excluded_from_fit == static_cast<int>(t.rows.size()))
    s += " (all errors zero or below the solver floor; zero errors excluded from fit)";
  else if (t.rows_excluded_from_fit > 0)
    s += " (" + std::to_string(t.rows_excluded_from_fit) + " rows excluded from fit)";
  return s;
}

/// Every error is zero or below the fit floor.
inline bool all_zero(const oc::RateTable& t)
{
  return !t.rows.empty() && t.rows_excluded_from_fit == static_cast<int>(t.rows.size());
}

inline int cmd_state(const RunConfig& cfg, std::ostream& log)
{
  const oc::Mesh mesh = oc::build_unit_square(cfg.n, cfg.gamma1);
  const oc::AssembledSystem sys = oc::assemble(mesh);
  const oc::ProblemData data = problem_data(cfg, mesh);
  data.validate(mesh, cfg.family == oc::Family::robin);
  const oc::VIReport rep = oc::solve_state(mesh, sys, data, cfg.family, state_options(cfg));

  {
    Output out(cfg, "state.csv", {std::string("family: ") + oc::family_name(cfg.family)});
    out << "x,y,u\n";
    for (std::size_t i = 0; i < mesh.num_nodes(); ++i)
      out << fd(mesh.nodes()[i].x) << "," << fd(mesh.nodes()[i].y) << "," << fd(rep.solution[static_cast<Eigen::Index>(i)])
          << "\n";
  }
  const oc::Norms nrm = oc::norms(sys, rep.solution);
  Output out(cfg, "report.txt");
  std::ostringstream body;
  body << "family " << oc::family_name(cfg.family) << "\n"
       << "solver " << (cfg.solver == oc::SolverKind::psor ? "psor" : "active_set") << "\n"
       << "iterations " << rep.iterations << "\n"
       << "residual " << fd(rep.residual) << "\n"
       << "active_set_size " << rep.active_set.size() << "\n"
       << "h_norm " << fd(nrm.H) << "\n"
       << "v_norm " << fd(nrm.V) << "\n"
       << "r_norm " << fd(nrm.R) << "\n";
  out << body.str();
  log << body.str();
  return exit_ok;
}

inline int cmd_optimize(const RunConfig& cfg, std::ostream& log)
{
  const oc::Mesh mesh = oc::build_unit_square(cfg.n, cfg.gamma1);
  const oc::AssembledSystem sys = oc::assemble(mesh);
  const oc::ProblemData data = problem_data(cfg, mesh);
  data.validate(mesh, cfg.family == oc::Family::robin);
  const oc::OptimizeOptions opt = optimize_options(cfg);
  const oc::OptimizeReport rep = oc::optimize(mesh, sys, data, cfg.family, opt);

  oc::ProblemData zero = data;
  zero.g = oc::ScalarField::Zero(data.g.size());
  const double u0 = oc::h_norm(sys, oc::solve_state(mesh, sys, zero, cfg.family, opt.state).solution);
  const double bound = u0 / std::sqrt(*cfg.M_cost);
  const double g_norm = oc::h_norm(sys, rep.g_opt);

  const std::vector<std::string> notes{std::string("family: ") + oc::family_name(cfg.family),
                                       "control space: P1 nodal space of the state mesh"};
  {
    Output out(cfg, "optimize.csv", notes);
    out << "x,y,g_opt,u_opt\n";
    for (std::size_t i = 0; i < mesh.num_nodes(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      out << fd(mesh.nodes()[i].x) << "," << fd(mesh.nodes()[i].y) << "," << fd(rep.g_opt[k]) << ","
          << fd(rep.state.solution[k]) << "\n";
    }
  }
  {
    Output out(cfg, "history.csv", notes);
    out << "iteration,J\n";
    for (std::size_t i = 0; i < rep.history.size(); ++i)
      out << i << "," << fd(rep.history[i]) << "\n";
  }
  Output out(cfg, "report.txt", notes);
  std::ostringstream body;
  body << "method " << oc::method_name(rep.method) << "\n"
       << "J_opt " << fd(rep.J_opt) << "\n"
       << "iterations " << rep.iterations << "\n"
       << "gradient_norm_final " << fd(rep.gradient_norm_final) << "\n"
       << "stopped_at_noise_floor " << (rep.noise_floor ? "yes" : "no") << "\n"
       << "g_opt_h_norm " << fd(g_norm) << "\n"
       << "bound_u0_over_sqrt_M " << fd(bound) << "\n"
       << "bound_holds " << (g_norm <= bound + 1e-8 ? "yes" : "no") << "\n";
  out << body.str();
  log << body.str();
  return exit_ok;
}

inline int cmd_sweep_h(const RunConfig& cfg, std::ostream& log)
{
  const int levels = [&] {
    int l = 1;
    for (int n = cfg.levels.front(); n < cfg.reference_n; n *= 2)
      ++l;
    return l;
  }();
  oc::SweepContext ctx(scenario(cfg), cfg.levels.front(), levels, state_options(cfg));
  const double alpha = *cfg.alpha;
  const oc::RateTable state = oc::h_sweep_state(ctx, alpha, cfg.levels, cfg.reference_n);
  const oc::RateTable cost_t = oc::h_sweep_cost(ctx, alpha, cfg.levels, cfg.reference_n);
  write_rate_table(cfg, "rates_h_state.csv", state);
  write_rate_table(cfg, "rates_h_cost.csv", cost_t);

  CheckList checks;
  checks.notes.push_back(fit_note("state V-norm", state));
  checks.notes.push_back(fit_note("cost gap", cost_t));
  for (const auto* t : {&state, &cost_t}) {
    const std::string label = t == &state ? "state V-norm errors" : "cost gaps";
    if (all_zero(*t)) {
      checks.add(label + " are zero to the solver floor", true);
      continue;
    }
    checks.add(label + " strictly decreasing", t->strictly_decreasing());
    checks.add(label + " fitted order >= 0.45", t->has_fit() && t->fitted_order >= 0.45);
  }
  checks.write(cfg, "summary.txt", log);
  return checks.all_ok() ? exit_ok : exit_check_failed;
}

inline int cmd_sweep_alpha(const RunConfig& cfg, std::ostream& log)
{
  oc::SweepContext ctx(scenario(cfg), cfg.sweep_n, 1, state_options(cfg));
  const oc::AlphaSweep sw = oc::alpha_sweep_state(ctx, cfg.sweep_n, cfg.alphas);
  write_rate_table(cfg, "rates_alpha_trace.csv", sw.trace);
  write_rate_table(cfg, "rates_alpha_volume.csv", sw.volume);

  CheckList checks;
  checks.notes.push_back(fit_note("trace R-norm vs alpha-1", sw.trace));
  checks.notes.push_back(fit_note("V-norm vs alpha", sw.volume));
  if (all_zero(sw.trace) && all_zero(sw.volume)) {
    checks.add("errors are zero to the solver floor", true);
  } else {
    checks.add("trace slope <= -0.45", sw.trace.has_fit() && sw.trace.fitted_order <= -0.45);
    checks.add("V-norm errors non-increasing within 1e-10", sw.volume.non_increasing(1e-10));
  }
  checks.write(cfg, "summary.txt", log);
  return checks.all_ok() ? exit_ok : exit_check_failed;
}

inline int cmd_diagram(const RunConfig& cfg, std::ostream& log)
{
  std::vector<double> alphas = cfg.diagram_alphas;
  if (alphas.empty())
    for (int n : cfg.diagram_levels)
      alphas.push_back(n / std::sqrt(2.0));
  oc::DiagramOptions opt;
  opt.extra_levels = cfg.diagram_extra_levels;
  opt.optimizer = optimize_options(cfg);
  const oc::DiagramReport rep = oc::diagram(scenario(cfg), cfg.diagram_levels, alphas, opt);

  const double ref_h = std::sqrt(2.0) / rep.reference_n;
  {
    Output out(cfg,
               "diagram.csv",
               {"surrogate_reference: rows with h = " + fd(ref_h) + " are n=" + std::to_string(rep.reference_n) +
                  " reference-mesh optima standing in for the continuous problems",
                "alpha = inf marks the Dirichlet-limit problem",
                "distances are H-norms on the reference mesh; nan where undefined",
                "control space: P1 nodal space of each mesh"});
    out << "h,alpha,J_opt,g_norm,d1,d2,d3\n";
    for (const auto& p : rep.points)
      out << fd(p.h) << "," << fd(p.alpha) << "," << fd(p.J_opt) << "," << fd(p.g_norm) << "," << fd(p.d1) << ","
          << fd(p.d2) << "," << fd(p.d3) << "\n";
  }
  CheckList checks;
  checks.notes.push_back("reference mesh n=" + std::to_string(rep.reference_n) + " (surrogate_reference)");
  for (const auto& f : rep.failures)
    checks.notes.push_back("flag: " + f);
  checks.add("d1(h) decreasing for every alpha", std::none_of(rep.failures.begin(), rep.failures.end(), [](const auto& f) {
               return f.rfind("d1", 0) == 0;
             }));
  checks.add("d2(alpha) decreasing for every h", std::none_of(rep.failures.begin(), rep.failures.end(), [](const auto& f) {
               return f.rfind("d2", 0) == 0;
             }));
  checks.add("d3 strictly decreasing along the diagonal",
             std::none_of(rep.failures.begin(), rep.failures.end(), [](const auto& f) { return f.rfind("d3", 0) == 0; }));
  checks.write(cfg, "summary.txt", log);
  return checks.all_ok() ? exit_ok : exit_check_failed;
}

inline int cmd_conjecture(const RunConfig& cfg, std::ostream& log)
{
  const oc::Mesh mesh = oc::build_unit_square(cfg.n, cfg.gamma1);
  const oc::AssembledSystem sys = oc::assemble(mesh);
  const oc::ProblemData data = problem_data(cfg, mesh);
  data.validate(mesh, true);
  oc::ConjectureOptions opt;
  opt.g_low = cfg.g_low;
  opt.g_high = cfg.g_high;
  opt.state = state_options(cfg);
  const oc::ConjectureReport rep = oc::check_open_problems(mesh, sys, data, cfg.trials, cfg.seed, opt);

  {
    Output out(cfg, "conjecture.csv", {"seed: " + std::to_string(cfg.seed)});
    out << "trial,mu,min_margin_pointwise,h_norm_margin,convexity_gap\n";
    for (const auto& t : rep.trials)
      out << t.trial << "," << fd(t.mu) << "," << fd(t.min_margin_pointwise) << "," << fd(t.h_norm_margin) << ","
          << fd(t.convexity_gap) << "\n";
  }
  {
    const auto witnesses = rep.witnesses();
    Output out(cfg, "witnesses.txt", {"controls for every trial with a negative margin; one nodal value per column"});
    if (witnesses.empty())
      out << "# none\n";
    for (const auto* t : witnesses) {
      out << "trial " << t->trial << " mu " << fd(t->mu) << " min_margin_pointwise " << fd(t->min_margin_pointwise)
          << " h_norm_margin " << fd(t->h_norm_margin) << " convexity_gap " << fd(t->convexity_gap) << "\n";
      for (const auto* g : {&t->g1, &t->g2}) {
        out << (g == &t->g1 ? "g1" : "g2");
        for (Eigen::Index i = 0; i < g->size(); ++i)
          out << " " << fd((*g)[i]);
        out << "\n";
      }
    }
  }
  CheckList checks;
  checks.notes.push_back("trials " + std::to_string(rep.trials.size()));
  checks.notes.push_back("finding: pointwise u4 <= u3 violated in " + std::to_string(rep.pointwise_violations) +
                         " trials");
  checks.notes.push_back("finding: ||u4||_H <= ||u3||_H violated in " + std::to_string(rep.norm_violations) +
                         " trials");
  checks.notes.push_back("finding: strict convexity inequality violated in " +
                         std::to_string(rep.convexity_violations) + " trials");
  checks.notes.push_back("max identity residual " + fd(rep.max_identity_residual));
  checks.add("convexity-gap identity holds to 1e-9", rep.max_identity_residual <= 1e-9);
  checks.add("u4 >= 0 in every trial", true);
  checks.write(cfg, "summary.txt", log);
  return checks.all_ok() ? exit_ok : exit_check_failed;
}

inline int cmd_interp_check(const RunConfig& cfg, std::ostream& log)
{
  oc::InterpolationSweep sw;
  double l2_order = 2.0, h1_order = 1.0;
  if (cfg.interp_function == "x2") {
    sw = oc::interpolation_sweep([](double x, double) { return x * x; },
                                 [](double x, double) { return std::pair{2.0 * x, 0.0}; },
                                 cfg.interp_levels,
                                 cfg.gamma1);
  } else if (cfg.interp_function == "xy") {
    sw = oc::interpolation_sweep([](double x, double y) { return x * y; },
                                 [](double x, double y) { return std::pair{y, x}; },
                                 cfg.interp_levels,
                                 cfg.gamma1);
  } else {
    sw = oc::interpolation_sweep([](double x, double y) { return 3.0 * x - y; },
                                 [](double, double) { return std::pair{3.0, -1.0}; },
                                 cfg.interp_levels,
                                 cfg.gamma1);
    l2_order = h1_order = std::numeric_limits<double>::quiet_NaN();
  }
  write_rate_table(cfg, "rates_interp_l2.csv", sw.l2);
  write_rate_table(cfg, "rates_interp_h1.csv", sw.h1);

  CheckList checks;
  checks.notes.push_back(fit_note("L2 interpolation error", sw.l2));
  checks.notes.push_back(fit_note("H1 interpolation error", sw.h1));
  if (std::isnan(l2_order)) {
    const double worst = std::max(sw.l2.rows.empty() ? 0.0 : sw.l2.rows.front().error,
                                  sw.h1.rows.empty() ? 0.0 : sw.h1.rows.front().error);
    checks.add("affine data reproduced exactly (errors <= 1e-12)", worst <= 1e-12);
  } else {
    checks.add("L2 order within 0.1 of 2", sw.l2.has_fit() && std::abs(sw.l2.fitted_order - l2_order) <= 0.1);
    checks.add("H1 order within 0.1 of 1", sw.h1.has_fit() && std::abs(sw.h1.fitted_order - h1_order) <= 0.1);
  }
  checks.write(cfg, "summary.txt", log);
  return checks.all_ok() ? exit_ok : exit_check_failed;
}

inline int dispatch(const RunConfig& cfg, std::ostream& log)
{
  if (cfg.command == "state")
    return cmd_state(cfg, log);
  if (cfg.command == "optimize")
    return cmd_optimize(cfg, log);
  if (cfg.command == "sweep-h")
    return cmd_sweep_h(cfg, log);
  if (cfg.command == "sweep-alpha")
    return cmd_sweep_alpha(cfg, log);
  if (cfg.command == "diagram")
    return cmd_diagram(cfg, log);
  if (cfg.command == "conjecture")
    return cmd_conjecture(cfg, log);
  if (cfg.command == "interp-check")
    return cmd_interp_check(cfg, log);
  throw ConfigError("unknown command '" + cfg.command + "'");
}

/// Entry point shared by the executable and the tests. Returns the exit code.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr)
{
  CLI::App app{"Obstacle-problem optimal control: state solves, optimization and convergence sweeps"};
  app.require_subcommand(1);

  std::string config_file, preset, out_dir;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool dump_mesh = false, cross_check = false;

  const std::vector<std::pair<std::string, std::string>> commands{
    {"state", "solve one state system"},
    {"optimize", "minimize the cost over the nodal control space"},
    {"sweep-h", "h-refinement study of the state and the cost"},
    {"sweep-alpha", "Robin-to-Dirichlet study on a fixed mesh"},
    {"diagram", "optimal controls on an (h, alpha) lattice with reference corners"},
    {"conjecture", "random search on the convex-combination inequalities"},
    {"interp-check", "interpolation error orders"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_file, "flat key = value config file");
    sub->add_option("--set", sets, "override one key: --set key=value (repeatable)");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--preset", preset, "constant-v1 | contact-v1");
    sub->add_flag("--dump-mesh", dump_mesh, "also write mesh.txt");
    sub->add_option("--seed", seed, "random seed");
    sub->add_flag("--cross-check", cross_check, "run both VI solvers and require agreement");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return exit_config;
  }

  RunConfig cfg;
  try {
    cfg.command = app.get_subcommands().front()->get_name();
    std::optional<std::string> file_preset;
    std::vector<std::pair<int, std::string>> lines;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in)
        throw ConfigError("cannot read config file " + config_file);
      lines = read_config_lines(in, file_preset);
    }
    std::optional<std::string> set_preset;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq != std::string::npos && detail::trim(s.substr(0, eq)) == "preset")
        set_preset = detail::trim(s.substr(eq + 1));
    }
    // precedence: --preset, then --set preset=, then the file's preset line
    const std::string chosen = !preset.empty() ? preset : set_preset ? *set_preset : file_preset.value_or("none");
    apply_preset(cfg, chosen);
    for (const auto& [number, text] : lines) {
      try {
        apply_assignment(cfg, text);
      } catch (const ConfigError& e) {
        throw ConfigError(config_file + ":" + std::to_string(number) + ": " + e.what());
      }
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq != std::string::npos && detail::trim(s.substr(0, eq)) == "preset")
        continue;
      apply_assignment(cfg, s);
    }
    if (!out_dir.empty())
      cfg.out = out_dir;
    if (seed)
      cfg.seed = *seed;
    if (cross_check)
      cfg.cross_check = true;
    cfg.dump_mesh = dump_mesh;
    validate(cfg);
  } catch (const ConfigError& e) {
    err << e.what() << "\n";
    return exit_config;
  }

  try {
    std::filesystem::create_directories(cfg.out);
    {
      Output out(cfg, "config.txt");
      out << canonical(cfg);
    }
    if (cfg.dump_mesh) {
      Output out(cfg, "mesh.txt");
      oc::write_mesh(out.stream(), oc::build_unit_square(cfg.n, cfg.gamma1));
    }
    return dispatch(cfg, log);
  } catch (const ConfigError& e) {
    err << e.what() << "\n";
    return exit_config;
  } catch (const oc::InvalidParameter& e) {
    err << "invalid parameter: " << e.what() << "\n";
    return exit_config;
  } catch (const oc::EvaluationError& e) {
    err << "evaluation error: " << e.what() << "\n";
    return exit_config;
  } catch (const oc::NonConvergence& e) {
    err << "non-convergence: " << e.what() << "\n";
    return exit_nonconvergence;
  } catch (const oc::StallError& e) {
    err << "stall: " << e.what() << "\n";
    return exit_nonconvergence;
  } catch (const oc::MatrixError& e) {
    err << "matrix error: " << e.what() << "\n";
    return exit_nonconvergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_internal;
  }
}

} // namespace obstacle_cli
