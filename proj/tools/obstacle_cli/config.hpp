#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <obstacle_control/control.hpp>
#include <obstacle_control/presets.hpp>
#include <obstacle_control/vi_solver.hpp>

namespace obstacle_cli {

namespace oc = obstacle_control;

/// Bad, missing or unknown configuration. Maps to exit code 2.
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct GSpec
{
  enum class Kind { constant, box, file } kind = Kind::constant;
  double value = 0.0;
  std::array<double, 4> box{0.0, 1.0, 0.0, 1.0}; // x0, x1, y0, y1
  std::string path;
};

struct RunConfig
{
  std::string command;
  std::string preset = "none";

  int n = 8;
  oc::SideSet gamma1 = oc::Side::bottom;
  std::optional<double> alpha;
  std::optional<double> b;
  std::optional<double> M_cost;
  std::array<double, 4> q{0.0, 0.0, 0.0, 0.0}; // bottom, right, top, left
  GSpec g;
  oc::Family family = oc::Family::robin;

  oc::SolverKind solver = oc::SolverKind::active_set;
  double tol = 1e-10;
  int max_iter = -1;
  double omega = 1.5;
  bool cross_check = false;

  oc::OptimizeMethod method = oc::OptimizeMethod::proj_grad_adjoint;
  double opt_tol = 1e-8;
  int opt_max_iter = 2000;

  std::vector<int> levels{4, 8, 16, 32};
  int reference_n = 64;
  int sweep_n = 16;
  std::vector<double> alphas{2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384};
  std::vector<int> diagram_levels{2, 4, 8, 16};
  std::vector<double> diagram_alphas; // empty: alpha_k = 1/h_k
  int diagram_extra_levels = 2;

  int trials = 200;
  std::uint64_t seed = 42;
  double g_low = -30.0;
  double g_high = 10.0;

  std::string interp_function = "x2";
  std::vector<int> interp_levels{4, 8, 16, 32};

  std::string out = "out";
  bool dump_mesh = false;
};

inline std::string format_double(double v)
{
  if (std::isnan(v))
    return "nan";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string trim(const std::string& s)
{
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos)
    return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    out.push_back(trim(item));
  return out;
}

inline double parse_double(const std::string& key, const std::string& v)
{
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d))
      throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a finite number, got '" + v + "'");
  }
}

inline long long parse_integer(const std::string& key, const std::string& v)
{
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size())
      throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  }
}

inline int parse_int(const std::string& key, const std::string& v)
{
  const long long i = parse_integer(key, v);
  if (i < -(1LL << 30) || i > (1LL << 30))
    throw ConfigError("config: " + key + " out of range");
  return static_cast<int>(i);
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
  if (v == "true" || v == "1" || v == "yes")
    return true;
  if (v == "false" || v == "0" || v == "no")
    return false;
  throw ConfigError("config: " + key + " expects true or false, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v)
{
  std::vector<int> out;
  for (const auto& item : split(v, ','))
    out.push_back(parse_int(key, item));
  return out;
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& v)
{
  std::vector<double> out;
  if (v.empty())
    return out;
  for (const auto& item : split(v, ','))
    out.push_back(parse_double(key, item));
  return out;
}

inline GSpec parse_g(const std::string& v)
{
  GSpec g;
  if (v.rfind("box:", 0) == 0) {
    const auto parts = split(v.substr(4), ',');
    if (parts.size() != 5)
      throw ConfigError("config: g = box:VALUE,x0,x1,y0,y1 needs five numbers");
    g.kind = GSpec::Kind::box;
    g.value = parse_double("g", parts[0]);
    for (int k = 0; k < 4; ++k)
      g.box[k] = parse_double("g", parts[k + 1]);
  } else if (v.rfind("file:", 0) == 0) {
    g.kind = GSpec::Kind::file;
    g.path = v.substr(5);
    if (g.path.empty())
      throw ConfigError("config: g = file:PATH needs a path");
  } else {
    g.kind = GSpec::Kind::constant;
    g.value = parse_double("g", v.rfind("constant:", 0) == 0 ? v.substr(9) : v);
  }
  return g;
}

inline std::string format_g(const GSpec& g)
{
  switch (g.kind) {
    case GSpec::Kind::box:
      return "box:" + format_double(g.value) + "," + format_double(g.box[0]) + "," + format_double(g.box[1]) + "," +
             format_double(g.box[2]) + "," + format_double(g.box[3]);
    case GSpec::Kind::file:
      return "file:" + g.path;
    default:
      return "constant:" + format_double(g.value);
  }
}

template <typename T>
std::string join(const std::vector<T>& v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i)
      s += ",";
    if constexpr (std::is_floating_point_v<T>)
      s += format_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& setters()
{
  static const std::map<std::string, Setter> table = {
    {"n", [](RunConfig& c, const std::string& v) { c.n = parse_int("n", v); }},
    {"gamma1",
     [](RunConfig& c, const std::string& v) {
       try {
         c.gamma1 = oc::parse_sides(v);
       } catch (const std::exception& e) {
         throw ConfigError(std::string("config: gamma1: ") + e.what());
       }
     }},
    {"alpha", [](RunConfig& c, const std::string& v) { c.alpha = parse_double("alpha", v); }},
    {"b", [](RunConfig& c, const std::string& v) { c.b = parse_double("b", v); }},
    {"M_cost", [](RunConfig& c, const std::string& v) { c.M_cost = parse_double("M_cost", v); }},
    {"q", [](RunConfig& c, const std::string& v) { c.q.fill(parse_double("q", v)); }},
    {"q_bottom", [](RunConfig& c, const std::string& v) { c.q[0] = parse_double("q_bottom", v); }},
    {"q_right", [](RunConfig& c, const std::string& v) { c.q[1] = parse_double("q_right", v); }},
    {"q_top", [](RunConfig& c, const std::string& v) { c.q[2] = parse_double("q_top", v); }},
    {"q_left", [](RunConfig& c, const std::string& v) { c.q[3] = parse_double("q_left", v); }},
    {"g", [](RunConfig& c, const std::string& v) { c.g = parse_g(v); }},
    {"family",
     [](RunConfig& c, const std::string& v) {
       if (v == "robin")
         c.family = oc::Family::robin;
       else if (v == "dirichlet_limit")
         c.family = oc::Family::dirichlet_limit;
       else
         throw ConfigError("config: family must be robin or dirichlet_limit");
     }},
    {"solver",
     [](RunConfig& c, const std::string& v) {
       if (v == "active_set")
         c.solver = oc::SolverKind::active_set;
       else if (v == "psor")
         c.solver = oc::SolverKind::psor;
       else
         throw ConfigError("config: solver must be active_set or psor");
     }},
    {"tol", [](RunConfig& c, const std::string& v) { c.tol = parse_double("tol", v); }},
    {"max_iter", [](RunConfig& c, const std::string& v) { c.max_iter = parse_int("max_iter", v); }},
    {"omega", [](RunConfig& c, const std::string& v) { c.omega = parse_double("omega", v); }},
    {"cross_check", [](RunConfig& c, const std::string& v) { c.cross_check = parse_bool("cross_check", v); }},
    {"opt_method",
     [](RunConfig& c, const std::string& v) {
       if (v == "proj_grad_adjoint")
         c.method = oc::OptimizeMethod::proj_grad_adjoint;
       else if (v == "coord_search")
         c.method = oc::OptimizeMethod::coord_search;
       else
         throw ConfigError("config: opt_method must be proj_grad_adjoint or coord_search");
     }},
    {"opt_tol", [](RunConfig& c, const std::string& v) { c.opt_tol = parse_double("opt_tol", v); }},
    {"opt_max_iter", [](RunConfig& c, const std::string& v) { c.opt_max_iter = parse_int("opt_max_iter", v); }},
    {"levels", [](RunConfig& c, const std::string& v) { c.levels = parse_int_list("levels", v); }},
    {"reference_n", [](RunConfig& c, const std::string& v) { c.reference_n = parse_int("reference_n", v); }},
    {"sweep_n", [](RunConfig& c, const std::string& v) { c.sweep_n = parse_int("sweep_n", v); }},
    {"alphas", [](RunConfig& c, const std::string& v) { c.alphas = parse_double_list("alphas", v); }},
    {"diagram_levels",
     [](RunConfig& c, const std::string& v) { c.diagram_levels = parse_int_list("diagram_levels", v); }},
    {"diagram_alphas",
     [](RunConfig& c, const std::string& v) { c.diagram_alphas = parse_double_list("diagram_alphas", v); }},
    {"diagram_extra_levels",
     [](RunConfig& c, const std::string& v) { c.diagram_extra_levels = parse_int("diagram_extra_levels", v); }},
    {"trials", [](RunConfig& c, const std::string& v) { c.trials = parse_int("trials", v); }},
    {"seed",
     [](RunConfig& c, const std::string& v) {
       const long long s = parse_integer("seed", v);
       if (s < 0)
         throw ConfigError("config: seed must be non-negative");
       c.seed = static_cast<std::uint64_t>(s);
     }},
    {"g_low", [](RunConfig& c, const std::string& v) { c.g_low = parse_double("g_low", v); }},
    {"g_high", [](RunConfig& c, const std::string& v) { c.g_high = parse_double("g_high", v); }},
    {"interp_function",
     [](RunConfig& c, const std::string& v) {
       if (v != "x2" && v != "affine" && v != "xy")
         throw ConfigError("config: interp_function must be x2, xy or affine");
       c.interp_function = v;
     }},
    {"interp_levels",
     [](RunConfig& c, const std::string& v) { c.interp_levels = parse_int_list("interp_levels", v); }},
    {"out", [](RunConfig& c, const std::string& v) { c.out = v; }},
  };
  return table;
}

} // namespace detail

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value)
{
  const auto& table = detail::setters();
  const auto it = table.find(key);
  if (it == table.end())
    throw ConfigError("config: unknown key '" + key + "'");
  it->second(cfg, value);
}

/// Applies one `key=value` (or `key = value`) assignment.
inline void apply_assignment(RunConfig& cfg, const std::string& text)
{
  const auto eq = text.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: expected key = value, got '" + text + "'");
  const std::string key = detail::trim(text.substr(0, eq));
  if (key.empty())
    throw ConfigError("config: empty key in '" + text + "'");
  apply_setting(cfg, key, detail::trim(text.substr(eq + 1)));
}

/// Flat `key = value` file; `#` starts a comment, blank lines are ignored.
/// `preset` lines are returned instead of applied so presets can be
/// installed before the other keys.
inline std::vector<std::pair<int, std::string>> read_config_lines(std::istream& in, std::optional<std::string>& preset)
{
  std::vector<std::pair<int, std::string>> lines;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.erase(hash);
    line = detail::trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    if (detail::trim(line.substr(0, eq)) == "preset")
      preset = detail::trim(line.substr(eq + 1));
    else
      lines.emplace_back(number, line);
  }
  return lines;
}

/// Installs the named preset's defaults.
inline void apply_preset(RunConfig& cfg, const std::string& name)
{
  if (name == "constant-v1") {
    cfg.preset = name;
    cfg.n = 8;
    cfg.alpha = 1.0;
    cfg.b = 1.0;
    cfg.M_cost = 1.0;
    cfg.q.fill(0.0);
    cfg.g = GSpec{};
    cfg.levels = {2, 4, 8, 16};
    cfg.reference_n = 32;
  } else if (name == "contact-v1") {
    cfg.preset = name;
    cfg.n = 16;
    cfg.alpha = 2.0;
    cfg.b = 1.0;
    cfg.M_cost = 1.0;
    cfg.q.fill(1.0);
    cfg.g.kind = GSpec::Kind::box;
    cfg.g.value = -20.0;
    cfg.g.box = {0.25, 0.75, 0.25, 0.75};
    cfg.levels = {4, 8, 16, 32};
    cfg.reference_n = 64;
  } else if (name != "none") {
    throw ConfigError("config: unknown preset '" + name + "' (known: constant-v1, contact-v1)");
  }
}

inline bool needs_cost(const std::string& command)
{
  return command == "optimize" || command == "diagram" || command == "conjecture";
}

inline bool uses_problem(const std::string& command)
{
  return command != "interp-check";
}

/// Range checks before any solve. Mirrors the ProblemData invariants.
inline void validate(const RunConfig& c)
{
  auto require = [](bool ok, const std::string& what) {
    if (!ok)
      throw ConfigError("config: " + what);
  };
  if (uses_problem(c.command)) {
    require(c.n >= 1, "n must be >= 1");
    require(c.b.has_value(), "missing required key b");
    require(*c.b > 0.0, "b must be > 0");
    const bool alpha_needed = c.family == oc::Family::robin || c.command == "diagram" || c.command == "conjecture";
    if (alpha_needed) {
      require(c.alpha.has_value(), "missing required key alpha");
      require(*c.alpha > 0.0, "alpha must be > 0");
    }
    if (needs_cost(c.command)) {
      require(c.M_cost.has_value(), "missing required key M_cost");
      require(*c.M_cost > 0.0, "M_cost must be > 0");
    } else if (c.M_cost) {
      require(*c.M_cost > 0.0, "M_cost must be > 0");
    }
  }
  require(c.tol > 0.0, "tol must be > 0");
  require(c.omega > 0.0 && c.omega < 2.0, "omega must lie in (0, 2)");
  require(c.opt_tol > 0.0, "opt_tol must be > 0");
  require(c.opt_max_iter >= 1, "opt_max_iter must be >= 1");
  require(c.trials >= 1, "trials must be >= 1");
  require(c.g_low <= c.g_high, "g_low must not exceed g_high");
  require(!c.out.empty(), "out must not be empty");

  auto doubling = [](const std::vector<int>& v) {
    if (v.empty() || v.front() < 1)
      return false;
    for (std::size_t k = 1; k < v.size(); ++k)
      if (v[k] != 2 * v[k - 1])
        return false;
    return true;
  };
  if (c.command == "sweep-h") {
    require(c.levels.size() >= 4, "levels needs at least four entries");
    require(doubling(c.levels), "levels must start >= 1 and double");
    int ref = c.levels.back();
    while (ref < c.reference_n)
      ref *= 2;
    require(ref == c.reference_n && c.reference_n > c.levels.back(),
            "reference_n must be a refinement of the finest level");
  }
  if (c.command == "sweep-alpha") {
    require(c.sweep_n >= 1, "sweep_n must be >= 1");
    require(c.alphas.size() >= 3, "alphas needs at least three entries");
    for (std::size_t k = 0; k < c.alphas.size(); ++k) {
      require(c.alphas[k] > 1.0, "alphas must exceed 1");
      require(k == 0 || c.alphas[k] > c.alphas[k - 1], "alphas must increase");
    }
  }
  if (c.command == "diagram") {
    require(c.diagram_levels.size() >= 2, "diagram_levels needs at least two entries");
    require(doubling(c.diagram_levels), "diagram_levels must start >= 1 and double");
    require(c.diagram_alphas.empty() || c.diagram_alphas.size() == c.diagram_levels.size(),
            "diagram_alphas must match diagram_levels in length");
    for (std::size_t k = 0; k < c.diagram_alphas.size(); ++k) {
      require(c.diagram_alphas[k] > 0.0, "diagram_alphas must be > 0");
      require(k == 0 || c.diagram_alphas[k] > c.diagram_alphas[k - 1], "diagram_alphas must increase");
    }
    require(c.diagram_extra_levels >= 1, "diagram_extra_levels must be >= 1");
  }
  if (c.command == "interp-check") {
    require(c.interp_levels.size() >= 2, "interp_levels needs at least two entries");
    for (int n : c.interp_levels)
      require(n >= 1, "interp_levels must be >= 1");
  }
}

/// Every resolved setting in a fixed order. Hashed into output headers; the
/// output directory is left out so reruns elsewhere hash identically.
inline std::string canonical(const RunConfig& c)
{
  std::ostringstream s;
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("unset"); };
  s << "command=" << c.command << "\n"
    << "preset=" << c.preset << "\n"
    << "n=" << c.n << "\n"
    << "gamma1=" << oc::format_sides(c.gamma1) << "\n"
    << "alpha=" << opt(c.alpha) << "\n"
    << "b=" << opt(c.b) << "\n"
    << "M_cost=" << opt(c.M_cost) << "\n"
    << "q=" << detail::join(std::vector<double>(c.q.begin(), c.q.end())) << "\n"
    << "g=" << detail::format_g(c.g) << "\n"
    << "family=" << oc::family_name(c.family) << "\n"
    << "solver=" << (c.solver == oc::SolverKind::psor ? "psor" : "active_set") << "\n"
    << "tol=" << format_double(c.tol) << "\n"
    << "max_iter=" << c.max_iter << "\n"
    << "omega=" << format_double(c.omega) << "\n"
    << "cross_check=" << (c.cross_check ? "true" : "false") << "\n"
    << "opt_method=" << oc::method_name(c.method) << "\n"
    << "opt_tol=" << format_double(c.opt_tol) << "\n"
    << "opt_max_iter=" << c.opt_max_iter << "\n"
    << "levels=" << detail::join(c.levels) << "\n"
    << "reference_n=" << c.reference_n << "\n"
    << "sweep_n=" << c.sweep_n << "\n"
    << "alphas=" << detail::join(c.alphas) << "\n"
    << "diagram_levels=" << detail::join(c.diagram_levels) << "\n"
    << "diagram_alphas=" << detail::join(c.diagram_alphas) << "\n"
    << "diagram_extra_levels=" << c.diagram_extra_levels << "\n"
    << "trials=" << c.trials << "\n"
    << "seed=" << c.seed << "\n"
    << "g_low=" << format_double(c.g_low) << "\n"
    << "g_high=" << format_double(c.g_high) << "\n"
    << "interp_function=" << c.interp_function << "\n"
    << "interp_levels=" << detail::join(c.interp_levels) << "\n";
  return s.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& text)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical(c))));
  return buf;
}

/// Scenario equivalent of the config's problem keys.
inline oc::Scenario scenario(const RunConfig& c)
{
  oc::Scenario s;
  s.name = c.preset;
  s.gamma1 = c.gamma1;
  s.alpha = c.alpha.value_or(1.0);
  s.b = c.b.value_or(1.0);
  s.M_cost = c.M_cost.value_or(1.0);
  s.q = oc::per_side_flux(c.q);
  if (c.g.kind == GSpec::Kind::box)
    s.g = oc::box_indicator(c.g.value, c.g.box[0], c.g.box[1], c.g.box[2], c.g.box[3]);
  else if (c.g.kind == GSpec::Kind::constant)
    s.g = [v = c.g.value](double, double) { return v; };
  return s;
}

/// Nodal control on `mesh`: the file form reads one value per node.
inline oc::ScalarField control_on(const RunConfig& c, const oc::Mesh& mesh)
{
  if (c.g.kind != GSpec::Kind::file)
    return oc::interpolate(mesh, scenario(c).g);
  std::ifstream in(c.g.path);
  if (!in)
    throw ConfigError("config: cannot read control file '" + c.g.path + "'");
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty() || line[0] == '#')
      continue;
    values.push_back(detail::parse_double("g file", line));
  }
  if (values.size() != mesh.num_nodes())
    throw ConfigError("config: control file has " + std::to_string(values.size()) + " values, mesh has " +
                      std::to_string(mesh.num_nodes()) + " nodes");
  return Eigen::Map<const oc::ScalarField>(values.data(), static_cast<Eigen::Index>(values.size()));
}

/// ProblemData on `mesh` with the config's control.
inline oc::ProblemData problem_data(const RunConfig& c, const oc::Mesh& mesh)
{
  oc::ProblemData d = scenario(c).data_on(mesh);
  d.g = control_on(c, mesh);
  return d;
}

inline oc::StateOptions state_options(const RunConfig& c)
{
  oc::StateOptions s;
  s.solver = c.solver;
  s.solver_options.tol = c.tol;
  s.solver_options.max_iter = c.max_iter;
  s.solver_options.omega = c.omega;
  s.cross_check = c.cross_check;
  return s;
}

inline oc::OptimizeOptions optimize_options(const RunConfig& c)
{
  oc::OptimizeOptions o;
  o.method = c.method;
  o.tol = c.opt_tol;
  o.max_iter = c.opt_max_iter;
  o.state = state_options(c);
  return o;
}

} // namespace obstacle_cli
