#pragma once

#include <functional>
#include <string>

#include "assembly.hpp"
#include "mesh.hpp"

namespace obstacle_control {

/// Mesh-independent description of one problem instance: everything needed
/// to build ProblemData on any mesh of the unit square.
struct Scenario
{
  std::string name = "custom";
  SideSet gamma1 = Side::bottom;
  double alpha = 1.0;
  double b = 1.0;
  BoundaryFunction q = [](Point) { return 0.0; };
  double M_cost = 1.0;
  std::function<double(double, double)> g = [](double, double) { return 0.0; };

  ProblemData data_on(const Mesh& mesh) const
  {
    ProblemData d;
    d.alpha = alpha;
    d.b = b;
    d.q = q;
    d.M_cost = M_cost;
    d.g = interpolate(mesh, g);
    return d;
  }

  ProblemData data_on(const Mesh& mesh, double alpha_override) const
  {
    ProblemData d = data_on(mesh);
    d.alpha = alpha_override;
    return d;
  }
};

/// Indicator of the closed box [x0,x1] x [y0,y1] scaled by `value`.
inline std::function<double(double, double)> box_indicator(double value, double x0, double x1, double y0, double y1)
{
  return [=](double x, double y) {
    return (x >= x0 && x <= x1 && y >= y0 && y <= y1) ? value : 0.0;
  };
}

/// Constant flux on each side of the unit square; `q_by_side[k]` belongs to
/// `all_sides[k]`. Evaluated at edge quadrature points, which lie strictly
/// inside one side.
inline BoundaryFunction per_side_flux(std::array<double, 4> q_by_side)
{
  return [q_by_side](Point p) {
    constexpr double tol = 1e-12;
    if (p.y <= tol)
      return q_by_side[0];
    if (p.x >= 1.0 - tol)
      return q_by_side[1];
    if (p.y >= 1.0 - tol)
      return q_by_side[2];
    return q_by_side[3];
  };
}

/// g = 0, q = 0, b = 1: the state is the constant b for every alpha.
inline Scenario constant_v1()
{
  Scenario s;
  s.name = "constant-v1";
  s.alpha = 1.0;
  s.b = 1.0;
  return s;
}

/// Benchmark with a nonempty contact set: q = 1 on Gamma2, b = 1, alpha = 2,
/// and a sink of strength 20 on the central box.
inline Scenario contact_v1()
{
  Scenario s;
  s.name = "contact-v1";
  s.alpha = 2.0;
  s.b = 1.0;
  s.q = [](Point) { return 1.0; };
  s.M_cost = 1.0;
  s.g = box_indicator(-20.0, 0.25, 0.75, 0.25, 0.75);
  return s;
}

} // namespace obstacle_control
