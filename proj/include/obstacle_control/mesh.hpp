#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"

namespace obstacle_control {

struct Point
{
  double x = 0.0;
  double y = 0.0;
};

using Triangle = std::array<int, 3>;
using Edge = std::array<int, 2>;

/// Nodal coefficients of a continuous piecewise-linear function.
using ScalarField = Eigen::VectorXd;

/// Sides of the unit square, combinable as a bit mask.
enum class Side : unsigned
{
  bottom = 1u,
  right = 2u,
  top = 4u,
  left = 8u,
};

struct SideSet
{
  unsigned mask = 0;

  constexpr SideSet() = default;
  constexpr SideSet(Side s) : mask(static_cast<unsigned>(s)) {}

  constexpr bool contains(Side s) const { return (mask & static_cast<unsigned>(s)) != 0; }
  constexpr bool empty() const { return mask == 0; }
  constexpr SideSet operator|(SideSet o) const
  {
    SideSet r;
    r.mask = mask | o.mask;
    return r;
  }
  constexpr bool operator==(const SideSet&) const = default;

  static constexpr SideSet all()
  {
    SideSet r;
    r.mask = 15u;
    return r;
  }
};

constexpr SideSet operator|(Side a, Side b)
{
  return SideSet(a) | SideSet(b);
}

inline const char* side_name(Side s)
{
  switch (s) {
    case Side::bottom: return "bottom";
    case Side::right: return "right";
    case Side::top: return "top";
    case Side::left: return "left";
  }
  return "?";
}

inline constexpr std::array<Side, 4> all_sides{Side::bottom, Side::right, Side::top, Side::left};

/// Parses a comma-separated list such as "bottom,left"; "all" selects every
/// side.
inline SideSet parse_sides(std::string_view text)
{
  SideSet out;
  std::string token;
  std::stringstream ss{std::string(text)};
  while (std::getline(ss, token, ',')) {
    token.erase(0, token.find_first_not_of(" \t"));
    token.erase(token.find_last_not_of(" \t") + 1);
    bool found = token == "all";
    if (found)
      out = SideSet::all();
    for (Side s : all_sides) {
      if (token == side_name(s)) {
        out = out | SideSet(s);
        found = true;
      }
    }
    if (!found)
      throw InvalidParameter("unknown side '" + token + "'");
  }
  return out;
}

inline std::string format_sides(SideSet set)
{
  std::string out;
  for (Side s : all_sides) {
    if (!set.contains(s))
      continue;
    if (!out.empty())
      out += ',';
    out += side_name(s);
  }
  return out;
}

/// Conforming triangulation of a polygon whose boundary is split into two
/// tagged parts. Immutable once constructed; the constructor audits all
/// structural invariants and throws InvalidParameter when one fails.
class Mesh
{
public:
  Mesh(std::vector<Point> nodes,
       std::vector<Triangle> triangles,
       std::vector<Edge> gamma1,
       std::vector<Edge> gamma2)
    : nodes_(std::move(nodes)),
      triangles_(std::move(triangles)),
      gamma1_(std::move(gamma1)),
      gamma2_(std::move(gamma2))
  {
    validate();
  }

  const std::vector<Point>& nodes() const { return nodes_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<Edge>& gamma1_edges() const { return gamma1_; }
  const std::vector<Edge>& gamma2_edges() const { return gamma2_; }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_triangles() const { return triangles_.size(); }

  /// Longest triangle side.
  double h() const { return h_; }

  double signed_area(std::size_t t) const
  {
    const auto& tri = triangles_[t];
    const Point& a = nodes_[tri[0]];
    const Point& b = nodes_[tri[1]];
    const Point& c = nodes_[tri[2]];
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
  }

  double edge_length(const Edge& e) const
  {
    return std::hypot(nodes_[e[1]].x - nodes_[e[0]].x, nodes_[e[1]].y - nodes_[e[0]].y);
  }

  /// Nodes touched by at least one Gamma1 edge, ascending.
  std::vector<int> gamma1_nodes() const
  {
    std::vector<int> out;
    for (const auto& e : gamma1_) {
      out.push_back(e[0]);
      out.push_back(e[1]);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  double gamma1_measure() const
  {
    double m = 0.0;
    for (const auto& e : gamma1_)
      m += edge_length(e);
    return m;
  }

  /// Number of triangles sharing each undirected edge.
  std::map<std::pair<int, int>, int> edge_multiplicity() const
  {
    std::map<std::pair<int, int>, int> count;
    for (const auto& tri : triangles_) {
      for (int k = 0; k < 3; ++k)
        ++count[key(tri[k], tri[(k + 1) % 3])];
    }
    return count;
  }

  static std::pair<int, int> key(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

private:
  void validate()
  {
    const int n = static_cast<int>(nodes_.size());
    if (n == 0 || triangles_.empty())
      throw InvalidParameter("mesh has no nodes or no triangles");

    for (const auto& p : nodes_) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw InvalidParameter("mesh node with non-finite coordinate");
    }

    h_ = 0.0;
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      for (int v : triangles_[t]) {
        if (v < 0 || v >= n)
          throw InvalidParameter("triangle " + std::to_string(t) + " references a missing node");
      }
      if (!(signed_area(t) > 0.0))
        throw InvalidParameter("triangle " + std::to_string(t) + " is not counterclockwise");
      for (int k = 0; k < 3; ++k)
        h_ = std::max(h_, edge_length({triangles_[t][k], triangles_[t][(k + 1) % 3]}));
    }

    std::map<std::pair<int, int>, int> boundary;
    for (const auto& [e, c] : edge_multiplicity()) {
      if (c > 2)
        throw InvalidParameter("edge shared by more than two triangles");
      if (c == 1)
        boundary[e] = 0;
    }

    if (gamma1_.empty())
      throw InvalidParameter("Gamma1 must contain at least one edge");

    auto tag = [&](const std::vector<Edge>& edges, int bit) {
      for (const auto& e : edges) {
        auto it = boundary.find(key(e[0], e[1]));
        if (it == boundary.end())
          throw InvalidParameter("tagged edge is not a boundary edge");
        if (it->second != 0)
          throw InvalidParameter("boundary edge tagged twice");
        it->second = bit;
      }
    };
    tag(gamma1_, 1);
    tag(gamma2_, 2);
    for (const auto& [e, t] : boundary) {
      if (t == 0)
        throw InvalidParameter("boundary edge belongs to neither Gamma1 nor Gamma2");
    }
  }

  std::vector<Point> nodes_;
  std::vector<Triangle> triangles_;
  std::vector<Edge> gamma1_;
  std::vector<Edge> gamma2_;
  double h_ = 0.0;
};

/// Structured triangulation of (0,1)^2: n x n cells, each cut along its
/// SW-NE diagonal. Nodes are numbered lexicographically by (y, x).
inline Mesh build_unit_square(int n, SideSet gamma1 = Side::bottom)
{
  if (n < 1)
    throw InvalidParameter("build_unit_square: n must be >= 1");
  if (gamma1.empty())
    throw InvalidParameter("build_unit_square: Gamma1 selects no side");

  const int m = n + 1;
  auto id = [m](int i, int j) { return j * m + i; };

  std::vector<Point> nodes;
  nodes.reserve(static_cast<std::size_t>(m) * m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i)
      nodes.push_back({static_cast<double>(i) / n, static_cast<double>(j) / n});

  std::vector<Triangle> tris;
  tris.reserve(2 * static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      tris.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      tris.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }

  std::vector<Edge> g1, g2;
  auto put = [&](Side s, Edge e) { (gamma1.contains(s) ? g1 : g2).push_back(e); };
  for (int i = 0; i < n; ++i) {
    put(Side::bottom, {id(i, 0), id(i + 1, 0)});
    put(Side::right, {id(n, i), id(n, i + 1)});
    put(Side::top, {id(i + 1, n), id(i, n)});
    put(Side::left, {id(0, i + 1), id(0, i)});
  }
  return Mesh(std::move(nodes), std::move(tris), std::move(g1), std::move(g2));
}

/// Result of one uniform refinement. `parents[i]` names the two coarse nodes
/// whose midpoint is fine node i (both entries equal for inherited nodes).
struct Refinement
{
  Mesh fine;
  std::vector<std::array<int, 2>> parents;
};

/// Red refinement: every triangle is split into four through its edge
/// midpoints. Boundary tags are inherited and nodes are renumbered
/// lexicographically by (y, x).
inline Refinement refine_with_map(const Mesh& coarse)
{
  std::vector<Point> pts = coarse.nodes();
  std::vector<std::array<int, 2>> parents;
  parents.reserve(pts.size());
  for (int i = 0; i < static_cast<int>(pts.size()); ++i)
    parents.push_back({i, i});

  std::map<std::pair<int, int>, int> midpoint;
  auto mid = [&](int a, int b) {
    auto k = Mesh::key(a, b);
    auto it = midpoint.find(k);
    if (it != midpoint.end())
      return it->second;
    const Point& pa = coarse.nodes()[k.first];
    const Point& pb = coarse.nodes()[k.second];
    int idx = static_cast<int>(pts.size());
    pts.push_back({0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)});
    parents.push_back({k.first, k.second});
    midpoint.emplace(k, idx);
    return idx;
  };

  std::vector<Triangle> tris;
  tris.reserve(4 * coarse.num_triangles());
  for (const auto& t : coarse.triangles()) {
    int ab = mid(t[0], t[1]);
    int bc = mid(t[1], t[2]);
    int ca = mid(t[2], t[0]);
    tris.push_back({t[0], ab, ca});
    tris.push_back({ab, t[1], bc});
    tris.push_back({ca, bc, t[2]});
    tris.push_back({ab, bc, ca});
  }

  auto split = [&](const std::vector<Edge>& edges) {
    std::vector<Edge> out;
    out.reserve(2 * edges.size());
    for (const auto& e : edges) {
      int m = mid(e[0], e[1]);
      out.push_back({e[0], m});
      out.push_back({m, e[1]});
    }
    return out;
  };
  auto g1 = split(coarse.gamma1_edges());
  auto g2 = split(coarse.gamma2_edges());

  // renumber lexicographically by (y, x)
  std::vector<int> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (pts[a].y != pts[b].y)
      return pts[a].y < pts[b].y;
    return pts[a].x < pts[b].x;
  });
  std::vector<int> new_id(pts.size());
  for (std::size_t k = 0; k < order.size(); ++k)
    new_id[order[k]] = static_cast<int>(k);

  std::vector<Point> sorted_pts(pts.size());
  std::vector<std::array<int, 2>> sorted_parents(pts.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    sorted_pts[k] = pts[order[k]];
    sorted_parents[k] = parents[order[k]];
  }
  for (auto& t : tris)
    for (int& v : t)
      v = new_id[v];
  for (auto* edges : {&g1, &g2})
    for (auto& e : *edges)
      for (int& v : e)
        v = new_id[v];

  return {Mesh(std::move(sorted_pts), std::move(tris), std::move(g1), std::move(g2)),
          std::move(sorted_parents)};
}

inline Mesh refine_uniform(const Mesh& coarse)
{
  return refine_with_map(coarse).fine;
}

/// Exact transfer of a P1 field onto the once-refined mesh.
inline ScalarField prolongate(const Refinement& r, const ScalarField& coarse)
{
  ScalarField fine(static_cast<Eigen::Index>(r.parents.size()));
  for (std::size_t i = 0; i < r.parents.size(); ++i) {
    const auto [a, b] = r.parents[i];
    if (a >= coarse.size() || b >= coarse.size())
      throw DimensionMismatch("prolongate: field does not match the coarse mesh");
    fine[static_cast<Eigen::Index>(i)] = 0.5 * (coarse[a] + coarse[b]);
  }
  return fine;
}

/// Nodal interpolant of f.
template <typename F>
ScalarField interpolate(const Mesh& mesh, F&& f)
{
  ScalarField v(static_cast<Eigen::Index>(mesh.num_nodes()));
  for (std::size_t i = 0; i < mesh.num_nodes(); ++i) {
    const Point& p = mesh.nodes()[i];
    const double value = f(p.x, p.y);
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "interpolate: non-finite value at node " << i << " (" << p.x << ", " << p.y << ")";
      throw EvaluationError(msg.str());
    }
    v[static_cast<Eigen::Index>(i)] = value;
  }
  return v;
}

/// Evaluates the P1 field `v` at `p`; p must lie in the mesh.
inline double evaluate(const Mesh& mesh, const ScalarField& v, Point p)
{
  constexpr double slack = 1e-12;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const Point& a = mesh.nodes()[tri[0]];
    const Point& b = mesh.nodes()[tri[1]];
    const Point& c = mesh.nodes()[tri[2]];
    const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    const double l1 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) / det;
    const double l2 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) / det;
    const double l0 = 1.0 - l1 - l2;
    if (l0 >= -slack && l1 >= -slack && l2 >= -slack)
      return l0 * v[tri[0]] + l1 * v[tri[1]] + l2 * v[tri[2]];
  }
  throw EvaluationError("evaluate: point outside the mesh");
}

/// Plain-text mesh dump: header, node coordinates, triangles, then the two
/// boundary edge lists.
inline void write_mesh(std::ostream& os, const Mesh& mesh)
{
  const auto old_precision = os.precision(17);
  os << "nodes " << mesh.num_nodes() << " triangles " << mesh.num_triangles() << '\n';
  for (const auto& p : mesh.nodes())
    os << p.x << ' ' << p.y << '\n';
  for (const auto& t : mesh.triangles())
    os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  os << "gamma1 " << mesh.gamma1_edges().size() << '\n';
  for (const auto& e : mesh.gamma1_edges())
    os << e[0] << ' ' << e[1] << '\n';
  os << "gamma2 " << mesh.gamma2_edges().size() << '\n';
  for (const auto& e : mesh.gamma2_edges())
    os << e[0] << ' ' << e[1] << '\n';
  os.precision(old_precision);
}

} // namespace obstacle_control
