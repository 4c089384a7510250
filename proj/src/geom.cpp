#include "compact_place/geom.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace compact_place {

double wrap_degrees(double deg) {
  double w = std::fmod(deg + 180.0, 360.0);
  if (w < 0.0) w += 360.0;
  w -= 180.0;
  // fmod can round up to exactly +180 for tiny negative inputs.
  if (w >= 180.0) w -= 360.0;
  return w;
}

double abs_angle_difference(double a_deg, double b_deg) {
  return std::abs(wrap_degrees(a_deg - b_deg));
}

Point2 Pose2::apply(const Point2& local) const {
  const double c = std::cos(deg2rad(theta));
  const double s = std::sin(deg2rad(theta));
  return {x + c * local.x - s * local.y, y + s * local.x + c * local.y};
}

Point2 Pose2::inverse_apply(const Point2& world) const {
  const double c = std::cos(deg2rad(theta));
  const double s = std::sin(deg2rad(theta));
  const double dx = world.x - x;
  const double dy = world.y - y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

double signed_area(std::span<const Point2> loop) {
  double twice = 0.0;
  const std::size_t n = loop.size();
  for (std::size_t i = 0; i < n; ++i) {
    twice += loop[i].cross(loop[(i + 1) % n]);
  }
  return 0.5 * twice;
}

Point2 area_centroid(std::span<const Point2> loop) {
  // Shift to the first vertex first; keeps the sums well conditioned.
  const Point2 origin = loop.front();
  double twice_area = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  const std::size_t n = loop.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 p = loop[i] - origin;
    const Point2 q = loop[(i + 1) % n] - origin;
    const double w = p.cross(q);
    twice_area += w;
    cx += (p.x + q.x) * w;
    cy += (p.y + q.y) * w;
  }
  if (twice_area == 0.0) throw GeometryError("centroid of zero-area loop");
  return {origin.x + cx / (3.0 * twice_area),
          origin.y + cy / (3.0 * twice_area)};
}

namespace {

double turn_sine(const Point2& e1, const Point2& e2) {
  return e1.cross(e2) / (e1.norm() * e2.norm());
}

void validate_loop(std::span<const Point2> v) {
  const std::size_t n = v.size();
  if (n < 3) throw GeometryError("polygon needs at least 3 vertices");
  for (const auto& p : v) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw GeometryError("polygon vertex is not finite");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (distance(v[i], v[(i + 1) % n]) <= kEpsVertex) {
      std::ostringstream msg;
      msg << "duplicate consecutive vertices at index " << i;
      throw GeometryError(msg.str());
    }
  }
  if (signed_area(v) <= 0.0) {
    throw GeometryError("polygon is not counter-clockwise");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 e1 = v[(i + 1) % n] - v[i];
    const Point2 e2 = v[(i + 2) % n] - v[(i + 1) % n];
    if (turn_sine(e1, e2) <= kEpsConvex) {
      std::ostringstream msg;
      msg << "polygon is not strictly convex at vertex " << (i + 1) % n;
      throw GeometryError(msg.str());
    }
  }
}

}  // namespace

ConvexPolygon::ConvexPolygon(std::vector<Point2> vertices)
    : vertices_(std::move(vertices)) {
  validate_loop(vertices_);
  const Point2 c = area_centroid(vertices_);
  double scale = 1.0;
  for (const auto& p : vertices_) scale = std::max(scale, p.norm());
  // Relative slack for large coordinates.
  if (c.norm() > kEpsVertex * scale) {
    throw GeometryError("polygon centroid is not at the local origin");
  }
}

std::pair<ConvexPolygon, Point2> ConvexPolygon::centered(
    std::span<const Point2> world_vertices) {
  validate_loop(world_vertices);
  const Point2 c = area_centroid(world_vertices);
  std::vector<Point2> local;
  local.reserve(world_vertices.size());
  for (const auto& p : world_vertices) local.push_back(p - c);
  return {ConvexPolygon(std::move(local)), c};
}

std::vector<Point2> ConvexPolygon::world_vertices(const Pose2& pose) const {
  std::vector<Point2> out;
  out.reserve(vertices_.size());
  for (const auto& p : vertices_) out.push_back(pose.apply(p));
  return out;
}

std::vector<Point2> convex_hull(std::vector<Point2> points) {
  std::sort(points.begin(), points.end(), lex_less);
  points.erase(std::unique(points.begin(), points.end(),
                           [](const Point2& a, const Point2& b) {
                             return distance(a, b) <= kEpsVertex;
                           }),
               points.end());
  if (points.size() < 3) return points;

  const auto keeps_turn = [](const Point2& o, const Point2& a,
                             const Point2& b) {
    const Point2 e1 = a - o;
    const Point2 e2 = b - a;
    return turn_sine(e1, e2) > kEpsConvex;
  };
  std::vector<Point2> hull(2 * points.size());
  std::size_t k = 0;
  for (const auto& p : points) {
    while (k >= 2 && !keeps_turn(hull[k - 2], hull[k - 1], p)) --k;
    hull[k++] = p;
  }
  for (std::size_t i = points.size() - 1, lower = k + 1; i-- > 0;) {
    const Point2& p = points[i];
    while (k >= lower && !keeps_turn(hull[k - 2], hull[k - 1], p)) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  return hull;
}

double inside_margin(std::span<const Point2> loop, const Point2& p) {
  double margin = std::numeric_limits<double>::infinity();
  const std::size_t n = loop.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 e = loop[(i + 1) % n] - loop[i];
    margin = std::min(margin, e.cross(p - loop[i]) / e.norm());
  }
  return margin;
}

double area(const ConvexPolygon& poly) { return signed_area(poly.vertices()); }

Point2 centroid_world(const ConvexPolygon& poly, const Pose2& pose) {
  return pose.apply(area_centroid(poly.vertices()));
}

bool overlap_loops(std::span<const Point2> a, std::span<const Point2> b,
                   double eps_touch) {
  const auto separated_on_edges = [eps_touch](std::span<const Point2> edges,
                                              std::span<const Point2> p,
                                              std::span<const Point2> q) {
    const std::size_t n = edges.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point2 e = edges[(i + 1) % n] - edges[i];
      const double len = e.norm();
      const Point2 axis{e.y / len, -e.x / len};
      double pmin = std::numeric_limits<double>::infinity();
      double pmax = -pmin;
      double qmin = pmin;
      double qmax = -pmin;
      for (const auto& v : p) {
        const double t = axis.dot(v);
        pmin = std::min(pmin, t);
        pmax = std::max(pmax, t);
      }
      for (const auto& v : q) {
        const double t = axis.dot(v);
        qmin = std::min(qmin, t);
        qmax = std::max(qmax, t);
      }
      if (std::min(pmax, qmax) - std::max(pmin, qmin) <= eps_touch) {
        return true;
      }
    }
    return false;
  };
  return !separated_on_edges(a, a, b) && !separated_on_edges(b, a, b);
}

bool overlap(const ConvexPolygon& a, const Pose2& pose_a,
             const ConvexPolygon& b, const Pose2& pose_b, double eps_touch) {
  const auto wa = a.world_vertices(pose_a);
  const auto wb = b.world_vertices(pose_b);
  return overlap_loops(wa, wb, eps_touch);
}

std::vector<Point2> offset_loop(std::span<const Point2> loop, double delta) {
  if (delta < 0.0) throw GeometryError("offset distance must be >= 0");
  const std::size_t n = loop.size();
  std::vector<Point2> normals(n);
  std::vector<Point2> dirs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 e = loop[(i + 1) % n] - loop[i];
    const double len = e.norm();
    dirs[i] = e * (1.0 / len);
    normals[i] = {e.y / len, -e.x / len};
  }
  std::vector<Point2> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t prev = (i + n - 1) % n;
    if (std::abs(dirs[prev].cross(dirs[i])) <= kEpsConvex) {
      throw GeometryError("offset: near-parallel adjacent edges");
    }
    // Intersection of the two shifted edge lines (miter).
    const Point2 sum = normals[prev] + normals[i];
    const double denom = 1.0 + normals[prev].dot(normals[i]);
    out[i] = loop[i] + sum * (delta / denom);
  }
  return out;
}

std::pair<ConvexPolygon, Point2> offset(const ConvexPolygon& poly,
                                        double delta) {
  if (delta == 0.0) return {poly, Point2{}};
  const auto grown = offset_loop(poly.vertices(), delta);
  return ConvexPolygon::centered(grown);
}

std::vector<Segment2> shared_edge_segments(const ConvexPolygon& a,
                                           const Pose2& pose_a,
                                           const ConvexPolygon& b,
                                           const Pose2& pose_b,
                                           double eps_adj) {
  const auto wa = a.world_vertices(pose_a);
  const auto wb = b.world_vertices(pose_b);
  const double cos_tol = std::cos(deg2rad(kEpsAngleDeg));
  std::vector<Segment2> out;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    const Point2 a0 = wa[i];
    const Point2 a1 = wa[(i + 1) % wa.size()];
    const double len_a = distance(a0, a1);
    const Point2 u = (a1 - a0) * (1.0 / len_a);
    const Point2 n{u.y, -u.x};
    for (std::size_t j = 0; j < wb.size(); ++j) {
      const Point2 b0 = wb[j];
      const Point2 b1 = wb[(j + 1) % wb.size()];
      const double len_b = distance(b0, b1);
      const Point2 v = (b1 - b0) * (1.0 / len_b);
      if (u.dot(v) > -cos_tol) continue;
      if (std::abs((b0 - a0).dot(n)) > eps_adj ||
          std::abs((b1 - a0).dot(n)) > eps_adj) {
        continue;
      }
      const double t0 = (b0 - a0).dot(u);
      const double t1 = (b1 - a0).dot(u);
      const double lo = std::max(0.0, std::min(t0, t1));
      const double hi = std::min(len_a, std::max(t0, t1));
      if (hi - lo <= kEpsVertex) continue;
      const auto midline = [&](double t) {
        const Point2 pa = a0 + u * t;
        const Point2 pb = b0 + v * (pa - b0).dot(v);
        return (pa + pb) * 0.5;
      };
      out.push_back({midline(lo), midline(hi)});
    }
  }
  return out;
}

std::pair<Point2, Point2> corresponding_corners(
    std::span<const Segment2> segments) {
  if (segments.empty()) {
    throw GeometryError("corresponding_corners: no shared segments");
  }
  std::vector<Point2> pts;
  pts.reserve(2 * segments.size());
  for (const auto& s : segments) {
    pts.push_back(s.a);
    pts.push_back(s.b);
  }
  const auto ordered = [](Point2 p, Point2 q) {
    return lex_less(q, p) ? std::pair{q, p} : std::pair{p, q};
  };
  const auto pair_less = [](const std::pair<Point2, Point2>& l,
                            const std::pair<Point2, Point2>& r) {
    if (l.first != r.first) return lex_less(l.first, r.first);
    return lex_less(l.second, r.second);
  };
  std::pair<Point2, Point2> best = ordered(pts[0], pts[1]);
  double best_d2 = -1.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const Point2 d = pts[i] - pts[j];
      const double d2 = d.dot(d);
      const auto cand = ordered(pts[i], pts[j]);
      if (d2 > best_d2 || (d2 == best_d2 && pair_less(cand, best))) {
        best_d2 = d2;
        best = cand;
      }
    }
  }
  return best;
}

LineFoot point_to_line(const Point2& p, ReferenceLine line) {
  if (line == ReferenceLine::kX) return {std::abs(p.y), {p.x, 0.0}};
  return {std::abs(p.x), {0.0, p.y}};
}

Box2 bounding_box(std::span<const ConvexPolygon> polys,
                  std::span<const Pose2> poses) {
  if (polys.empty()) throw GeometryError("bounding_box: no polygons");
  if (polys.size() != poses.size()) {
    throw GeometryError("bounding_box: polygon/pose count mismatch");
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  Box2 box{{inf, inf}, {-inf, -inf}};
  for (std::size_t i = 0; i < polys.size(); ++i) {
    for (const auto& p : polys[i].world_vertices(poses[i])) {
      box.min.x = std::min(box.min.x, p.x);
      box.min.y = std::min(box.min.y, p.y);
      box.max.x = std::max(box.max.x, p.x);
      box.max.y = std::max(box.max.y, p.y);
    }
  }
  return box;
}

}  // namespace compact_place
