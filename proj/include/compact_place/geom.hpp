#ifndef COMPACT_PLACE_GEOM_HPP_
#define COMPACT_PLACE_GEOM_HPP_

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "compact_place/errors.hpp"

namespace compact_place {

// Lengths are millimeters, angles degrees.
inline constexpr double kEpsTouch = 0.1;
inline constexpr double kEpsAdj = 1.0;
inline constexpr double kEpsAngleDeg = 1.0;
inline constexpr double kEpsVertex = 1e-6;
inline constexpr double kEpsConvex = 1e-9;
inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// Wraps into [-180, 180).
double wrap_degrees(double deg);

// |wrap(a - b)| in [0, 180].
double abs_angle_difference(double a_deg, double b_deg);

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  Point2 operator+(const Point2& o) const { return {x + o.x, y + o.y}; }
  Point2 operator-(const Point2& o) const { return {x - o.x, y - o.y}; }
  Point2 operator*(double s) const { return {x * s, y * s}; }
  Point2 operator-() const { return {-x, -y}; }
  bool operator==(const Point2&) const = default;

  double dot(const Point2& o) const { return x * o.x + y * o.y; }
  double cross(const Point2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

inline double distance(const Point2& a, const Point2& b) {
  return (a - b).norm();
}

// Lexicographic (x, then y).
inline bool lex_less(const Point2& a, const Point2& b) {
  return a.x < b.x || (a.x == b.x && a.y < b.y);
}

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  bool operator==(const Point3&) const = default;
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

// Planar rigid pose; theta is kept wrapped in [-180, 180).
class Pose2 {
 public:
  Pose2() = default;
  Pose2(double x, double y, double theta_deg)
      : x(x), y(y), theta(wrap_degrees(theta_deg)) {}

  Point2 position() const { return {x, y}; }
  // Local -> world.
  Point2 apply(const Point2& local) const;
  // World -> local.
  Point2 inverse_apply(const Point2& world) const;

  bool operator==(const Pose2&) const = default;

  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

struct Segment2 {
  Point2 a;
  Point2 b;
  double length() const { return distance(a, b); }
};

// Strictly convex, counter-clockwise polygon whose area centroid is the
// local origin.
class ConvexPolygon {
 public:
  // Throws GeometryError unless the vertices satisfy every invariant.
  explicit ConvexPolygon(std::vector<Point2> vertices);

  // Builds a polygon from world-frame CCW vertices; returns the polygon and
  // the world position of its centroid (the pose translation that restores
  // the input).
  static std::pair<ConvexPolygon, Point2> centered(
      std::span<const Point2> world_vertices);

  const std::vector<Point2>& vertices() const { return vertices_; }
  std::size_t size() const { return vertices_.size(); }
  std::vector<Point2> world_vertices(const Pose2& pose) const;

  bool operator==(const ConvexPolygon&) const = default;

 private:
  std::vector<Point2> vertices_;
};

// Raw helpers on vertex loops (any orientation for area, CCW expected for the
// rest).
double signed_area(std::span<const Point2> loop);
Point2 area_centroid(std::span<const Point2> loop);

// Andrew's monotone chain; CCW, collinear points dropped.
std::vector<Point2> convex_hull(std::vector<Point2> points);

// Signed distance of `p` inside a CCW convex loop (positive inside).
double inside_margin(std::span<const Point2> loop, const Point2& p);

double area(const ConvexPolygon& poly);
Point2 centroid_world(const ConvexPolygon& poly, const Pose2& pose);

// True iff the shapes interpenetrate by more than eps_touch along every
// separating-axis candidate.
bool overlap(const ConvexPolygon& a, const Pose2& pose_a,
             const ConvexPolygon& b, const Pose2& pose_b,
             double eps_touch = kEpsTouch);
bool overlap_loops(std::span<const Point2> a, std::span<const Point2> b,
                   double eps_touch = kEpsTouch);

// Outward edge offset with mitered corners. The result is re-centered; the
// second member is its centroid expressed in the input's local frame.
std::pair<ConvexPolygon, Point2> offset(const ConvexPolygon& poly,
                                        double delta);
std::vector<Point2> offset_loop(std::span<const Point2> loop, double delta);

// Anti-parallel, nearly coincident edge overlaps, reported on the midline.
std::vector<Segment2> shared_edge_segments(const ConvexPolygon& a,
                                           const Pose2& pose_a,
                                           const ConvexPolygon& b,
                                           const Pose2& pose_b,
                                           double eps_adj = kEpsAdj);

// Most distant pair among all segment endpoints, lexicographically ordered.
std::pair<Point2, Point2> corresponding_corners(
    std::span<const Segment2> segments);

// l_x is the line y = 0, l_y the line x = 0.
enum class ReferenceLine { kX, kY };

struct LineFoot {
  double distance = 0.0;
  Point2 closest;
};
LineFoot point_to_line(const Point2& p, ReferenceLine line);

struct Box2 {
  Point2 min;
  Point2 max;
  double width() const { return max.x - min.x; }
  double height() const { return max.y - min.y; }
  double area() const { return width() * height(); }
};

Box2 bounding_box(std::span<const ConvexPolygon> polys,
                  std::span<const Pose2> poses);

}  // namespace compact_place

#endif  // COMPACT_PLACE_GEOM_HPP_
