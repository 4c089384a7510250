#include "compact_place/geom.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"

namespace cp = compact_place;
using cp::ConvexPolygon;
using cp::Point2;
using cp::Pose2;

namespace {

ConvexPolygon square(double side) {
  const double h = side / 2;
  return ConvexPolygon({{-h, -h}, {h, -h}, {h, h}, {-h, h}});
}

ConvexPolygon from_world(std::vector<Point2> pts) {
  return ConvexPolygon::centered(pts).first;
}

}  // namespace

TEST(WrapDegrees, HalfOpenRange) {
  EXPECT_DOUBLE_EQ(cp::wrap_degrees(180.0), -180.0);
  EXPECT_DOUBLE_EQ(cp::wrap_degrees(-180.0), -180.0);
  EXPECT_DOUBLE_EQ(cp::wrap_degrees(370.0), 10.0);
  EXPECT_DOUBLE_EQ(cp::wrap_degrees(-190.0), 170.0);
  EXPECT_DOUBLE_EQ(cp::abs_angle_difference(350.0, 10.0), 20.0);
  for (double d = -1000; d < 1000; d += 7.3) {
    const double w = cp::wrap_degrees(d);
    EXPECT_GE(w, -180.0);
    EXPECT_LT(w, 180.0);
  }
}

TEST(ConvexPolygon, RejectsInvalidInput) {
  EXPECT_THROW(ConvexPolygon({{0, 0}, {1, 0}}), cp::GeometryError);
  // Clockwise.
  EXPECT_THROW(from_world({{0, 0}, {0, 1}, {1, 1}, {1, 0}}), cp::GeometryError);
  // Collinear middle vertex.
  EXPECT_THROW(from_world({{0, 0}, {1, 0}, {2, 0}, {1, 1}}), cp::GeometryError);
  // Duplicate.
  EXPECT_THROW(from_world({{0, 0}, {0, 0}, {1, 0}, {1, 1}}), cp::GeometryError);
  // Not centered.
  EXPECT_THROW(ConvexPolygon({{0, 0}, {10, 0}, {0, 10}}), cp::GeometryError);
}

TEST(Area, Examples) {
  EXPECT_DOUBLE_EQ(cp::area(square(100)), 10000.0);
  EXPECT_NEAR(cp::area(from_world({{0, 0}, {100, 0}, {0, 100}})), 5000.0, 1e-9);
}

TEST(Area, MatchesTrapezoidOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Point2> pts;
    for (int i = 0; i < 10; ++i) pts.push_back({u(rng), u(rng)});
    const auto hull = oracle::jarvis_hull(pts);
    const auto poly = from_world(hull);
    const double expected = oracle::trapezoid_area(hull);
    EXPECT_NEAR(cp::area(poly), expected, 1e-9 * expected);
  }
}

TEST(Area, RigidTransformPreservesArea) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-500, 500);
  for (int trial = 0; trial < 50; ++trial) {
    const auto loop = oracle::random_convex(rng, 9, 60);
    const ConvexPolygon poly(loop);
    const Pose2 pose(u(rng), u(rng), u(rng));
    const auto moved = poly.world_vertices(pose);
    const double before = cp::area(poly);
    EXPECT_LT(std::abs(cp::signed_area(moved) - before), 1e-9 * before);
  }
}

TEST(CentroidWorld, Examples) {
  const auto tri = from_world({{0, 0}, {60, 0}, {0, 30}});
  const auto c0 = cp::centroid_world(tri, Pose2(0, 0, 0));
  EXPECT_NEAR(c0.x, 0.0, 1e-12);
  EXPECT_NEAR(c0.y, 0.0, 1e-12);

  const auto c1 = cp::centroid_world(square(100), Pose2(50, -20, 90));
  EXPECT_NEAR(c1.x, 50.0, 1e-12);
  EXPECT_NEAR(c1.y, -20.0, 1e-12);

  // Transform the vertices directly, then take the triangle vertex mean.
  std::vector<Point2> moved;
  for (const auto& v : tri.vertices()) {
    moved.push_back(oracle::rotate_translate(v, 10, 0, 180));
  }
  const double ex = (moved[0].x + moved[1].x + moved[2].x) / 3.0;
  const double ey = (moved[0].y + moved[1].y + moved[2].y) / 3.0;
  const auto c2 = cp::centroid_world(tri, Pose2(10, 0, 180));
  EXPECT_NEAR(c2.x, ex, 1e-9);
  EXPECT_NEAR(c2.y, ey, 1e-9);
}

TEST(Overlap, Examples) {
  const auto sq = square(100);
  EXPECT_FALSE(cp::overlap(sq, Pose2(0, 0, 0), sq, Pose2(100, 0, 0), 0.1));
  EXPECT_TRUE(cp::overlap(sq, Pose2(0, 0, 0), sq, Pose2(99, 0, 0), 0.1));
  EXPECT_FALSE(cp::overlap(sq, Pose2(0, 0, 0), sq, Pose2(99.95, 0, 0), 0.1));
  EXPECT_FALSE(cp::overlap(sq, Pose2(0, 0, 0), sq, Pose2(300, 0, 0), 0.1));
}

TEST(Overlap, SymmetricAndMatchesGridOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(-40, 40);
  std::uniform_real_distribution<double> ang(-180, 180);
  int decided = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const ConvexPolygon a(oracle::random_convex(rng, 7, 25));
    const ConvexPolygon b(oracle::random_convex(rng, 7, 25));
    const Pose2 pa(0, 0, ang(rng));
    const Pose2 pb(pos(rng), pos(rng), ang(rng));
    const bool ab = cp::overlap(a, pa, b, pb);
    EXPECT_EQ(ab, cp::overlap(b, pb, a, pa));
    const auto verdict = oracle::grid_overlap(
        a.world_vertices(pa), b.world_vertices(pb), 0.5, 0.1, 0.6);
    if (verdict == oracle::GridVerdict::kMarginBand) continue;
    ++decided;
    EXPECT_EQ(ab, verdict == oracle::GridVerdict::kOverlap) << "trial " << trial;
  }
  EXPECT_GT(decided, 40);
}

TEST(Offset, SquareGrowsUniformly) {
  const auto [grown, shift] = cp::offset(square(100), 5);
  EXPECT_NEAR(shift.norm(), 0.0, 1e-12);
  const auto expected = square(110);
  ASSERT_EQ(grown.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(grown.vertices()[i].x, expected.vertices()[i].x, 1e-9);
    EXPECT_NEAR(grown.vertices()[i].y, expected.vertices()[i].y, 1e-9);
  }
}

TEST(Offset, ZeroIsIdentity) {
  const auto tri = from_world({{0, 0}, {80, 0}, {10, 50}});
  EXPECT_EQ(cp::offset(tri, 0).first, tri);
  EXPECT_THROW(cp::offset(tri, -1), cp::GeometryError);
}

TEST(Offset, TriangleVerticesClearOfBoundary) {
  const auto tri = from_world({{0, 0}, {80, 0}, {10, 50}});
  const auto grown = cp::offset_loop(tri.vertices(), 3.0);
  for (const auto& v : tri.vertices()) {
    double d = 1e300;
    for (std::size_t i = 0; i < grown.size(); ++i) {
      d = std::min(d, oracle::point_segment_distance(
                          v, grown[i], grown[(i + 1) % grown.size()]));
    }
    EXPECT_GE(d, 3.0 - 1e-9);
    EXPECT_GT(oracle::margin(grown, v), 0.0);
  }
}

TEST(Offset, ComposesAdditively) {
  for (int sides : {3, 4, 5, 6, 8, 12}) {
    std::vector<Point2> reg;
    for (int i = 0; i < sides; ++i) {
      const double t = 2 * M_PI * i / sides + 0.3;
      reg.push_back({40 * std::cos(t), 40 * std::sin(t)});
    }
    const auto poly = from_world(reg);
    const auto once = cp::offset_loop(cp::offset_loop(poly.vertices(), 2.5), 4.0);
    const auto direct = cp::offset_loop(poly.vertices(), 6.5);
    ASSERT_EQ(once.size(), direct.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
      EXPECT_LT(cp::distance(once[i], direct[i]), 1e-6);
    }
    // Same through the re-centering API.
    const auto [p1, s1] = cp::offset(poly, 2.5);
    const auto [p2, s2] = cp::offset(p1, 4.0);
    const auto [p3, s3] = cp::offset(poly, 6.5);
    for (std::size_t i = 0; i < p2.size(); ++i) {
      const Point2 a = p2.vertices()[i] + s2 + s1;
      const Point2 b = p3.vertices()[i] + s3;
      EXPECT_LT(cp::distance(a, b), 1e-6);
    }
  }
}

TEST(SharedEdges, Examples) {
  const auto sq = square(100);
  auto full = cp::shared_edge_segments(sq, Pose2(0, 0, 0), sq, Pose2(100, 0, 0));
  ASSERT_EQ(full.size(), 1u);
  EXPECT_NEAR(full[0].length(), 100.0, 1e-9);

  auto half = cp::shared_edge_segments(sq, Pose2(0, 0, 0), sq, Pose2(100, 50, 0));
  ASSERT_EQ(half.size(), 1u);
  // Projection overlap of [-50, 50] and [0, 100].
  EXPECT_NEAR(half[0].length(), 50.0, 1e-9);

  EXPECT_TRUE(cp::shared_edge_segments(sq, Pose2(0, 0, 0), sq,
                                       Pose2(110, 0, 0), 1.0)
                  .empty());
  // Vertex-only contact.
  EXPECT_TRUE(cp::shared_edge_segments(sq, Pose2(0, 0, 0), sq,
                                       Pose2(100, 100, 0))
                  .empty());
}

TEST(SharedEdges, SmallGapReportsMidline) {
  const auto sq = square(100);
  auto segs = cp::shared_edge_segments(sq, Pose2(0, 0, 0), sq,
                                       Pose2(100.8, 0, 0), 1.0);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_NEAR(segs[0].a.x, 50.4, 1e-9);
  EXPECT_NEAR(segs[0].b.x, 50.4, 1e-9);
}

TEST(CorrespondingCorners, Examples) {
  std::vector<cp::Segment2> one{{{0, 0}, {100, 0}}};
  auto r1 = cp::corresponding_corners(one);
  EXPECT_EQ(r1.first, (Point2{0, 0}));
  EXPECT_EQ(r1.second, (Point2{100, 0}));

  std::vector<cp::Segment2> two{{{60, 0}, {100, 0}}, {{0, 0}, {40, 0}}};
  auto r2 = cp::corresponding_corners(two);
  EXPECT_EQ(r2.first, (Point2{0, 0}));
  EXPECT_EQ(r2.second, (Point2{100, 0}));

  std::vector<cp::Segment2> ell{{{0, 0}, {50, 0}}, {{50, 0}, {50, 30}}};
  const auto expected = oracle::farthest_endpoint_pair(ell);
  const auto r3 = cp::corresponding_corners(ell);
  EXPECT_EQ(r3, expected);
  EXPECT_EQ(r3.first, (Point2{0, 0}));
  EXPECT_EQ(r3.second, (Point2{50, 30}));

  EXPECT_THROW(cp::corresponding_corners(std::vector<cp::Segment2>{}),
               cp::GeometryError);
}

TEST(CorrespondingCorners, TieBreakAndPermutationInvariance) {
  // Two diagonals of a square tie.
  std::vector<cp::Segment2> segs{{{0, 10}, {10, 0}}, {{10, 10}, {0, 0}}};
  const auto expected = oracle::farthest_endpoint_pair(segs);
  EXPECT_EQ(cp::corresponding_corners(segs), expected);
  EXPECT_EQ(expected.first, (Point2{0, 0}));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<cp::Segment2> s;
    for (int i = 0; i < 4; ++i) s.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
    const auto ref = cp::corresponding_corners(s);
    std::shuffle(s.begin(), s.end(), rng);
    for (auto& seg : s) {
      if (rng() % 2) std::swap(seg.a, seg.b);
    }
    EXPECT_EQ(cp::corresponding_corners(s), ref);
    EXPECT_EQ(ref, oracle::farthest_endpoint_pair(s));
  }
}

TEST(PointToLine, Examples) {
  auto fx = cp::point_to_line({30, 40}, cp::ReferenceLine::kX);
  EXPECT_DOUBLE_EQ(fx.distance, 40);
  EXPECT_EQ(fx.closest, (Point2{30, 0}));
  auto fy = cp::point_to_line({30, 40}, cp::ReferenceLine::kY);
  EXPECT_DOUBLE_EQ(fy.distance, 30);
  EXPECT_EQ(fy.closest, (Point2{0, 40}));
  auto f0 = cp::point_to_line({0, 0}, cp::ReferenceLine::kX);
  EXPECT_DOUBLE_EQ(f0.distance, 0);
  EXPECT_EQ(f0.closest, (Point2{0, 0}));
}

TEST(BoundingBox, Examples) {
  std::vector<ConvexPolygon> one{square(100)};
  std::vector<Pose2> p0{Pose2(0, 0, 0)};
  auto b0 = cp::bounding_box(one, p0);
  EXPECT_EQ(b0.min, (Point2{-50, -50}));
  EXPECT_EQ(b0.max, (Point2{50, 50}));
  std::vector<Pose2> p45{Pose2(0, 0, 45)};
  auto b45 = cp::bounding_box(one, p45);
  EXPECT_NEAR(b45.min.x, -70.7106781, 1e-6);
  EXPECT_NEAR(b45.min.y, -70.7106781, 1e-6);
  EXPECT_THROW(cp::bounding_box({}, {}), cp::GeometryError);
}

TEST(BoundingBox, MatchesVertexScanOracle) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-300, 300);
  std::vector<ConvexPolygon> polys;
  std::vector<Pose2> poses;
  double xmin = 1e300, ymin = 1e300, xmax = -1e300, ymax = -1e300;
  for (int i = 0; i < 10; ++i) {
    polys.emplace_back(oracle::random_convex(rng, 6, 40));
    poses.emplace_back(u(rng), u(rng), u(rng));
    for (const auto& v : polys.back().vertices()) {
      const auto w = oracle::rotate_translate(v, poses.back().x, poses.back().y,
                                              poses.back().theta);
      xmin = std::min(xmin, w.x);
      xmax = std::max(xmax, w.x);
      ymin = std::min(ymin, w.y);
      ymax = std::max(ymax, w.y);
    }
  }
  const auto box = cp::bounding_box(polys, poses);
  EXPECT_NEAR(box.min.x, xmin, 1e-9);
  EXPECT_NEAR(box.min.y, ymin, 1e-9);
  EXPECT_NEAR(box.max.x, xmax, 1e-9);
  EXPECT_NEAR(box.max.y, ymax, 1e-9);
}

TEST(ConvexHull, MatchesJarvis) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point2> pts;
    for (int i = 0; i < 30; ++i) pts.push_back({u(rng), u(rng)});
    auto a = cp::convex_hull(pts);
    auto b = oracle::jarvis_hull(pts);
    ASSERT_EQ(a.size(), b.size());
    const auto start = std::find(a.begin(), a.end(), b.front());
    ASSERT_NE(start, a.end());
    std::rotate(a.begin(), start, a.end());
    EXPECT_EQ(a, b);
  }
}
