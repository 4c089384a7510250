#ifndef COMPACT_PLACE_DATASET_HPP_
#define COMPACT_PLACE_DATASET_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "compact_place/geom.hpp"

namespace compact_place {

inline constexpr int kMaxNeighbors = 6;
inline constexpr int kLayoutFormatVersion = 1;

struct GeneratorConfig {
  double global_width = 300.0;
  double global_height = 300.0;
  int n_cuts = 6;
  double density = 2000.0;  // kg/m^3
  double height = 20.0;
  double min_fragment_area = 900.0;
  std::uint64_t seed = 0;
  double window_height = 100.0;
  double window_step = 50.0;

  // Window sizing follows the global height: a third of it, stepped by half.
  static GeneratorConfig with_defaults(std::uint64_t seed);
  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

struct Fragment {
  int id = 0;
  ConvexPolygon shape{{{-1.0, -1.0}, {1.0, -1.0}, {1.0, 1.0}, {-1.0, 1.0}}};
  Pose2 layout_pose;
  double mass = 0.0;    // kg
  double height = 0.0;  // mm
  bool operator==(const Fragment&) const = default;
};

// Unordered id pair, stored as (low, high).
using IdPair = std::pair<int, int>;
inline IdPair make_id_pair(int a, int b) {
  return a < b ? IdPair{a, b} : IdPair{b, a};
}

// One corresponding corner seen from both fragments' local frames.
struct CornerPair {
  Point2 on_low;   // local frame of IdPair::first
  Point2 on_high;  // local frame of IdPair::second
  bool operator==(const CornerPair&) const = default;
};

struct LineFlags {
  bool borders_lx = false;
  bool borders_ly = false;
  std::vector<Point2> lx_anchors;  // local frame, at most 2
  std::vector<Point2> ly_anchors;
  bool operator==(const LineFlags&) const = default;
};

struct Layout {
  GeneratorConfig config;
  std::vector<Fragment> fragments;  // fragments[i].id == i
  std::set<IdPair> adjacency;
  std::map<IdPair, std::array<CornerPair, 2>> corners;
  std::map<int, LineFlags> line_flags;
  std::vector<int> sequence;

  const Fragment& fragment(int id) const { return fragments.at(id); }
  std::vector<int> neighbors(int id) const;
  bool operator==(const Layout&) const = default;
};

double fragment_mass(const ConvexPolygon& shape, double height,
                     double density);

struct PlacedShape {
  ConvexPolygon shape;
  Pose2 pose;
};

// Splits a posed polygon by the line through `point` along `direction`.
// `first` is the left side (positive cross product with the direction).
std::pair<std::optional<PlacedShape>, std::optional<PlacedShape>> cut_polygon(
    const ConvexPolygon& poly, const Pose2& pose, const Point2& point,
    const Point2& direction);

Layout generate_layout(const GeneratorConfig& cfg);

// Builds a layout from posed shapes, ids in input order: masses, adjacency,
// corners, line flags and sequence. No invariant checks.
Layout assemble_layout(std::vector<PlacedShape> pieces,
                       const GeneratorConfig& cfg);
// Same, from world-frame CCW vertex loops.
Layout layout_from_world_loops(const std::vector<std::vector<Point2>>& loops,
                               const GeneratorConfig& cfg);

// Snake sweep over layout centroids: rows bottom to top, alternating
// left-to-right and right-to-left, square window of side `window_height`.
std::vector<int> extract_sequence(const Layout& layout, double window_height,
                                  double window_step);

std::map<int, LineFlags> compute_line_flags(const Layout& layout);

// Fills adjacency and corners from the fragments' layout poses.
void compute_adjacency(Layout& layout);

// Every fragment after the first has an earlier neighbor or borders a
// reference line.
bool sequence_is_constrained(const Layout& layout);

// Throws DataError describing the first violated invariant.
void validate_layout(const Layout& layout);

nlohmann::json layout_to_json(const Layout& layout);
Layout layout_from_json(const nlohmann::json& j);
void save_layout(const Layout& layout, const std::filesystem::path& path);
Layout load_layout(const std::filesystem::path& path);

nlohmann::json generator_config_to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

}  // namespace compact_place

#endif  // COMPACT_PLACE_DATASET_HPP_
