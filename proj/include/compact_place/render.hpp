#ifndef COMPACT_PLACE_RENDER_HPP_
#define COMPACT_PLACE_RENDER_HPP_

#include <filesystem>
#include <optional>
#include <string>

#include "compact_place/baselines.hpp"
#include "compact_place/dataset.hpp"

namespace compact_place {

struct RenderOptions {
  bool reference_lines = true;
  bool corners = true;
  double margin = 20.0;  // mm around the drawing
  double scale = 2.0;    // SVG pixels per mm
  // Footprint outlines at the placed poses.
  std::optional<GripperModel> footprint_gripper;
  double footprint_margin = 3.0;
};

// Top-down view: one filled <polygon> per fragment, reference lines as
// <line>, corresponding corners as <circle>, footprints as <path>.
std::string render_layout_svg(const Layout& layout, const RenderOptions& options = {});

// Same for a placed assembly; fragments with a collision event are stroked
// with the "collision" class. Grasp yaws for footprints come from `plan`
// when given.
std::string render_assembly_svg(const AssemblyResult& result, const Layout& layout,
                                const RenderOptions& options = {},
                                const PlacementPlan* plan = nullptr);

void write_text_file(const std::string& text, const std::filesystem::path& path);

}  // namespace compact_place

#endif  // COMPACT_PLACE_RENDER_HPP_
