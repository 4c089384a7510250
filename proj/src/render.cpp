#include "compact_place/render.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

namespace compact_place {

namespace {

constexpr const char* kPalette[] = {"#e4c59e", "#c9a27e", "#d8b38c", "#b98b64",
                                    "#e9d2b4", "#cfa98a", "#dcbf9a", "#c4966e"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  return s == "-0.00" ? "0.00" : s;
}

class Canvas {
 public:
  Canvas(double min_x, double min_y, double max_x, double max_y, const RenderOptions& o)
      : min_x_(min_x - o.margin), max_y_(max_y + o.margin), scale_(o.scale) {
    width_ = (max_x - min_x + 2 * o.margin) * o.scale;
    height_ = (max_y - min_y + 2 * o.margin) * o.scale;
  }

  std::string x(double wx) const { return num((wx - min_x_) * scale_); }
  std::string y(double wy) const { return num((max_y_ - wy) * scale_); }
  std::string points(const std::vector<Point2>& loop) const {
    std::string s;
    for (const Point2& p : loop) {
      if (!s.empty()) s += ' ';
      s += x(p.x) + ',' + y(p.y);
    }
    return s;
  }
  double width() const { return width_; }
  double height() const { return height_; }
  double world_min_x() const { return min_x_; }
  double world_max_x() const { return min_x_ + width_ / scale_; }
  double world_max_y() const { return max_y_; }
  double world_min_y() const { return max_y_ - height_ / scale_; }

 private:
  double min_x_;
  double max_y_;
  double scale_;
  double width_ = 0.0;
  double height_ = 0.0;
};

struct Drawing {
  std::map<int, Pose2> poses;
  std::set<int> colliding;
  std::map<int, double> grasp_yaws;
};

std::string render(const Layout& layout, const Drawing& d, const RenderOptions& o) {
  if (d.poses.empty()) throw std::invalid_argument("nothing to render");
  std::map<int, std::vector<Point2>> shapes;
  std::map<int, std::vector<Point2>> footprints;
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  const auto extend = [&](const std::vector<Point2>& loop) {
    for (const Point2& p : loop) {
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
  };
  for (const auto& [id, pose] : d.poses) {
    shapes[id] = layout.fragment(id).shape.world_vertices(pose);
    extend(shapes[id]);
    if (o.footprint_gripper) {
      const auto it = d.grasp_yaws.find(id);
      const double yaw = it != d.grasp_yaws.end()
                             ? it->second
                             : default_grasp_yaw(layout.fragment(id).shape);
      footprints[id] = gripper_footprint(layout.fragment(id), yaw, *o.footprint_gripper,
                                         o.footprint_margin)
                           .world_loop(pose);
      extend(footprints[id]);
    }
  }
  // Reference lines sit on the layout's bounding-box minimum.
  std::vector<ConvexPolygon> polys;
  std::vector<Pose2> layout_poses;
  for (const Fragment& f : layout.fragments) {
    polys.push_back(f.shape);
    layout_poses.push_back(f.layout_pose);
  }
  const Box2 layout_box = bounding_box(polys, layout_poses);
  if (o.reference_lines) extend({layout_box.min});
  const Canvas c(x0, y0, x1, y1, o);

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(c.width()) +
       "\" height=\"" + num(c.height()) + "\" viewBox=\"0 0 " + num(c.width()) + ' ' +
       num(c.height()) + "\">\n";
  s += "<style>polygon{stroke:#5a4632;stroke-width:1}"
       "polygon.collision{stroke:#d01c1c;stroke-width:3;stroke-dasharray:6 3}"
       "line.ref{stroke:#2a6fdb;stroke-width:1.5}"
       "circle.corner{fill:#1b1b1b}"
       "path.footprint{fill:none;stroke:#7a7a7a;stroke-dasharray:4 3}</style>\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  if (o.reference_lines) {
    s += "<line class=\"ref\" id=\"l_x\" x1=\"" + c.x(c.world_min_x()) + "\" y1=\"" +
         c.y(layout_box.min.y) + "\" x2=\"" + c.x(c.world_max_x()) + "\" y2=\"" +
         c.y(layout_box.min.y) + "\"/>\n";
    s += "<line class=\"ref\" id=\"l_y\" x1=\"" + c.x(layout_box.min.x) + "\" y1=\"" +
         c.y(c.world_max_y()) + "\" x2=\"" + c.x(layout_box.min.x) + "\" y2=\"" +
         c.y(c.world_min_y()) + "\"/>\n";
  }
  for (const auto& [id, loop] : shapes) {
    s += "<polygon id=\"f" + std::to_string(id) + "\"";
    if (d.colliding.count(id)) s += " class=\"collision\"";
    s += " fill=\"" + std::string(kPalette[id % std::size(kPalette)]) + "\" points=\"" +
         c.points(loop) + "\"/>\n";
  }
  for (const auto& [id, loop] : footprints) {
    std::string path = "M";
    for (std::size_t i = 0; i < loop.size(); ++i) {
      path += (i ? " L" : "") + c.x(loop[i].x) + ' ' + c.y(loop[i].y);
    }
    s += "<path class=\"footprint\" d=\"" + path + " Z\"/>\n";
  }
  if (o.corners) {
    for (const auto& [key, pairs] : layout.corners) {
      const auto a = d.poses.find(key.first);
      const auto b = d.poses.find(key.second);
      if (a == d.poses.end() || b == d.poses.end()) continue;
      for (const CornerPair& cp : pairs) {
        for (const Point2& p : {a->second.apply(cp.on_low), b->second.apply(cp.on_high)}) {
          s += "<circle class=\"corner\" cx=\"" + c.x(p.x) + "\" cy=\"" + c.y(p.y) +
               "\" r=\"3\"/>\n";
        }
      }
    }
  }
  s += "</svg>\n";
  return s;
}

}  // namespace

std::string render_layout_svg(const Layout& layout, const RenderOptions& options) {
  Drawing d;
  for (const Fragment& f : layout.fragments) d.poses[f.id] = f.layout_pose;
  return render(layout, d, options);
}

std::string render_assembly_svg(const AssemblyResult& result, const Layout& layout,
                                const RenderOptions& options, const PlacementPlan* plan) {
  Drawing d;
  d.poses = result.placed;
  for (const CollisionEvent& e : result.collisions) d.colliding.insert(e.fragment_id);
  if (plan) {
    for (const PlanTarget& t : plan->targets) d.grasp_yaws[t.fragment_id] = t.grasp_yaw;
  }
  return render(layout, d, options);
}

void write_text_file(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace compact_place
