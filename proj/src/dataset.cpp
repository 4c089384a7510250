#include "compact_place/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "compact_place/random.hpp"

namespace compact_place {

namespace {

constexpr int kMaxAttempts = 100;
constexpr int kMaxCutDraws = 1000;

using json = nlohmann::json;

std::vector<Point2> clean_loop(std::vector<Point2> loop) {
  // Drop repeated and collinear vertices until stable.
  bool changed = true;
  while (changed && loop.size() >= 3) {
    changed = false;
    for (std::size_t i = 0; i < loop.size() && loop.size() >= 3; ++i) {
      const std::size_t n = loop.size();
      const Point2& prev = loop[(i + n - 1) % n];
      const Point2& cur = loop[i];
      const Point2& next = loop[(i + 1) % n];
      const Point2 e1 = cur - prev;
      const Point2 e2 = next - cur;
      const bool duplicate = e1.norm() <= kEpsVertex;
      const bool straight =
          !duplicate && e2.norm() > kEpsVertex &&
          e1.cross(e2) / (e1.norm() * e2.norm()) <= kEpsConvex;
      if (duplicate || straight) {
        loop.erase(loop.begin() + static_cast<std::ptrdiff_t>(i));
        changed = true;
        break;
      }
    }
  }
  return loop;
}

std::optional<PlacedShape> make_piece(std::vector<Point2> loop) {
  loop = clean_loop(std::move(loop));
  if (loop.size() < 3 || signed_area(loop) <= 0.0) return std::nullopt;
  auto [shape, c] = ConvexPolygon::centered(loop);
  return PlacedShape{std::move(shape), Pose2(c.x, c.y, 0.0)};
}

json point_json(const Point2& p) { return json::array({p.x, p.y}); }

Point2 point_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw DataError("point must be [x, y]");
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

std::string pair_key(const IdPair& p) {
  return std::to_string(p.first) + "-" + std::to_string(p.second);
}

IdPair parse_pair_key(const std::string& key) {
  const auto dash = key.find('-');
  if (dash == std::string::npos) throw DataError("bad corner key '" + key + "'");
  try {
    return {std::stoi(key.substr(0, dash)), std::stoi(key.substr(dash + 1))};
  } catch (const std::exception&) {
    throw DataError("bad corner key '" + key + "'");
  }
}

}  // namespace

GeneratorConfig GeneratorConfig::with_defaults(std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.seed = seed;
  cfg.window_height = cfg.global_height / 3.0;
  cfg.window_step = cfg.window_height / 2.0;
  return cfg;
}

void GeneratorConfig::validate() const {
  const auto positive = [](const char* name, double v) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(name, "must be positive");
    }
  };
  positive("global_width", global_width);
  positive("global_height", global_height);
  positive("density", density);
  positive("height", height);
  positive("min_fragment_area", min_fragment_area);
  positive("window_height", window_height);
  positive("window_step", window_step);
  if (n_cuts < 1) throw ConfigError("n_cuts", "must be >= 1");
}

std::vector<int> Layout::neighbors(int id) const {
  std::vector<int> out;
  for (const auto& [a, b] : adjacency) {
    if (a == id) out.push_back(b);
    if (b == id) out.push_back(a);
  }
  return out;
}

double fragment_mass(const ConvexPolygon& shape, double height,
                     double density) {
  // mm^3 -> m^3
  return area(shape) * height * density * 1e-9;
}

std::pair<std::optional<PlacedShape>, std::optional<PlacedShape>> cut_polygon(
    const ConvexPolygon& poly, const Pose2& pose, const Point2& point,
    const Point2& direction) {
  const auto world = poly.world_vertices(pose);
  const Point2 dir = direction * (1.0 / direction.norm());
  double scale = 1.0;
  for (const auto& p : world) scale = std::max(scale, (p - point).norm());
  const double tol = 1e-12 * scale;

  std::vector<double> side(world.size());
  bool any_left = false;
  bool any_right = false;
  for (std::size_t i = 0; i < world.size(); ++i) {
    double s = dir.cross(world[i] - point);
    if (std::abs(s) <= tol) s = 0.0;
    side[i] = s;
    any_left |= s > 0.0;
    any_right |= s < 0.0;
  }
  if (!any_right) return {PlacedShape{poly, pose}, std::nullopt};
  if (!any_left) return {std::nullopt, PlacedShape{poly, pose}};

  std::vector<Point2> left;
  std::vector<Point2> right;
  const std::size_t n = world.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + 1) % n;
    const Point2& p = world[i];
    const double sp = side[i];
    const double sq = side[j];
    if (sp >= 0.0) left.push_back(p);
    if (sp <= 0.0) right.push_back(p);
    if ((sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0)) {
      const double t = sp / (sp - sq);
      const Point2 x = p + (world[j] - p) * t;
      left.push_back(x);
      right.push_back(x);
    }
  }
  return {make_piece(std::move(left)), make_piece(std::move(right))};
}

void compute_adjacency(Layout& layout) {
  layout.adjacency.clear();
  layout.corners.clear();
  const auto& frags = layout.fragments;
  for (std::size_t i = 0; i < frags.size(); ++i) {
    for (std::size_t j = i + 1; j < frags.size(); ++j) {
      const auto& a = frags[i];
      const auto& b = frags[j];
      const auto segs = shared_edge_segments(a.shape, a.layout_pose, b.shape,
                                             b.layout_pose, kEpsAdj);
      if (segs.empty()) continue;
      const auto [p, q] = corresponding_corners(segs);
      const IdPair key = make_id_pair(a.id, b.id);
      layout.adjacency.insert(key);
      const auto& low = frags.at(key.first);
      const auto& high = frags.at(key.second);
      layout.corners[key] = {
          CornerPair{low.layout_pose.inverse_apply(p),
                     high.layout_pose.inverse_apply(p)},
          CornerPair{low.layout_pose.inverse_apply(q),
                     high.layout_pose.inverse_apply(q)}};
    }
  }
}

std::vector<int> extract_sequence(const Layout& layout, double window_height,
                                  double window_step) {
  const auto& frags = layout.fragments;
  if (frags.empty()) return {};
  std::vector<ConvexPolygon> shapes;
  std::vector<Pose2> poses;
  for (const auto& f : frags) {
    shapes.push_back(f.shape);
    poses.push_back(f.layout_pose);
  }
  const Box2 box = bounding_box(shapes, poses);

  const int rows =
      std::max(1, static_cast<int>(std::ceil(box.height() / window_height -
                                             1e-12)));
  int positions = 1;
  if (box.width() > window_height) {
    positions += static_cast<int>(
        std::ceil((box.width() - window_height) / window_step - 1e-12));
  }

  std::vector<bool> taken(frags.size(), false);
  std::vector<int> seq;
  seq.reserve(frags.size());
  for (int r = 0; r < rows; ++r) {
    const double ylo = box.min.y + r * window_height;
    const double yhi = ylo + window_height;
    const bool last_row = r == rows - 1;
    const bool forward = r % 2 == 0;
    for (int k = 0; k < positions; ++k) {
      const int col = forward ? k : positions - 1 - k;
      const double xlo = box.min.x + col * window_step;
      const double xhi = xlo + window_height;
      const bool last_col = col == positions - 1;
      std::vector<int> hits;
      for (std::size_t i = 0; i < frags.size(); ++i) {
        if (taken[i]) continue;
        const Point2 c = frags[i].layout_pose.position();
        const bool in_x = c.x >= xlo && (c.x < xhi || (last_col && c.x <= box.max.x));
        const bool in_y = c.y >= ylo && (c.y < yhi || (last_row && c.y <= box.max.y));
        if (in_x && in_y) hits.push_back(static_cast<int>(i));
      }
      std::sort(hits.begin(), hits.end(), [&](int a, int b) {
        const Point2 ca = frags[a].layout_pose.position();
        const Point2 cb = frags[b].layout_pose.position();
        if (ca.x != cb.x) return forward ? ca.x < cb.x : ca.x > cb.x;
        return ca.y < cb.y;
      });
      for (int h : hits) {
        taken[h] = true;
        seq.push_back(frags[h].id);
      }
    }
  }
  return seq;
}

std::map<int, LineFlags> compute_line_flags(const Layout& layout) {
  std::map<int, LineFlags> out;
  if (layout.fragments.empty()) return out;
  std::vector<ConvexPolygon> shapes;
  std::vector<Pose2> poses;
  for (const auto& f : layout.fragments) {
    shapes.push_back(f.shape);
    poses.push_back(f.layout_pose);
  }
  const Box2 box = bounding_box(shapes, poses);

  // The two extreme on-line vertices, ordered along the line.
  const auto anchors = [](const std::vector<Point2>& on_line, bool along_x) {
    std::vector<Point2> res;
    if (on_line.empty()) return res;
    const auto key = [along_x](const Point2& p) { return along_x ? p.x : p.y; };
    const auto [lo, hi] = std::minmax_element(
        on_line.begin(), on_line.end(),
        [&](const Point2& a, const Point2& b) { return key(a) < key(b); });
    res.push_back(*lo);
    if (distance(*lo, *hi) > kEpsVertex) res.push_back(*hi);
    return res;
  };

  for (const auto& f : layout.fragments) {
    std::vector<Point2> on_lx;
    std::vector<Point2> on_ly;
    for (const auto& local : f.shape.vertices()) {
      const Point2 w = f.layout_pose.apply(local);
      if (w.y - box.min.y <= kEpsAdj) on_lx.push_back(local);
      if (w.x - box.min.x <= kEpsAdj) on_ly.push_back(local);
    }
    // Order anchors in world terms, store them local.
    std::vector<Point2> lx_world;
    std::vector<Point2> ly_world;
    for (const auto& p : on_lx) lx_world.push_back(f.layout_pose.apply(p));
    for (const auto& p : on_ly) ly_world.push_back(f.layout_pose.apply(p));
    LineFlags flags;
    for (const auto& w : anchors(lx_world, true)) {
      flags.lx_anchors.push_back(f.layout_pose.inverse_apply(w));
    }
    for (const auto& w : anchors(ly_world, false)) {
      flags.ly_anchors.push_back(f.layout_pose.inverse_apply(w));
    }
    flags.borders_lx = !flags.lx_anchors.empty();
    flags.borders_ly = !flags.ly_anchors.empty();
    out[f.id] = std::move(flags);
  }
  return out;
}

bool sequence_is_constrained(const Layout& layout) {
  std::set<int> placed;
  for (std::size_t k = 0; k < layout.sequence.size(); ++k) {
    const int id = layout.sequence[k];
    if (k > 0) {
      bool ok = false;
      const auto it = layout.line_flags.find(id);
      if (it != layout.line_flags.end() &&
          (it->second.borders_lx || it->second.borders_ly)) {
        ok = true;
      }
      for (int nb : layout.neighbors(id)) ok = ok || placed.count(nb) > 0;
      if (!ok) return false;
    }
    placed.insert(id);
  }
  return true;
}

Layout assemble_layout(std::vector<PlacedShape> pieces,
                       const GeneratorConfig& cfg) {
  Layout layout;
  layout.config = cfg;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    Fragment f;
    f.id = static_cast<int>(i);
    f.shape = std::move(pieces[i].shape);
    f.layout_pose = pieces[i].pose;
    f.height = cfg.height;
    f.mass = fragment_mass(f.shape, f.height, cfg.density);
    layout.fragments.push_back(std::move(f));
  }
  compute_adjacency(layout);
  layout.line_flags = compute_line_flags(layout);
  layout.sequence =
      extract_sequence(layout, cfg.window_height, cfg.window_step);
  return layout;
}

Layout layout_from_world_loops(const std::vector<std::vector<Point2>>& loops,
                               const GeneratorConfig& cfg) {
  std::vector<PlacedShape> pieces;
  for (const auto& loop : loops) {
    auto [shape, c] = ConvexPolygon::centered(loop);
    pieces.push_back({std::move(shape), Pose2(c.x, c.y, 0.0)});
  }
  return assemble_layout(std::move(pieces), cfg);
}

Layout generate_layout(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::vector<Point2> rect{{0.0, 0.0},
                                 {cfg.global_width, 0.0},
                                 {cfg.global_width, cfg.global_height},
                                 {0.0, cfg.global_height}};
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(attempt)));
    std::vector<PlacedShape> pieces;
    {
      auto [shape, c] = ConvexPolygon::centered(rect);
      pieces.push_back({std::move(shape), Pose2(c.x, c.y, 0.0)});
    }
    bool rejected = false;
    try {
      for (int cut = 0; cut < cfg.n_cuts && !rejected; ++cut) {
        // Resample the line while it would leave an undersized fragment.
        bool placed = false;
        for (int draw = 0; draw < kMaxCutDraws && !placed; ++draw) {
          const Point2 p{uniform(rng, 0.0, cfg.global_width),
                         uniform(rng, 0.0, cfg.global_height)};
          const double phi = uniform(rng, 0.0, kPi);
          const Point2 dir{std::cos(phi), std::sin(phi)};
          std::vector<PlacedShape> next;
          for (const auto& piece : pieces) {
            auto [l, r] = cut_polygon(piece.shape, piece.pose, p, dir);
            if (l) next.push_back(std::move(*l));
            if (r) next.push_back(std::move(*r));
          }
          placed = std::none_of(next.begin(), next.end(),
                                [&](const PlacedShape& s) {
                                  return area(s.shape) < cfg.min_fragment_area;
                                });
          if (placed) pieces = std::move(next);
        }
        rejected = !placed;
      }
    } catch (const GeometryError&) {
      rejected = true;
    }
    if (rejected) continue;

    // Stable ids: bottom-to-top, then left-to-right by centroid.
    std::sort(pieces.begin(), pieces.end(),
              [](const PlacedShape& a, const PlacedShape& b) {
                if (a.pose.y != b.pose.y) return a.pose.y < b.pose.y;
                return a.pose.x < b.pose.x;
              });
    Layout layout = assemble_layout(std::move(pieces), cfg);
    bool too_many = false;
    for (const auto& f : layout.fragments) {
      too_many |= static_cast<int>(layout.neighbors(f.id).size()) > kMaxNeighbors;
    }
    if (too_many) continue;
    if (!sequence_is_constrained(layout)) continue;
    return layout;
  }
  throw DataError("generate_layout: " + std::to_string(kMaxAttempts) +
                  " consecutive attempts rejected (seed " +
                  std::to_string(cfg.seed) + ")");
}

void validate_layout(const Layout& layout) {
  const auto& frags = layout.fragments;
  for (std::size_t i = 0; i < frags.size(); ++i) {
    if (frags[i].id != static_cast<int>(i)) {
      throw DataError("fragment at index " + std::to_string(i) + " has id " +
                      std::to_string(frags[i].id));
    }
    const double expected =
        fragment_mass(frags[i].shape, frags[i].height, layout.config.density);
    if (std::abs(frags[i].mass - expected) > 1e-9 * std::abs(expected)) {
      throw DataError("fragment " + std::to_string(i) +
                      " mass does not match area x height x density");
    }
  }
  std::vector<int> sorted = layout.sequence;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size() || i < frags.size(); ++i) {
    if (sorted.size() != frags.size() || sorted[i] != static_cast<int>(i)) {
      throw DataError("sequence is not a permutation of the fragment ids");
    }
  }
  for (const auto& pair : layout.adjacency) {
    if (pair.first >= pair.second || pair.first < 0 ||
        pair.second >= static_cast<int>(frags.size())) {
      throw DataError("bad adjacency pair " + pair_key(pair));
    }
    if (!layout.corners.count(pair)) {
      throw DataError("adjacency pair " + pair_key(pair) +
                      " has no corner entry");
    }
  }
  if (layout.corners.size() != layout.adjacency.size()) {
    throw DataError("corner entries do not match adjacency");
  }
  for (const auto& f : frags) {
    if (static_cast<int>(layout.neighbors(f.id).size()) > kMaxNeighbors) {
      throw DataError("fragment " + std::to_string(f.id) + " has more than " +
                      std::to_string(kMaxNeighbors) + " neighbors");
    }
  }
  for (std::size_t i = 0; i < frags.size(); ++i) {
    for (std::size_t j = i + 1; j < frags.size(); ++j) {
      if (overlap(frags[i].shape, frags[i].layout_pose, frags[j].shape,
                  frags[j].layout_pose, kEpsTouch)) {
        throw DataError("fragments " + std::to_string(i) + " and " +
                        std::to_string(j) + " overlap");
      }
    }
  }
}

json generator_config_to_json(const GeneratorConfig& cfg) {
  return {{"global_width", cfg.global_width},
          {"global_height", cfg.global_height},
          {"n_cuts", cfg.n_cuts},
          {"density", cfg.density},
          {"height", cfg.height},
          {"min_fragment_area", cfg.min_fragment_area},
          {"seed", cfg.seed},
          {"window_height", cfg.window_height},
          {"window_step", cfg.window_step}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("generator", "expected an object");
  GeneratorConfig cfg;
  std::set<std::string> known;
  const auto read = [&](const char* key, auto& field) {
    known.insert(key);
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(key, "wrong type");
    }
  };
  read("global_width", cfg.global_width);
  read("global_height", cfg.global_height);
  read("n_cuts", cfg.n_cuts);
  read("density", cfg.density);
  read("height", cfg.height);
  read("min_fragment_area", cfg.min_fragment_area);
  read("seed", cfg.seed);
  cfg.window_height = cfg.global_height / 3.0;
  read("window_height", cfg.window_height);
  cfg.window_step = cfg.window_height / 2.0;
  read("window_step", cfg.window_step);
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(key, "unknown key");
  }
  return cfg;
}

json layout_to_json(const Layout& layout) {
  json frags = json::array();
  for (const auto& f : layout.fragments) {
    json verts = json::array();
    for (const auto& v : f.shape.vertices()) verts.push_back(point_json(v));
    frags.push_back({{"id", f.id},
                     {"vertices", verts},
                     {"pose",
                      {{"x", f.layout_pose.x},
                       {"y", f.layout_pose.y},
                       {"theta", f.layout_pose.theta}}},
                     {"mass", f.mass},
                     {"height", f.height}});
  }
  json adjacency = json::array();
  for (const auto& [a, b] : layout.adjacency) {
    adjacency.push_back(json::array({a, b}));
  }
  json corners = json::object();
  for (const auto& [key, pairs] : layout.corners) {
    json arr = json::array();
    for (const auto& cp : pairs) {
      arr.push_back(json::array({point_json(cp.on_low), point_json(cp.on_high)}));
    }
    corners[pair_key(key)] = arr;
  }
  json flags = json::object();
  for (const auto& [id, lf] : layout.line_flags) {
    json lx = json::array();
    json ly = json::array();
    for (const auto& p : lf.lx_anchors) lx.push_back(point_json(p));
    for (const auto& p : lf.ly_anchors) ly.push_back(point_json(p));
    flags[std::to_string(id)] = {{"lx", lf.borders_lx},
                                 {"ly", lf.borders_ly},
                                 {"anchors", {{"lx", lx}, {"ly", ly}}}};
  }
  return {{"version", kLayoutFormatVersion},
          {"config", generator_config_to_json(layout.config)},
          {"fragments", frags},
          {"adjacency", adjacency},
          {"corners", corners},
          {"line_flags", flags},
          {"sequence", layout.sequence}};
}

Layout layout_from_json(const json& j) {
  Layout layout;
  try {
    const int version = j.at("version").get<int>();
    if (version != kLayoutFormatVersion) {
      throw DataError("unsupported layout version " + std::to_string(version));
    }
    layout.config = generator_config_from_json(j.at("config"));
    for (const auto& jf : j.at("fragments")) {
      Fragment f;
      f.id = jf.at("id").get<int>();
      std::vector<Point2> verts;
      for (const auto& jv : jf.at("vertices")) verts.push_back(point_from_json(jv));
      try {
        f.shape = ConvexPolygon(std::move(verts));
      } catch (const GeometryError& e) {
        throw DataError("fragment " + std::to_string(f.id) + ": " + e.what());
      }
      const auto& jp = jf.at("pose");
      f.layout_pose = Pose2(jp.at("x").get<double>(), jp.at("y").get<double>(),
                            jp.at("theta").get<double>());
      f.mass = jf.at("mass").get<double>();
      f.height = jf.at("height").get<double>();
      layout.fragments.push_back(std::move(f));
    }
    for (const auto& ja : j.at("adjacency")) {
      layout.adjacency.insert(
          make_id_pair(ja.at(0).get<int>(), ja.at(1).get<int>()));
    }
    for (const auto& [key, arr] : j.at("corners").items()) {
      if (!arr.is_array() || arr.size() != 2) {
        throw DataError("corner entry " + key + " must hold exactly 2 pairs");
      }
      std::array<CornerPair, 2> pairs;
      for (std::size_t k = 0; k < 2; ++k) {
        pairs[k] = {point_from_json(arr.at(k).at(0)),
                    point_from_json(arr.at(k).at(1))};
      }
      layout.corners[parse_pair_key(key)] = pairs;
    }
    for (const auto& [key, jl] : j.at("line_flags").items()) {
      LineFlags lf;
      lf.borders_lx = jl.at("lx").get<bool>();
      lf.borders_ly = jl.at("ly").get<bool>();
      for (const auto& p : jl.at("anchors").at("lx")) {
        lf.lx_anchors.push_back(point_from_json(p));
      }
      for (const auto& p : jl.at("anchors").at("ly")) {
        lf.ly_anchors.push_back(point_from_json(p));
      }
      layout.line_flags[std::stoi(key)] = std::move(lf);
    }
    layout.sequence = j.at("sequence").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed layout: ") + e.what());
  }
  validate_layout(layout);
  return layout;
}

void save_layout(const Layout& layout, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << layout_to_json(layout).dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Layout load_layout(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("parse error in " + path.string() + ": " + e.what());
  }
  return layout_from_json(j);
}

}  // namespace compact_place
