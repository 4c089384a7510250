#include "compact_place/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>

#include "compact_place/errors.hpp"
#include "compact_place/random.hpp"

namespace compact_place {

using nlohmann::json;

namespace {

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(field, what);
}

std::vector<Point2> world_shape(const Fragment& f, const Pose2& pose) {
  return f.shape.world_vertices(pose);
}

// BL2 stall detection: net progress below this fraction of the path length
// over the window.
constexpr int kStallWindow = 100;
constexpr double kStallProgress = 0.05;
constexpr int kGraspCandidates = 12;

// Unit vector along a random whole-degree heading.
Point2 random_direction(Rng& rng) {
  const double phi =
      deg2rad(static_cast<double>(std::uniform_int_distribution<int>(0, 359)(rng)));
  return {std::cos(phi), std::sin(phi)};
}

}  // namespace

std::vector<Point2> GripperFootprint::world_loop(const Pose2& pose) const {
  std::vector<Point2> out;
  out.reserve(loop.size());
  for (const Point2& p : loop) out.push_back(pose.apply(p));
  return out;
}

GripperFootprint gripper_footprint(const Fragment& fragment, double grasp_yaw,
                                   const GripperModel& gripper,
                                   double delta_s) {
  if (!(delta_s >= 0.0)) throw GeometryError("footprint margin must be >= 0");
  std::vector<Point2> points = fragment.shape.vertices();
  // Object-to-EE yaw offset is the negated grasp yaw.
  const auto [plus, minus] = closing_axis_support(fragment.shape, -grasp_yaw);
  const EEState ee{0.0, 0.0, 0.0, grasp_yaw, true};
  if (gripper.finger_width > 0.0 && gripper.finger_depth > 0.0) {
    for (const auto& finger : finger_loops(gripper, ee, plus, minus, true)) {
      points.insert(points.end(), finger.begin(), finger.end());
    }
  }
  if (gripper.palm_clearance > 0.0) {
    const double half_open = gripper.opening_width_open / 2.0;
    const double w = std::max(gripper.finger_width, 0.0);
    const double x_plus = std::max(half_open, plus + gripper.min_open_stroke) + w;
    const double x_minus = std::max(half_open, minus + gripper.min_open_stroke) + w;
    const double hy = gripper.palm_clearance / 2.0;
    const Pose2 frame(0.0, 0.0, grasp_yaw);
    for (const Point2& p : {Point2{x_plus, -hy}, Point2{x_plus, hy},
                            Point2{-x_minus, hy}, Point2{-x_minus, -hy}}) {
      points.push_back(frame.apply(p));
    }
  }
  GripperFootprint fp;
  fp.grasp_yaw = grasp_yaw;
  fp.loop = convex_hull(std::move(points));
  if (fp.loop.size() < 3) throw GeometryError("degenerate footprint");
  if (delta_s > 0.0) fp.loop = offset_loop(fp.loop, delta_s);
  return fp;
}

double default_grasp_yaw(const ConvexPolygon& shape) {
  double best = 0.0;
  double best_width = std::numeric_limits<double>::infinity();
  for (int deg = 0; deg < 180; ++deg) {
    const auto [plus, minus] = closing_axis_support(shape, -deg);
    if (plus + minus < best_width - 1e-9) {
      best_width = plus + minus;
      best = deg;
    }
  }
  return best;
}

std::string plan_type_name(PlanType type) {
  return type == PlanType::kBL1 ? "BL1" : "BL2";
}

PlanType plan_type_from_name(const std::string& name) {
  if (name == "BL1") return PlanType::kBL1;
  if (name == "BL2") return PlanType::kBL2;
  throw DataError("unknown plan type '" + name + "'");
}

void BaselineConfig::validate() const {
  require(std::isfinite(alpha_b) && alpha_b > 0.0, "alpha_b", "must be > 0");
  require(k_max >= 1, "k_max", "must be >= 1");
  require(std::isfinite(delta_s) && delta_s >= 0.0, "delta_s", "must be >= 0");
  require(std::isfinite(shift_increment) && shift_increment > 0.0,
          "shift_increment", "must be > 0");
  require(max_shift_iterations >= 1, "max_shift_iterations", "must be >= 1");
}

json baseline_config_to_json(const BaselineConfig& c) {
  return {{"alpha_b", c.alpha_b},
          {"k_max", c.k_max},
          {"delta_s", c.delta_s},
          {"shift_increment", c.shift_increment},
          {"max_shift_iterations", c.max_shift_iterations},
          {"seed", c.seed}};
}

BaselineConfig baseline_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("baseline", "expected an object");
  BaselineConfig c;
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
  read("alpha_b", c.alpha_b);
  read("k_max", c.k_max);
  read("delta_s", c.delta_s);
  read("shift_increment", c.shift_increment);
  read("max_shift_iterations", c.max_shift_iterations);
  read("seed", c.seed);
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(key, "unknown key");
  }
  c.validate();
  return c;
}

Point2 layout_centroid(const Layout& layout) {
  double total = 0.0;
  Point2 acc;
  for (const Fragment& f : layout.fragments) {
    const double a = area(f.shape);
    total += a;
    acc = acc + f.layout_pose.position() * a;
  }
  if (total <= 0.0) throw DataError("layout has no area");
  return acc * (1.0 / total);
}

std::vector<PlanTarget> scaled_targets(const Layout& layout, double scale) {
  const Point2 c = layout_centroid(layout);
  std::vector<PlanTarget> out;
  for (int id : layout.sequence) {
    const Fragment& f = layout.fragment(id);
    const Point2 p = c + (f.layout_pose.position() - c) * scale;
    PlanTarget t;
    t.fragment_id = id;
    t.pose = Pose2(p.x, p.y, f.layout_pose.theta);
    t.grasp_yaw = default_grasp_yaw(f.shape);
    out.push_back(t);
  }
  return out;
}

std::vector<double> grasp_yaw_candidates(const ConvexPolygon& shape) {
  const double base = default_grasp_yaw(shape);
  std::vector<double> out;
  for (int j = 0; j < kGraspCandidates; ++j) {
    out.push_back(std::fmod(base + j * 180.0 / kGraspCandidates, 180.0));
  }
  return out;
}

bool footprints_clear(const Layout& layout, std::vector<PlanTarget>& targets,
                      const GripperModel& gripper, double delta_s,
                      double eps_touch) {
  std::vector<std::vector<Point2>> placed;
  for (PlanTarget& t : targets) {
    const Fragment& f = layout.fragment(t.fragment_id);
    bool clear = false;
    for (double yaw : grasp_yaw_candidates(f.shape)) {
      const auto fp = gripper_footprint(f, yaw, gripper, delta_s).world_loop(t.pose);
      clear = std::none_of(placed.begin(), placed.end(), [&](const auto& other) {
        return overlap_loops(fp, other, eps_touch);
      });
      if (clear) {
        t.grasp_yaw = yaw;
        break;
      }
    }
    if (!clear) return false;
    placed.push_back(world_shape(f, t.pose));
  }
  return true;
}

PlacementPlan bl1_plan(const Layout& layout, const GripperModel& gripper,
                       const BaselineConfig& cfg) {
  cfg.validate();
  for (int k = 1; k <= cfg.k_max; ++k) {
    const double scale = 1.0 + k * cfg.alpha_b;
    auto targets = scaled_targets(layout, scale);
    if (footprints_clear(layout, targets, gripper, cfg.delta_s)) {
      PlacementPlan plan;
      plan.type = PlanType::kBL1;
      plan.targets = std::move(targets);
      plan.scale_k = k;
      plan.scale = scale;
      return plan;
    }
  }
  throw DataError("BL1: no collision-free scale up to k_max = " +
                  std::to_string(cfg.k_max));
}

Point2 bl2_movement_vector(const Point2& c_p, const std::vector<Point2>& colliders,
                           double increment) {
  if (colliders.empty()) throw GeometryError("movement vector needs a collider");
  Point2 sum;
  for (const Point2& c : colliders) {
    const Point2 d = c_p - c;
    const double n = d.norm();
    if (n <= 0.0) throw GeometryError("movement vector: coincident centroids");
    sum = sum + d * (1.0 / n);
  }
  return sum * increment;
}

PlacementPlan bl2_plan(const Layout& layout, const GripperModel& gripper,
                       const BaselineConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x626c32));
  PlacementPlan plan;
  plan.type = PlanType::kBL2;
  // Obstacles: placed objects and the footprints reserved for them.
  std::vector<std::vector<Point2>> obstacles;
  std::vector<Point2> obstacle_centroids;
  std::optional<int> prev_id;
  Pose2 prev_placed;
  for (int id : layout.sequence) {
    const Fragment& f = layout.fragment(id);
    PlanTarget t;
    t.fragment_id = id;
    t.grasp_yaw = default_grasp_yaw(f.shape);
    Point2 pos = f.layout_pose.position();
    if (prev_id) {
      pos = prev_placed.position() +
            (pos - layout.fragment(*prev_id).layout_pose.position());
    }
    for (double yaw : grasp_yaw_candidates(f.shape)) {
      const auto loop = gripper_footprint(f, yaw, gripper, cfg.delta_s)
                            .world_loop(Pose2(pos.x, pos.y, f.layout_pose.theta));
      if (std::none_of(obstacles.begin(), obstacles.end(), [&](const auto& o) {
            return overlap_loops(loop, o);
          })) {
        t.grasp_yaw = yaw;
        break;
      }
    }
    const GripperFootprint fp = gripper_footprint(f, t.grasp_yaw, gripper, cfg.delta_s);
    std::vector<Point2> trail;
    std::optional<Point2> escape;
    for (int it = 0;; ++it) {
      const Pose2 pose(pos.x, pos.y, f.layout_pose.theta);
      const auto loop = fp.world_loop(pose);
      std::vector<Point2> colliders;
      for (std::size_t k = 0; k < obstacles.size(); ++k) {
        if (overlap_loops(loop, obstacles[k])) colliders.push_back(obstacle_centroids[k]);
      }
      if (colliders.empty()) {
        t.pose = pose;
        t.shifts = it;
        break;
      }
      if (it >= cfg.max_shift_iterations) {
        throw DataError("BL2: fragment " + std::to_string(id) + " still overlaps after " +
                        std::to_string(cfg.max_shift_iterations) + " shifts");
      }
      const Point2 c_p = area_centroid(loop);
      trail.push_back(pos);
      if (!escape && it >= kStallWindow &&
          distance(pos, trail[it - kStallWindow]) <
              kStallProgress * kStallWindow * cfg.shift_increment) {
        // Trapped between obstacles: leave radially from their mean centroid.
        Point2 mean;
        for (const Point2& c : obstacle_centroids) mean = mean + c;
        mean = mean * (1.0 / obstacle_centroids.size());
        Point2 d = c_p - mean;
        if (d.norm() <= 0.0) d = random_direction(rng);
        escape = d * (1.0 / d.norm());
        ++plan.escapes;
      }
      if (escape) {
        pos = pos + *escape * cfg.shift_increment;
        continue;
      }
      Point2 move;
      bool coincident = false;
      for (const Point2& c : colliders) coincident = coincident || c == c_p;
      if (!coincident) move = bl2_movement_vector(c_p, colliders, cfg.shift_increment);
      if (coincident || move.norm() < 1e-9 * cfg.shift_increment) {
        // Deadlock escape along a random whole-degree direction.
        move = random_direction(rng) * cfg.shift_increment;
        ++plan.jitters;
      }
      pos = pos + move;
    }
    obstacles.push_back(world_shape(f, t.pose));
    obstacle_centroids.push_back(t.pose.position());
    const auto reserved = fp.world_loop(t.pose);
    obstacles.push_back(reserved);
    obstacle_centroids.push_back(area_centroid(reserved));
    prev_id = id;
    prev_placed = t.pose;
    plan.targets.push_back(t);
  }
  return plan;
}

AssemblyResult execute_plan(const PlacementPlan& plan,
                            std::shared_ptr<const Layout> layout,
                            const EnvConfig& env_cfg) {
  const Scene scene(layout, env_cfg);
  const double fl = env_cfg.gripper.finger_length;
  const double step = env_cfg.max_translation_step;
  const double approach = fl + env_cfg.curriculum.start_height_first;
  const double retract = fl + env_cfg.curriculum.retract_height_first;

  AssemblyResult result;
  result.agent_tag = plan_type_name(plan.type);
  if (plan.type == PlanType::kBL1) {
    result.plan_meta = "k=" + std::to_string(plan.scale_k);
  } else {
    int shifts = 0;
    for (const PlanTarget& t : plan.targets) shifts += t.shifts;
    result.plan_meta = "shifts=" + std::to_string(shifts);
  }
  for (const PlanTarget& t : plan.targets) {
    const Fragment& f = layout->fragment(t.fragment_id);
    EnvState s;
    s.q = TaskState::kPlace;
    s.placing_id = t.fragment_id;
    s.table_poses = result.placed;
    s.ee = {t.pose.x, t.pose.y, approach, wrap_degrees(t.pose.theta + t.grasp_yaw), false};
    s.grasp_yaw_offset = -t.grasp_yaw;
    std::tie(s.support_plus, s.support_minus) =
        closing_axis_support(f.shape, s.grasp_yaw_offset);
    s.placing_pose = t.pose;
    s.placing_bottom = s.ee.z - fl;

    const auto contact = [&]() {
      const ContactSet c = check_collisions(scene, s);
      if (c.any()) result.collisions.push_back({t.fragment_id, c});
      return c.any();
    };
    bool hit = contact();
    while (!hit && s.ee.z > fl) {
      s.ee.z = std::max(fl, s.ee.z - step);
      s.placing_bottom = s.ee.z - fl;
      hit = contact();
    }
    if (!hit) {
      s.q = TaskState::kRetract;
      s.ee.gripper_open = true;
      s.placing_bottom = 0.0;
      hit = contact();
    }
    while (!hit && s.ee.z < retract) {
      s.ee.z = std::min(retract, s.ee.z + step);
      hit = contact();
    }
    result.order.push_back(t.fragment_id);
    result.placed[t.fragment_id] = s.placing_pose;
    result.success[t.fragment_id] = !hit;
  }
  return result;
}

json assembly_to_json(const AssemblyResult& r) {
  json placed = json::array();
  for (int id : r.order) {
    const Pose2& p = r.placed.at(id);
    placed.push_back({{"id", id},
                      {"x", p.x},
                      {"y", p.y},
                      {"theta", p.theta},
                      {"success", r.success.count(id) ? r.success.at(id) : false}});
  }
  json collisions = json::array();
  for (const CollisionEvent& e : r.collisions) {
    collisions.push_back({{"id", e.fragment_id}, {"contacts", e.contacts.to_string()}});
  }
  return {{"format", "compact_place.assembly"},
          {"version", kPlanFormatVersion},
          {"layout_id", r.layout_id},
          {"agent", r.agent_tag},
          {"plan_meta", r.plan_meta},
          {"placed", placed},
          {"collisions", collisions}};
}

AssemblyResult assembly_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "compact_place.assembly") {
      throw DataError("not an assembly file");
    }
    AssemblyResult r;
    r.layout_id = j.at("layout_id").get<std::string>();
    r.agent_tag = j.at("agent").get<std::string>();
    r.plan_meta = j.at("plan_meta").get<std::string>();
    for (const json& p : j.at("placed")) {
      const int id = p.at("id").get<int>();
      if (r.placed.count(id)) throw DataError("assembly lists fragment twice");
      r.order.push_back(id);
      r.placed[id] = Pose2(p.at("x").get<double>(), p.at("y").get<double>(),
                           p.at("theta").get<double>());
      r.success[id] = p.at("success").get<bool>();
    }
    for (const json& e : j.at("collisions")) {
      CollisionEvent ev;
      ev.fragment_id = e.at("id").get<int>();
      const std::string c = e.at("contacts").get<std::string>();
      ev.contacts.object_table = c.find("object_table") != std::string::npos;
      ev.contacts.robot_object = c.find("robot_object") != std::string::npos;
      ev.contacts.robot_table = c.find("robot_table") != std::string::npos;
      r.collisions.push_back(ev);
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("assembly: ") + e.what());
  }
}

json plan_to_json(const PlacementPlan& plan) {
  json targets = json::array();
  for (const PlanTarget& t : plan.targets) {
    targets.push_back({{"id", t.fragment_id},
                       {"x", t.pose.x},
                       {"y", t.pose.y},
                       {"theta", t.pose.theta},
                       {"grasp_yaw", t.grasp_yaw},
                       {"shifts", t.shifts}});
  }
  json meta = {{"type", plan_type_name(plan.type)}};
  if (plan.type == PlanType::kBL1) {
    meta["k"] = plan.scale_k;
    meta["scale"] = plan.scale;
  } else {
    int total = 0;
    for (const PlanTarget& t : plan.targets) total += t.shifts;
    meta["total_shifts"] = total;
    meta["jitters"] = plan.jitters;
    meta["escapes"] = plan.escapes;
  }
  return {{"format", "compact_place.plan"},
          {"version", kPlanFormatVersion},
          {"metadata", meta},
          {"targets", targets}};
}

PlacementPlan plan_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "compact_place.plan") {
      throw DataError("not a plan file");
    }
    if (j.at("version").get<int>() != kPlanFormatVersion) {
      throw DataError("unsupported plan version " + j.at("version").dump());
    }
    PlacementPlan plan;
    const json& meta = j.at("metadata");
    plan.type = plan_type_from_name(meta.at("type").get<std::string>());
    if (plan.type == PlanType::kBL1) {
      plan.scale_k = meta.at("k").get<int>();
      plan.scale = meta.at("scale").get<double>();
    } else {
      plan.jitters = meta.at("jitters").get<int>();
      plan.escapes = meta.at("escapes").get<int>();
    }
    std::set<int> seen;
    for (const json& t : j.at("targets")) {
      PlanTarget pt;
      pt.fragment_id = t.at("id").get<int>();
      pt.pose = Pose2(t.at("x").get<double>(), t.at("y").get<double>(),
                      t.at("theta").get<double>());
      pt.grasp_yaw = t.at("grasp_yaw").get<double>();
      pt.shifts = t.at("shifts").get<int>();
      if (!seen.insert(pt.fragment_id).second) {
        throw DataError("plan lists fragment " + std::to_string(pt.fragment_id) + " twice");
      }
      plan.targets.push_back(pt);
    }
    return plan;
  } catch (const json::exception& e) {
    throw DataError(std::string("plan: ") + e.what());
  }
}

void save_plan(const PlacementPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << plan_to_json(plan).dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

PlacementPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("parse error in " + path.string() + ": " + e.what());
  }
  return plan_from_json(j);
}

}  // namespace compact_place
