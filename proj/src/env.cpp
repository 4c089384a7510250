#include "compact_place/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "compact_place/errors.hpp"
#include "compact_place/random.hpp"

namespace compact_place {

using nlohmann::json;

namespace {

double lerp(double a, double b, double t) { return a + (b - a) * t; }

double unit_clamp(double v) { return std::clamp(v, 0.0, 1.0); }

// Signed displacement component mapped into [0, 1].
double map_displacement(double v, double d_norm) {
  return unit_clamp((v / d_norm + 1.0) / 2.0);
}

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(field, what);
}

const Point2& placing_corner(const CornerPair& c, const IdPair& key,
                             int placing_id) {
  return key.first == placing_id ? c.on_low : c.on_high;
}

const Point2& table_corner(const CornerPair& c, const IdPair& key,
                           int placing_id) {
  return key.first == placing_id ? c.on_high : c.on_low;
}

struct AnchorOffset {
  ReferenceLine line;
  Point3 displacement;  // foot of perpendicular minus anchor
};

std::vector<AnchorOffset> anchor_offsets(const Scene& scene,
                                         const EnvState& state) {
  std::vector<AnchorOffset> out;
  if (!scene.config.reward.use_reference_lines) return out;
  const auto it = scene.layout->line_flags.find(state.placing_id);
  if (it == scene.layout->line_flags.end()) return out;
  const LineFlags& flags = it->second;
  const Fragment& f = scene.fragment(state.placing_id);
  const double top = state.placing_bottom + f.height;
  if (flags.borders_lx) {
    for (const Point2& a : flags.lx_anchors) {
      const Point2 w = state.placing_pose.apply(a);
      out.push_back({ReferenceLine::kX,
                     {0.0, scene.line_origin.y - w.y, f.height - top}});
    }
  }
  if (flags.borders_ly) {
    for (const Point2& a : flags.ly_anchors) {
      const Point2 w = state.placing_pose.apply(a);
      out.push_back({ReferenceLine::kY,
                     {scene.line_origin.x - w.x, 0.0, f.height - top}});
    }
  }
  return out;
}

// Displacements from the placing object's corners to the table corners, per
// placed neighbor in sequence order.
std::vector<std::array<Point3, 2>> corner_offsets(const Scene& scene,
                                                  const EnvState& state) {
  std::vector<std::array<Point3, 2>> out;
  const Fragment& pf = scene.fragment(state.placing_id);
  const double top = state.placing_bottom + pf.height;
  for (int nb : placed_neighbors(scene, state)) {
    const IdPair key = make_id_pair(state.placing_id, nb);
    const auto& pairs = scene.layout->corners.at(key);
    const Pose2& table_pose = state.table_poses.at(nb);
    const double table_top = scene.fragment(nb).height;
    std::array<Point3, 2> d;
    for (int k = 0; k < 2; ++k) {
      const Point2 p = state.placing_pose.apply(
          placing_corner(pairs[k], key, state.placing_id));
      const Point2 t = table_pose.apply(table_corner(pairs[k], key, state.placing_id));
      d[k] = {t.x - p.x, t.y - p.y, table_top - top};
    }
    out.push_back(d);
  }
  return out;
}

bool z_overlap(double lo_a, double hi_a, double lo_b, double hi_b, double eps) {
  return std::min(hi_a, hi_b) - std::max(lo_a, lo_b) > eps;
}

}  // namespace

void RewardConfig::validate() const {
  for (double v : {alpha_n, alpha_theta, alpha_c, alpha_l, beta_c, beta_l,
                   alpha_d, alpha_m, alpha_g, alpha_col_o, alpha_col_r,
                   alpha_col_t}) {
    require(std::isfinite(v) && v >= 0.0, "reward", "factors must be >= 0");
  }
  require(std::isfinite(d_norm) && d_norm > 0.0, "reward.d_norm", "must be > 0");
  require(std::isfinite(h_norm) && h_norm > 0.0, "reward.h_norm", "must be > 0");
}

void GripperModel::validate() const {
  require(finger_width >= 0.0, "gripper.finger_width", "must be >= 0");
  require(finger_depth >= 0.0, "gripper.finger_depth", "must be >= 0");
  require(opening_width_open > 0.0, "gripper.opening_width_open", "must be > 0");
  require(palm_clearance >= 0.0, "gripper.palm_clearance", "must be >= 0");
  require(finger_length > 0.0, "gripper.finger_length", "must be > 0");
  require(min_open_stroke >= 0.0, "gripper.min_open_stroke", "must be >= 0");
}

void CurriculumConfig::validate() const {
  require(max_level >= 1, "curriculum.max_level", "must be >= 1");
  require(start_height_first >= 0.0, "curriculum.start_height_first", "must be >= 0");
  require(arm_reach > 0.0, "curriculum.arm_reach", "must be > 0");
  require(retract_height_first >= 0.0 && retract_height_last >= 0.0,
          "curriculum.retract_height", "must be >= 0");
  require(promotion_threshold >= 0.0 && promotion_threshold <= 1.0,
          "curriculum.promotion_threshold", "must be in [0, 1]");
}

void EnvConfig::validate() const {
  reward.validate();
  gripper.validate();
  curriculum.validate();
  require(max_translation_step > 0.0, "max_translation_step", "must be > 0");
  require(max_rotation_step > 0.0, "max_rotation_step", "must be > 0");
  require(max_steps >= 1, "max_steps", "must be >= 1");
  require(retract_tolerance > 0.0, "retract_tolerance", "must be > 0");
  require(workspace_xy > 0.0, "workspace_xy", "must be > 0");
  require(workspace_z > gripper.finger_length, "workspace_z",
          "must exceed the finger length");
  require(eps_touch >= 0.0, "eps_touch", "must be >= 0");
}

CurriculumState curriculum_at(int level, const CurriculumConfig& cfg) {
  CurriculumState s;
  s.level = std::clamp(level, 0, cfg.max_level);
  const double t = static_cast<double>(s.level) / cfg.max_level;
  s.ee_start_height = lerp(cfg.start_height_first, cfg.arm_reach / 4.0, t);
  s.retract_height = lerp(cfg.retract_height_first, cfg.retract_height_last, t);
  s.promotion_threshold = cfg.promotion_threshold;
  return s;
}

CurriculumState curriculum_update(const CurriculumState& state,
                                  double success_rate,
                                  const CurriculumConfig& cfg) {
  if (!(success_rate >= 0.0 && success_rate <= 1.0)) {
    throw std::invalid_argument("success rate outside [0, 1]");
  }
  const int next = success_rate > cfg.promotion_threshold ? state.level + 1
                                                          : state.level;
  return curriculum_at(next, cfg);
}

json env_config_to_json(const EnvConfig& c) {
  const RewardConfig& r = c.reward;
  const GripperModel& g = c.gripper;
  const CurriculumConfig& k = c.curriculum;
  return {
      {"reward",
       {{"alpha_n", r.alpha_n}, {"alpha_theta", r.alpha_theta},
        {"alpha_c", r.alpha_c}, {"alpha_l", r.alpha_l},
        {"beta_c", r.beta_c}, {"beta_l", r.beta_l},
        {"alpha_d", r.alpha_d}, {"alpha_m", r.alpha_m},
        {"alpha_g", r.alpha_g}, {"alpha_col_o", r.alpha_col_o},
        {"alpha_col_r", r.alpha_col_r}, {"alpha_col_t", r.alpha_col_t},
        {"d_norm", r.d_norm}, {"h_norm", r.h_norm},
        {"use_reference_lines", r.use_reference_lines}}},
      {"gripper",
       {{"finger_width", g.finger_width}, {"finger_depth", g.finger_depth},
        {"opening_width_open", g.opening_width_open},
        {"palm_clearance", g.palm_clearance},
        {"finger_length", g.finger_length},
        {"min_open_stroke", g.min_open_stroke}}},
      {"curriculum",
       {{"max_level", k.max_level},
        {"start_height_first", k.start_height_first},
        {"arm_reach", k.arm_reach},
        {"retract_height_first", k.retract_height_first},
        {"retract_height_last", k.retract_height_last},
        {"promotion_threshold", k.promotion_threshold}}},
      {"max_translation_step", c.max_translation_step},
      {"max_rotation_step", c.max_rotation_step},
      {"max_steps", c.max_steps},
      {"retract_tolerance", c.retract_tolerance},
      {"workspace_xy", c.workspace_xy},
      {"workspace_z", c.workspace_z},
      {"eps_touch", c.eps_touch},
      {"seed", c.seed}};
}

namespace {

// Reads known keys of `j` into fields; any other key is an error.
class KeyReader {
 public:
  KeyReader(const json& j, std::string prefix)
      : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(prefix_.empty() ? "config" : prefix_, "expected an object");
  }

  template <typename T>
  void operator()(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      j_.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(prefix_ + key, "wrong type");
    }
  }

  const json& child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return j_.contains(key) ? j_.at(key) : empty;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(prefix_ + key, "unknown key");
    }
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

}  // namespace

EnvConfig env_config_from_json(const json& j) {
  EnvConfig c;
  KeyReader top(j, "");
  {
    KeyReader r(top.child("reward"), "reward.");
    RewardConfig& w = c.reward;
    r("alpha_n", w.alpha_n);
    r("alpha_theta", w.alpha_theta);
    r("alpha_c", w.alpha_c);
    r("alpha_l", w.alpha_l);
    r("beta_c", w.beta_c);
    r("beta_l", w.beta_l);
    r("alpha_d", w.alpha_d);
    r("alpha_m", w.alpha_m);
    r("alpha_g", w.alpha_g);
    r("alpha_col_o", w.alpha_col_o);
    r("alpha_col_r", w.alpha_col_r);
    r("alpha_col_t", w.alpha_col_t);
    r("d_norm", w.d_norm);
    r("h_norm", w.h_norm);
    r("use_reference_lines", w.use_reference_lines);
    r.finish();
  }
  {
    KeyReader r(top.child("gripper"), "gripper.");
    GripperModel& g = c.gripper;
    r("finger_width", g.finger_width);
    r("finger_depth", g.finger_depth);
    r("opening_width_open", g.opening_width_open);
    r("palm_clearance", g.palm_clearance);
    r("finger_length", g.finger_length);
    r("min_open_stroke", g.min_open_stroke);
    r.finish();
  }
  {
    KeyReader r(top.child("curriculum"), "curriculum.");
    CurriculumConfig& k = c.curriculum;
    r("max_level", k.max_level);
    r("start_height_first", k.start_height_first);
    r("arm_reach", k.arm_reach);
    r("retract_height_first", k.retract_height_first);
    r("retract_height_last", k.retract_height_last);
    r("promotion_threshold", k.promotion_threshold);
    r.finish();
  }
  top("max_translation_step", c.max_translation_step);
  top("max_rotation_step", c.max_rotation_step);
  top("max_steps", c.max_steps);
  top("retract_tolerance", c.retract_tolerance);
  top("workspace_xy", c.workspace_xy);
  top("workspace_z", c.workspace_z);
  top("eps_touch", c.eps_touch);
  top("seed", c.seed);
  top.finish();
  c.validate();
  return c;
}

Action Action::from_array(const std::array<double, kActionSize>& a) {
  return {a[0], a[1], a[2], a[3], a[4]};
}

std::array<double, kActionSize> Action::to_array() const {
  return {dx, dy, dz, dtheta, open_cmd};
}

Action Action::clamped() const {
  const auto c = [](double v) {
    return std::isnan(v) ? 0.0 : std::clamp(v, -1.0, 1.0);
  };
  return {c(dx), c(dy), c(dz), c(dtheta), c(open_cmd)};
}

std::string ContactSet::to_string() const {
  std::string s;
  const auto add = [&s](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '|';
    s += name;
  };
  add(object_table, "object_table");
  add(robot_object, "robot_object");
  add(robot_table, "robot_table");
  return s.empty() ? "none" : s;
}

Scene::Scene(std::shared_ptr<const Layout> layout_in, EnvConfig config_in)
    : layout(std::move(layout_in)), config(std::move(config_in)) {
  if (!layout || layout->fragments.empty()) {
    throw DataError("environment needs a non-empty layout");
  }
  config.validate();
  std::vector<ConvexPolygon> shapes;
  std::vector<Pose2> poses;
  for (const auto& f : layout->fragments) {
    shapes.push_back(f.shape);
    poses.push_back(f.layout_pose);
  }
  const Box2 box = bounding_box(shapes, poses);
  line_origin = box.min;
  center = {(box.min.x + box.max.x) / 2.0, (box.min.y + box.max.y) / 2.0};
  for (std::size_t i = 0; i < layout->sequence.size(); ++i) {
    sequence_index[layout->sequence[i]] = static_cast<int>(i);
  }
}

std::vector<int> placed_neighbors(const Scene& scene, const EnvState& state) {
  std::vector<int> out;
  for (int nb : scene.layout->neighbors(state.placing_id)) {
    if (state.table_poses.count(nb)) out.push_back(nb);
  }
  std::sort(out.begin(), out.end(), [&scene](int a, int b) {
    return scene.sequence_index.at(a) < scene.sequence_index.at(b);
  });
  if (out.size() > static_cast<std::size_t>(kMaxNeighbors)) out.resize(kMaxNeighbors);
  return out;
}

double corner_distance_dc(const Scene& scene, const EnvState& state) {
  const auto offsets = corner_offsets(scene, state);
  if (offsets.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& d : offsets) sum += (d[0].norm() + d[1].norm()) / 2.0;
  return sum / offsets.size() / scene.config.reward.d_norm;
}

double line_distance_dl(const Scene& scene, const EnvState& state) {
  const auto anchors = anchor_offsets(scene, state);
  if (anchors.empty()) return 0.0;
  double total = 0.0;
  int lines = 0;
  for (ReferenceLine line : {ReferenceLine::kX, ReferenceLine::kY}) {
    double sum = 0.0;
    int n = 0;
    for (const auto& a : anchors) {
      if (a.line != line) continue;
      sum += a.displacement.norm();
      ++n;
    }
    if (n == 0) continue;
    total += sum / n;
    ++lines;
  }
  return total / lines / scene.config.reward.d_norm;
}

double reward_q1(const Scene& scene, const EnvState& state) {
  const RewardConfig& r = scene.config.reward;
  const double dtheta = abs_angle_difference(
      scene.fragment(state.placing_id).layout_pose.theta,
      state.placing_pose.theta);
  return -r.alpha_n * (corner_distance_dc(scene, state) +
                       line_distance_dl(scene, state)) -
         r.alpha_theta * dtheta / 180.0;
}

double reward_release(const Scene& scene, const EnvState& state) {
  const RewardConfig& r = scene.config.reward;
  const double d_c = corner_distance_dc(scene, state);
  const double d_l = line_distance_dl(scene, state);
  const double d_drop = unit_clamp(state.release_height / r.h_norm);
  return r.alpha_c * (1.0 - std::tanh(r.beta_c * d_c)) +
         r.alpha_l * (1.0 - std::tanh(r.beta_l * d_l)) - r.alpha_d * d_drop;
}

double reward_retract(const Scene& scene, const EnvState& state) {
  const RewardConfig& r = scene.config.reward;
  const Point3 released{state.release_position.x, state.release_position.y, 0.0};
  const Point3 current{state.placing_pose.x, state.placing_pose.y,
                       state.placing_bottom};
  const Point3 ee{state.ee.x, state.ee.y, state.ee.z};
  return -r.alpha_m * (released - current).norm() / r.d_norm -
         r.alpha_g * (state.retract_goal - ee).norm() / r.d_norm;
}

double reward_collision(const RewardConfig& cfg, const ContactSet& contacts) {
  if (contacts.object_table) return -cfg.alpha_col_o;
  if (contacts.robot_object) return -cfg.alpha_col_r;
  if (contacts.robot_table) return -cfg.alpha_col_t;
  return 0.0;
}

Observation build_observation(const Scene& scene, const EnvState& state) {
  Observation obs{};
  const EnvConfig& c = scene.config;
  const double d_norm = c.reward.d_norm;
  const double half = c.workspace_xy / 2.0;
  const auto map_x = [&](double x) {
    return unit_clamp((x - (scene.center.x - half)) / c.workspace_xy);
  };
  const auto map_y = [&](double y) {
    return unit_clamp((y - (scene.center.y - half)) / c.workspace_xy);
  };
  const auto map_z = [&](double z) { return unit_clamp(z / c.workspace_z); };

  if (state.q == TaskState::kPlace) {
    const auto corners = corner_offsets(scene, state);
    for (std::size_t n = 0; n < corners.size(); ++n) {
      for (int k = 0; k < 2; ++k) {
        const std::size_t base = kObsCorners + n * 6 + k * 3;
        obs[base] = map_displacement(corners[n][k].x, d_norm);
        obs[base + 1] = map_displacement(corners[n][k].y, d_norm);
        obs[base + 2] = map_displacement(corners[n][k].z, d_norm);
      }
    }
    int slot[2] = {0, 0};
    for (const auto& a : anchor_offsets(scene, state)) {
      const int line = a.line == ReferenceLine::kX ? 0 : 1;
      if (slot[line] >= 2) continue;
      const std::size_t base = kObsLines + line * 6 + slot[line]++ * 3;
      obs[base] = map_displacement(a.displacement.x, d_norm);
      obs[base + 1] = map_displacement(a.displacement.y, d_norm);
      obs[base + 2] = map_displacement(a.displacement.z, d_norm);
    }
    const double rel = wrap_degrees(
        state.placing_pose.theta -
        scene.fragment(state.placing_id).layout_pose.theta);
    obs[kObsObjTheta] = unit_clamp((rel + 180.0) / 360.0);
    if (c.reward.use_reference_lines) {
      const auto it = scene.layout->line_flags.find(state.placing_id);
      if (it != scene.layout->line_flags.end() &&
          (it->second.borders_lx || it->second.borders_ly)) {
        obs[kObsLineBool] = 1.0;
      }
    }
  }
  obs[kObsEePose] = map_x(state.ee.x);
  obs[kObsEePose + 1] = map_y(state.ee.y);
  obs[kObsEePose + 2] = map_z(state.ee.z);
  obs[kObsEePose + 3] = unit_clamp((wrap_degrees(state.ee.theta) + 180.0) / 360.0);
  if (state.q == TaskState::kRetract) {
    obs[kObsRetract] = map_x(state.retract_goal.x);
    obs[kObsRetract + 1] = map_y(state.retract_goal.y);
    obs[kObsRetract + 2] = map_z(state.retract_goal.z);
  }
  obs[kObsTaskState] = static_cast<double>(static_cast<int>(state.q)) / 3.0;
  return obs;
}

std::pair<double, double> closing_axis_support(const ConvexPolygon& shape,
                                               double grasp_yaw_offset) {
  const Pose2 in_ee(0.0, 0.0, grasp_yaw_offset);
  double plus = 0.0;
  double minus = 0.0;
  for (const Point2& v : shape.vertices()) {
    const Point2 p = in_ee.apply(v);
    plus = std::max(plus, p.x);
    minus = std::max(minus, -p.x);
  }
  return {plus, minus};
}

std::array<std::vector<Point2>, 2> finger_loops(const GripperModel& g,
                                                const EEState& ee,
                                                double support_plus,
                                                double support_minus,
                                                bool open) {
  const double half_open = g.opening_width_open / 2.0;
  const double inner_plus =
      open ? std::max(half_open, support_plus + g.min_open_stroke) : support_plus;
  const double inner_minus =
      open ? std::max(half_open, support_minus + g.min_open_stroke) : support_minus;
  const Pose2 pose(ee.x, ee.y, ee.theta);
  const double hd = g.finger_depth / 2.0;
  const auto rect = [&](double x0, double x1) {
    return std::vector<Point2>{pose.apply({x0, -hd}), pose.apply({x1, -hd}),
                               pose.apply({x1, hd}), pose.apply({x0, hd})};
  };
  return {rect(inner_plus, inner_plus + g.finger_width),
          rect(-inner_minus - g.finger_width, -inner_minus)};
}

ContactSet check_collisions(const Scene& scene, const EnvState& state) {
  ContactSet contacts;
  const EnvConfig& c = scene.config;
  const double eps = c.eps_touch;
  const Fragment& pf = scene.fragment(state.placing_id);
  const double fl = c.gripper.finger_length;
  const double finger_lo = state.ee.z - fl;
  const double finger_hi = state.ee.z;

  const auto fingers = finger_loops(c.gripper, state.ee, state.support_plus,
                                    state.support_minus, state.ee.gripper_open);
  // A zero-sized finger model stands for an ideal gripper without extent.
  const bool has_fingers = c.gripper.finger_width > 0.0 && c.gripper.finger_depth > 0.0;
  const auto finger_hits = [&](const ConvexPolygon& shape, const Pose2& pose,
                               double top) {
    if (!has_fingers) return false;
    if (!z_overlap(finger_lo, finger_hi, 0.0, top, eps)) return false;
    const auto loop = shape.world_vertices(pose);
    return overlap_loops(fingers[0], loop, eps) ||
           overlap_loops(fingers[1], loop, eps);
  };

  for (const auto& [id, pose] : state.table_poses) {
    const Fragment& tf = scene.fragment(id);
    if (z_overlap(state.placing_bottom, state.placing_bottom + pf.height, 0.0,
                  tf.height, eps) &&
        overlap(pf.shape, state.placing_pose, tf.shape, pose, eps)) {
      contacts.object_table = true;
    }
    if (finger_hits(tf.shape, pose, tf.height)) contacts.robot_object = true;
  }
  // Once released, the placed object is an obstacle for the gripper.
  if (state.q == TaskState::kRetract &&
      finger_hits(pf.shape, state.placing_pose, pf.height)) {
    contacts.robot_object = true;
  }
  if (finger_lo < 0.0) contacts.robot_table = true;
  return contacts;
}

PlacementEnv::PlacementEnv(std::shared_ptr<const Layout> layout,
                           EnvConfig config)
    : scene_(std::move(layout), std::move(config)) {}

Observation PlacementEnv::reset(int placing_index, int curriculum_level,
                                std::uint64_t seed,
                                std::optional<std::map<int, Pose2>> table_poses) {
  const Layout& layout = *scene_.layout;
  if (placing_index < 0 ||
      placing_index >= static_cast<int>(layout.sequence.size())) {
    throw std::out_of_range("placing index " + std::to_string(placing_index) +
                            " outside the sequence");
  }
  const EnvConfig& c = scene_.config;
  const CurriculumState cur = curriculum_at(curriculum_level, c.curriculum);
  Rng rng(seed);
  const double theta_place = uniform(rng, -90.0, 90.0);
  const double theta_ee = uniform(rng, -90.0, 90.0);

  EnvState s;
  s.q = TaskState::kPlace;
  s.placing_id = layout.sequence[placing_index];
  if (table_poses) {
    s.table_poses = std::move(*table_poses);
    s.table_poses.erase(s.placing_id);
  } else {
    for (int i = 0; i < placing_index; ++i) {
      const int id = layout.sequence[i];
      s.table_poses[id] = layout.fragment(id).layout_pose;
    }
  }
  const Fragment& f = layout.fragment(s.placing_id);
  const double t = static_cast<double>(cur.level) / c.curriculum.max_level;
  const double fl = c.gripper.finger_length;
  s.ee.x = lerp(f.layout_pose.x, scene_.center.x, t);
  s.ee.y = lerp(f.layout_pose.y, scene_.center.y, t);
  s.ee.z = fl + cur.ee_start_height;
  s.ee.theta = wrap_degrees(theta_ee);
  s.ee.gripper_open = false;
  s.grasp_yaw_offset = theta_place - theta_ee;
  s.placing_pose = Pose2(s.ee.x, s.ee.y, theta_place);
  s.placing_bottom = s.ee.z - fl;
  std::tie(s.support_plus, s.support_minus) =
      closing_axis_support(f.shape, s.grasp_yaw_offset);
  s.retract_goal = {0.0, 0.0, fl + cur.retract_height};
  s.curriculum_level = cur.level;
  s.episode_seed = seed;
  state_ = std::move(s);
  trace_.clear();
  return build_observation(scene_, state_);
}

StepResult PlacementEnv::step(const Action& raw) {
  if (state_.done) throw std::logic_error("step called on a finished episode");
  const EnvConfig& c = scene_.config;
  const Action a = raw.clamped();
  EnvState& s = state_;
  const TaskState q_before = s.q;
  const double half = c.workspace_xy / 2.0;
  const double fl = c.gripper.finger_length;

  ++s.step;
  s.ee.x = std::clamp(s.ee.x + a.dx * c.max_translation_step,
                      scene_.center.x - half, scene_.center.x + half);
  s.ee.y = std::clamp(s.ee.y + a.dy * c.max_translation_step,
                      scene_.center.y - half, scene_.center.y + half);
  s.ee.z = std::clamp(s.ee.z + a.dz * c.max_translation_step, 0.0, c.workspace_z);
  s.ee.theta = wrap_degrees(s.ee.theta + a.dtheta * c.max_rotation_step);
  if (s.q == TaskState::kPlace) {
    s.placing_pose = Pose2(s.ee.x, s.ee.y, s.ee.theta + s.grasp_yaw_offset);
    s.placing_bottom = s.ee.z - fl;
  }

  StepResult out;
  if (s.q == TaskState::kPlace && a.open_cmd > 0.0) {
    s.release_height = std::max(0.0, s.placing_bottom);
    s.placing_bottom = 0.0;
    s.ee.gripper_open = true;
    s.drop_point = Point3{s.ee.x, s.ee.y, s.ee.z};
    s.release_position = s.placing_pose.position();
    const CurriculumState cur = curriculum_at(s.curriculum_level, c.curriculum);
    s.retract_goal = {s.ee.x, s.ee.y, fl + cur.retract_height};
    s.q = TaskState::kRetract;
    out.info.released = true;
  }

  const ContactSet contacts = check_collisions(scene_, s);
  RewardBreakdown& r = out.reward;
  if (out.info.released) {
    r.r_q12 = reward_release(scene_, s);
  } else if (s.q == TaskState::kPlace) {
    r.r_q1 = reward_q1(scene_, s);
  } else {
    r.r_q2 = reward_retract(scene_, s);
  }
  r.r_col = reward_collision(c.reward, contacts);
  r.total = r.r_q1 + r.r_q12 + r.r_q2 + r.r_col;

  const Point3 ee{s.ee.x, s.ee.y, s.ee.z};
  const bool retracted = q_before == TaskState::kRetract &&
                         (ee - s.retract_goal).norm() <= c.retract_tolerance;
  out.info.contacts = contacts;
  out.info.success = retracted && !contacts.any();
  out.info.timeout = s.step >= c.max_steps && !out.info.success && !contacts.any();
  out.info.placing_pose = s.placing_pose;
  out.info.table_poses = s.table_poses;
  out.done = contacts.any() || retracted || s.step >= c.max_steps;
  if (out.done) {
    s.done = true;
    s.q = TaskState::kReset;
  }
  out.observation = build_observation(scene_, s);
  if (trace_enabled_) {
    trace_.push_back({s.step, static_cast<int>(s.q), s.ee, a, r, contacts});
  }
  return out;
}

void PlacementEnv::write_trace_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.precision(17);
  os << "step,q,ee_x,ee_y,ee_z,ee_theta,gripper_open,a_dx,a_dy,a_dz,a_dtheta,"
        "a_open,r_q1,r_q12,r_q2,r_col,r_total,contacts\n";
  for (const auto& t : trace_) {
    os << t.step << ',' << t.q << ',' << t.ee.x << ',' << t.ee.y << ','
       << t.ee.z << ',' << t.ee.theta << ',' << (t.ee.gripper_open ? 1 : 0)
       << ',' << t.action.dx << ',' << t.action.dy << ',' << t.action.dz << ','
       << t.action.dtheta << ',' << t.action.open_cmd << ',' << t.reward.r_q1
       << ',' << t.reward.r_q12 << ',' << t.reward.r_q2 << ','
       << t.reward.r_col << ',' << t.reward.total << ','
       << t.contacts.to_string() << '\n';
  }
}

}  // namespace compact_place
