#ifndef COMPACT_PLACE_ENV_HPP_
#define COMPACT_PLACE_ENV_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compact_place/dataset.hpp"
#include "compact_place/geom.hpp"

namespace compact_place {

inline constexpr int kObservationSize = 58;
inline constexpr int kActionSize = 5;

// Observation layout offsets.
inline constexpr int kObsCorners = 0;     // 6 neighbors x 2 corners x xyz
inline constexpr int kObsLines = 36;      // 2 lines x 2 anchors x xyz
inline constexpr int kObsEePose = 48;     // x y z theta
inline constexpr int kObsRetract = 52;    // x y z
inline constexpr int kObsObjTheta = 55;
inline constexpr int kObsLineBool = 56;
inline constexpr int kObsTaskState = 57;

using Observation = std::array<double, kObservationSize>;

enum class TaskState : int { kGrasp = 0, kPlace = 1, kRetract = 2, kReset = 3 };

struct RewardConfig {
  double alpha_n = 0.1;
  double alpha_theta = 0.1;
  double alpha_c = 3.0;
  double alpha_l = 6.0;
  double beta_c = 3.0;
  double beta_l = 3.0;
  double alpha_d = 0.5;
  double alpha_m = 0.5;
  double alpha_g = 0.1;
  double alpha_col_o = 2.0;
  double alpha_col_r = 2.0;
  double alpha_col_t = 1.0;
  double d_norm = 1000.0;  // mm
  double h_norm = 100.0;   // mm, drop-height normalization
  bool use_reference_lines = true;

  void validate() const;
};

// Two parallel fingers closing along the EE x axis. The EE reference point
// sits at the finger roots; fingertips reach `finger_length` below it.
struct GripperModel {
  double finger_width = 20.0;   // along the closing axis
  double finger_depth = 40.0;   // across the closing axis
  double opening_width_open = 85.0;
  double palm_clearance = 30.0;
  double finger_length = 50.0;
  // Open clearance for fragments wider than the opening.
  double min_open_stroke = 5.0;

  void validate() const;
};

struct CurriculumConfig {
  int max_level = 21;
  double start_height_first = 30.0;  // above the layout place position
  double arm_reach = 850.0;          // last level starts at reach / 4
  double retract_height_first = 30.0;
  double retract_height_last = 80.0;
  double promotion_threshold = 0.8;

  void validate() const;
};

struct CurriculumState {
  int level = 0;
  double ee_start_height = 30.0;
  double retract_height = 30.0;
  double promotion_threshold = 0.8;
  bool operator==(const CurriculumState&) const = default;
};

CurriculumState curriculum_at(int level, const CurriculumConfig& cfg);
// Promotes iff success_rate is strictly above the threshold; capped.
CurriculumState curriculum_update(const CurriculumState& state,
                                  double success_rate,
                                  const CurriculumConfig& cfg);

struct EnvConfig {
  RewardConfig reward;
  GripperModel gripper;
  CurriculumConfig curriculum;
  double max_translation_step = 10.0;  // mm per unit action
  double max_rotation_step = 3.0;      // deg per unit action
  int max_steps = 50;
  double retract_tolerance = 5.0;
  double workspace_xy = 1000.0;  // box side, centered on the layout
  double workspace_z = 300.0;
  double eps_touch = kEpsTouch;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json env_config_to_json(const EnvConfig& cfg);
// Missing keys keep their defaults; unknown keys raise ConfigError.
EnvConfig env_config_from_json(const nlohmann::json& j);

struct EEState {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double theta = 0.0;
  bool gripper_open = false;
};

struct Action {
  double dx = 0.0;
  double dy = 0.0;
  double dz = 0.0;
  double dtheta = 0.0;
  double open_cmd = -1.0;

  static Action from_array(const std::array<double, kActionSize>& a);
  std::array<double, kActionSize> to_array() const;
  Action clamped() const;
};

struct ContactSet {
  bool object_table = false;  // placing object <-> table object
  bool robot_object = false;  // gripper <-> table object
  bool robot_table = false;   // gripper <-> table plane
  bool any() const { return object_table || robot_object || robot_table; }
  std::string to_string() const;
};

struct RewardBreakdown {
  double r_q1 = 0.0;
  double r_q12 = 0.0;
  double r_q2 = 0.0;
  double r_col = 0.0;
  double total = 0.0;
};

struct EnvState {
  TaskState q = TaskState::kGrasp;
  EEState ee;
  int placing_id = -1;
  Pose2 placing_pose;
  double placing_bottom = 0.0;  // z of the object's bottom face
  double grasp_yaw_offset = 0.0;  // object yaw minus EE yaw
  // Object support along +/- closing axis, measured at grasp time.
  double support_plus = 0.0;
  double support_minus = 0.0;
  std::map<int, Pose2> table_poses;
  int step = 0;
  std::optional<Point3> drop_point;
  Point3 retract_goal;
  Point2 release_position;  // placed object xy at release
  double release_height = 0.0;
  int curriculum_level = 0;
  std::uint64_t episode_seed = 0;
  bool done = false;
};

struct StepInfo {
  ContactSet contacts;
  bool success = false;
  bool timeout = false;
  bool released = false;
  Pose2 placing_pose;
  std::map<int, Pose2> table_poses;
};

struct StepResult {
  Observation observation{};
  RewardBreakdown reward;
  bool done = false;
  StepInfo info;
};

// Static per-layout data shared by the pure reward / observation functions.
struct Scene {
  std::shared_ptr<const Layout> layout;
  EnvConfig config;
  Point2 line_origin;  // l_x is y = line_origin.y, l_y is x = line_origin.x
  Point2 center;       // layout bounding-box center
  std::map<int, int> sequence_index;

  Scene(std::shared_ptr<const Layout> layout, EnvConfig config);
  const Fragment& fragment(int id) const { return layout->fragment(id); }
};

// Placed neighbors of the placing object, ordered by sequence index.
std::vector<int> placed_neighbors(const Scene& scene, const EnvState& state);

double corner_distance_dc(const Scene& scene, const EnvState& state);
double line_distance_dl(const Scene& scene, const EnvState& state);
double reward_q1(const Scene& scene, const EnvState& state);
double reward_release(const Scene& scene, const EnvState& state);
double reward_retract(const Scene& scene, const EnvState& state);
double reward_collision(const RewardConfig& cfg, const ContactSet& contacts);
Observation build_observation(const Scene& scene, const EnvState& state);
ContactSet check_collisions(const Scene& scene, const EnvState& state);

// World-frame finger footprints for the gripper in `state`.
std::array<std::vector<Point2>, 2> finger_loops(const GripperModel& gripper,
                                                const EEState& ee,
                                                double support_plus,
                                                double support_minus,
                                                bool open);

// Object support along the closing axis for a given object-to-EE yaw offset.
std::pair<double, double> closing_axis_support(const ConvexPolygon& shape,
                                               double grasp_yaw_offset);

class PlacementEnv {
 public:
  PlacementEnv(std::shared_ptr<const Layout> layout, EnvConfig config);

  // `placing_index` indexes the layout sequence. Without `table_poses` every
  // sequence predecessor sits at its layout pose.
  Observation reset(int placing_index, int curriculum_level,
                    std::uint64_t seed,
                    std::optional<std::map<int, Pose2>> table_poses = {});
  StepResult step(const Action& action);

  const EnvState& state() const { return state_; }
  void set_state(const EnvState& state) { state_ = state; }
  const Scene& scene() const { return scene_; }

  void set_trace_enabled(bool enabled) { trace_enabled_ = enabled; }
  void write_trace_csv(const std::filesystem::path& path) const;

 private:
  struct TraceRow {
    int step;
    int q;
    EEState ee;
    Action action;
    RewardBreakdown reward;
    ContactSet contacts;
  };

  Scene scene_;
  EnvState state_;
  bool trace_enabled_ = false;
  std::vector<TraceRow> trace_;
};

}  // namespace compact_place

#endif  // COMPACT_PLACE_ENV_HPP_
