#ifndef COMPACT_PLACE_BASELINES_HPP_
#define COMPACT_PLACE_BASELINES_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compact_place/dataset.hpp"
#include "compact_place/env.hpp"
#include "compact_place/geom.hpp"

namespace compact_place {

inline constexpr int kPlanFormatVersion = 1;

// Object hull plus open-gripper operation space, inflated by a margin. The
// loop is expressed in the fragment's local frame.
struct GripperFootprint {
  std::vector<Point2> loop;
  double grasp_yaw = 0.0;  // EE yaw relative to the fragment frame

  std::vector<Point2> world_loop(const Pose2& pose) const;
};

// Degenerate gripper parts (non-positive width, depth or palm clearance) are
// left out of the union.
GripperFootprint gripper_footprint(const Fragment& fragment, double grasp_yaw,
                                   const GripperModel& gripper,
                                   double delta_s);

// Integer-degree yaw in [0, 180) with the narrowest closing-axis support.
double default_grasp_yaw(const ConvexPolygon& shape);

enum class PlanType { kBL1, kBL2 };
std::string plan_type_name(PlanType type);
PlanType plan_type_from_name(const std::string& name);

struct PlanTarget {
  int fragment_id = 0;
  Pose2 pose;
  double grasp_yaw = 0.0;
  int shifts = 0;  // BL2 shift iterations for this fragment
};

struct PlacementPlan {
  PlanType type = PlanType::kBL1;
  std::vector<PlanTarget> targets;  // layout sequence order
  int scale_k = 0;                  // BL1
  double scale = 1.0;               // BL1
  int jitters = 0;                  // BL2 zero-vector deadlocks
  int escapes = 0;                  // BL2 stalls left radially
};

struct BaselineConfig {
  double alpha_b = 0.1;
  int k_max = 50;
  double delta_s = 3.0;
  double shift_increment = 2.0;
  int max_shift_iterations = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json baseline_config_to_json(const BaselineConfig& cfg);
BaselineConfig baseline_config_from_json(const nlohmann::json& j);

// Area-weighted centroid of all fragments at their layout poses.
Point2 layout_centroid(const Layout& layout);

// Layout positions scaled about the layout centroid, orientations kept.
std::vector<PlanTarget> scaled_targets(const Layout& layout, double scale);

// Evenly spaced grasp yaws over [0, 180), starting at the default one.
std::vector<double> grasp_yaw_candidates(const ConvexPolygon& shape);

// Sequential footprint check against the objects placed before each target.
// Every target gets the first candidate grasp yaw with a clear footprint;
// false as soon as a target has none.
bool footprints_clear(const Layout& layout, std::vector<PlanTarget>& targets,
                      const GripperModel& gripper, double delta_s,
                      double eps_touch = kEpsTouch);

// Smallest k in [1, k_max] whose scaled layout passes footprints_clear.
PlacementPlan bl1_plan(const Layout& layout, const GripperModel& gripper,
                       const BaselineConfig& cfg);

// i * sum_n (c_p - c_n) / |c_p - c_n|.
Point2 bl2_movement_vector(const Point2& c_p, const std::vector<Point2>& colliders,
                           double increment);

PlacementPlan bl2_plan(const Layout& layout, const GripperModel& gripper,
                       const BaselineConfig& cfg);

struct CollisionEvent {
  int fragment_id = 0;
  ContactSet contacts;
};

struct AssemblyResult {
  std::string layout_id;
  std::string agent_tag;  // OUR, BL1, BL2, NO-L or ORACLE
  std::vector<int> order;  // placement order
  std::map<int, Pose2> placed;
  std::vector<CollisionEvent> collisions;
  std::map<int, bool> success;
  std::string plan_meta;  // "k=3" for BL1, "shifts=120" for BL2
};

// Kinematic descent to the table at each target, release, vertical retract.
// The first contact ends a fragment's motion; the fragment stays where it was
// when the contact happened.
AssemblyResult execute_plan(const PlacementPlan& plan,
                            std::shared_ptr<const Layout> layout,
                            const EnvConfig& env_cfg);

nlohmann::json assembly_to_json(const AssemblyResult& result);
AssemblyResult assembly_from_json(const nlohmann::json& j);

nlohmann::json plan_to_json(const PlacementPlan& plan);
PlacementPlan plan_from_json(const nlohmann::json& j);
void save_plan(const PlacementPlan& plan, const std::filesystem::path& path);
PlacementPlan load_plan(const std::filesystem::path& path);

}  // namespace compact_place

#endif  // COMPACT_PLACE_BASELINES_HPP_
