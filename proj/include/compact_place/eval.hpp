#ifndef COMPACT_PLACE_EVAL_HPP_
#define COMPACT_PLACE_EVAL_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compact_place/agent.hpp"
#include "compact_place/baselines.hpp"
#include "compact_place/dataset.hpp"
#include "compact_place/env.hpp"

namespace compact_place {

// Placed poses translated so the first-placed fragment's centroid sits on
// its layout centroid. Rotation is not registered.
std::map<int, Pose2> registered_poses(const AssemblyResult& result,
                                      const Layout& layout);

enum class BoxVariant {
  kUnion,         // one bounding box around all placed fragments
  kSumOfBoxes,    // literal per-fragment sum
};

enum class DistanceVariant {
  kExcess,  // placed minus layout nearest-centroid distance
  kRaw,     // placed nearest-centroid distance
};

double metric_bb_increase(const AssemblyResult& result, const Layout& layout,
                          BoxVariant variant = BoxVariant::kUnion);
double metric_mean_object_distance(const AssemblyResult& result,
                                   const Layout& layout,
                                   DistanceVariant variant = DistanceVariant::kExcess);
double metric_angle_diff(const AssemblyResult& result, const Layout& layout);
// Percentage of placement episodes that ended in a collision.
double metric_collision_rate(const std::vector<AssemblyResult>& results);

// Mean nearest-centroid distance between the fragments at layout poses.
double layout_mean_nearest_distance(const Layout& layout);

struct MetricStat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0;
};

MetricStat aggregate(const std::vector<double>& values);

struct LayoutMetrics {
  std::string layout_id;
  std::string agent_tag;
  int fragments = 0;
  int collisions = 0;
  double bb_increase_pct = 0.0;
  double angle_diff_deg = 0.0;
  double mean_dist_mm = 0.0;
  double collision_rate_pct = 0.0;
  std::string plan_meta;  // "k=3", "shifts=120" or empty
};

LayoutMetrics compute_metrics(const AssemblyResult& result, const Layout& layout);

struct MetricReport {
  std::string agent_tag;
  MetricStat bb_increase_pct;
  MetricStat angle_diff_deg;
  MetricStat mean_dist_mm;
  MetricStat collision_rate_pct;
  double pooled_collision_rate_pct = 0.0;
  std::vector<LayoutMetrics> rows;
};

MetricReport build_report(const std::string& agent_tag,
                          const std::vector<AssemblyResult>& results,
                          const std::vector<std::shared_ptr<const Layout>>& layouts);

// Teleports every fragment to its layout pose.
AssemblyResult identity_assembly(const Layout& layout);

// Sequential deterministic-policy placement of a whole layout. Each episode
// starts at `level` with the fragments placed so far on the table.
AssemblyResult policy_assembly(Agent& agent, std::shared_ptr<const Layout> layout,
                               const EnvConfig& env_cfg, int level,
                               std::uint64_t seed);

// Produces the assembly of layout `index`; called concurrently for different
// indices when threads > 1.
using AssemblySource = std::function<AssemblyResult(std::size_t index)>;

MetricReport evaluate_suite(const std::string& agent_tag,
                            const AssemblySource& source,
                            const std::vector<std::shared_ptr<const Layout>>& layouts,
                            const std::vector<std::string>& layout_ids,
                            int threads = 1);

std::string report_csv_header();
void write_report_csv(const MetricReport& report, const std::filesystem::path& path);
nlohmann::json summary_json(const MetricReport& report);
void write_summary_json(const MetricReport& report, const std::filesystem::path& path);

// Numbers reported for the original physics-based setup, keyed by agent tag;
// printed next to our results for manual comparison only.
struct PublishedMetrics {
  double bb_mean, bb_std, angle_mean, angle_std, dist_mean, dist_std,
      coll_mean, coll_std;
};
std::optional<PublishedMetrics> published_metrics(const std::string& agent_tag);
std::string comparison_table(const MetricReport& report);

}  // namespace compact_place

#endif  // COMPACT_PLACE_EVAL_HPP_
