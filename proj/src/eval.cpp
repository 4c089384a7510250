#include "compact_place/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "compact_place/errors.hpp"
#include "compact_place/random.hpp"

namespace compact_place {

using nlohmann::json;

namespace {

Box2 box_of(const std::vector<Point2>& pts) {
  Box2 b{{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()},
         {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()}};
  for (const Point2& p : pts) {
    b.min = {std::min(b.min.x, p.x), std::min(b.min.y, p.y)};
    b.max = {std::max(b.max.x, p.x), std::max(b.max.y, p.y)};
  }
  return b;
}

double union_box_area(const Layout& layout, const std::map<int, Pose2>& poses) {
  std::vector<Point2> pts;
  for (const auto& [id, pose] : poses) {
    const auto w = layout.fragment(id).shape.world_vertices(pose);
    pts.insert(pts.end(), w.begin(), w.end());
  }
  return box_of(pts).area();
}

double sum_box_area(const Layout& layout, const std::map<int, Pose2>& poses) {
  double total = 0.0;
  for (const auto& [id, pose] : poses) {
    total += box_of(layout.fragment(id).shape.world_vertices(pose)).area();
  }
  return total;
}

double mean_nearest(const std::map<int, Pose2>& poses) {
  double sum = 0.0;
  for (const auto& [id, pose] : poses) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [other, q] : poses) {
      if (other != id) best = std::min(best, distance(pose.position(), q.position()));
    }
    sum += best;
  }
  return sum / static_cast<double>(poses.size());
}

std::map<int, Pose2> layout_poses_of(const Layout& layout,
                                     const std::map<int, Pose2>& placed) {
  std::map<int, Pose2> out;
  for (const auto& [id, pose] : placed) out[id] = layout.fragment(id).layout_pose;
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json stat_json(const MetricStat& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
}

}  // namespace

std::map<int, Pose2> registered_poses(const AssemblyResult& result,
                                      const Layout& layout) {
  if (result.order.empty() || result.placed.empty()) {
    throw DataError("assembly has no placed fragments");
  }
  const int first = result.order.front();
  const Pose2& at = result.placed.at(first);
  const Point2 shift = layout.fragment(first).layout_pose.position() - at.position();
  std::map<int, Pose2> out;
  for (const auto& [id, pose] : result.placed) {
    out[id] = Pose2(pose.x + shift.x, pose.y + shift.y, pose.theta);
  }
  return out;
}

double metric_bb_increase(const AssemblyResult& result, const Layout& layout,
                          BoxVariant variant) {
  const auto placed = registered_poses(result, layout);
  if (variant == BoxVariant::kSumOfBoxes) {
    const double ref = sum_box_area(layout, layout_poses_of(layout, placed));
    return 100.0 * (sum_box_area(layout, placed) - ref) / ref;
  }
  std::map<int, Pose2> all;
  for (const Fragment& f : layout.fragments) all[f.id] = f.layout_pose;
  const double ref = union_box_area(layout, all);
  return 100.0 * (union_box_area(layout, placed) - ref) / ref;
}

double metric_mean_object_distance(const AssemblyResult& result,
                                   const Layout& layout, DistanceVariant variant) {
  const auto placed = registered_poses(result, layout);
  if (placed.size() < 2) throw DataError("distance metric needs two placed fragments");
  const double d = mean_nearest(placed);
  if (variant == DistanceVariant::kRaw) return d;
  return d - mean_nearest(layout_poses_of(layout, placed));
}

double metric_angle_diff(const AssemblyResult& result, const Layout& layout) {
  if (result.placed.empty()) throw DataError("assembly has no placed fragments");
  double sum = 0.0;
  for (const auto& [id, pose] : result.placed) {
    sum += abs_angle_difference(pose.theta, layout.fragment(id).layout_pose.theta);
  }
  return sum / static_cast<double>(result.placed.size());
}

double metric_collision_rate(const std::vector<AssemblyResult>& results) {
  std::size_t episodes = 0;
  std::size_t collided = 0;
  for (const AssemblyResult& r : results) {
    episodes += r.order.size();
    std::set<int> ids;
    for (const CollisionEvent& e : r.collisions) ids.insert(e.fragment_id);
    collided += ids.size();
  }
  if (episodes == 0) return 0.0;
  return 100.0 * static_cast<double>(collided) / static_cast<double>(episodes);
}

double layout_mean_nearest_distance(const Layout& layout) {
  std::map<int, Pose2> all;
  for (const Fragment& f : layout.fragments) all[f.id] = f.layout_pose;
  if (all.size() < 2) throw DataError("layout needs two fragments");
  return mean_nearest(all);
}

MetricStat aggregate(const std::vector<double>& values) {
  MetricStat s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(s.n - 1));
  }
  return s;
}

LayoutMetrics compute_metrics(const AssemblyResult& result, const Layout& layout) {
  LayoutMetrics m;
  m.layout_id = result.layout_id;
  m.agent_tag = result.agent_tag;
  m.fragments = static_cast<int>(result.order.size());
  std::set<int> ids;
  for (const CollisionEvent& e : result.collisions) ids.insert(e.fragment_id);
  m.collisions = static_cast<int>(ids.size());
  m.bb_increase_pct = metric_bb_increase(result, layout);
  m.angle_diff_deg = metric_angle_diff(result, layout);
  m.mean_dist_mm = metric_mean_object_distance(result, layout);
  m.collision_rate_pct = metric_collision_rate({result});
  m.plan_meta = result.plan_meta;
  return m;
}

MetricReport build_report(const std::string& agent_tag,
                          const std::vector<AssemblyResult>& results,
                          const std::vector<std::shared_ptr<const Layout>>& layouts) {
  if (results.size() != layouts.size()) {
    throw std::invalid_argument("one result per layout expected");
  }
  MetricReport rep;
  rep.agent_tag = agent_tag;
  std::vector<double> bb, angle, dist, coll;
  for (std::size_t i = 0; i < results.size(); ++i) {
    rep.rows.push_back(compute_metrics(results[i], *layouts[i]));
    const LayoutMetrics& m = rep.rows.back();
    bb.push_back(m.bb_increase_pct);
    angle.push_back(m.angle_diff_deg);
    dist.push_back(m.mean_dist_mm);
    coll.push_back(m.collision_rate_pct);
  }
  rep.bb_increase_pct = aggregate(bb);
  rep.angle_diff_deg = aggregate(angle);
  rep.mean_dist_mm = aggregate(dist);
  rep.collision_rate_pct = aggregate(coll);
  rep.pooled_collision_rate_pct = metric_collision_rate(results);
  return rep;
}

AssemblyResult identity_assembly(const Layout& layout) {
  AssemblyResult r;
  r.agent_tag = "ORACLE";
  for (int id : layout.sequence) {
    r.order.push_back(id);
    r.placed[id] = layout.fragment(id).layout_pose;
    r.success[id] = true;
  }
  return r;
}

AssemblyResult policy_assembly(Agent& agent, std::shared_ptr<const Layout> layout,
                               const EnvConfig& env_cfg, int level,
                               std::uint64_t seed) {
  AssemblyResult r;
  r.agent_tag = env_cfg.reward.use_reference_lines ? "OUR" : "NO-L";
  PlacementEnv env(layout, env_cfg);
  for (std::size_t i = 0; i < layout->sequence.size(); ++i) {
    env.reset(static_cast<int>(i), level, derive_seed(seed, i), r.placed);
    const EpisodeOutcome out = run_episode(agent, env, true);
    const int id = layout->sequence[i];
    r.order.push_back(id);
    r.placed[id] = out.final_pose;
    r.success[id] = out.success;
    if (out.contacts.any()) r.collisions.push_back({id, out.contacts});
  }
  return r;
}

MetricReport evaluate_suite(const std::string& agent_tag, const AssemblySource& source,
                            const std::vector<std::shared_ptr<const Layout>>& layouts,
                            const std::vector<std::string>& layout_ids, int threads) {
  if (layouts.empty()) throw std::invalid_argument("evaluation needs at least one layout");
  if (layout_ids.size() != layouts.size()) {
    throw std::invalid_argument("one id per layout expected");
  }
  std::vector<AssemblyResult> results(layouts.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  const auto work = [&]() {
    for (std::size_t i = next++; i < layouts.size(); i = next++) {
      try {
        results[i] = source(i);
        results[i].layout_id = layout_ids[i];
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int n = std::clamp(threads, 1, static_cast<int>(layouts.size()));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return build_report(agent_tag, results, layouts);
}

std::string report_csv_header() {
  return "layout_id,agent,fragments,collisions,bb_increase_pct,angle_diff_deg,"
         "mean_dist_mm,collision_rate_pct,plan_meta";
}

void write_report_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << report_csv_header() << '\n';
  for (const LayoutMetrics& m : report.rows) {
    out << m.layout_id << ',' << m.agent_tag << ',' << m.fragments << ','
        << m.collisions << ',' << fmt(m.bb_increase_pct) << ','
        << fmt(m.angle_diff_deg) << ',' << fmt(m.mean_dist_mm) << ','
        << fmt(m.collision_rate_pct) << ',' << m.plan_meta << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

json summary_json(const MetricReport& report) {
  return {{"agent", report.agent_tag},
          {"n", report.rows.size()},
          {"bb_increase_pct", stat_json(report.bb_increase_pct)},
          {"angle_diff_deg", stat_json(report.angle_diff_deg)},
          {"mean_dist_mm", stat_json(report.mean_dist_mm)},
          {"collision_rate_pct", stat_json(report.collision_rate_pct)},
          {"pooled_collision_rate_pct", report.pooled_collision_rate_pct}};
}

void write_summary_json(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << summary_json(report).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::optional<PublishedMetrics> published_metrics(const std::string& tag) {
  if (tag == "OUR") return PublishedMetrics{34.78, 6.88, 3.32, 1.17, 10.73, 1.64, 8.92, 7.44};
  if (tag == "BL1") return PublishedMetrics{67.68, 14.33, 0.14, 0.11, 26.22, 2.36, 0.0, 0.0};
  if (tag == "BL2") return PublishedMetrics{330.46, 37.86, 0.15, 0.13, 25.28, 2.04, 0.0, 0.0};
  if (tag == "NO-L") return PublishedMetrics{43.27, 15.48, 5.69, 3.28, 4.44, 1.28, 49.18, 10.23};
  return std::nullopt;
}

std::string comparison_table(const MetricReport& r) {
  const auto pub = published_metrics(r.agent_tag);
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %22s %22s\n", r.agent_tag.c_str(), "measured",
                "published");
  os << line;
  const auto row = [&](const char* name, const MetricStat& s, double pm, double ps) {
    if (pub) {
      std::snprintf(line, sizeof line, "%-10s %12.2f +- %6.2f %12.2f +- %6.2f\n", name,
                    s.mean, s.std, pm, ps);
    } else {
      std::snprintf(line, sizeof line, "%-10s %12.2f +- %6.2f %22s\n", name, s.mean,
                    s.std, "-");
    }
    os << line;
  };
  const PublishedMetrics p = pub.value_or(PublishedMetrics{});
  row("BB [%]", r.bb_increase_pct, p.bb_mean, p.bb_std);
  row("Angle [deg]", r.angle_diff_deg, p.angle_mean, p.angle_std);
  row("Dist [mm]", r.mean_dist_mm, p.dist_mean, p.dist_std);
  row("Coll [%]", r.collision_rate_pct, p.coll_mean, p.coll_std);
  return os.str();
}

}  // namespace compact_place
