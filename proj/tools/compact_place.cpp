#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compact_place/agent.hpp"
#include "compact_place/baselines.hpp"
#include "compact_place/dataset.hpp"
#include "compact_place/env.hpp"
#include "compact_place/errors.hpp"
#include "compact_place/eval.hpp"
#include "compact_place/random.hpp"
#include "compact_place/render.hpp"

namespace cp = compact_place;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalSection {
  std::optional<int> level;  // curriculum level for policy rollouts
};

// Every section of the optional --config file; missing keys keep defaults.
struct Config {
  cp::GeneratorConfig generator = cp::GeneratorConfig::with_defaults(0);
  cp::EnvConfig env;
  cp::TrainConfig train;
  cp::BaselineConfig baseline;
  EvalSection eval;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw cp::DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw cp::DataError("parse error in " + path.string() + ": " + e.what());
  }
}

void load_section(Config& c, const std::string& key, const json& value);

Config load_config(const std::string& path) {
  Config c;
  if (path.empty()) return c;
  const json j = read_json(path);
  if (!j.is_object()) throw cp::ConfigError("config", "expected an object");
  for (const auto& [key, value] : j.items()) {
    try {
      load_section(c, key, value);
    } catch (const cp::ConfigError& e) {
      if (e.field().rfind(key, 0) == 0) throw;
      const std::string what = e.what();
      throw cp::ConfigError(key + "." + e.field(), what.substr(e.field().size() + 2));
    }
  }
  return c;
}

void load_section(Config& c, const std::string& key, const json& value) {
  if (key == "generator") {
    c.generator = cp::generator_config_from_json(value);
  } else if (key == "env") {
    c.env = cp::env_config_from_json(value);
  } else if (key == "train") {
    c.train = cp::train_config_from_json(value);
  } else if (key == "baseline") {
    c.baseline = cp::baseline_config_from_json(value);
  } else if (key == "eval") {
    if (!value.is_object()) throw cp::ConfigError("eval", "expected an object");
    for (const auto& [k, v] : value.items()) {
      if (k != "level") throw cp::ConfigError("eval." + k, "unknown key");
      if (!v.is_number_integer()) throw cp::ConfigError("eval.level", "wrong type");
      c.eval.level = v.get<int>();
    }
  } else {
    throw cp::ConfigError(key, "unknown section");
  }
}

json config_json(const Config& c) {
  json eval = json::object();
  if (c.eval.level) eval["level"] = *c.eval.level;
  return {{"generator", cp::generator_config_to_json(c.generator)},
          {"env", cp::env_config_to_json(c.env)},
          {"train", cp::train_config_to_json(c.train)},
          {"baseline", cp::baseline_config_to_json(c.baseline)},
          {"eval", eval}};
}

void write_json(const json& j, const fs::path& path) {
  cp::write_text_file(j.dump(2) + "\n", path);
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory " + dir.string());
  }
}

void echo_config(const fs::path& out, const std::string& command, const Config& c,
                 const json& extra) {
  json j = config_json(c);
  j["command"] = command;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json(j, out / "effective_config.json");
}

struct LayoutSet {
  std::vector<std::shared_ptr<const cp::Layout>> layouts;
  std::vector<std::string> ids;
};

bool is_manifest(const json& j) {
  return j.is_object() && j.value("format", "") == "compact_place.manifest";
}

// A directory (its manifest.json, else every layout_*.json), a manifest file
// or a single layout file.
LayoutSet load_layouts(const std::string& arg) {
  if (arg.empty()) throw UsageError("--layouts is required");
  const fs::path p(arg);
  std::vector<fs::path> files;
  if (fs::is_directory(p)) {
    if (fs::exists(p / "manifest.json")) return load_layouts((p / "manifest.json").string());
    for (const auto& e : fs::directory_iterator(p)) {
      const std::string name = e.path().filename().string();
      if (e.is_regular_file() && name.rfind("layout_", 0) == 0 &&
          e.path().extension() == ".json") {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(p)) {
    const json j = read_json(p);
    if (is_manifest(j)) {
      try {
        for (const auto& name : j.at("layouts")) {
          files.push_back(p.parent_path() / name.get<std::string>());
        }
      } catch (const json::exception& e) {
        throw cp::DataError("manifest " + p.string() + ": " + e.what());
      }
    } else {
      files.push_back(p);
    }
  } else {
    throw cp::DataError("layouts not found: " + arg);
  }
  LayoutSet set;
  for (const fs::path& f : files) {
    auto layout = std::make_shared<const cp::Layout>(cp::load_layout(f));
    set.layouts.push_back(std::move(layout));
    set.ids.push_back(f.stem().string());
  }
  return set;
}

int thread_count() {
  const char* v = std::getenv("COMPACT_PLACE_THREADS");
  if (!v || !*v) return 1;
  try {
    std::size_t used = 0;
    const int n = std::stoi(v, &used);
    if (used == std::string(v).size() && n >= 1) return n;
  } catch (const std::exception&) {
  }
  throw UsageError("COMPACT_PLACE_THREADS must be a positive integer");
}

struct Options {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::string layouts;
  std::string checkpoint;
  bool no_reference_lines = false;
  std::optional<long long> steps;
  int n = 100;
  std::string baseline_type;
  std::string agent;
  std::string input;
  bool footprints = false;
};

std::uint64_t require_seed(const Options& o, const char* command) {
  if (!o.seed) throw UsageError(std::string(command) + " requires --seed");
  return *o.seed;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  return o.out;
}

int cmd_gen(const Options& o) {
  const std::uint64_t seed = require_seed(o, "gen");
  if (o.n < 0) throw UsageError("--n must be >= 0");
  const fs::path out = require_out(o);
  Config c = load_config(o.config);
  c.generator.validate();
  prepare_out_dir(out);
  json names = json::array();
  for (int i = 0; i < o.n; ++i) {
    cp::GeneratorConfig g = c.generator;
    g.seed = seed + static_cast<std::uint64_t>(i);
    char name[32];
    std::snprintf(name, sizeof name, "layout_%04d.json", i);
    cp::save_layout(cp::generate_layout(g), out / name);
    names.push_back(name);
  }
  write_json({{"format", "compact_place.manifest"},
              {"version", 1},
              {"seed", seed},
              {"layouts", names}},
             out / "manifest.json");
  echo_config(out, "gen", c, {{"seed", seed}, {"n", o.n}});
  std::cout << "wrote " << o.n << " layouts to " << out.string() << '\n';
  return kOk;
}

void apply_env_flags(const Options& o, Config& c) {
  if (o.no_reference_lines) c.env.reward.use_reference_lines = false;
}

int cmd_train(const Options& o) {
  const std::uint64_t seed = require_seed(o, "train");
  const fs::path out = require_out(o);
  Config c = load_config(o.config);
  c.train.seed = seed;
  if (o.steps) c.train.total_steps = *o.steps;
  apply_env_flags(o, c);
  c.train.validate();
  c.env.validate();
  const LayoutSet set = load_layouts(o.layouts);
  if (set.layouts.empty()) throw cp::DataError("no layouts found in " + o.layouts);
  std::optional<cp::Agent> resume;
  if (!o.checkpoint.empty()) resume.emplace(cp::load_checkpoint(o.checkpoint, c.train));
  prepare_out_dir(out);
  echo_config(out, "train", c,
              {{"seed", seed}, {"layouts", set.ids}, {"resume", o.checkpoint}});
  const auto result = cp::train(set.layouts, c.env, c.train, out, &std::cerr,
                                resume ? &*resume : nullptr);
  std::cout << "trained " << result.steps << " steps, " << result.episodes
            << " episodes, level " << result.final_level << ", last eval success "
            << result.last_eval_success << '\n';
  return kOk;
}

cp::PlanType parse_plan_type(const std::string& s) {
  if (s == "BL1" || s == "bl1") return cp::PlanType::kBL1;
  if (s == "BL2" || s == "bl2") return cp::PlanType::kBL2;
  throw UsageError("baseline type must be BL1 or BL2, got '" + s + "'");
}

cp::PlacementPlan make_plan(cp::PlanType type, const cp::Layout& layout,
                            const Config& c, std::size_t index) {
  cp::BaselineConfig b = c.baseline;
  b.seed = cp::derive_seed(b.seed, index);
  return type == cp::PlanType::kBL1 ? cp::bl1_plan(layout, c.env.gripper, b)
                                    : cp::bl2_plan(layout, c.env.gripper, b);
}

int cmd_baseline(const Options& o) {
  const cp::PlanType type = parse_plan_type(o.baseline_type);
  const fs::path out = require_out(o);
  Config c = load_config(o.config);
  if (o.seed) c.baseline.seed = *o.seed;
  c.baseline.validate();
  c.env.validate();
  const LayoutSet set = load_layouts(o.layouts);
  prepare_out_dir(out);
  echo_config(out, "baseline", c,
              {{"type", cp::plan_type_name(type)}, {"layouts", set.ids}});
  int failures = 0;
  for (std::size_t i = 0; i < set.layouts.size(); ++i) {
    try {
      const auto plan = make_plan(type, *set.layouts[i], c, i);
      cp::save_plan(plan, out / ("plan_" + set.ids[i] + ".json"));
    } catch (const cp::DataError& e) {
      std::cerr << set.ids[i] << ": " << e.what() << '\n';
      ++failures;
    }
  }
  std::cout << "wrote " << set.layouts.size() - failures << " "
            << cp::plan_type_name(type) << " plans to " << out.string() << '\n';
  if (failures > 0) {
    std::cerr << failures << " layout(s) failed\n";
    return kData;
  }
  return kOk;
}

int cmd_eval(const Options& o) {
  const std::uint64_t seed = require_seed(o, "eval");
  const fs::path out = require_out(o);
  Config c = load_config(o.config);
  apply_env_flags(o, c);
  c.env.validate();
  c.baseline.seed = seed;
  std::string agent = o.agent;
  if (agent.empty()) agent = o.checkpoint.empty() ? "" : "checkpoint";
  if (agent.empty()) throw UsageError("eval needs --agent or --checkpoint");
  const LayoutSet set = load_layouts(o.layouts);
  if (set.layouts.empty()) throw cp::DataError("no layouts found in " + o.layouts);
  const int threads = thread_count();

  std::string tag;
  cp::AssemblySource source;
  std::shared_ptr<const cp::Agent> policy;
  json extra = {{"seed", seed}, {"agent", agent}, {"layouts", set.ids}};
  if (agent == "checkpoint") {
    if (o.checkpoint.empty()) throw UsageError("--agent checkpoint needs --checkpoint");
    if (!fs::exists(o.checkpoint)) throw cp::DataError("missing checkpoint " + o.checkpoint);
    policy = std::make_shared<const cp::Agent>(cp::load_checkpoint(o.checkpoint));
    const int level = c.eval.level.value_or(policy->level);
    tag = c.env.reward.use_reference_lines ? "OUR" : "NO-L";
    extra["checkpoint"] = o.checkpoint;
    extra["level"] = level;
    source = [&, level](std::size_t i) {
      cp::Agent local = *policy;
      return cp::policy_assembly(local, set.layouts[i], c.env, level,
                                 cp::derive_seed(seed, i));
    };
  } else if (agent == "BL1" || agent == "BL2") {
    const cp::PlanType type = parse_plan_type(agent);
    tag = agent;
    source = [&, type](std::size_t i) {
      return cp::execute_plan(make_plan(type, *set.layouts[i], c, i), set.layouts[i], c.env);
    };
  } else if (agent == "oracle") {
    tag = "ORACLE";
    source = [&](std::size_t i) { return cp::identity_assembly(*set.layouts[i]); };
  } else {
    throw UsageError("--agent must be checkpoint, BL1, BL2 or oracle");
  }

  prepare_out_dir(out);
  echo_config(out, "eval", c, extra);
  std::vector<cp::AssemblyResult> results(set.layouts.size());
  const auto recording = [&](std::size_t i) {
    results[i] = source(i);
    results[i].layout_id = set.ids[i];
    return results[i];
  };
  const auto report = cp::evaluate_suite(tag, recording, set.layouts, set.ids, threads);
  prepare_out_dir(out / "assemblies");
  for (const auto& r : results) {
    write_json(cp::assembly_to_json(r), out / "assemblies" / (r.layout_id + ".json"));
  }
  cp::write_report_csv(report, out / "report.csv");
  cp::write_summary_json(report, out / "summary.json");
  std::cout << cp::comparison_table(report);
  return kOk;
}

int cmd_render(const Options& o) {
  if (o.input.empty()) throw UsageError("render needs an input file");
  const fs::path out = require_out(o);
  Config c = load_config(o.config);
  cp::RenderOptions ro;
  ro.reference_lines = !o.no_reference_lines;
  if (o.footprints) {
    ro.footprint_gripper = c.env.gripper;
    ro.footprint_margin = c.baseline.delta_s;
  }
  const json j = read_json(o.input);
  std::string svg;
  if (j.is_object() && j.value("format", "") == "compact_place.assembly") {
    const cp::AssemblyResult r = cp::assembly_from_json(j);
    if (o.layouts.empty()) throw UsageError("rendering an assembly needs --layouts");
    fs::path lp(o.layouts);
    if (fs::is_directory(lp)) lp /= r.layout_id + ".json";
    const cp::Layout layout = cp::load_layout(lp);
    svg = cp::render_assembly_svg(r, layout, ro);
  } else {
    svg = cp::render_layout_svg(cp::layout_from_json(j), ro);
  }
  if (out.has_parent_path()) prepare_out_dir(out.parent_path());
  cp::write_text_file(svg, out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compact fragment placement: layouts, training, baselines, evaluation"};
  app.require_subcommand(1);
  Options o;

  const auto add_seed = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { o.seed = s; }, "Random seed");
  };
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory (file for render)");
  };

  auto* gen = app.add_subcommand("gen", "Generate layouts");
  add_seed(gen);
  add_common(gen);
  gen->add_option("--n", o.n, "Number of layouts");

  auto* train = app.add_subcommand("train", "Train the placement policy");
  add_seed(train);
  add_common(train);
  train->add_option("--layouts", o.layouts, "Layout directory or manifest");
  train->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint");
  train->add_flag("--no-reference-lines", o.no_reference_lines, "Ablate reference lines");
  train->add_option_function<long long>(
      "--steps", [&](const long long& s) { o.steps = s; }, "Environment steps");

  auto* base = app.add_subcommand("baseline", "Plan BL1 or BL2 placements");
  base->add_option("type", o.baseline_type, "BL1 or BL2")->required();
  add_seed(base);
  add_common(base);
  base->add_option("--layouts", o.layouts, "Layout directory or manifest");

  auto* eval = app.add_subcommand("eval", "Evaluate a policy or baseline");
  add_seed(eval);
  add_common(eval);
  eval->add_option("--agent", o.agent, "checkpoint, BL1, BL2 or oracle");
  eval->add_option("--layouts", o.layouts, "Layout directory or manifest");
  eval->add_option("--checkpoint", o.checkpoint, "Policy checkpoint");
  eval->add_flag("--no-reference-lines", o.no_reference_lines, "Policy trained without lines");

  auto* render = app.add_subcommand("render", "Render a layout or assembly as SVG");
  render->add_option("input", o.input, "Layout or assembly JSON")->required();
  add_common(render);
  render->add_option("--layouts", o.layouts, "Layout file or directory for assemblies");
  render->add_flag("--no-reference-lines", o.no_reference_lines, "Hide reference lines");
  render->add_flag("--footprints", o.footprints, "Draw gripper footprints");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(o);
    if (train->parsed()) return cmd_train(o);
    if (base->parsed()) return cmd_baseline(o);
    if (eval->parsed()) return cmd_eval(o);
    return cmd_render(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const cp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const cp::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const cp::GeometryError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
