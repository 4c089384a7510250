#ifndef COMPACT_PLACE_AGENT_HPP_
#define COMPACT_PLACE_AGENT_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compact_place/env.hpp"
#include "compact_place/random.hpp"
#include "compact_place/tqc.hpp"

namespace compact_place {

inline constexpr int kCheckpointVersion = 1;

struct TrainConfig {
  int n_critics = 2;
  int n_quantiles = 25;
  int drop_per_critic = 2;
  long long buffer_size = 100000;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double gamma = 0.95;
  double exploration_sigma = 0.1;
  double tau = 0.05;
  std::vector<int> hidden{128, 128, 128};
  bool auto_entropy = true;
  double initial_alpha = 1.0;
  std::optional<double> target_entropy;  // defaults to -action dimension
  long long warmup_steps = 1000;
  long long eval_every = 2000;
  int eval_episodes = 20;
  long long total_steps = 100000;
  int start_level = 0;
  bool stop_after_first_promotion = false;
  std::uint64_t seed = 0;

  void validate() const;
  LearnerConfig learner_config() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity, int obs_dim = kObservationSize,
                        int act_dim = kActionSize);

  void add(const Observation& obs, const std::array<double, kActionSize>& act,
           double reward, const Observation& next_obs, bool done);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }

  // Distinct uniformly drawn indices into the stored transitions.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;
  Batch<float> gather(const std::vector<std::size_t>& indices) const;
  Batch<float> sample(std::size_t n, Rng& rng) const {
    return gather(sample_indices(n, rng));
  }

 private:
  std::size_t capacity_;
  int obs_dim_;
  int act_dim_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::vector<float> obs_;
  std::vector<float> act_;
  std::vector<float> reward_;
  std::vector<float> next_obs_;
  std::vector<float> done_;
};

// Independent N(0, sigma) draw per action component (not clamped).
std::array<double, kActionSize> exploration_noise(Rng& rng, double sigma);

class Agent {
 public:
  explicit Agent(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  TqcLearner<float>& learner() { return learner_; }
  const TqcLearner<float>& learner() const { return learner_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

  std::array<double, kActionSize> act(const Observation& obs, bool deterministic);
  // Policy sample plus exploration noise, clamped to [-1, 1].
  std::array<double, kActionSize> explore_action(const Observation& obs);
  std::array<double, kActionSize> random_action();
  TrainDiagnostics train_step(const ReplayBuffer& buffer);

  int level = 0;
  long long steps = 0;

 private:
  TrainConfig cfg_;
  TqcLearner<float> learner_;
  Rng rng_;
};

void save_checkpoint(const Agent& agent, const std::filesystem::path& path);
// Throws DataError on a malformed or corrupted file, or when `expected` is
// given and its network shapes differ from the stored ones.
Agent load_checkpoint(const std::filesystem::path& path,
                      const std::optional<TrainConfig>& expected = {});

struct EpisodeOutcome {
  double episode_return = 0.0;
  bool success = false;
  int steps = 0;
  ContactSet contacts;
  bool released = false;
  Pose2 final_pose;
};

// Deterministic-policy rollout of one episode from the env's current reset.
EpisodeOutcome run_episode(Agent& agent, PlacementEnv& env, bool deterministic);

// Success rate over `episodes` seeded evaluation episodes at `level`.
double evaluate_success(Agent& agent, std::vector<PlacementEnv>& envs, int level,
                        int episodes, std::uint64_t seed);

struct TrainLogRow {
  long long step = 0;
  long long episode = 0;
  std::string kind;  // "episode" or "eval"
  double value = 0.0;  // episode return or eval success rate
  bool success = false;
  int level = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double entropy_coef = 0.0;
};

std::string train_log_header();
std::string format_log_row(const TrainLogRow& row);

struct TrainResult {
  int final_level = 0;
  long long steps = 0;
  long long episodes = 0;
  bool promoted = false;
  double last_eval_success = 0.0;
  std::vector<TrainLogRow> log;
  std::shared_ptr<Agent> agent;
};

// Curriculum training. With a non-empty `out_dir`, writes train_log.csv,
// a checkpoint per promotion and final.ckpt there. A `resume` agent continues
// from its step count, level, networks and random state for another
// cfg.total_steps steps; the replay buffer starts empty.
TrainResult train(const std::vector<std::shared_ptr<const Layout>>& layouts,
                  const EnvConfig& env_cfg, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir = {},
                  std::ostream* progress = nullptr, const Agent* resume = nullptr);

}  // namespace compact_place

#endif  // COMPACT_PLACE_AGENT_HPP_
