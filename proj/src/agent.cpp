#include "compact_place/agent.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "compact_place/errors.hpp"

namespace compact_place {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'P', 'L', 'A', 'C', 'E', 'C', 'K'};
constexpr std::uint64_t kEvalSeedSalt = 0x65766131ULL;

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(field, what);
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, const T& value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint truncated");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

template <typename V>
struct Blob {
  std::string name;
  V* data;
};

// Named views of every array stored in a checkpoint, in file order.
template <typename Learner>
auto blobs_of(Learner& l) {
  using V = std::remove_reference_t<decltype(l.actor.params())>;
  std::vector<Blob<V>> out{{"actor", &l.actor.params()},
                        {"actor.adam_m", &l.actor_opt.m},
                        {"actor.adam_v", &l.actor_opt.v}};
  for (std::size_t c = 0; c < l.critics.size(); ++c) {
    const std::string p = "critic" + std::to_string(c);
    out.push_back({p, &l.critics[c].params()});
    out.push_back({p + ".adam_m", &l.critic_opts[c].m});
    out.push_back({p + ".adam_v", &l.critic_opts[c].v});
    out.push_back({p + ".target", &l.targets[c].params()});
  }
  out.push_back({"log_alpha", &l.log_alpha});
  out.push_back({"log_alpha.adam_m", &l.alpha_opt.m});
  out.push_back({"log_alpha.adam_v", &l.alpha_opt.v});
  return out;
}

std::vector<int> actor_shape(const TrainConfig& c) {
  std::vector<int> s{kObservationSize};
  s.insert(s.end(), c.hidden.begin(), c.hidden.end());
  s.push_back(2 * kActionSize);
  return s;
}

std::string shape_string(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

void TrainConfig::validate() const {
  require(n_critics >= 1, "n_critics", "must be >= 1");
  require(n_quantiles >= 1, "n_quantiles", "must be >= 1");
  require(drop_per_critic >= 0 && drop_per_critic < n_quantiles, "drop_per_critic",
          "must be in [0, n_quantiles)");
  require(buffer_size >= 1, "buffer_size", "must be >= 1");
  require(batch_size >= 1 && batch_size <= buffer_size, "batch_size",
          "must be in [1, buffer_size]");
  require(learning_rate > 0.0, "learning_rate", "must be > 0");
  require(gamma > 0.0 && gamma <= 1.0, "gamma", "must be in (0, 1]");
  require(exploration_sigma >= 0.0, "exploration_sigma", "must be >= 0");
  require(tau > 0.0 && tau <= 1.0, "tau", "must be in (0, 1]");
  require(!hidden.empty(), "hidden", "needs at least one layer");
  for (int h : hidden) require(h > 0, "hidden", "layer sizes must be > 0");
  require(initial_alpha > 0.0, "initial_alpha", "must be > 0");
  require(warmup_steps >= 0, "warmup_steps", "must be >= 0");
  require(eval_every >= 1, "eval_every", "must be >= 1");
  require(eval_episodes >= 1, "eval_episodes", "must be >= 1");
  require(total_steps >= 1, "total_steps", "must be >= 1");
  require(start_level >= 0, "start_level", "must be >= 0");
}

LearnerConfig TrainConfig::learner_config() const {
  LearnerConfig l;
  l.obs_dim = kObservationSize;
  l.act_dim = kActionSize;
  l.hidden = hidden;
  l.n_critics = n_critics;
  l.n_quantiles = n_quantiles;
  l.drop_per_critic = drop_per_critic;
  l.learning_rate = learning_rate;
  l.gamma = gamma;
  l.tau = tau;
  l.auto_entropy = auto_entropy;
  l.initial_alpha = initial_alpha;
  l.target_entropy = target_entropy.value_or(-static_cast<double>(kActionSize));
  return l;
}

json train_config_to_json(const TrainConfig& c) {
  json j = {{"n_critics", c.n_critics},
            {"n_quantiles", c.n_quantiles},
            {"drop_per_critic", c.drop_per_critic},
            {"buffer_size", c.buffer_size},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"gamma", c.gamma},
            {"exploration_sigma", c.exploration_sigma},
            {"tau", c.tau},
            {"hidden", c.hidden},
            {"auto_entropy", c.auto_entropy},
            {"initial_alpha", c.initial_alpha},
            {"warmup_steps", c.warmup_steps},
            {"eval_every", c.eval_every},
            {"eval_episodes", c.eval_episodes},
            {"total_steps", c.total_steps},
            {"start_level", c.start_level},
            {"stop_after_first_promotion", c.stop_after_first_promotion},
            {"seed", c.seed}};
  j["target_entropy"] = c.target_entropy ? json(*c.target_entropy) : json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train", "expected an object");
  TrainConfig c;
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
  read("n_critics", c.n_critics);
  read("n_quantiles", c.n_quantiles);
  read("drop_per_critic", c.drop_per_critic);
  read("buffer_size", c.buffer_size);
  read("batch_size", c.batch_size);
  read("learning_rate", c.learning_rate);
  read("gamma", c.gamma);
  read("exploration_sigma", c.exploration_sigma);
  read("tau", c.tau);
  read("hidden", c.hidden);
  read("auto_entropy", c.auto_entropy);
  read("initial_alpha", c.initial_alpha);
  read("warmup_steps", c.warmup_steps);
  read("eval_every", c.eval_every);
  read("eval_episodes", c.eval_episodes);
  read("total_steps", c.total_steps);
  read("start_level", c.start_level);
  read("stop_after_first_promotion", c.stop_after_first_promotion);
  read("seed", c.seed);
  known.insert("target_entropy");
  if (j.contains("target_entropy") && !j.at("target_entropy").is_null()) {
    if (!j.at("target_entropy").is_number()) throw ConfigError("target_entropy", "wrong type");
    c.target_entropy = j.at("target_entropy").get<double>();
  }
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(key, "unknown key");
  }
  c.validate();
  return c;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim)
    : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be > 0");
  obs_.resize(capacity * obs_dim);
  next_obs_.resize(capacity * obs_dim);
  act_.resize(capacity * act_dim);
  reward_.resize(capacity);
  done_.resize(capacity);
}

void ReplayBuffer::add(const Observation& obs,
                       const std::array<double, kActionSize>& act, double reward,
                       const Observation& next_obs, bool done) {
  const std::size_t i = head_;
  for (int k = 0; k < obs_dim_; ++k) {
    obs_[i * obs_dim_ + k] = static_cast<float>(obs[k]);
    next_obs_[i * obs_dim_ + k] = static_cast<float>(next_obs[k]);
  }
  for (int k = 0; k < act_dim_; ++k) act_[i * act_dim_ + k] = static_cast<float>(act[k]);
  reward_[i] = static_cast<float>(reward);
  done_[i] = done ? 1.0f : 0.0f;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
  if (n > size_) throw std::invalid_argument("batch larger than replay contents");
  // Floyd's algorithm: n distinct indices, each subset equally likely.
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t j = size_ - n; j < size_; ++j) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
    if (std::find(out.begin(), out.end(), t) == out.end()) {
      out.push_back(t);
    } else {
      out.push_back(j);
    }
  }
  return out;
}

Batch<float> ReplayBuffer::gather(const std::vector<std::size_t>& idx) const {
  const Eigen::Index b = static_cast<Eigen::Index>(idx.size());
  Batch<float> batch;
  batch.obs.resize(obs_dim_, b);
  batch.next_obs.resize(obs_dim_, b);
  batch.act.resize(act_dim_, b);
  batch.reward.resize(b);
  batch.done.resize(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const std::size_t i = idx[j];
    if (i >= size_) throw std::out_of_range("replay index out of range");
    for (int k = 0; k < obs_dim_; ++k) {
      batch.obs(k, j) = obs_[i * obs_dim_ + k];
      batch.next_obs(k, j) = next_obs_[i * obs_dim_ + k];
    }
    for (int k = 0; k < act_dim_; ++k) batch.act(k, j) = act_[i * act_dim_ + k];
    batch.reward[j] = reward_[i];
    batch.done[j] = done_[i];
  }
  return batch;
}

std::array<double, kActionSize> exploration_noise(Rng& rng, double sigma) {
  std::array<double, kActionSize> n{};
  if (sigma <= 0.0) return n;
  std::normal_distribution<double> d(0.0, sigma);
  for (auto& v : n) v = d(rng);
  return n;
}

Agent::Agent(TrainConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      learner_(cfg_.learner_config(), derive_seed(cfg_.seed, 1)),
      rng_(derive_seed(cfg_.seed, 2)) {
  level = cfg_.start_level;
}

namespace {

MatrixX<float> obs_column(const Observation& obs) {
  MatrixX<float> m(kObservationSize, 1);
  for (int k = 0; k < kObservationSize; ++k) m(k, 0) = static_cast<float>(obs[k]);
  return m;
}

std::array<double, kActionSize> to_action(const MatrixX<float>& m) {
  std::array<double, kActionSize> a{};
  for (int k = 0; k < kActionSize; ++k) {
    a[k] = std::clamp(static_cast<double>(m(k, 0)), -1.0, 1.0);
  }
  return a;
}

}  // namespace

std::array<double, kActionSize> Agent::act(const Observation& obs, bool deterministic) {
  const MatrixX<float> x = obs_column(obs);
  return to_action(deterministic ? learner_.act_deterministic(x)
                                 : learner_.act_stochastic(x));
}

std::array<double, kActionSize> Agent::explore_action(const Observation& obs) {
  auto a = act(obs, false);
  const auto noise = exploration_noise(rng_, cfg_.exploration_sigma);
  for (int k = 0; k < kActionSize; ++k) a[k] = std::clamp(a[k] + noise[k], -1.0, 1.0);
  return a;
}

std::array<double, kActionSize> Agent::random_action() {
  std::array<double, kActionSize> a{};
  for (auto& v : a) v = uniform(rng_, -1.0, 1.0);
  return a;
}

TrainDiagnostics Agent::train_step(const ReplayBuffer& buffer) {
  return learner_.train_step(buffer.sample(cfg_.batch_size, rng_));
}

void save_checkpoint(const Agent& agent, const std::filesystem::path& path) {
  const TqcLearner<float>& l = agent.learner();
  json header = {{"train_config", train_config_to_json(agent.config())},
                 {"level", agent.level},
                 {"steps", agent.steps},
                 {"rng", rng_state(agent.rng())},
                 {"learner_rng", rng_state(l.rng())},
                 {"actor_shape", l.actor.sizes()},
                 {"adam_t",
                  {{"actor", l.actor_opt.t}, {"log_alpha", l.alpha_opt.t}}}};
  json critic_t = json::array();
  for (const auto& o : l.critic_opts) critic_t.push_back(o.t);
  header["adam_t"]["critics"] = critic_t;
  json blobs = json::array();
  for (const auto& b : blobs_of(l)) blobs.push_back({{"name", b.name}, {"size", b.data->size()}});
  header["blobs"] = blobs;

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = header.dump();
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& b : blobs_of(l)) {
    for (Eigen::Index i = 0; i < b.data->size(); ++i) {
      put<double>(out, static_cast<double>((*b.data)[i]));
    }
  }
  put<std::uint64_t>(out, fnv1a(out));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Agent load_checkpoint(const std::filesystem::path& path,
                      const std::optional<TrainConfig>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  const std::string in((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (in.size() < sizeof(kMagic) + 20 || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  std::size_t tail = in.size() - sizeof(std::uint64_t);
  const auto stored_sum = take<std::uint64_t>(in, tail);
  if (fnv1a(in.substr(0, in.size() - sizeof(std::uint64_t))) != stored_sum) {
    throw DataError("checkpoint checksum mismatch (corrupted file)");
  }
  const auto header_len = take<std::uint64_t>(in, pos);
  if (pos + header_len > in.size()) throw DataError("checkpoint truncated");
  json header;
  TrainConfig cfg;
  try {
    header = json::parse(in.substr(pos, header_len));
    cfg = train_config_from_json(header.at("train_config"));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  pos += header_len;
  if (expected) {
    const auto want = actor_shape(*expected);
    const auto have = actor_shape(cfg);
    if (want != have || expected->n_critics != cfg.n_critics ||
        expected->n_quantiles != cfg.n_quantiles) {
      throw DataError("checkpoint shape mismatch: stored actor " + shape_string(have) + " with " +
                      std::to_string(cfg.n_critics) + "x" + std::to_string(cfg.n_quantiles) +
                      " critics, expected actor " + shape_string(want) + " with " +
                      std::to_string(expected->n_critics) + "x" +
                      std::to_string(expected->n_quantiles) + " critics");
    }
  }

  Agent agent(cfg);
  TqcLearner<float>& l = agent.learner();
  try {
    const auto blobs = blobs_of(l);
    const json& jb = header.at("blobs");
    if (jb.size() != blobs.size()) throw DataError("checkpoint blob count mismatch");
    for (std::size_t k = 0; k < blobs.size(); ++k) {
      const auto size = jb[k].at("size").get<Eigen::Index>();
      if (jb[k].at("name").get<std::string>() != blobs[k].name || size != blobs[k].data->size()) {
        throw DataError("checkpoint blob '" + jb[k].at("name").get<std::string>() +
                        "' has " + std::to_string(size) + " values, expected '" +
                        blobs[k].name + "' with " + std::to_string(blobs[k].data->size()));
      }
      for (Eigen::Index i = 0; i < size; ++i) {
        if (pos + sizeof(double) > tail - sizeof(std::uint64_t)) throw DataError("checkpoint truncated");
        (*blobs[k].data)[i] = static_cast<float>(take<double>(in, pos));
      }
    }
    agent.level = header.at("level").get<int>();
    agent.steps = header.at("steps").get<long long>();
    set_rng_state(agent.rng(), header.at("rng").get<std::string>());
    set_rng_state(l.rng(), header.at("learner_rng").get<std::string>());
    const json& t = header.at("adam_t");
    l.actor_opt.t = t.at("actor").get<long long>();
    l.alpha_opt.t = t.at("log_alpha").get<long long>();
    for (std::size_t c = 0; c < l.critic_opts.size(); ++c) {
      l.critic_opts[c].t = t.at("critics").at(c).get<long long>();
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  if (pos != in.size() - sizeof(std::uint64_t)) throw DataError("checkpoint has trailing data");
  return agent;
}

EpisodeOutcome run_episode(Agent& agent, PlacementEnv& env, bool deterministic) {
  EpisodeOutcome out;
  Observation obs = build_observation(env.scene(), env.state());
  for (bool done = false; !done;) {
    const auto a = agent.act(obs, deterministic);
    const StepResult r = env.step(Action::from_array(a));
    out.episode_return += r.reward.total;
    out.released = out.released || r.info.released;
    out.contacts = r.info.contacts;
    out.success = r.info.success;
    out.final_pose = r.info.placing_pose;
    ++out.steps;
    obs = r.observation;
    done = r.done;
  }
  return out;
}

double evaluate_success(Agent& agent, std::vector<PlacementEnv>& envs, int level,
                        int episodes, std::uint64_t seed) {
  if (envs.empty() || episodes < 1) throw std::invalid_argument("nothing to evaluate");
  int successes = 0;
  for (int k = 0; k < episodes; ++k) {
    PlacementEnv& env = envs[k % envs.size()];
    Rng rng(derive_seed(seed, k));
    const int n = static_cast<int>(env.scene().layout->sequence.size());
    const int placing = std::uniform_int_distribution<int>(0, n - 1)(rng);
    env.reset(placing, level, rng());
    successes += run_episode(agent, env, true).success ? 1 : 0;
  }
  return static_cast<double>(successes) / episodes;
}

std::string train_log_header() {
  return "step,episode,kind,return,success,level,critic_loss,actor_loss,entropy_coef";
}

std::string format_log_row(const TrainLogRow& r) {
  std::ostringstream os;
  os << std::setprecision(9) << r.step << ',' << r.episode << ',' << r.kind << ','
     << r.value << ',' << (r.success ? 1 : 0) << ',' << r.level << ',' << r.critic_loss
     << ',' << r.actor_loss << ',' << r.entropy_coef;
  return os.str();
}

TrainResult train(const std::vector<std::shared_ptr<const Layout>>& layouts,
                  const EnvConfig& env_cfg, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir, std::ostream* progress,
                  const Agent* resume) {
  cfg.validate();
  env_cfg.validate();
  if (layouts.empty()) throw ConfigError("layouts", "no training layouts");
  TrainResult result;
  if (resume) {
    result.agent = std::make_shared<Agent>(*resume);
  } else {
    result.agent = std::make_shared<Agent>(cfg);
    result.agent->level = std::min(cfg.start_level, env_cfg.curriculum.max_level);
  }
  Agent& agent = *result.agent;
  const long long first_step = agent.steps;
  const long long last_step = first_step + cfg.total_steps;

  std::vector<PlacementEnv> envs;
  std::vector<PlacementEnv> eval_envs;
  for (const auto& l : layouts) {
    envs.emplace_back(l, env_cfg);
    eval_envs.emplace_back(l, env_cfg);
  }
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_size));
  Rng episode_rng(derive_seed(derive_seed(cfg.seed, 3), static_cast<std::uint64_t>(first_step)));
  const std::uint64_t eval_seed = derive_seed(cfg.seed, kEvalSeedSalt);

  std::ofstream log_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log_file.open(out_dir / "train_log.csv");
    if (!log_file) throw std::runtime_error("cannot write " + (out_dir / "train_log.csv").string());
    log_file << train_log_header() << '\n';
  }
  TrainDiagnostics diag;
  diag.alpha = agent.learner().alpha();
  const auto emit = [&](TrainLogRow row) {
    row.critic_loss = diag.critic_loss;
    row.actor_loss = diag.actor_loss;
    row.entropy_coef = diag.alpha;
    if (log_file) log_file << format_log_row(row) << '\n';
    result.log.push_back(std::move(row));
  };
  const auto checkpoint = [&](const std::string& name) {
    if (!out_dir.empty()) save_checkpoint(agent, out_dir / name);
  };

  long long step = first_step;
  long long episode = 0;
  bool stop = false;
  while (step < last_step && !stop) {
    const int li = std::uniform_int_distribution<int>(
        0, static_cast<int>(envs.size()) - 1)(episode_rng);
    PlacementEnv& env = envs[li];
    const int n = static_cast<int>(env.scene().layout->sequence.size());
    const int placing = std::uniform_int_distribution<int>(0, n - 1)(episode_rng);
    Observation obs = env.reset(placing, agent.level, episode_rng());
    double ret = 0.0;
    bool success = false;
    for (bool done = false; !done && !stop;) {
      const auto a = step < cfg.warmup_steps ? agent.random_action() : agent.explore_action(obs);
      const StepResult r = env.step(Action::from_array(a));
      buffer.add(obs, a, r.reward.total, r.observation, r.done);
      obs = r.observation;
      ret += r.reward.total;
      success = r.info.success;
      done = r.done;
      agent.steps = ++step;
      if (step >= cfg.warmup_steps && buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
        diag = agent.train_step(buffer);
      }
      if (step % cfg.eval_every == 0) {
        const double rate = evaluate_success(agent, eval_envs, agent.level,
                                             cfg.eval_episodes, eval_seed);
        result.last_eval_success = rate;
        TrainLogRow row;
        row.step = step;
        row.episode = episode;
        row.kind = "eval";
        row.value = rate;
        row.success = rate > env_cfg.curriculum.promotion_threshold;
        row.level = agent.level;
        emit(row);
        const int before = agent.level;
        agent.level = curriculum_update(curriculum_at(before, env_cfg.curriculum), rate,
                                        env_cfg.curriculum)
                          .level;
        if (progress) {
          *progress << "step " << step << " level " << before << " eval success " << rate
                    << '\n';
        }
        if (agent.level > before || (rate > env_cfg.curriculum.promotion_threshold &&
                                     before == env_cfg.curriculum.max_level)) {
          result.promoted = true;
          std::ostringstream name;
          name << "level_" << std::setw(2) << std::setfill('0') << before << ".ckpt";
          checkpoint(name.str());
          if (cfg.stop_after_first_promotion) stop = true;
        }
      }
      if (step >= last_step) stop = true;
    }
    TrainLogRow row;
    row.step = step;
    row.episode = episode;
    row.kind = "episode";
    row.value = ret;
    row.success = success;
    row.level = agent.level;
    emit(row);
    ++episode;
  }
  checkpoint("final.ckpt");
  result.final_level = agent.level;
  result.steps = step - first_step;
  result.episodes = episode;
  return result;
}

}  // namespace compact_place
