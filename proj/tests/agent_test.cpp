#include "compact_place/agent.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "compact_place/errors.hpp"

namespace cp = compact_place;
using MatD = cp::MatrixX<double>;
using VecD = cp::VectorX<double>;

namespace {

cp::LearnerConfig small_config() {
  cp::LearnerConfig c;
  c.hidden = {8, 8};
  return c;
}

template <typename T = double>
cp::Batch<T> random_batch(cp::Rng& rng, const cp::LearnerConfig& c, int b) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> u11(-1.0, 1.0);
  cp::Batch<T> batch;
  batch.obs = cp::MatrixX<T>(c.obs_dim, b);
  batch.next_obs = cp::MatrixX<T>(c.obs_dim, b);
  batch.act = cp::MatrixX<T>(c.act_dim, b);
  batch.reward = cp::VectorX<T>(b);
  batch.done = cp::VectorX<T>(b);
  for (int j = 0; j < b; ++j) {
    for (int i = 0; i < c.obs_dim; ++i) {
      batch.obs(i, j) = u01(rng);
      batch.next_obs(i, j) = u01(rng);
    }
    for (int i = 0; i < c.act_dim; ++i) batch.act(i, j) = u11(rng);
    batch.reward[j] = 5 * u11(rng);
    batch.done[j] = j % 3 == 0 ? 1.0 : 0.0;
  }
  return batch;
}

// Extended precision keeps finite-difference roundoff well below the
// tolerance.
using Real = long double;
using VecR = cp::VectorX<Real>;
using MatR = cp::MatrixX<Real>;

double rel_error(Real analytic, Real numeric) {
  return static_cast<double>(std::abs(analytic - numeric) /
                             std::max({std::abs(analytic), std::abs(numeric), 1e-8L}));
}

// Central differences over every parameter of `params`.
template <typename Loss>
double max_fd_error(VecR& params, const VecR& analytic, Loss loss) {
  const Real h = 1e-6L;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const Real keep = params[i];
    params[i] = keep + h;
    const Real up = loss();
    params[i] = keep - h;
    const Real down = loss();
    params[i] = keep;
    const double e = rel_error(analytic[i], (up - down) / (2 * h));
    worst = std::max(worst, e);
  }
  return worst;
}

std::shared_ptr<const cp::Layout> two_squares() {
  return std::make_shared<const cp::Layout>(cp::layout_from_world_loops(
      {{{0, 0}, {100, 0}, {100, 100}, {0, 100}},
       {{100, 0}, {200, 0}, {200, 100}, {100, 100}}},
      cp::GeneratorConfig{}));
}

cp::TrainConfig tiny_train_config(std::uint64_t seed) {
  cp::TrainConfig t;
  t.hidden = {16, 16};
  t.batch_size = 32;
  t.buffer_size = 5000;
  t.warmup_steps = 200;
  t.eval_every = 500;
  t.eval_episodes = 4;
  t.total_steps = 1000;
  t.seed = seed;
  return t;
}

}  // namespace

TEST(Gradients, CriticLossMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cp::TqcLearner<Real> l(small_config(), seed);
    cp::Rng rng(seed + 100);
    const auto batch = random_batch<Real>(rng, l.config(), 6);
    const MatR atoms = l.target_atoms(batch, l.standard_normal(5, 6));
    std::vector<VecR> grads;
    l.critic_loss(batch, atoms, &grads);
    for (std::size_t c = 0; c < l.critics.size(); ++c) {
      const double err = max_fd_error(l.critics[c].params(), grads[c],
                                      [&] { return l.critic_loss(batch, atoms); });
      EXPECT_LT(err, 1e-4) << "seed " << seed << " critic " << c;
    }
  }
}

TEST(Gradients, ActorLossMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = small_config();
    cfg.initial_alpha = 0.3;
    cp::TqcLearner<Real> l(cfg, seed);
    cp::Rng rng(seed + 200);
    const auto batch = random_batch<Real>(rng, l.config(), 6);
    const MatR eps = l.standard_normal(5, 6);
    VecR grad;
    l.actor_loss(batch.obs, eps, &grad);
    const double err = max_fd_error(l.actor.params(), grad,
                                    [&] { return l.actor_loss(batch.obs, eps); });
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(Truncation, HandExampleAndEdgeCases) {
  const std::vector<MatD> q{(MatD(2, 1) << 1, 3).finished(),
                            (MatD(2, 1) << 2, 4).finished()};
  // One atom dropped per critic: two of four pooled atoms survive.
  EXPECT_EQ(cp::truncated_pool<double>(q, 2), (MatD(2, 1) << 1, 2).finished());
  EXPECT_EQ(cp::truncated_pool<double>(q, 1), (MatD(3, 1) << 1, 2, 3).finished());
  EXPECT_EQ(cp::truncated_pool<double>(q, 0), (MatD(4, 1) << 1, 2, 3, 4).finished());
  const VecD r = VecD::Constant(1, 7.5);
  const VecD done = VecD::Constant(1, 1.0);
  const VecD lp = VecD::Constant(1, -2.0);
  const MatD t = cp::tqc_target<double>(q, r, done, lp, 0.2, 0.95, 2);
  EXPECT_TRUE((t.array() == 7.5).all());
  const MatD live = cp::tqc_target<double>(q, r, VecD::Zero(1), lp, 0.2, 0.95, 2);
  EXPECT_DOUBLE_EQ(live(0, 0), 7.5 + 0.95 * (1 + 0.4));
  EXPECT_DOUBLE_EQ(live(1, 0), 7.5 + 0.95 * (2 + 0.4));
}

TEST(Truncation, MatchesSortThenSlice) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<MatD> q(2, MatD(25, 7));
    for (auto& m : q) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    }
    const int drop = trial % 10;
    const MatD got = cp::truncated_pool<double>(q, drop);
    for (int col = 0; col < 7; ++col) {
      std::vector<double> pool;
      for (const auto& m : q) {
        for (int i = 0; i < 25; ++i) pool.push_back(m(i, col));
      }
      std::sort(pool.begin(), pool.end());
      pool.resize(pool.size() - drop);
      ASSERT_EQ(got.rows(), static_cast<Eigen::Index>(pool.size()));
      for (std::size_t k = 0; k < pool.size(); ++k) ASSERT_EQ(got(k, col), pool[k]);
    }
  }
}

TEST(QuantileHuber, HandValues) {
  const MatD atom = (MatD(1, 1) << 1).finished();
  // tau = 1/4, 3/4; deltas +1 and -1 give Huber 0.5 with weight 1/4 each.
  EXPECT_DOUBLE_EQ(cp::quantile_huber_loss<double>((MatD(2, 1) << 0, 2).finished(), atom), 0.25);
  // delta = 3 on both quantiles: Huber 2.5, weights 1/4 and 3/4.
  EXPECT_DOUBLE_EQ(cp::quantile_huber_loss<double>(MatD::Zero(2, 1), (MatD(1, 1) << 3).finished()),
                   2.5);
  EXPECT_EQ(cp::quantile_huber_loss<double>(MatD::Constant(5, 3, 1.5), MatD::Constant(4, 3, 1.5)),
            0.0);
}

TEST(QuantileHuber, NonNegativeAndOrderInvariant) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    MatD pred(6, 3);
    MatD atoms(9, 3);
    for (Eigen::Index i = 0; i < pred.size(); ++i) pred.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < atoms.size(); ++i) atoms.data()[i] = n(rng);
    const double base = cp::quantile_huber_loss<double>(pred, atoms);
    EXPECT_GT(base, 0.0);
    MatD shuffled = atoms;
    for (int col = 0; col < 3; ++col) {
      std::vector<double> v(atoms.col(col).data(), atoms.col(col).data() + 9);
      std::shuffle(v.begin(), v.end(), rng);
      for (int k = 0; k < 9; ++k) shuffled(k, col) = v[k];
    }
    EXPECT_NEAR(cp::quantile_huber_loss<double>(pred, shuffled), base, 1e-12);
  }
}

TEST(SoftUpdate, ClosedFormAfterKSteps) {
  cp::Rng rng(3);
  cp::Mlp<double> online({6, 8, 4});
  cp::Mlp<double> target({6, 8, 4});
  online.init(rng);
  target.init(rng);
  const VecD t0 = target.params();
  const double tau = 0.05;
  for (int k = 1; k <= 40; ++k) {
    cp::soft_update(target, online, tau);
    const double decay = std::pow(1 - tau, k);
    const VecD expected = decay * t0 + (1 - decay) * online.params();
    ASSERT_LT((target.params() - expected).cwiseAbs().maxCoeff(), 1e-9) << "k=" << k;
  }
}

TEST(SoftUpdate, TrainStepMovesTargetsByTau) {
  cp::TqcLearner<double> l(small_config(), 4);
  cp::Rng rng(4);
  const auto batch = random_batch(rng, l.config(), 8);
  const VecD before = l.targets[0].params();
  l.train_step(batch);
  const VecD expected = 0.95 * before + 0.05 * l.critics[0].params();
  EXPECT_LT((l.targets[0].params() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Replay, UniformWithoutReplacement) {
  cp::ReplayBuffer buffer(1000);
  cp::Observation o{};
  for (int i = 0; i < 1000; ++i) {
    o[0] = i;
    buffer.add(o, {}, i, o, false);
  }
  cp::Rng rng(1);
  std::vector<int> counts(1000, 0);
  for (int b = 0; b < 1000; ++b) {
    auto idx = buffer.sample_indices(100, rng);
    std::sort(idx.begin(), idx.end());
    ASSERT_EQ(std::unique(idx.begin(), idx.end()), idx.end());
    for (auto i : idx) ++counts[i];
  }
  const double expected = 100.0;
  const double sigma = std::sqrt(1e5 * (1.0 / 1000) * (1 - 1.0 / 1000));
  for (int c : counts) EXPECT_LT(std::abs(c - expected), 5 * sigma);
}

TEST(Replay, RingOverwritesOldest) {
  cp::ReplayBuffer buffer(10);
  cp::Observation o{};
  for (int i = 0; i < 25; ++i) {
    o[0] = i;
    buffer.add(o, {}, i, o, i % 2 == 0);
  }
  EXPECT_EQ(buffer.size(), 10u);
  std::vector<std::size_t> all(10);
  for (std::size_t i = 0; i < 10; ++i) all[i] = i;
  const auto batch = buffer.gather(all);
  std::vector<float> rewards(batch.reward.data(), batch.reward.data() + 10);
  std::sort(rewards.begin(), rewards.end());
  EXPECT_EQ(rewards.front(), 15.0f);
  EXPECT_EQ(rewards.back(), 24.0f);
  cp::Rng rng(2);
  EXPECT_THROW(buffer.sample_indices(11, rng), std::invalid_argument);
}

TEST(Policy, DeterministicAndBounded) {
  cp::Agent agent(tiny_train_config(1));
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10000; ++trial) {
    cp::Observation o;
    for (auto& v : o) v = u(rng);
    const auto a = agent.act(o, trial % 2 == 0);
    for (double v : a) ASSERT_TRUE(v >= -1.0 && v <= 1.0);
    if (trial < 100) {
      ASSERT_EQ(agent.act(o, true), agent.act(o, true));
      const auto e = agent.explore_action(o);
      for (double v : e) ASSERT_TRUE(v >= -1.0 && v <= 1.0);
    }
  }
}

TEST(Policy, LogProbMatchesQuadrature) {
  cp::LearnerConfig c;
  c.obs_dim = 1;
  c.act_dim = 1;
  c.hidden = {4};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cp::TqcLearner<double> l(c, seed);
    const MatD obs = MatD::Constant(1, 1, 0.7);
    // Density of a = tanh(u) integrates to one over (-1, 1).
    const int n = 100000;
    const auto s0 = l.sample(obs, MatD::Zero(1, 1));
    const double mu = s0.raw(0, 0);
    const double sigma = std::exp(s0.log_std(0, 0));
    double mass = 0.0;
    for (int k = 0; k < n; ++k) {
      const double a = -1.0 + (k + 0.5) * 2.0 / n;
      const double e = (std::atanh(a) - mu) / sigma;
      const auto s = l.sample(obs, MatD::Constant(1, 1, e));
      mass += std::exp(s.log_prob[0]) * 2.0 / n;
    }
    EXPECT_NEAR(mass, 1.0, 1e-3) << "seed " << seed;
    // Pointwise: probability of a small action interval via the Gaussian CDF.
    for (double e : {-1.5, -0.3, 0.0, 0.8, 2.0}) {
      const auto s = l.sample(obs, MatD::Constant(1, 1, e));
      const double a = s.action(0, 0);
      const double mu = s.raw(0, 0);
      const double sigma = std::exp(s.log_std(0, 0));
      const double h = 1e-5;
      const auto cdf = [&](double x) {
        return 0.5 * std::erfc(-(std::atanh(x) - mu) / (sigma * std::sqrt(2.0)));
      };
      const double density = (cdf(a + h) - cdf(a - h)) / (2 * h);
      EXPECT_NEAR(std::exp(s.log_prob[0]), density, 1e-3 * std::max(1.0, density));
    }
  }
}

TEST(Exploration, NoiseStatistics) {
  cp::Rng rng(10);
  double sum = 0.0;
  double sq = 0.0;
  const int n = 100000;
  for (int k = 0; k < n / 5; ++k) {
    for (double v : cp::exploration_noise(rng, 0.1)) {
      sum += v;
      sq += v * v;
    }
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(sd, 0.1, 0.005);
  const auto zero = cp::exploration_noise(rng, 0.0);
  for (double v : zero) EXPECT_EQ(v, 0.0);
}

TEST(Exploration, ZeroSigmaEqualsPolicySample) {
  auto cfg = tiny_train_config(3);
  cfg.exploration_sigma = 0.0;
  cp::Agent a(cfg);
  cp::Agent b(cfg);
  cp::Observation o{};
  o.fill(0.4);
  EXPECT_EQ(a.explore_action(o), b.act(o, false));
}

// Critic loss on one terminal transition (targets fixed at r). Returns the
// loss after `steps` updates and counts increases seen before it first drops
// below 1e-3.
std::pair<double, int> overfit(double lr, int steps) {
  cp::LearnerConfig cfg;
  cfg.learning_rate = lr;
  cp::TqcLearner<float> l(cfg, 11);
  cp::Batch<float> batch;
  batch.obs = cp::MatrixX<float>::Constant(58, 1, 0.3f);
  batch.next_obs = cp::MatrixX<float>::Constant(58, 1, 0.6f);
  batch.act = cp::MatrixX<float>::Constant(5, 1, 0.2f);
  batch.reward = cp::VectorX<float>::Constant(1, 2.0f);
  batch.done = cp::VectorX<float>::Constant(1, 1.0f);
  double prev = 1e30;
  int increases = 0;
  for (int k = 0; k < steps; ++k) {
    const double loss = l.train_step(batch).critic_loss;
    if (prev >= 1e-3 && loss > prev) ++increases;
    prev = loss;
  }
  return {prev, increases};
}

TEST(Training, OverfitsSingleTransition) {
  const auto [loss, increases] = overfit(5e-5, 2000);
  EXPECT_LT(loss, 1e-3);
  EXPECT_EQ(increases, 0);
  // The default rate overshoots on the way down but still converges.
  EXPECT_LT(overfit(1e-3, 400).first, 1e-3);
}

TEST(Checkpoint, RoundTripGivesIdenticalRollouts) {
  const auto result = cp::train({two_squares()}, cp::EnvConfig{}, tiny_train_config(5));
  const auto path = std::filesystem::temp_directory_path() / "compact_place_agent.ckpt";
  cp::save_checkpoint(*result.agent, path);
  cp::Agent back = cp::load_checkpoint(path);
  EXPECT_EQ(back.learner().actor.params(), result.agent->learner().actor.params());
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(back.learner().targets[c].params(), result.agent->learner().targets[c].params());
    EXPECT_EQ(back.learner().critic_opts[c].v, result.agent->learner().critic_opts[c].v);
  }
  EXPECT_EQ(back.level, result.agent->level);
  EXPECT_EQ(back.steps, result.agent->steps);
  EXPECT_EQ(cp::rng_state(back.rng()), cp::rng_state(result.agent->rng()));

  cp::PlacementEnv e1(two_squares(), cp::EnvConfig{});
  cp::PlacementEnv e2(two_squares(), cp::EnvConfig{});
  e1.reset(1, 0, 42);
  e2.reset(1, 0, 42);
  const auto o1 = cp::run_episode(*result.agent, e1, true);
  const auto o2 = cp::run_episode(back, e2, true);
  EXPECT_EQ(o1.episode_return, o2.episode_return);
  EXPECT_EQ(o1.final_pose, o2.final_pose);

  // Stored shapes disagree with the caller's configuration.
  auto other = tiny_train_config(5);
  other.hidden = {32};
  try {
    cp::load_checkpoint(path, other);
    FAIL() << "expected DataError";
  } catch (const cp::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos) << e.what();
  }

  // Flip one byte in the parameter payload.
  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  }
  bytes[bytes.size() - 100] ^= 0x5a;
  std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());
  EXPECT_THROW(cp::load_checkpoint(path), cp::DataError);
  std::ofstream(path, std::ios::binary) << "garbage";
  EXPECT_THROW(cp::load_checkpoint(path), cp::DataError);
  std::filesystem::remove(path);
}

TEST(Training, SameSeedSameLog) {
  const auto a = cp::train({two_squares()}, cp::EnvConfig{}, tiny_train_config(8));
  const auto b = cp::train({two_squares()}, cp::EnvConfig{}, tiny_train_config(8));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(cp::format_log_row(a.log[i]), cp::format_log_row(b.log[i]));
  }
  EXPECT_EQ(a.steps, 1000);
  const auto c = cp::train({two_squares()}, cp::EnvConfig{}, tiny_train_config(9));
  bool differs = c.log.size() != a.log.size();
  for (std::size_t i = 0; !differs && i < a.log.size(); ++i) {
    differs = cp::format_log_row(a.log[i]) != cp::format_log_row(c.log[i]);
  }
  EXPECT_TRUE(differs);
}

TEST(Training, WritesLogAndCheckpoints) {
  const auto dir = std::filesystem::temp_directory_path() / "compact_place_train_out";
  std::filesystem::remove_all(dir);
  cp::train({two_squares()}, cp::EnvConfig{}, tiny_train_config(2), dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "final.ckpt"));
  std::ifstream is(dir / "train_log.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, cp::train_log_header());
  std::filesystem::remove_all(dir);
}

TEST(TrainConfigIo, RoundTripAndErrors) {
  auto c = tiny_train_config(77);
  c.target_entropy = -3.0;
  const auto back = cp::train_config_from_json(cp::train_config_to_json(c));
  EXPECT_EQ(cp::train_config_to_json(back), cp::train_config_to_json(c));
  EXPECT_THROW(cp::train_config_from_json({{"drop_per_critic", 25}}), cp::ConfigError);
  EXPECT_THROW(cp::train_config_from_json({{"lr", 0.1}}), cp::ConfigError);
}
