#ifndef COMPACT_PLACE_TQC_HPP_
#define COMPACT_PLACE_TQC_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "compact_place/nn.hpp"
#include "compact_place/random.hpp"

namespace compact_place {

struct LearnerConfig {
  int obs_dim = 58;
  int act_dim = 5;
  std::vector<int> hidden{128, 128, 128};
  int n_critics = 2;
  int n_quantiles = 25;
  int drop_per_critic = 2;
  double learning_rate = 1e-3;
  double gamma = 0.95;
  double tau = 0.05;
  bool auto_entropy = true;
  double initial_alpha = 1.0;
  double target_entropy = -5.0;
  double log_std_min = -20.0;
  double log_std_max = 2.0;

  int kept_atoms() const { return n_critics * (n_quantiles - drop_per_critic); }
};

template <typename T>
struct Batch {
  MatrixX<T> obs;       // obs_dim x B
  MatrixX<T> act;       // act_dim x B
  VectorX<T> reward;    // B
  MatrixX<T> next_obs;  // obs_dim x B
  VectorX<T> done;      // B, 1 for terminal transitions
  Eigen::Index size() const { return obs.cols(); }
};

struct TrainDiagnostics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double mean_log_prob = 0.0;
};

// Stacks every critic's quantiles per sample, sorts ascending and keeps the
// lowest pooled.rows() - drop_total atoms. `order` (optional) receives, per
// column, the pooled row index of each kept atom.
template <typename T>
MatrixX<T> truncated_pool(const std::vector<MatrixX<T>>& quantiles,
                          int drop_total,
                          std::vector<std::vector<int>>* order = nullptr) {
  if (quantiles.empty()) throw std::invalid_argument("no critics");
  const Eigen::Index m = quantiles.front().rows();
  const Eigen::Index b = quantiles.front().cols();
  const Eigen::Index total = m * static_cast<Eigen::Index>(quantiles.size());
  if (drop_total < 0 || drop_total >= total) {
    throw std::invalid_argument("truncation must keep at least one atom");
  }
  const Eigen::Index kept = total - drop_total;
  MatrixX<T> out(kept, b);
  if (order) order->assign(b, {});
  std::vector<int> idx(total);
  for (Eigen::Index col = 0; col < b; ++col) {
    const auto value = [&](int i) { return quantiles[i / m](i % m, col); };
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int x, int y) { return value(x) < value(y); });
    for (Eigen::Index k = 0; k < kept; ++k) out(k, col) = value(idx[k]);
    if (order) (*order)[col].assign(idx.begin(), idx.begin() + kept);
  }
  return out;
}

// r + gamma (1 - done) (z - alpha log pi(a'|s')) over the truncated pool.
template <typename T>
MatrixX<T> tqc_target(const std::vector<MatrixX<T>>& next_quantiles,
                      const VectorX<T>& reward, const VectorX<T>& done,
                      const VectorX<T>& next_log_prob, T alpha, T gamma,
                      int drop_total) {
  MatrixX<T> z = truncated_pool(next_quantiles, drop_total);
  for (Eigen::Index col = 0; col < z.cols(); ++col) {
    const T bootstrap = gamma * (T(1) - done[col]);
    z.col(col) = (reward[col] +
                  bootstrap * (z.col(col).array() - alpha * next_log_prob[col]))
                     .matrix();
  }
  return z;
}

// Quantile regression with a Huber kernel (kappa = 1) at midpoints
// tau_i = (2i - 1) / 2M: summed over quantiles, averaged over target atoms
// and samples. Writes dLoss/dpred into `grad` when given.
template <typename T>
T quantile_huber_loss(const MatrixX<T>& pred, const MatrixX<T>& atoms,
                      MatrixX<T>* grad = nullptr) {
  if (pred.cols() != atoms.cols()) throw std::invalid_argument("batch mismatch");
  const Eigen::Index m = pred.rows();
  const Eigen::Index k = atoms.rows();
  const Eigen::Index b = pred.cols();
  const T norm = T(1) / (T(k) * T(b));
  if (grad) *grad = MatrixX<T>::Zero(m, b);
  T loss = 0;
  for (Eigen::Index col = 0; col < b; ++col) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const T tau = (T(2 * i + 1)) / (T(2 * m));
      T g = 0;
      for (Eigen::Index j = 0; j < k; ++j) {
        const T delta = atoms(j, col) - pred(i, col);
        const T abs_delta = std::abs(delta);
        const T huber = abs_delta <= T(1) ? T(0.5) * delta * delta : abs_delta - T(0.5);
        const T weight = std::abs(tau - (delta < T(0) ? T(1) : T(0)));
        loss += weight * huber;
        g -= weight * std::clamp(delta, T(-1), T(1));
      }
      if (grad) (*grad)(i, col) = g * norm;
    }
  }
  return loss * norm;
}

template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

// Squashed Gaussian policy evaluated for a fixed standard-normal noise draw.
template <typename T>
struct PolicySample {
  MatrixX<T> raw;      // network output: mean rows then log-std rows
  MatrixX<T> log_std;  // clamped
  MatrixX<T> eps;
  MatrixX<T> u;        // pre-squash sample
  MatrixX<T> action;   // tanh(u)
  VectorX<T> log_prob;
  typename Mlp<T>::Cache cache;
};

template <typename T>
class TqcLearner {
 public:
  using Mat = MatrixX<T>;
  using Vec = VectorX<T>;

  TqcLearner() = default;

  TqcLearner(LearnerConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(seed) {
    if (cfg_.n_critics < 1 || cfg_.n_quantiles < 1 || cfg_.drop_per_critic < 0 ||
        cfg_.drop_per_critic >= cfg_.n_quantiles) {
      throw std::invalid_argument("invalid critic/quantile configuration");
    }
    std::vector<int> actor_sizes{cfg_.obs_dim};
    actor_sizes.insert(actor_sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    actor_sizes.push_back(2 * cfg_.act_dim);
    std::vector<int> critic_sizes{cfg_.obs_dim + cfg_.act_dim};
    critic_sizes.insert(critic_sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    critic_sizes.push_back(cfg_.n_quantiles);

    actor = Mlp<T>(actor_sizes);
    actor.init(rng_);
    actor_opt = Adam<T>(actor.num_params(), cfg_.learning_rate);
    for (int c = 0; c < cfg_.n_critics; ++c) {
      critics.emplace_back(critic_sizes);
      critics.back().init(rng_);
      targets.push_back(critics.back());
      critic_opts.emplace_back(critics.back().num_params(), cfg_.learning_rate);
    }
    log_alpha = Vec::Constant(1, T(std::log(cfg_.initial_alpha)));
    alpha_opt = Adam<T>(1, cfg_.learning_rate);
  }

  const LearnerConfig& config() const { return cfg_; }
  T alpha() const { return std::exp(log_alpha[0]); }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

  Mat standard_normal(Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat out(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = T(n(rng_));
    }
    return out;
  }

  PolicySample<T> sample(const Mat& obs, const Mat& eps) const {
    PolicySample<T> s;
    const int a = cfg_.act_dim;
    s.raw = actor.forward(obs, &s.cache);
    s.log_std = s.raw.bottomRows(a).cwiseMax(T(cfg_.log_std_min)).cwiseMin(T(cfg_.log_std_max));
    s.eps = eps;
    s.u = s.raw.topRows(a) + (s.log_std.array().exp() * eps.array()).matrix();
    s.action = s.u.array().tanh().matrix();
    const T half_log_2pi = T(0.5 * std::log(2.0 * 3.14159265358979323846));
    s.log_prob = Vec::Zero(obs.cols());
    for (Eigen::Index j = 0; j < obs.cols(); ++j) {
      T lp = 0;
      for (int i = 0; i < a; ++i) {
        const T u = s.u(i, j);
        const T log_jac = T(2) * (T(std::log(2.0)) - u - softplus(T(-2) * u));
        lp += T(-0.5) * eps(i, j) * eps(i, j) - s.log_std(i, j) - half_log_2pi - log_jac;
      }
      s.log_prob[j] = lp;
    }
    return s;
  }

  Mat act_deterministic(const Mat& obs) const {
    return actor.forward(obs).topRows(cfg_.act_dim).array().tanh().matrix();
  }

  Mat act_stochastic(const Mat& obs) {
    return sample(obs, standard_normal(cfg_.act_dim, obs.cols())).action;
  }

  Mat critic_input(const Mat& obs, const Mat& act) const {
    Mat x(obs.rows() + act.rows(), obs.cols());
    x << obs, act;
    return x;
  }

  Mat target_atoms(const Batch<T>& batch, const Mat& next_eps) const {
    const PolicySample<T> next = sample(batch.next_obs, next_eps);
    const Mat x = critic_input(batch.next_obs, next.action);
    std::vector<Mat> quantiles;
    for (const auto& t : targets) quantiles.push_back(t.forward(x));
    return tqc_target<T>(quantiles, batch.reward, batch.done, next.log_prob, alpha(),
                         T(cfg_.gamma), cfg_.n_critics * cfg_.drop_per_critic);
  }

  // Sum of the per-critic losses against fixed target atoms.
  T critic_loss(const Batch<T>& batch, const Mat& atoms,
                std::vector<Vec>* grads = nullptr) const {
    const Mat x = critic_input(batch.obs, batch.act);
    if (grads) grads->assign(critics.size(), Vec());
    T total = 0;
    for (std::size_t c = 0; c < critics.size(); ++c) {
      typename Mlp<T>::Cache cache;
      const Mat pred = critics[c].forward(x, grads ? &cache : nullptr);
      Mat d_pred;
      total += quantile_huber_loss<T>(pred, atoms, grads ? &d_pred : nullptr);
      if (grads) {
        (*grads)[c] = Vec::Zero(critics[c].num_params());
        critics[c].backward(cache, d_pred, (*grads)[c]);
      }
    }
    return total;
  }

  // mean(alpha log pi - truncated mean of pooled quantiles), alpha held fixed.
  T actor_loss(const Mat& obs, const Mat& eps, Vec* grad = nullptr,
               T* mean_log_prob = nullptr) const {
    const Eigen::Index b = obs.cols();
    const int a = cfg_.act_dim;
    const PolicySample<T> s = sample(obs, eps);
    const Mat x = critic_input(obs, s.action);
    std::vector<Mat> quantiles;
    std::vector<typename Mlp<T>::Cache> caches(critics.size());
    for (std::size_t c = 0; c < critics.size(); ++c) {
      quantiles.push_back(critics[c].forward(x, grad ? &caches[c] : nullptr));
    }
    std::vector<std::vector<int>> order;
    const Mat kept = truncated_pool<T>(quantiles, cfg_.n_critics * cfg_.drop_per_critic,
                                       grad ? &order : nullptr);
    const T al = alpha();
    const Vec q_mean = kept.colwise().mean().transpose();
    const T loss = (al * s.log_prob - q_mean).mean();
    if (mean_log_prob) *mean_log_prob = s.log_prob.mean();
    if (!grad) return loss;

    // dLoss/daction through the critics.
    const Eigen::Index m = cfg_.n_quantiles;
    const T w = T(-1) / (T(kept.rows()) * T(b));
    Mat d_action = Mat::Zero(a, b);
    for (std::size_t c = 0; c < critics.size(); ++c) {
      Mat d_q = Mat::Zero(m, b);
      for (Eigen::Index j = 0; j < b; ++j) {
        for (int idx : order[j]) {
          if (idx / m == static_cast<Eigen::Index>(c)) d_q(idx % m, j) += w;
        }
      }
      Vec discard;
      const Mat dx = critics[c].backward(caches[c], d_q, discard);
      d_action += dx.bottomRows(a);
    }
    Mat d_raw = Mat::Zero(2 * a, b);
    const T inv_b = T(1) / T(b);
    for (Eigen::Index j = 0; j < b; ++j) {
      for (int i = 0; i < a; ++i) {
        const T act = s.action(i, j);
        const T sigma = std::exp(s.log_std(i, j));
        const T du = al * T(2) * std::tanh(s.u(i, j)) * inv_b +
                     d_action(i, j) * (T(1) - act * act);
        d_raw(i, j) = du;
        const T raw_ls = s.raw(a + i, j);
        const bool clamped = raw_ls < T(cfg_.log_std_min) || raw_ls > T(cfg_.log_std_max);
        d_raw(a + i, j) = clamped ? T(0) : -al * inv_b + du * sigma * s.eps(i, j);
      }
    }
    *grad = Vec::Zero(actor.num_params());
    actor.backward(s.cache, d_raw, *grad);
    return loss;
  }

  TrainDiagnostics train_step(const Batch<T>& batch) {
    const Eigen::Index b = batch.size();
    TrainDiagnostics d;

    // Temperature first; this step's losses use the pre-update value.
    const Mat eps = standard_normal(cfg_.act_dim, b);
    const Mat next_eps = standard_normal(cfg_.act_dim, b);
    const T alpha_now = alpha();
    T mean_lp = 0;
    if (cfg_.auto_entropy) {
      mean_lp = sample(batch.obs, eps).log_prob.mean();
      Vec g(1);
      g[0] = -(mean_lp + T(cfg_.target_entropy));
      alpha_opt.step(log_alpha, g);
    }
    const Vec saved_log_alpha = log_alpha;
    log_alpha[0] = std::log(alpha_now);

    const Mat atoms = target_atoms(batch, next_eps);
    std::vector<Vec> critic_grads;
    const T c_loss = critic_loss(batch, atoms, &critic_grads);
    for (std::size_t c = 0; c < critics.size(); ++c) {
      critic_opts[c].step(critics[c].params(), critic_grads[c]);
    }

    Vec actor_grad;
    const T a_loss = actor_loss(batch.obs, eps, &actor_grad, &mean_lp);
    actor_opt.step(actor.params(), actor_grad);
    log_alpha = saved_log_alpha;

    for (std::size_t c = 0; c < critics.size(); ++c) soft_update(targets[c], critics[c], cfg_.tau);

    d.critic_loss = static_cast<double>(c_loss);
    d.actor_loss = static_cast<double>(a_loss);
    d.alpha = static_cast<double>(alpha_now);
    d.mean_log_prob = static_cast<double>(mean_lp);
    if (!std::isfinite(d.critic_loss) || !std::isfinite(d.actor_loss) ||
        !std::isfinite(static_cast<double>(log_alpha[0]))) {
      throw std::runtime_error("non-finite loss: critic=" + std::to_string(d.critic_loss) +
                               " actor=" + std::to_string(d.actor_loss) +
                               " alpha=" + std::to_string(d.alpha));
    }
    return d;
  }

  Mlp<T> actor;
  std::vector<Mlp<T>> critics;
  std::vector<Mlp<T>> targets;
  Adam<T> actor_opt;
  std::vector<Adam<T>> critic_opts;
  Vec log_alpha;
  Adam<T> alpha_opt;

 private:
  LearnerConfig cfg_;
  Rng rng_;
};

}  // namespace compact_place

#endif  // COMPACT_PLACE_TQC_HPP_
