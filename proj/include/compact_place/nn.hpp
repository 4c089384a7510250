#ifndef COMPACT_PLACE_NN_HPP_
#define COMPACT_PLACE_NN_HPP_

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "compact_place/random.hpp"

namespace compact_place {

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Fully connected ReLU network with a linear output layer. Samples are
// columns. All weights and biases live in one flat parameter vector so that
// optimizers, soft updates and checkpoints work on a single array.
template <typename T>
class Mlp {
 public:
  using Mat = MatrixX<T>;
  using Vec = VectorX<T>;

  struct Cache {
    std::vector<Mat> activations;  // input, then every hidden activation
  };

  Mlp() = default;

  explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("mlp needs >= 2 layer sizes");
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) {
        throw std::invalid_argument("mlp layer sizes must be positive");
      }
      w_off_.push_back(off);
      off += static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1];
      b_off_.push_back(off);
      off += sizes_[l + 1];
    }
    params_ = Vec::Zero(static_cast<Eigen::Index>(off));
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void init(Rng& rng) {
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
      std::uniform_real_distribution<double> u(-bound, bound);
      const std::size_t end = l + 2 < sizes_.size() ? w_off_[l + 1] : params_.size();
      for (std::size_t i = w_off_[l]; i < end; ++i) params_[i] = static_cast<T>(u(rng));
    }
  }

  const std::vector<int>& sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  Eigen::Index num_params() const { return params_.size(); }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  Mat forward(const Mat& x, Cache* cache = nullptr) const {
    if (x.rows() != input_size()) throw std::invalid_argument("mlp input size mismatch");
    if (cache) cache->activations.assign(1, x);
    Mat a = x;
    const std::size_t n_layers = sizes_.size() - 1;
    for (std::size_t l = 0; l < n_layers; ++l) {
      Mat z = weight(l) * a;
      z.colwise() += bias(l);
      if (l + 1 < n_layers) {
        a = z.cwiseMax(T(0));
        if (cache) cache->activations.push_back(a);
      } else {
        a = std::move(z);
      }
    }
    return a;
  }

  // Adds dLoss/dparams to `grad` and returns dLoss/dinput.
  Mat backward(const Cache& cache, const Mat& d_out, Vec& grad) const {
    if (grad.size() != params_.size()) grad = Vec::Zero(params_.size());
    Mat g = d_out;
    for (std::size_t l = sizes_.size() - 1; l-- > 0;) {
      const Mat& a = cache.activations[l];
      grad_weight(grad, l) += g * a.transpose();
      grad_bias(grad, l) += g.rowwise().sum();
      Mat da = weight(l).transpose() * g;
      if (l == 0) return da;
      g = (a.array() > T(0)).select(da, T(0));
    }
    return g;
  }

 private:
  using ConstMatMap = Eigen::Map<const Mat>;
  using MatMap = Eigen::Map<Mat>;

  ConstMatMap weight(std::size_t l) const {
    return ConstMatMap(params_.data() + w_off_[l], sizes_[l + 1], sizes_[l]);
  }
  Eigen::Map<const Vec> bias(std::size_t l) const {
    return Eigen::Map<const Vec>(params_.data() + b_off_[l], sizes_[l + 1]);
  }
  MatMap grad_weight(Vec& grad, std::size_t l) const {
    return MatMap(grad.data() + w_off_[l], sizes_[l + 1], sizes_[l]);
  }
  Eigen::Map<Vec> grad_bias(Vec& grad, std::size_t l) const {
    return Eigen::Map<Vec>(grad.data() + b_off_[l], sizes_[l + 1]);
  }

  std::vector<int> sizes_;
  std::vector<std::size_t> w_off_;
  std::vector<std::size_t> b_off_;
  Vec params_;
};

template <typename T>
struct Adam {
  VectorX<T> m;
  VectorX<T> v;
  long long t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  Adam() = default;
  Adam(Eigen::Index n, double learning_rate)
      : m(VectorX<T>::Zero(n)), v(VectorX<T>::Zero(n)), lr(learning_rate) {}

  void step(VectorX<T>& params, const VectorX<T>& grad) {
    ++t;
    m = T(beta1) * m + T(1 - beta1) * grad;
    v = T(beta2) * v + T(1 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const T step_size = T(lr / c1);
    params.array() -= step_size * (m.array() / ((v.array() / T(c2)).sqrt() + T(eps)));
  }
};

// target <- (1 - tau) target + tau online
template <typename T>
void soft_update(Mlp<T>& target, const Mlp<T>& online, double tau) {
  target.params() = T(1 - tau) * target.params() + T(tau) * online.params();
}

}  // namespace compact_place

#endif  // COMPACT_PLACE_NN_HPP_
