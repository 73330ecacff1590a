#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dfp/errors.hpp"

namespace dfp {

/// Adaptive-moment gradient descent over a flat parameter vector.
template <typename T>
class Adam {
 public:
  struct Options {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(std::size_t n, Options opt) : opt_(opt), m_(n, 0.0), v_(n, 0.0) {
    if (!(opt.learning_rate > 0.0)) throw invalid_argument("adam: learning rate must be positive");
  }

  void step(std::span<T> params, std::span<const T> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw invalid_argument("adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const double lr = opt_.learning_rate * std::sqrt(c2) / c1;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g * g;
      params[i] = static_cast<T>(params[i] - lr * m_[i] / (std::sqrt(v_[i]) + opt_.eps));
    }
  }

  long steps() const noexcept { return t_; }

 private:
  Options opt_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace dfp
