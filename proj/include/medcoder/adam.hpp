#pragma once

#include "medcoder/types.hpp"

#include <cmath>
#include <vector>

namespace medcoder {

// Flat elementwise Adam over a fixed list of parameter buffers.
class AdamOptimizer {
 public:
  struct Slot {
    double* param = nullptr;
    const double* grad = nullptr;
    Eigen::Index size = 0;
  };

  explicit AdamOptimizer(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                         double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(const std::vector<Slot>& slots) {
    if (m_.empty()) {
      for (const auto& s : slots) {
        m_.emplace_back(Vector::Zero(s.size));
        v_.emplace_back(Vector::Zero(s.size));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const auto& s = slots[k];
      Vector& m = m_[k];
      Vector& v = v_[k];
      for (Eigen::Index i = 0; i < s.size; ++i) {
        const double g = s.grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        s.param[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Vector> m_, v_;
};

}  // namespace medcoder
