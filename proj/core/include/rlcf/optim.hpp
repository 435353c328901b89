#pragma once

#include <cstdint>
#include <vector>

#include "rlcf/autodiff.hpp"

namespace rlcf {

using ad::Matrix;

// Global L2 norm over a set of gradient tensors.
double global_norm(const std::vector<Matrix>& grads);

// Adam with optional global-norm gradient clipping.
class Adam {
 public:
  Adam() = default;
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Returns the pre-clipping gradient norm.
  double step(std::vector<Matrix>& params, std::vector<Matrix>& grads, double lr, double clip_norm = 0.0);

  std::int64_t steps() const { return t_; }
  // Moments are exposed for checkpointing.
  std::vector<Matrix>& first_moment() { return m_; }
  std::vector<Matrix>& second_moment() { return v_; }
  const std::vector<Matrix>& first_moment() const { return m_; }
  const std::vector<Matrix>& second_moment() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace rlcf
