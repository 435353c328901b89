#include "rlcf/optim.hpp"

#include <cmath>

#include "rlcf/error.hpp"

namespace rlcf {

double global_norm(const std::vector<Matrix>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

double Adam::step(std::vector<Matrix>& params, std::vector<Matrix>& grads, double lr, double clip_norm) {
  if (params.size() != grads.size()) throw Error("Adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  const double norm = global_norm(grads);
  if (clip_norm > 0.0 && norm > clip_norm) {
    const double s = clip_norm / norm;
    for (auto& g : grads) g *= s;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
  return norm;
}

}  // namespace rlcf
