#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mvfuse/common.hpp"
#include "mvfuse/geometry.hpp"
#include "mvfuse/nn.hpp"
#include "mvfuse/tensor.hpp"

namespace mvf {

/// Cosine decay over `total` steps with both endpoints hit exactly:
/// step 0 -> lr_start, step total-1 -> lr_end, monotone non-increasing.
inline double cosine_lr(int step, int total, double lr_start, double lr_end) {
  MVF_CHECK_ARG(total >= 1 && step >= 0 && step < total, "schedule step out of range");
  MVF_CHECK_ARG(lr_start > lr_end && lr_end > 0.0, "schedule needs lr_start > lr_end > 0");
  if (total == 1) return lr_start;
  const double phase = static_cast<double>(step) / static_cast<double>(total - 1);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(kPi * phase));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive moment estimation over every parameter reachable from a network's
/// visit walk. Moments are kept in double even for float models; updates are
/// applied in visit order, so identical runs produce identical weights.
template <class Real>
class Adam {
 public:
  template <class Net>
  explicit Adam(Net& net, AdamConfig cfg = {}) : cfg_(cfg) {
    nn::ParamVisitor<Real> v;
    v.on_param = [this](const std::string&, TensorT<Real>& t) { params_.push_back(t); };
    net.visit("opt", v);
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), 0.0);
      v_[i].assign(params_[i].numel(), 0.0);
    }
  }

  std::size_t slot_count() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    MVF_CHECK_ARG(lr > 0.0, "learning rate must be positive");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      std::vector<Real>& value = params_[i].values();
      const std::vector<Real>& grad = params_[i].grads();
      MVF_CHECK_ARG(grad.size() == value.size(), "parameter gradient is missing; call zero_grad");
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = static_cast<double>(grad[j]);
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
        const double update = (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + cfg_.eps);
        value[j] = static_cast<Real>(static_cast<double>(value[j]) - lr * update);
      }
    }
  }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  std::vector<TensorT<Real>> params_;  // shared handles into the model
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace mvf
