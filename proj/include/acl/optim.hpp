#ifndef ACL_OPTIM_HPP
#define ACL_OPTIM_HPP

#include <cmath>
#include <numbers>
#include <vector>

#include "acl/tensor.hpp"

namespace acl {

/// SGD with heavy-ball momentum and L2 weight decay. Tensors without a
/// gradient buffer did not take part in the current loss and are skipped,
/// weight decay included.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, float momentum = 0.9f, float weight_decay = 5e-4f)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay), velocity_(params_.size()) {}

  void step(float lr) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k];
      if (!p.has_grad()) continue;
      auto& v = velocity_[k];
      if (v.empty()) v.assign(p.numel(), 0.0f);
      auto w = p.values();
      auto g = p.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i] + weight_decay_ * w[i];
        w[i] -= lr * v[i];
      }
    }
  }

  /// Drops gradient buffers so the next step only sees fresh contributions.
  void zero_grad() {
    for (auto& p : params_) p.clear_grad();
  }

  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  float momentum_;
  float weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

/// base * 0.5 * (1 + cos(pi * step / total))
inline float cosine_lr(float base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double t = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return static_cast<float>(base * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

/// base * factor^(number of milestones <= epoch)
inline float step_lr(float base, std::size_t epoch, const std::vector<std::size_t>& milestones, float factor) {
  float lr = base;
  for (auto m : milestones) {
    if (epoch >= m) lr *= factor;
  }
  return lr;
}

}  // namespace acl

#endif  // ACL_OPTIM_HPP
