#ifndef ACL_GRAD_CHECK_HPP
#define ACL_GRAD_CHECK_HPP

#include <functional>

#include "acl/tensor.hpp"

namespace acl {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares the reverse-mode gradient of `f` at `x` against central finite
/// differences. Returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
inline float grad_check(const ScalarFn& f, const Tensor& x, float h = 1e-3f) {
  if (!(h > 0.0f)) throw std::invalid_argument("grad_check: step must be positive");
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  Tensor root = f(probe);
  if (root.numel() != 1) throw ShapeError("grad_check: function output " + shape_str(root.shape()) + " is not scalar");
  std::vector<float> analytic(probe.numel(), 0.0f);
  if (root.requires_grad()) {
    backward(root, std::span<const Tensor>(&probe, 1));
    if (probe.has_grad()) analytic.assign(probe.grad().begin(), probe.grad().end());
  }

  NoGradGuard no_grad;
  float worst = 0.0f;
  Tensor shifted = x.detach();
  auto values = shifted.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float original = values[i];
    values[i] = original + h;
    const double up = f(shifted).item();
    values[i] = original - h;
    const double down = f(shifted).item();
    values[i] = original;
    const double numeric = (up - down) / (2.0 * static_cast<double>(h));
    const double err = std::abs(static_cast<double>(analytic[i]) - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, static_cast<float>(err));
  }
  return worst;
}

}  // namespace acl

#endif  // ACL_GRAD_CHECK_HPP
