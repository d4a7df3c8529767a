#ifndef ACL_ADVERSARY_HPP
#define ACL_ADVERSARY_HPP

#include <cmath>
#include <functional>

#include "acl/contrastive.hpp"
#include "acl/model.hpp"
#include "acl/rng.hpp"

namespace acl {

/// l-infinity PGD settings. Pixel units: 8/255 means eight intensity levels.
struct AttackConfig {
  float epsilon = 8.0f / 255.0f;
  float step_size = 2.0f / 255.0f;
  std::size_t steps = 5;
  bool random_start = true;
  float low = 0.0f;
  float high = 1.0f;

  void validate() const {
    if (!(epsilon >= 0.0f)) throw std::invalid_argument("AttackConfig: epsilon must be >= 0");
    if (steps > 0 && !(step_size > 0.0f)) throw std::invalid_argument("AttackConfig: step_size must be > 0 when steps > 0");
    if (!(low < high)) throw std::invalid_argument("AttackConfig: bounds need low < high");
  }

  static AttackConfig pretraining() { return AttackConfig{}; }

  static AttackConfig evaluation() {
    AttackConfig c;
    c.steps = 20;
    return c;
  }

  static AttackConfig none() {
    AttackConfig c;
    c.epsilon = 0.0f;
    c.steps = 0;
    c.random_start = false;
    return c;
  }
};

using InputLossFn = std::function<Tensor(const Tensor&)>;

/// Elementwise clamp to [-epsilon, epsilon].
inline Tensor project_linf(const Tensor& delta, float epsilon) {
  if (!(epsilon >= 0.0f)) throw std::invalid_argument("project_linf: epsilon must be >= 0");
  Tensor out = delta.detach();
  for (auto& v : out.values()) v = std::clamp(v, -epsilon, epsilon);
  return out;
}

namespace detail {

// Per-element feasible interval [lo, hi] = ball(x, eps) intersected with the
// pixel bounds, shrunk to floats whose distance to x is at most eps exactly.
struct FeasibleBox {
  std::vector<float> lo, hi;
};

inline FeasibleBox feasible_box(std::span<const float> x, float eps, float low, float high) {
  FeasibleBox box{std::vector<float>(x.size()), std::vector<float>(x.size())};
  const double e = eps;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float xi = x[i];
    if (!(xi >= low && xi <= high)) {
      throw std::invalid_argument("pgd_attack: input value " + std::to_string(xi) + " at " + std::to_string(i) +
                                  " outside bounds");
    }
    float up = xi + eps;
    while (static_cast<double>(up) - static_cast<double>(xi) > e) up = std::nextafter(up, -INFINITY);
    float down = xi - eps;
    while (static_cast<double>(xi) - static_cast<double>(down) > e) down = std::nextafter(down, INFINITY);
    box.lo[i] = std::max(down, low);
    box.hi[i] = std::min(up, high);
  }
  return box;
}

inline float sign(float g) { return g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f); }

}  // namespace detail

/// PGD from an explicit starting perturbation. Each step moves by
/// step_size * sign(grad) and projects onto the feasible set. Gradients are
/// taken with respect to the input only; model parameter gradients are not
/// touched.
inline Tensor pgd_attack_from(const InputLossFn& loss_fn, const Tensor& x, const AttackConfig& cfg,
                              const Tensor& start_delta) {
  cfg.validate();
  if (start_delta.shape() != x.shape()) {
    throw ShapeError("pgd_attack: start perturbation " + shape_str(start_delta.shape()) + " vs input " + shape_str(x.shape()));
  }
  const auto box = detail::feasible_box(x.values(), cfg.epsilon, cfg.low, cfg.high);
  Tensor adv = x.detach();
  if (cfg.epsilon == 0.0f) return adv;
  {
    auto a = adv.values();
    const auto d = start_delta.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i] + d[i], box.lo[i], box.hi[i]);
  }
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tensor probe = adv.detach();
    probe.set_requires_grad(true);
    Tensor loss = loss_fn(probe);
    if (!std::isfinite(loss.item())) throw NumericError("pgd_attack: non-finite loss at step " + std::to_string(step));
    backward(loss, std::span<const Tensor>(&probe, 1));
    auto a = adv.values();
    if (!probe.has_grad()) break;  // loss does not depend on the input
    const auto g = probe.grad();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (std::isnan(g[i])) throw NumericError("pgd_attack: NaN input gradient at step " + std::to_string(step));
      a[i] = std::clamp(a[i] + cfg.step_size * detail::sign(g[i]), box.lo[i], box.hi[i]);
    }
  }
  return adv;
}

/// Uniform(-eps, eps) start drawn from `rng` (or zero without random start).
inline Tensor random_start_delta(const Shape& shape, const AttackConfig& cfg, Rng& rng) {
  Tensor d(shape);
  if (cfg.random_start) {
    for (auto& v : d.values()) v = rng.uniform(-cfg.epsilon, cfg.epsilon);
  }
  return d;
}

/// x_adv = x + delta with ||delta||_inf <= epsilon and x_adv within bounds,
/// approximately maximizing loss_fn.
inline Tensor pgd_attack(const InputLossFn& loss_fn, const Tensor& x, const AttackConfig& cfg, Rng& rng) {
  if (cfg.steps == 0 && !cfg.random_start) {
    cfg.validate();
    return x.detach();
  }
  return pgd_attack_from(loss_fn, x, cfg, random_start_delta(x.shape(), cfg, rng));
}

/// Jointly perturbs both views (interleaved rows, see nt_xent) to maximize
/// the contrastive loss through `branch`'s BN set. With batch_stats the
/// attacked network normalizes by batch statistics (running estimates are
/// never updated); otherwise BN runs in inference mode.
inline Tensor joint_contrastive_attack(Model& model, const Tensor& views, float temperature, const AttackConfig& cfg,
                                       Rng& rng, BranchMode branch = BranchMode::Adversarial, bool batch_stats = false) {
  auto loss = [&](const Tensor& v) {
    return nt_xent(model.project(model.encode(v, branch, batch_stats, false)), temperature);
  };
  return pgd_attack(loss, views, cfg, rng);
}

}  // namespace acl

#endif  // ACL_ADVERSARY_HPP
