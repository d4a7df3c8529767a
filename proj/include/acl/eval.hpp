#ifndef ACL_EVAL_HPP
#define ACL_EVAL_HPP

#include <optional>

#include "acl/adversary.hpp"
#include "acl/dataset.hpp"
#include "acl/losses.hpp"
#include "acl/model.hpp"

namespace acl {

struct EvalReport {
  double ta = 0.0;
  double ra = 0.0;
  std::optional<double> corruption_acc;
  AttackConfig attack;
  std::size_t n_examples = 0;
  std::uint64_t seed = 0;
};

/// Index of the largest entry of each row; ties go to the lowest index.
inline std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  const auto v = logits.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (v[i * c + k] > v[i * c + best]) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

inline std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const auto pred = argmax_rows(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return hits;
}

namespace detail {

inline constexpr std::size_t kEvalChunk = 100;

inline void require_nonempty(const char* op, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument(std::string(op) + ": empty dataset");
}

template <class Fn>
double chunked_accuracy(const Dataset& data, Fn&& correct_in_chunk) {
  std::size_t hits = 0;
  for (std::size_t s = 0; s < data.size(); s += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, data.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    hits += correct_in_chunk(idx);
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace detail

/// Clean accuracy with BN in inference mode.
inline double standard_accuracy(Model& model, const Dataset& data, BranchMode branch) {
  detail::require_nonempty("standard_accuracy", data);
  NoGradGuard no_grad;
  return detail::chunked_accuracy(data, [&](const std::vector<std::size_t>& idx) {
    return count_correct(model.logits(data.batch(idx), branch, false), data.labels_of(idx));
  });
}

/// Accuracy under PGD on the true-label cross-entropy. Each example's random
/// start comes from a stream derived from (seed, index), so the result does
/// not depend on chunking.
inline double robust_accuracy(Model& model, const Dataset& data, BranchMode branch, const AttackConfig& attack,
                              std::uint64_t seed) {
  detail::require_nonempty("robust_accuracy", data);
  attack.validate();
  return detail::chunked_accuracy(data, [&](const std::vector<std::size_t>& idx) {
    const Tensor x = data.batch(idx);
    const auto labels = data.labels_of(idx);
    const std::size_t per = data.image_numel();
    Tensor start(x.shape());
    if (attack.random_start) {
      auto d = start.values();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        Rng rng = Rng::derive(seed, idx[k]);
        for (std::size_t i = 0; i < per; ++i) d[k * per + i] = rng.uniform(-attack.epsilon, attack.epsilon);
      }
    }
    auto loss = [&](const Tensor& v) { return sum(cross_entropy_rows(model.logits(v, branch, false), labels)); };
    const Tensor adv = pgd_attack_from(loss, x, attack, start);
    NoGradGuard no_grad;
    return count_correct(model.logits(adv, branch, false), labels);
  });
}

/// Accuracy on x + N(0, sigma^2) clamped to [0,1]; noise per example from
/// (seed, index).
inline double gaussian_noise_accuracy(Model& model, const Dataset& data, BranchMode branch, float sigma,
                                      std::uint64_t seed) {
  detail::require_nonempty("gaussian_noise_accuracy", data);
  if (!(sigma >= 0.0f)) throw std::invalid_argument("gaussian_noise_accuracy: sigma must be >= 0");
  NoGradGuard no_grad;
  return detail::chunked_accuracy(data, [&](const std::vector<std::size_t>& idx) {
    Tensor x = data.batch(idx);
    const std::size_t per = data.image_numel();
    if (sigma > 0.0f) {
      auto v = x.values();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        Rng rng = Rng::derive(seed ^ 0x5A5A5A5AULL, idx[k]);
        for (std::size_t i = 0; i < per; ++i) v[k * per + i] = std::clamp(v[k * per + i] + sigma * rng.normal(), 0.0f, 1.0f);
      }
    }
    return count_correct(model.logits(x, branch, false), data.labels_of(idx));
  });
}

inline EvalReport evaluate(Model& model, const Dataset& data, BranchMode branch, const AttackConfig& attack,
                           std::uint64_t seed, std::optional<float> noise_sigma = std::nullopt) {
  EvalReport r;
  r.ta = standard_accuracy(model, data, branch);
  r.ra = robust_accuracy(model, data, branch, attack, seed);
  if (noise_sigma) r.corruption_acc = gaussian_noise_accuracy(model, data, branch, *noise_sigma, seed);
  r.attack = attack;
  r.n_examples = data.size();
  r.seed = seed;
  return r;
}

}  // namespace acl

#endif  // ACL_EVAL_HPP
