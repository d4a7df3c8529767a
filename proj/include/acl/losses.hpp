#ifndef ACL_LOSSES_HPP
#define ACL_LOSSES_HPP

#include "acl/ops.hpp"

namespace acl {

inline std::vector<std::size_t> to_indices(const std::vector<int>& labels, std::size_t classes) {
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
    out[i] = static_cast<std::size_t>(labels[i]);
  }
  return out;
}

/// Per-row cross-entropy of logits [N x C] against integer labels; shape (N).
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
  detail::require_rank("cross_entropy", logits, 2);
  return scale(pick(log_softmax(logits, 1), to_indices(labels, logits.dim(1))), -1.0f);
}

inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  return mean(cross_entropy_rows(logits, labels));
}

/// Per-row cross-entropy against soft targets [N x C] (treated as constants).
inline Tensor soft_cross_entropy_rows(const Tensor& logits, const Tensor& targets) {
  detail::require_same_shape("soft_cross_entropy", logits, targets);
  return scale(sum(mul(log_softmax(logits, 1), targets.detach()), 1), -1.0f);
}

/// Per-row KL(softmax(p_logits) || softmax(q_logits)); shape (N).
inline Tensor kl_rows(const Tensor& p_logits, const Tensor& q_logits) {
  detail::require_same_shape("kl_div", p_logits, q_logits);
  const Tensor log_p = log_softmax(p_logits, 1);
  const Tensor log_q = log_softmax(q_logits, 1);
  return sum(mul(exp(log_p), sub(log_p, log_q)), 1);
}

/// Batch-mean KL divergence between the two categorical predictions.
inline Tensor kl_div(const Tensor& p_logits, const Tensor& q_logits) { return mean(kl_rows(p_logits, q_logits)); }

/// Row-wise softmax of plain values, no graph.
inline Tensor softmax_values(const Tensor& logits, float temperature = 1.0f) {
  NoGradGuard guard;
  return softmax(scale(logits.detach(), 1.0f / temperature), 1).detach();
}

}  // namespace acl

#endif  // ACL_LOSSES_HPP
