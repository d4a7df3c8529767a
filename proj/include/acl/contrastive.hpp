#ifndef ACL_CONTRASTIVE_HPP
#define ACL_CONTRASTIVE_HPP

#include "acl/ops.hpp"

namespace acl {

struct ContrastiveConfig {
  float temperature = 0.5f;

  void validate() const {
    if (!(temperature > 0.0f)) throw std::invalid_argument("ContrastiveConfig: temperature must be positive");
  }
};

/// Cosine similarities of all row pairs, [M x M].
inline Tensor similarity_matrix(const Tensor& z) {
  detail::require_rank("similarity_matrix", z, 2);
  const Tensor zn = l2_normalize(z, 1);
  return matmul(zn, transpose(zn));
}

/// NT-Xent over 2N embeddings where rows 2k and 2k+1 are the two views of
/// sample k. Each anchor's denominator runs over every other row (positive
/// included); the loss is the mean over all 2N anchors.
inline Tensor nt_xent(const Tensor& z, float temperature) {
  detail::require_rank("nt_xent", z, 2);
  if (!(temperature > 0.0f)) throw std::invalid_argument("nt_xent: temperature must be positive");
  const std::size_t m = z.dim(0);
  if (m % 2 != 0 || m < 4) {
    throw ShapeError("nt_xent: need an even number of rows >= 4 (N >= 2 pairs), got " + shape_str(z.shape()));
  }
  const Tensor logits = scale(similarity_matrix(z), 1.0f / temperature);
  Tensor mask({m, m});
  for (std::size_t i = 0; i < m; ++i) mask.values()[i * m + i] = -1e9f;
  std::vector<std::size_t> positive(m);
  for (std::size_t i = 0; i < m; ++i) positive[i] = i ^ std::size_t{1};
  return scale(mean(pick(log_softmax(add(logits, mask), 1), positive)), -1.0f);
}

inline Tensor nt_xent(const Tensor& z, const ContrastiveConfig& cfg) { return nt_xent(z, cfg.temperature); }

/// Interleaves two [N x ...] tensors row by row: a0, b0, a1, b1, ...
inline Tensor interleave_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() < 1) {
    throw ShapeError("interleave_rows: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0);
  std::vector<std::size_t> order(2 * n);
  for (std::size_t k = 0; k < n; ++k) {
    order[2 * k] = k;
    order[2 * k + 1] = n + k;
  }
  return gather_rows(concat({a, b}, 0), order);
}

/// Rows with index parity `parity` (0: even, 1: odd).
inline Tensor rows_with_parity(const Tensor& a, std::size_t parity) {
  std::vector<std::size_t> rows;
  for (std::size_t i = parity; i < a.dim(0); i += 2) rows.push_back(i);
  return gather_rows(a, rows);
}

}  // namespace acl

#endif  // ACL_CONTRASTIVE_HPP
