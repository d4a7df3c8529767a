#ifndef ACL_OPS_HPP
#define ACL_OPS_HPP

#include <limits>

#include "acl/tensor.hpp"

namespace acl {

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(a.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b, float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[i * k + p];
      if (av == 0.0f) continue;
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float* brow = b + p * n;
      // fixed lane split keeps the summation order deterministic and vectorizable
      float lanes[8] = {};
      std::size_t j = 0;
      for (; j + 8 <= n; j += 8)
        for (std::size_t l = 0; l < 8; ++l) lanes[l] += arow[j + l] * brow[j + l];
      float acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
      for (; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b, float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[i * k + p];
      if (av == 0.0f) continue;
      float* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (b.numel() == 1 && a.shape() != b.shape()) {
    const float s = b.item();
    std::vector<float> out(a.vec());
    for (auto& v : out) v += s;
    return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
      if (float* ga = detail::grad_slot(*self.inputs[0])) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
      }
      if (float* gb = detail::grad_slot(*self.inputs[1])) {
        float acc = 0.0f;
        for (float g : self.grad) acc += g;
        gb[0] += acc;
      }
    });
  }
  detail::require_same_shape("add", a, b);
  std::vector<float> out(a.numel());
  const auto& av = a.vec();
  const auto& bv = b.vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (int k = 0; k < 2; ++k) {
      if (float* g = detail::grad_slot(*self.inputs[k])) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<float> out(a.numel());
  const auto& av = a.vec();
  const auto& bv = b.vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return detail::make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
    if (float* gb = detail::grad_slot(*self.inputs[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

inline Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.vec());
  for (auto& v : out) v *= s;
  return detail::make_result("scale", a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += s * self.grad[i];
    }
  });
}

inline Tensor add_scalar(const Tensor& a, float s) {
  std::vector<float> out(a.vec());
  for (auto& v : out) v += s;
  return detail::make_result("add_scalar", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
  });
}

/// Elementwise product; `b` may also be a one-element tensor.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (b.numel() == 1 && a.shape() != b.shape()) {
    const float s = b.item();
    std::vector<float> out(a.vec());
    for (auto& v : out) v *= s;
    return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [s](detail::Node& self) {
      const auto& av = self.inputs[0]->value;
      if (float* ga = detail::grad_slot(*self.inputs[0])) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += s * self.grad[i];
      }
      if (float* gb = detail::grad_slot(*self.inputs[1])) {
        float acc = 0.0f;
        for (std::size_t i = 0; i < self.grad.size(); ++i) acc += av[i] * self.grad[i];
        gb[0] += acc;
      }
    });
  }
  detail::require_same_shape("mul", a, b);
  std::vector<float> out(a.numel());
  const auto& av = a.vec();
  const auto& bv = b.vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += bv[i] * self.grad[i];
    }
    if (float* gb = detail::grad_slot(*self.inputs[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += av[i] * self.grad[i];
    }
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<float> out(a.vec());
  for (auto& v : out) v = v > 0.0f ? v : 0.0f;
  return detail::make_result("relu", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      const auto& x = self.inputs[0]->value;
      // subgradient 0 at exactly 0
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (x[i] > 0.0f) ga[i] += self.grad[i];
      }
    }
  });
}

inline Tensor exp(const Tensor& a) {
  std::vector<float> out(a.numel());
  const auto& av = a.vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  return detail::make_result("exp", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.value[i] * self.grad[i];
    }
  });
}

inline Tensor log(const Tensor& a) {
  std::vector<float> out(a.numel());
  const auto& av = a.vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
  return detail::make_result("log", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      const auto& x = self.inputs[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] / x[i];
    }
  });
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
  float acc = 0.0f;
  for (float v : a.vec()) acc += v;
  return detail::make_result("sum", Shape{}, {acc}, {a}, [](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      const float g = self.grad[0];
      const std::size_t n = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    }
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  float acc = 0.0f;
  for (float v : a.vec()) acc += v;
  const float inv = 1.0f / static_cast<float>(a.numel());
  return detail::make_result("mean", Shape{}, {acc * inv}, {a}, [inv](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      const float g = self.grad[0] * inv;
      const std::size_t n = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    }
  });
}

/// Sum over one axis; the axis is removed from the result shape.
inline Tensor sum(const Tensor& a, std::size_t axis) {
  const auto s = detail::split_axis("sum", a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<float> out(s.outer * s.inner, 0.0f);
  const auto& av = a.vec();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const float* src = av.data() + (o * s.extent + e) * s.inner;
      float* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return detail::make_result("sum_axis", out_shape, std::move(out), {a}, [s](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t e = 0; e < s.extent; ++e) {
          float* dst = ga + (o * s.extent + e) * s.inner;
          const float* src = self.grad.data() + o * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
      }
    }
  });
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  const auto extent = detail::split_axis("mean", a.shape(), axis).extent;
  if (extent == 0) throw ShapeError("mean: empty axis");
  return scale(sum(a, axis), 1.0f / static_cast<float>(extent));
}

// ---------------------------------------------------------------- axis-wise normalizers

inline Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto s = detail::split_axis("softmax", a.shape(), axis);
  std::vector<float> out(a.numel());
  const auto& av = a.vec();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, av[base + e * s.inner]);
      float z = 0.0f;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const float v = std::exp(av[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  }
  return detail::make_result("softmax", a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      const auto& y = self.value;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          float dot = 0.0f;
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t k = base + e * s.inner;
            dot += self.grad[k] * y[k];
          }
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t k = base + e * s.inner;
            ga[k] += y[k] * (self.grad[k] - dot);
          }
        }
      }
    }
  });
}

inline Tensor log_softmax(const Tensor& a, std::size_t axis) {
  const auto s = detail::split_axis("log_softmax", a.shape(), axis);
  std::vector<float> out(a.numel());
  const auto& av = a.vec();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, av[base + e * s.inner]);
      float z = 0.0f;
      for (std::size_t e = 0; e < s.extent; ++e) z += std::exp(av[base + e * s.inner] - mx);
      const float lse = mx + std::log(z);
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] = av[base + e * s.inner] - lse;
    }
  }
  return detail::make_result("log_softmax", a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      const auto& y = self.value;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          float gsum = 0.0f;
          for (std::size_t e = 0; e < s.extent; ++e) gsum += self.grad[base + e * s.inner];
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t k = base + e * s.inner;
            ga[k] += self.grad[k] - std::exp(y[k]) * gsum;
          }
        }
      }
    }
  });
}

/// Divides each fiber along `axis` by its Euclidean norm. Zero fibers are an
/// error since their direction is undefined.
inline Tensor l2_normalize(const Tensor& a, std::size_t axis) {
  const auto s = detail::split_axis("l2_normalize", a.shape(), axis);
  std::vector<float> out(a.numel());
  std::vector<float> norms(s.outer * s.inner);
  const auto& av = a.vec();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      float sq = 0.0f;
      for (std::size_t e = 0; e < s.extent; ++e) sq += av[base + e * s.inner] * av[base + e * s.inner];
      const float nrm = std::sqrt(sq);
      if (!(nrm > 0.0f)) throw NumericError("l2_normalize: zero-norm fiber at index " + std::to_string(o * s.inner + i));
      norms[o * s.inner + i] = nrm;
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] = av[base + e * s.inner] / nrm;
    }
  }
  return detail::make_result("l2_normalize", a.shape(), std::move(out), {a},
                             [s, norms = std::move(norms)](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      const auto& y = self.value;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          float dot = 0.0f;
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t k = base + e * s.inner;
            dot += self.grad[k] * y[k];
          }
          const float inv = 1.0f / norms[o * s.inner + i];
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t k = base + e * s.inner;
            ga[k] += (self.grad[k] - y[k] * dot) * inv;
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------- linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(m * n, 0.0f);
  detail::gemm_nn(m, k, n, a.vec().data(), b.vec().data(), out.data());
  return detail::make_result("matmul", Shape{m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (float* ga = detail::grad_slot(*self.inputs[0])) detail::gemm_nt(m, n, k, self.grad.data(), bv.data(), ga);
    if (float* gb = detail::grad_slot(*self.inputs[1])) detail::gemm_tn(m, k, n, av.data(), self.grad.data(), gb);
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<float> out(a.numel());
  const auto& av = a.vec();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return detail::make_result("transpose", Shape{c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
    if (float* ga = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
    }
  });
}

/// Adds a per-channel vector along axis 1 (bias of linear and conv layers).
inline Tensor add_channel(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_channel: cannot add " + shape_str(bias.shape()) + " to " + shape_str(x.shape()));
  }
  const auto s = detail::split_axis("add_channel", x.shape(), 1);
  std::vector<float> out(x.vec());
  const auto& bv = bias.vec();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t c = 0; c < s.extent; ++c) {
      float* row = out.data() + (o * s.extent + c) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) row[i] += bv[c];
    }
  return detail::make_result("add_channel", x.shape(), std::move(out), {x, bias}, [s](detail::Node& self) {
    if (float* gx = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
    if (float* gb = detail::grad_slot(*self.inputs[1])) {
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t c = 0; c < s.extent; ++c) {
          const float* row = self.grad.data() + (o * s.extent + c) * s.inner;
          float acc = 0.0f;
          for (std::size_t i = 0; i < s.inner; ++i) acc += row[i];
          gb[c] += acc;
        }
    }
  });
}

/// x[N x in] * w[in x out] + b[out]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_channel(matmul(x, w), b);
}

// ---------------------------------------------------------------- convolution & pooling

struct Conv2dGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
};

inline Conv2dGeometry conv2d_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad) {
  if (x.size() != 4 || w.size() != 4 || x[1] != w[1] || stride == 0) {
    throw ShapeError("conv2d: input " + shape_str(x) + " incompatible with kernel " + shape_str(w) +
                     " (stride " + std::to_string(stride) + ")");
  }
  Conv2dGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], w[3], stride, pad, 0, 0};
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw ShapeError("conv2d: kernel " + shape_str(w) + " larger than padded input " + shape_str(x));
  }
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

namespace detail {

// cols[(ci*kh+ki)*kw+kj][oy*wo+ox] = padded x[ci][oy*stride+ki-pad][ox*stride+kj-pad]
// with row stride ld (>= ho*wo) so a batch can share one column matrix.
inline void im2col(const Conv2dGeometry& g, const float* x, float* cols, std::size_t ld) {
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        float* row = cols + ((ci * g.kh + ki) * g.kw + kj) * ld;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] = inside ? x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0f;
          }
        }
      }
}

inline void col2im(const Conv2dGeometry& g, const float* cols, float* x, std::size_t ld) {
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const float* row = cols + ((ci * g.kh + ki) * g.kw + kj) * ld;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace detail

/// NCHW convolution (cross-correlation) with zero padding, no bias.
inline Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride = 1, std::size_t pad = 0) {
  const auto g = conv2d_geometry(x.shape(), w.shape(), stride, pad);
  const std::size_t k = g.cin * g.kh * g.kw;
  const std::size_t p = g.ho * g.wo;
  const std::size_t np = g.n * p;
  // one column matrix [k x n*p] for the whole batch; output computed as [cout x n*p]
  auto cols = std::make_shared<std::vector<float>>(k * np);
  for (std::size_t s = 0; s < g.n; ++s) detail::im2col(g, x.vec().data() + s * g.cin * g.h * g.w, cols->data() + s * p, np);
  std::vector<float> flat(g.cout * np, 0.0f);
  detail::gemm_nn(g.cout, k, np, w.vec().data(), cols->data(), flat.data());
  std::vector<float> out(g.n * g.cout * p);
  for (std::size_t s = 0; s < g.n; ++s)
    for (std::size_t co = 0; co < g.cout; ++co)
      std::copy_n(flat.data() + co * np + s * p, p, out.data() + (s * g.cout + co) * p);
  return detail::make_result("conv2d", Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), {x, w},
                             [g, k, p, np, cols](detail::Node& self) {
    const auto& wv = self.inputs[1]->value;
    float* gx = detail::grad_slot(*self.inputs[0]);
    float* gw = detail::grad_slot(*self.inputs[1]);
    if (!gx && !gw) return;
    std::vector<float> dy(g.cout * np);
    for (std::size_t s = 0; s < g.n; ++s)
      for (std::size_t co = 0; co < g.cout; ++co)
        std::copy_n(self.grad.data() + (s * g.cout + co) * p, p, dy.data() + co * np + s * p);
    if (gw) detail::gemm_nt(g.cout, np, k, dy.data(), cols->data(), gw);
    if (gx) {
      std::vector<float> dcols(k * np, 0.0f);
      detail::gemm_tn(g.cout, k, np, wv.data(), dy.data(), dcols.data());
      for (std::size_t s = 0; s < g.n; ++s) detail::col2im(g, dcols.data() + s * p, gx + s * g.cin * g.h * g.w, np);
    }
  });
}

inline Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  detail::require_rank("max_pool2d", x, 4);
  if (kernel == 0 || stride == 0 || x.dim(2) < kernel || x.dim(3) < kernel) {
    throw ShapeError("max_pool2d: kernel " + std::to_string(kernel) + " invalid for " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  std::vector<float> out(n * c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  const auto& xv = x.vec();
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = plane * h * w + (oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = plane * h * w + (oy * stride + ky) * w + ox * stride + kx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (plane * ho + oy) * wo + ox;
        out[o] = xv[best];
        argmax[o] = best;
      }
  return detail::make_result("max_pool2d", Shape{n, c, ho, wo}, std::move(out), {x},
                             [argmax = std::move(argmax)](detail::Node& self) {
    if (float* gx = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t o = 0; o < self.grad.size(); ++o) gx[argmax[o]] += self.grad[o];
    }
  });
}

/// NCHW -> NC mean over spatial positions.
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank("global_avg_pool", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<float> out(n * c);
  const auto& xv = x.vec();
  const float inv = 1.0f / static_cast<float>(hw);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < hw; ++i) acc += xv[plane * hw + i];
    out[plane] = acc * inv;
  }
  return detail::make_result("global_avg_pool", Shape{n, c}, std::move(out), {x}, [hw, inv](detail::Node& self) {
    if (float* gx = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t plane = 0; plane < self.grad.size(); ++plane) {
        const float g = self.grad[plane] * inv;
        for (std::size_t i = 0; i < hw; ++i) gx[plane * hw + i] += g;
      }
    }
  });
}

// ---------------------------------------------------------------- batch normalization

struct BatchMoments {
  std::vector<float> mean;
  std::vector<float> var;  // biased, divides by count
  std::size_t count = 0;
};

/// Normalizes with the statistics of this batch (per channel over N,H,W) and
/// applies the affine transform. Writes the batch moments to `moments`.
inline Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps,
                               BatchMoments* moments = nullptr) {
  if (x.rank() < 2 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1)) {
    throw ShapeError("batch_norm: parameters " + shape_str(gamma.shape()) + " do not match input " +
                     shape_str(x.shape()));
  }
  const auto s = detail::split_axis("batch_norm", x.shape(), 1);
  const std::size_t m = s.outer * s.inner;
  if (s.outer < 2) throw ShapeError("batch_norm: training mode needs batch size >= 2, got " + std::to_string(s.outer));
  const auto& xv = x.vec();
  std::vector<float> mu(s.extent, 0.0f), var(s.extent, 0.0f), invstd(s.extent);
  for (std::size_t c = 0; c < s.extent; ++c) {
    float acc = 0.0f;
    for (std::size_t o = 0; o < s.outer; ++o) {
      const float* row = xv.data() + (o * s.extent + c) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) acc += row[i];
    }
    mu[c] = acc / static_cast<float>(m);
    float sq = 0.0f;
    for (std::size_t o = 0; o < s.outer; ++o) {
      const float* row = xv.data() + (o * s.extent + c) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) {
        const float d = row[i] - mu[c];
        sq += d * d;
      }
    }
    var[c] = sq / static_cast<float>(m);
    invstd[c] = 1.0f / std::sqrt(var[c] + eps);
  }
  std::vector<float> xhat(x.numel()), out(x.numel());
  const auto& gv = gamma.vec();
  const auto& bv = beta.vec();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t c = 0; c < s.extent; ++c) {
      const std::size_t base = (o * s.extent + c) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) {
        const float h = (xv[base + i] - mu[c]) * invstd[c];
        xhat[base + i] = h;
        out[base + i] = h * gv[c] + bv[c];
      }
    }
  if (moments) *moments = BatchMoments{mu, var, m};
  return detail::make_result("batch_norm", x.shape(), std::move(out), {x, gamma, beta},
                             [s, m, invstd = std::move(invstd), xhat = std::move(xhat)](detail::Node& self) {
    const auto& gv = self.inputs[1]->value;
    float* gx = detail::grad_slot(*self.inputs[0]);
    float* gg = detail::grad_slot(*self.inputs[1]);
    float* gb = detail::grad_slot(*self.inputs[2]);
    const auto& dy = self.grad;
    for (std::size_t c = 0; c < s.extent; ++c) {
      float sum_dy = 0.0f, sum_dy_xhat = 0.0f;
      for (std::size_t o = 0; o < s.outer; ++o) {
        const std::size_t base = (o * s.extent + c) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) {
          sum_dy += dy[base + i];
          sum_dy_xhat += dy[base + i] * xhat[base + i];
        }
      }
      if (gg) gg[c] += sum_dy_xhat;
      if (gb) gb[c] += sum_dy;
      if (gx) {
        const float fm = static_cast<float>(m);
        const float k = gv[c] * invstd[c] / fm;
        for (std::size_t o = 0; o < s.outer; ++o) {
          const std::size_t base = (o * s.extent + c) * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) {
            gx[base + i] += k * (fm * dy[base + i] - sum_dy - xhat[base + i] * sum_dy_xhat);
          }
        }
      }
    }
  });
}

/// Normalizes with fixed statistics; differentiable in x, gamma and beta.
inline Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              std::span<const float> running_mean, std::span<const float> running_var, float eps) {
  if (x.rank() < 2 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1) ||
      running_mean.size() != x.dim(1) || running_var.size() != x.dim(1)) {
    throw ShapeError("batch_norm: parameters " + shape_str(gamma.shape()) + " do not match input " +
                     shape_str(x.shape()));
  }
  const auto s = detail::split_axis("batch_norm", x.shape(), 1);
  std::vector<float> invstd(s.extent);
  std::vector<float> mu(running_mean.begin(), running_mean.end());
  for (std::size_t c = 0; c < s.extent; ++c) invstd[c] = 1.0f / std::sqrt(running_var[c] + eps);
  const auto& xv = x.vec();
  const auto& gv = gamma.vec();
  const auto& bv = beta.vec();
  std::vector<float> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t c = 0; c < s.extent; ++c) {
      const std::size_t base = (o * s.extent + c) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) out[base + i] = (xv[base + i] - mu[c]) * invstd[c] * gv[c] + bv[c];
    }
  return detail::make_result("batch_norm_eval", x.shape(), std::move(out), {x, gamma, beta},
                             [s, mu = std::move(mu), invstd = std::move(invstd)](detail::Node& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& gv = self.inputs[1]->value;
    float* gx = detail::grad_slot(*self.inputs[0]);
    float* gg = detail::grad_slot(*self.inputs[1]);
    float* gb = detail::grad_slot(*self.inputs[2]);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t c = 0; c < s.extent; ++c) {
        const std::size_t base = (o * s.extent + c) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) {
          const float dy = self.grad[base + i];
          if (gx) gx[base + i] += dy * gv[c] * invstd[c];
          if (gg) gg[c] += dy * (xv[base + i] - mu[c]) * invstd[c];
          if (gb) gb[c] += dy;
        }
      }
  });
}

// ---------------------------------------------------------------- structural

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(shape));
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = shape;
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  shape[axis] = total;
  const auto s = detail::split_axis("concat", shape, axis);
  std::vector<float> out(numel_of(shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::size_t len = extents[k] * s.inner;
      const float* src = parts[k].vec().data() + o * len;
      std::copy(src, src + len, out.data() + o * total * s.inner + offset);
      offset += len;
    }
  }
  return detail::make_result("concat", shape, std::move(out), parts, [s, total, extents](detail::Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t len = extents[k] * s.inner;
      if (float* g = detail::grad_slot(*self.inputs[k])) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          const float* src = self.grad.data() + o * total * s.inner + offset;
          for (std::size_t i = 0; i < len; ++i) g[o * len + i] += src[i];
        }
      }
      offset += len;
    }
  });
}

/// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = detail::split_axis("slice", a.shape(), axis);
  if (begin > end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_str(a.shape()) + " axis " + std::to_string(axis));
  }
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t len = (end - begin) * s.inner;
  std::vector<float> out(s.outer * len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const float* src = a.vec().data() + (o * s.extent + begin) * s.inner;
    std::copy(src, src + len, out.data() + o * len);
  }
  return detail::make_result("slice", shape, std::move(out), {a}, [s, begin, len](detail::Node& self) {
    if (float* g = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        float* dst = g + (o * s.extent + begin) * s.inner;
        for (std::size_t i = 0; i < len; ++i) dst[i] += self.grad[o * len + i];
      }
    }
  });
}

/// Rows of `a` (axis 0) in the given order; indices may repeat.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  if (a.rank() < 1) throw ShapeError("gather_rows: scalar input");
  const std::size_t row = a.numel() / std::max<std::size_t>(a.dim(0), 1);
  Shape shape = a.shape();
  shape[0] = rows.size();
  std::vector<float> out(rows.size() * row);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= a.dim(0)) throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " + shape_str(a.shape()));
    std::copy_n(a.vec().data() + rows[r] * row, row, out.data() + r * row);
  }
  return detail::make_result("gather_rows", shape, std::move(out), {a}, [rows, row](detail::Node& self) {
    if (float* g = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t i = 0; i < row; ++i) g[rows[r] * row + i] += self.grad[r * row + i];
    }
  });
}

/// out[i] = a[i, index[i]] for a 2-D tensor.
inline Tensor pick(const Tensor& a, const std::vector<std::size_t>& index) {
  detail::require_rank("pick", a, 2);
  if (index.size() != a.dim(0)) throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + shape_str(a.shape()));
  const std::size_t cols = a.dim(1);
  std::vector<float> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= cols) throw ShapeError("pick: column " + std::to_string(index[i]) + " out of range for " + shape_str(a.shape()));
    out[i] = a.vec()[i * cols + index[i]];
  }
  return detail::make_result("pick", Shape{index.size()}, std::move(out), {a}, [index, cols](detail::Node& self) {
    if (float* g = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t i = 0; i < index.size(); ++i) g[i * cols + index[i]] += self.grad[i];
    }
  });
}

/// Same values, new shape.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return detail::make_result("reshape", std::move(shape), a.vec(), {a}, [](detail::Node& self) {
    if (float* g = detail::grad_slot(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

}  // namespace acl

#endif  // ACL_OPS_HPP
