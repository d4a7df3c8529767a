#ifndef ACL_AUGMENT_HPP
#define ACL_AUGMENT_HPP

#include <cmath>
#include <utility>

#include "acl/rng.hpp"
#include "acl/tensor.hpp"

namespace acl {

/// Strengths of the stochastic view family (crop, flip, colour distortion).
struct AugmentConfig {
  std::size_t crop_pad = 4;
  float flip_prob = 0.5f;
  float brightness_delta = 0.4f;
  float contrast_lo = 0.6f;
  float contrast_hi = 1.4f;
  float grayscale_prob = 0.2f;
  std::uint64_t rng_seed = 0;

  void validate() const {
    auto prob = [](float p) { return p >= 0.0f && p <= 1.0f; };
    if (!prob(flip_prob) || !prob(grayscale_prob)) throw std::invalid_argument("AugmentConfig: probabilities must lie in [0,1]");
    if (brightness_delta < 0.0f || contrast_lo < 0.0f || contrast_lo > contrast_hi) {
      throw std::invalid_argument("AugmentConfig: invalid colour strengths");
    }
  }

  /// Default family with the crop padding scaled from 4px at 32px.
  static AugmentConfig for_resolution(std::size_t resolution) {
    AugmentConfig c;
    c.crop_pad = static_cast<std::size_t>(std::lround(4.0 * static_cast<double>(resolution) / 32.0));
    return c;
  }

  /// Every strength zero: the family collapses to the identity.
  static AugmentConfig identity() {
    AugmentConfig c;
    c.crop_pad = 0;
    c.flip_prob = 0.0f;
    c.brightness_delta = 0.0f;
    c.contrast_lo = c.contrast_hi = 1.0f;
    c.grayscale_prob = 0.0f;
    return c;
  }
};

struct ColorParams {
  float brightness = 0.0f;
  float contrast = 1.0f;
  bool grayscale = false;
};

/// One draw t ~ T.
struct ViewTransform {
  std::size_t crop_y = 0, crop_x = 0;
  bool flip = false;
  ColorParams color;
};

namespace detail {

inline void require_chw(const char* op, const Tensor& x) {
  if (x.rank() != 3) throw ShapeError(std::string(op) + ": expected CHW image, got " + shape_str(x.shape()));
}

inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (len == 1) return 0;
  while (i < 0 || i >= len) i = i < 0 ? -i : 2 * (len - 1) - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

/// Reflect-pads by `pad` and takes the original-size window at (oy, ox) of
/// the padded image.
inline Tensor crop_at(const Tensor& x, std::size_t pad, std::size_t oy, std::size_t ox) {
  detail::require_chw("crop", x);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (oy > 2 * pad || ox > 2 * pad) throw std::invalid_argument("crop: offset outside padded image");
  Tensor out({c, h, w});
  auto dst = out.values();
  const auto src = x.values();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      const auto sy = detail::reflect_index(static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(pad), h);
      for (std::size_t xx = 0; xx < w; ++xx) {
        const auto sx = detail::reflect_index(static_cast<std::ptrdiff_t>(xx + ox) - static_cast<std::ptrdiff_t>(pad), w);
        dst[(ch * h + y) * w + xx] = src[(ch * h + sy) * w + sx];
      }
    }
  return out;
}

inline Tensor random_crop(const Tensor& x, std::size_t pad, Rng& rng) {
  const auto oy = static_cast<std::size_t>(rng.below(2 * pad + 1));
  const auto ox = static_cast<std::size_t>(rng.below(2 * pad + 1));
  return crop_at(x, pad, oy, ox);
}

inline Tensor hflip(const Tensor& x) {
  detail::require_chw("hflip", x);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, h, w});
  auto dst = out.values();
  const auto src = x.values();
  for (std::size_t row = 0; row < c * h; ++row)
    for (std::size_t xx = 0; xx < w; ++xx) dst[row * w + xx] = src[row * w + (w - 1 - xx)];
  return out;
}

inline ColorParams sample_color(const AugmentConfig& cfg, Rng& rng) {
  ColorParams p;
  p.brightness = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
  p.contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
  p.grayscale = rng.bernoulli(cfg.grayscale_prob);
  return p;
}

/// Brightness shift, contrast scaling about the mean luminance, optional
/// grayscale, then clamp to [0,1].
inline Tensor apply_color(const Tensor& x, const ColorParams& p) {
  detail::require_chw("color_distort", x);
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out = x.detach();
  auto v = out.values();
  for (auto& e : v) e += p.brightness;
  if (p.contrast != 1.0f) {
    float mean = 0.0f;
    if (c == 3) {
      for (std::size_t i = 0; i < plane; ++i) mean += 0.299f * v[i] + 0.587f * v[plane + i] + 0.114f * v[2 * plane + i];
    } else {
      for (std::size_t i = 0; i < c * plane; ++i) mean += v[i];
      mean /= static_cast<float>(c);
    }
    mean /= static_cast<float>(plane);
    for (auto& e : v) e = (e - mean) * p.contrast + mean;
  }
  if (p.grayscale && c == 3) {
    for (std::size_t i = 0; i < plane; ++i) {
      const float g = 0.299f * v[i] + 0.587f * v[plane + i] + 0.114f * v[2 * plane + i];
      v[i] = v[plane + i] = v[2 * plane + i] = g;
    }
  }
  for (auto& e : v) e = std::clamp(e, 0.0f, 1.0f);
  return out;
}

inline Tensor color_distort(const Tensor& x, const AugmentConfig& cfg, Rng& rng) {
  return apply_color(x, sample_color(cfg, rng));
}

inline ViewTransform sample_transform(const AugmentConfig& cfg, Rng& rng) {
  ViewTransform t;
  t.crop_y = static_cast<std::size_t>(rng.below(2 * cfg.crop_pad + 1));
  t.crop_x = static_cast<std::size_t>(rng.below(2 * cfg.crop_pad + 1));
  t.flip = rng.bernoulli(cfg.flip_prob);
  t.color = sample_color(cfg, rng);
  return t;
}

inline Tensor apply_transform(const Tensor& x, const AugmentConfig& cfg, const ViewTransform& t) {
  Tensor out = cfg.crop_pad > 0 ? crop_at(x, cfg.crop_pad, t.crop_y, t.crop_x) : x.detach();
  if (t.flip) out = hflip(out);
  return apply_color(out, t.color);
}

/// Two independent draws t, t' from the family applied to the same image.
inline std::pair<Tensor, Tensor> sample_view_pair(const Tensor& x, const AugmentConfig& cfg, Rng& rng) {
  const ViewTransform a = sample_transform(cfg, rng);
  const ViewTransform b = sample_transform(cfg, rng);
  return {apply_transform(x, cfg, a), apply_transform(x, cfg, b)};
}

}  // namespace acl

#endif  // ACL_AUGMENT_HPP
