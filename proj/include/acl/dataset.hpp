#ifndef ACL_DATASET_HPP
#define ACL_DATASET_HPP

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "acl/rng.hpp"
#include "acl/tensor.hpp"

namespace acl {

/// Labelled images, CHW float32 in [0,1], stored back to back.
struct Dataset {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<float> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t image_numel() const { return channels * height * width; }

  Tensor image(std::size_t i) const {
    const std::size_t n = image_numel();
    return Tensor({channels, height, width}, std::vector<float>(pixels.begin() + static_cast<std::ptrdiff_t>(i * n),
                                                                pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
  }

  Tensor batch(const std::vector<std::size_t>& idx) const {
    const std::size_t n = image_numel();
    std::vector<float> out(idx.size() * n);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(idx[k] * n), n, out.begin() + static_cast<std::ptrdiff_t>(k * n));
    }
    return Tensor({idx.size(), channels, height, width}, std::move(out));
  }

  std::vector<int> labels_of(const std::vector<std::size_t>& idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) out[k] = labels[idx[k]];
    return out;
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d{channels, height, width, num_classes, {}, labels_of(idx)};
    d.pixels = batch(idx).vec();
    return d;
  }

  std::vector<std::size_t> all_indices() const {
    std::vector<std::size_t> idx(size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
};

/// Reads CIFAR-10 binary batches: 3073-byte records of one label byte then
/// 3072 channel-major 32x32 RGB bytes.
inline Dataset load_cifar_binary(const std::string& path, std::size_t num_classes = 10) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_cifar_binary: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t kRecord = 3073;
  if (bytes.size() % kRecord != 0) {
    throw std::runtime_error("load_cifar_binary: " + path + " truncated; last record starts at offset " +
                             std::to_string(bytes.size() / kRecord * kRecord) + " with only " +
                             std::to_string(bytes.size() % kRecord) + " bytes");
  }
  Dataset d;
  d.channels = 3;
  d.height = d.width = 32;
  d.num_classes = num_classes;
  const std::size_t count = bytes.size() / kRecord;
  d.labels.resize(count);
  d.pixels.resize(count * 3072);
  for (std::size_t r = 0; r < count; ++r) {
    const unsigned char label = bytes[r * kRecord];
    if (label >= num_classes) {
      throw std::runtime_error("load_cifar_binary: label " + std::to_string(label) + " at offset " +
                               std::to_string(r * kRecord) + " exceeds " + std::to_string(num_classes - 1));
    }
    d.labels[r] = label;
    for (std::size_t i = 0; i < 3072; ++i) d.pixels[r * 3072 + i] = static_cast<float>(bytes[r * kRecord + 1 + i]) / 255.0f;
  }
  return d;
}

/// Procedural image classes. Every image carries a sinusoidal grating with a
/// random orientation and phase; the class is coded by its period, drawn from
/// one of `num_classes` disjoint bands in [period_min, period_max]. Flips,
/// crops and colour jitter keep the class. Instance clutter: a random
/// background level and a few randomly placed coloured blobs.
///
/// The Blobs pattern instead gives each class a fixed template of coloured
/// Gaussian bumps (drawn from the seed), jittered per image. It is not
/// invariant to flips or large crops.
enum class SyntheticPattern { Grating, Blobs };

struct SyntheticConfig {
  SyntheticPattern pattern = SyntheticPattern::Grating;
  std::size_t num_classes = 2;
  std::size_t per_class = 250;
  std::size_t resolution = 16;
  float grating_amplitude = 0.2f;
  float period_min = 2.5f;  // pixels
  float period_max = 8.0f;
  float band_gap = 0.3f;  // fraction of each class band left empty
  float background_lo = 0.3f;
  float background_hi = 0.7f;
  std::size_t distractors = 3;
  float distractor_amplitude = 0.3f;
  float noise_std = 0.03f;
  std::size_t class_blobs = 3;  // Blobs pattern: bumps per class template
  float blob_jitter = 1.0f;     // Blobs pattern: per-image centre jitter, pixels
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 1 || resolution < 2 || !(period_min > 0.0f) || !(period_max > period_min) ||
        !(band_gap >= 0.0f && band_gap < 1.0f) || !(noise_std >= 0.0f)) {
      throw std::invalid_argument("SyntheticConfig: invalid configuration");
    }
  }
};

inline Dataset make_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  constexpr float kPi = 3.14159265358979323846f;
  Rng rng(cfg.seed);
  const std::size_t r = cfg.resolution;
  const float res = static_cast<float>(r);
  Dataset d;
  d.channels = 3;
  d.height = d.width = r;
  d.num_classes = cfg.num_classes;
  const std::size_t total = cfg.num_classes * cfg.per_class;
  d.labels.resize(total);
  d.pixels.resize(total * 3 * r * r);
  struct Blob {
    float cy, cx, sigma, color[3];
  };
  std::vector<std::vector<Blob>> templates;
  if (cfg.pattern == SyntheticPattern::Blobs) {
    Rng trng = Rng::derive(cfg.seed, 0xB10Bu);
    templates.resize(cfg.num_classes, std::vector<Blob>(cfg.class_blobs));
    for (auto& t : templates)
      for (auto& b : t) {
        b.cy = trng.uniform(0.2f * res, 0.8f * res);
        b.cx = trng.uniform(0.2f * res, 0.8f * res);
        b.sigma = trng.uniform(0.08f * res, 0.18f * res);
        for (float& col : b.color) col = trng.uniform(-cfg.grating_amplitude, cfg.grating_amplitude);
      }
  }
  std::vector<Blob> blobs(cfg.distractors);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t c = i % cfg.num_classes;
    d.labels[i] = static_cast<int>(c);
    const float band = (cfg.period_max - cfg.period_min) / static_cast<float>(cfg.num_classes);
    const float period = cfg.period_min + band * (static_cast<float>(c) + rng.uniform(0.0f, 1.0f - cfg.band_gap));
    const float theta = rng.uniform(0.0f, kPi);
    const float ky = std::sin(theta) * 2.0f * kPi / period;
    const float kx = std::cos(theta) * 2.0f * kPi / period;
    const float phase = rng.uniform(0.0f, 2.0f * kPi);
    const float base = rng.uniform(cfg.background_lo, cfg.background_hi);
    for (auto& b : blobs) {
      b.cy = rng.uniform(0.0f, res);
      b.cx = rng.uniform(0.0f, res);
      b.sigma = rng.uniform(1.5f, 3.5f);
      for (float& col : b.color) col = rng.uniform(-cfg.distractor_amplitude, cfg.distractor_amplitude);
    }
    std::vector<Blob> shape;
    if (!templates.empty()) {
      shape = templates[c];
      for (auto& b : shape) {
        b.cy += rng.uniform(-cfg.blob_jitter, cfg.blob_jitter);
        b.cx += rng.uniform(-cfg.blob_jitter, cfg.blob_jitter);
      }
    }
    float* img = d.pixels.data() + i * 3 * r * r;
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t x = 0; x < r; ++x) {
        const float fy = static_cast<float>(y), fx = static_cast<float>(x);
        const float grating = templates.empty() ? cfg.grating_amplitude * std::sin(ky * fy + kx * fx + phase) : 0.0f;
        float clutter[3] = {0.0f, 0.0f, 0.0f};
        for (const auto& b : shape) {
          const float w = std::exp(-((fy - b.cy) * (fy - b.cy) + (fx - b.cx) * (fx - b.cx)) / (2.0f * b.sigma * b.sigma));
          for (int ch = 0; ch < 3; ++ch) clutter[ch] += w * b.color[ch];
        }
        for (const auto& b : blobs) {
          const float w = std::exp(-((fy - b.cy) * (fy - b.cy) + (fx - b.cx) * (fx - b.cx)) / (2.0f * b.sigma * b.sigma));
          for (int ch = 0; ch < 3; ++ch) clutter[ch] += w * b.color[ch];
        }
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const float v = base + grating + clutter[ch] + cfg.noise_std * rng.normal();
          img[(ch * r + y) * r + x] = std::clamp(v, 0.0f, 1.0f);
        }
      }
  }
  return d;
}

/// Stratified split: `fraction` of every class goes to the second part.
/// Deterministic given the seed; the parts are disjoint and cover all rows.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const std::vector<int>& labels,
                                                                                      double fraction,
                                                                                      std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("stratified_split: fraction outside [0,1]");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> keep, taken;
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx);
    const auto n = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    taken.insert(taken.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
    keep.insert(keep.end(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end());
  }
  std::sort(keep.begin(), keep.end());
  std::sort(taken.begin(), taken.end());
  return {keep, taken};
}

/// Balanced stratified subset of `count` rows (or all when count >= size).
inline Dataset stratified_subset(const Dataset& d, std::size_t count, std::uint64_t seed) {
  if (count >= d.size()) return d;
  auto [rest, picked] = stratified_split(d.labels, static_cast<double>(count) / static_cast<double>(d.size()), seed);
  return d.subset(picked);
}

/// Shuffled index batches for one epoch; a trailing batch smaller than
/// `min_batch` is dropped.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng,
                                                           std::size_t min_batch = 2) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch_size) {
    const std::size_t e = std::min(n, s + batch_size);
    if (e - s < min_batch) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

}  // namespace acl

#endif  // ACL_DATASET_HPP
