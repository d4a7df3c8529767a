#ifndef ACL_MODEL_HPP
#define ACL_MODEL_HPP

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "acl/ops.hpp"
#include "acl/rng.hpp"

namespace acl {

/// Which batch-norm set a forward pass reads and updates.
enum class BranchMode { Standard = 0, Adversarial = 1 };

inline const char* branch_name(BranchMode b) { return b == BranchMode::Standard ? "std" : "adv"; }

inline BranchMode parse_branch(const std::string& s) {
  if (s == "std" || s == "standard") return BranchMode::Standard;
  if (s == "adv" || s == "adversarial") return BranchMode::Adversarial;
  throw std::invalid_argument("unknown BN branch '" + s + "' (expected std|adv)");
}

struct EncoderConfig {
  std::size_t in_channels = 3;
  std::size_t resolution = 16;
  std::vector<std::size_t> widths{16, 32, 32, 64};  // one conv block per entry
  std::size_t proj_dim = 32;
  std::size_t num_classes = 2;
  bool dual_bn = true;
  float bn_momentum = 0.1f;
  float bn_eps = 1e-5f;

  std::size_t num_blocks() const { return widths.size(); }
  std::size_t embed_dim() const { return widths.empty() ? 0 : widths.back(); }

  void validate() const {
    if (in_channels == 0 || resolution == 0 || widths.empty() || proj_dim == 0 || num_classes == 0) {
      throw std::invalid_argument("EncoderConfig: all extents must be >= 1");
    }
    for (auto w : widths) {
      if (w == 0) throw std::invalid_argument("EncoderConfig: zero channel width");
    }
    if (!(bn_momentum > 0.0f && bn_momentum <= 1.0f) || !(bn_eps > 0.0f)) {
      throw std::invalid_argument("EncoderConfig: invalid batch-norm momentum/eps");
    }
  }

  /// Plain conv stack with the stage widths of ResNet-18, for users with
  /// the compute budget for 32px inputs.
  static EncoderConfig resnet18_shape(std::size_t classes = 10) {
    EncoderConfig c;
    c.resolution = 32;
    c.widths = {64, 64, 128, 256, 512};
    c.proj_dim = 128;
    c.num_classes = classes;
    return c;
  }
};

struct BnParams {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
};

/// Batch normalization with either one shared parameter/statistics set or
/// one set per branch. Forward passes touch only the selected set.
class DualBatchNorm {
 public:
  DualBatchNorm() = default;
  DualBatchNorm(std::size_t channels, bool dual, float momentum = 0.1f, float eps = 1e-5f)
      : channels_(channels), momentum_(momentum), eps_(eps) {
    const std::size_t sets = dual ? 2 : 1;
    for (std::size_t s = 0; s < sets; ++s) {
      sets_.push_back(BnParams{Tensor({channels}, 1.0f, true), Tensor({channels}, 0.0f, true),
                               Tensor({channels}, 0.0f), Tensor({channels}, 1.0f)});
    }
  }

  bool dual() const { return sets_.size() == 2; }
  std::size_t channels() const { return channels_; }
  float momentum() const { return momentum_; }
  float eps() const { return eps_; }

  BnParams& params(BranchMode b) { return sets_[dual() ? static_cast<std::size_t>(b) : 0]; }
  const BnParams& params(BranchMode b) const { return sets_[dual() ? static_cast<std::size_t>(b) : 0]; }
  std::vector<BnParams>& sets() { return sets_; }
  const std::vector<BnParams>& sets() const { return sets_; }

  /// training: normalize with batch statistics. track_stats: also fold them
  /// into the running estimates (ignored in inference mode).
  Tensor forward(const Tensor& x, BranchMode branch, bool training, bool track_stats = true) {
    if (x.rank() < 2 || x.dim(1) != channels_) {
      throw ShapeError("DualBatchNorm: expected " + std::to_string(channels_) + " channels, got input " +
                       shape_str(x.shape()));
    }
    BnParams& p = params(branch);
    if (!training) {
      return batch_norm_eval(x, p.gamma, p.beta, p.running_mean.values(), p.running_var.values(), eps_);
    }
    BatchMoments m;
    Tensor y = batch_norm_train(x, p.gamma, p.beta, eps_, &m);
    if (!track_stats) return y;
    const float unbias = m.count > 1 ? static_cast<float>(m.count) / static_cast<float>(m.count - 1) : 1.0f;
    auto rm = p.running_mean.values();
    auto rv = p.running_var.values();
    for (std::size_t c = 0; c < channels_; ++c) {
      rm[c] = (1.0f - momentum_) * rm[c] + momentum_ * m.mean[c];
      rv[c] = std::max((1.0f - momentum_) * rv[c] + momentum_ * m.var[c] * unbias,
                       std::numeric_limits<float>::min());
    }
    return y;
  }

  /// Keeps only the chosen branch's set.
  void collapse_to(BranchMode b) {
    BnParams keep = params(b);
    sets_.assign(1, keep);
  }

  DualBatchNorm clone() const {
    DualBatchNorm out;
    out.channels_ = channels_;
    out.momentum_ = momentum_;
    out.eps_ = eps_;
    for (const auto& s : sets_) {
      out.sets_.push_back(BnParams{s.gamma.detach().set_requires_grad(true), s.beta.detach().set_requires_grad(true),
                                   s.running_mean.detach(), s.running_var.detach()});
    }
    return out;
  }

 private:
  std::size_t channels_ = 0;
  float momentum_ = 0.1f;
  float eps_ = 1e-5f;
  std::vector<BnParams> sets_;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Encoder f (conv-BN-relu blocks + global average pool), projection head g
/// (linear-relu-linear) and linear classifier. Convolution and linear weights
/// are shared by both branches; only batch-norm sets differ.
class Model {
 public:
  Model(EncoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    Rng rng(seed);
    std::size_t cin = cfg_.in_channels;
    for (std::size_t b = 0; b < cfg_.num_blocks(); ++b) {
      const std::size_t cout = cfg_.widths[b];
      conv_.push_back(he_normal({cout, cin, 3, 3}, cin * 9, rng));
      bn_.emplace_back(cout, cfg_.dual_bn, cfg_.bn_momentum, cfg_.bn_eps);
      cin = cout;
    }
    const std::size_t d = cfg_.embed_dim();
    head_w1_ = he_normal({d, d}, d, rng);
    head_b1_ = Tensor({d}, 0.0f, true);
    head_w2_ = he_normal({d, cfg_.proj_dim}, d, rng);
    head_b2_ = Tensor({cfg_.proj_dim}, 0.0f, true);
    reset_classifier();
  }

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Independent deep copy.
  Model clone() const {
    Model out;
    out.cfg_ = cfg_;
    out.seed_ = seed_;
    for (const auto& w : conv_) out.conv_.push_back(copy_param(w));
    for (const auto& b : bn_) out.bn_.push_back(b.clone());
    out.head_w1_ = copy_param(head_w1_);
    out.head_b1_ = copy_param(head_b1_);
    out.head_w2_ = copy_param(head_w2_);
    out.head_b2_ = copy_param(head_b2_);
    out.cls_w_ = copy_param(cls_w_);
    out.cls_b_ = copy_param(cls_b_);
    return out;
  }

  /// Copy whose batch norms keep only `branch`'s set (single-BN network).
  Model single_bn_copy(BranchMode branch) const {
    Model out = clone();
    for (auto& b : out.bn_) b.collapse_to(branch);
    out.cfg_.dual_bn = false;
    return out;
  }

  const EncoderConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  bool dual_bn() const { return cfg_.dual_bn; }

  /// images [N, C, H, W] in [0,1] -> features [N, d].
  Tensor encode(const Tensor& x, BranchMode branch, bool training, bool track_stats = true) {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.resolution ||
        x.dim(3) != cfg_.resolution) {
      throw ShapeError("encode: expected input (N," + std::to_string(cfg_.in_channels) + "," +
                       std::to_string(cfg_.resolution) + "," + std::to_string(cfg_.resolution) + "), got " +
                       shape_str(x.shape()));
    }
    Tensor h = x;
    for (std::size_t b = 0; b < conv_.size(); ++b) {
      h = conv2d(h, conv_[b], b == 0 ? 1 : 2, 1);
      h = bn_[b].forward(h, branch, training, track_stats);
      h = relu(h);
    }
    return global_avg_pool(h);
  }

  /// features [N, d] -> projections [N, p]; not normalized.
  Tensor project(const Tensor& features) const {
    check_features("project", features);
    return linear(relu(linear(features, head_w1_, head_b1_)), head_w2_, head_b2_);
  }

  /// features [N, d] -> logits [N, C].
  Tensor classify(const Tensor& features) const {
    check_features("classify", features);
    return linear(features, cls_w_, cls_b_);
  }

  Tensor logits(const Tensor& x, BranchMode branch, bool training) { return classify(encode(x, branch, training)); }

  void reset_classifier() {
    cls_w_ = Tensor({cfg_.embed_dim(), cfg_.num_classes}, 0.0f, true);
    cls_b_ = Tensor({cfg_.num_classes}, 0.0f, true);
  }

  std::vector<DualBatchNorm>& batch_norms() { return bn_; }
  const std::vector<DualBatchNorm>& batch_norms() const { return bn_; }

  /// Learnable tensors of the encoder: conv weights and every BN gamma/beta.
  std::vector<Tensor> encoder_parameters() const {
    std::vector<Tensor> out(conv_.begin(), conv_.end());
    for (const auto& b : bn_)
      for (const auto& s : b.sets()) {
        out.push_back(s.gamma);
        out.push_back(s.beta);
      }
    return out;
  }
  std::vector<Tensor> head_parameters() const { return {head_w1_, head_b1_, head_w2_, head_b2_}; }
  std::vector<Tensor> classifier_parameters() const { return {cls_w_, cls_b_}; }

  std::vector<Tensor> parameters() const {
    auto out = encoder_parameters();
    for (auto& t : head_parameters()) out.push_back(t);
    for (auto& t : classifier_parameters()) out.push_back(t);
    return out;
  }

  /// Every persistent tensor (parameters and running statistics) by name.
  std::vector<NamedTensor> state() const {
    std::vector<NamedTensor> out;
    for (std::size_t b = 0; b < conv_.size(); ++b) {
      const std::string block = "enc.block" + std::to_string(b);
      out.emplace_back(block + ".conv.weight", conv_[b]);
      const auto& sets = bn_[b].sets();
      for (std::size_t s = 0; s < sets.size(); ++s) {
        const std::string prefix = block + ".bn." + set_name(s, sets.size()) + ".";
        out.emplace_back(prefix + "gamma", sets[s].gamma);
        out.emplace_back(prefix + "beta", sets[s].beta);
        out.emplace_back(prefix + "running_mean", sets[s].running_mean);
        out.emplace_back(prefix + "running_var", sets[s].running_var);
      }
    }
    out.emplace_back("head.fc1.weight", head_w1_);
    out.emplace_back("head.fc1.bias", head_b1_);
    out.emplace_back("head.fc2.weight", head_w2_);
    out.emplace_back("head.fc2.bias", head_b2_);
    out.emplace_back("cls.weight", cls_w_);
    out.emplace_back("cls.bias", cls_b_);
    return out;
  }

  /// Copies values from `tensors` into the matching state entries. Every
  /// state entry must be present with the same shape.
  void load_state(const std::vector<NamedTensor>& tensors) {
    for (auto& [name, dst] : state()) {
      const Tensor* src = nullptr;
      for (const auto& [n, t] : tensors) {
        if (n == name) {
          src = &t;
          break;
        }
      }
      if (!src) throw std::invalid_argument("load_state: missing tensor '" + name + "'");
      if (src->shape() != dst.shape()) {
        throw ShapeError("load_state: tensor '" + name + "' has shape " + shape_str(src->shape()) + ", expected " +
                         shape_str(dst.shape()));
      }
      std::copy(src->values().begin(), src->values().end(), dst.values().begin());
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : parameters()) n += t.numel();
    return n;
  }

  void clear_grads() {
    for (auto& t : parameters()) t.clear_grad();
  }

 private:
  Model() = default;

  static std::string set_name(std::size_t s, std::size_t count) {
    if (count == 1) return "shared";
    return s == 0 ? "std" : "adv";
  }

  static Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape), 0.0f, true);
    const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (auto& v : t.values()) v = stddev * rng.normal();
    return t;
  }

  static Tensor copy_param(const Tensor& t) { return t.detach().set_requires_grad(true); }

  void check_features(const char* op, const Tensor& f) const {
    if (f.rank() != 2 || f.dim(1) != cfg_.embed_dim()) {
      throw ShapeError(std::string(op) + ": expected features (N," + std::to_string(cfg_.embed_dim()) + "), got " +
                       shape_str(f.shape()));
    }
  }

  EncoderConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<Tensor> conv_;
  std::vector<DualBatchNorm> bn_;
  Tensor head_w1_, head_b1_, head_w2_, head_b2_;
  Tensor cls_w_, cls_b_;
};

}  // namespace acl

#endif  // ACL_MODEL_HPP
