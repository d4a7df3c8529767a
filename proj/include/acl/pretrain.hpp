#ifndef ACL_PRETRAIN_HPP
#define ACL_PRETRAIN_HPP

#include <filesystem>
#include <optional>
#include <string>

#include "acl/adversary.hpp"
#include "acl/augment.hpp"
#include "acl/checkpoint.hpp"
#include "acl/contrastive.hpp"
#include "acl/dataset.hpp"
#include "acl/io.hpp"
#include "acl/model.hpp"
#include "acl/optim.hpp"

namespace acl {

/// S2S: standard vs standard views (SimCLR). A2A: both views attacked.
/// A2S: attacked view i vs standard view j. DS: S2S term + weight * A2A term.
enum class Variant { S2S, A2A, A2S, DS };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::S2S: return "s2s";
    case Variant::A2A: return "a2a";
    case Variant::A2S: return "a2s";
    case Variant::DS: return "ds";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "s2s") return Variant::S2S;
  if (s == "a2a") return Variant::A2A;
  if (s == "a2s") return Variant::A2S;
  if (s == "ds") return Variant::DS;
  throw std::invalid_argument("unknown variant '" + s + "' (expected s2s|a2a|a2s|ds)");
}

struct PretrainConfig {
  Variant variant = Variant::DS;
  float ds_weight = 1.0f;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  float base_lr = 0.5f;  // at batch 512, scaled linearly
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  ContrastiveConfig contrastive;
  AttackConfig attack = AttackConfig::pretraining();
  AugmentConfig augment = AugmentConfig::for_resolution(16);
  bool bn_training = true;      // batch statistics in the loss forward passes
  bool attack_batch_stats = false;  // attack normalizes with batch statistics instead of running ones
  std::uint64_t seed = 0;

  float lr() const { return base_lr * static_cast<float>(batch_size) / 512.0f; }

  void validate() const {
    if (!(ds_weight >= 0.0f)) throw std::invalid_argument("PretrainConfig: ds_weight must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("PretrainConfig: batch_size must be >= 2");
    contrastive.validate();
    attack.validate();
    augment.validate();
  }
};

/// Clean images, their two standard views and (when the variant attacks)
/// the adversarial views. Views are interleaved: row 2k is view i of image
/// k, row 2k+1 view j. For A2S only the even rows are perturbed.
struct ViewBatch {
  Tensor clean;
  Tensor views;
  std::optional<Tensor> adversarial;

  std::size_t size() const { return clean.dim(0); }
};

inline ViewBatch make_view_batch(const Dataset& data, const std::vector<std::size_t>& idx, const AugmentConfig& augment,
                                 Rng& rng) {
  ViewBatch b;
  b.clean = data.batch(idx);
  const std::size_t n = data.image_numel();
  std::vector<float> views(2 * idx.size() * n);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto [vi, vj] = sample_view_pair(data.image(idx[k]), augment, rng);
    std::copy(vi.values().begin(), vi.values().end(), views.begin() + static_cast<std::ptrdiff_t>(2 * k * n));
    std::copy(vj.values().begin(), vj.values().end(), views.begin() + static_cast<std::ptrdiff_t>((2 * k + 1) * n));
  }
  b.views = Tensor({2 * idx.size(), data.channels, data.height, data.width}, std::move(views));
  return b;
}

/// l_NT of one stream: both views through the same BN branch.
inline Tensor contrastive_term(Model& model, const Tensor& views, BranchMode branch, bool training, float temperature) {
  return nt_xent(model.project(model.encode(views, branch, training)), temperature);
}

/// l_NT of the mixed A2S pair: attacked view i through the adversarial
/// branch, clean view j through the standard branch.
inline Tensor mixed_contrastive_term(Model& model, const Tensor& adv_i, const Tensor& std_j, bool training,
                                     float temperature) {
  const Tensor zi = model.project(model.encode(adv_i, BranchMode::Adversarial, training));
  const Tensor zj = model.project(model.encode(std_j, BranchMode::Standard, training));
  return nt_xent(interleave_rows(zi, zj), temperature);
}

/// Fills batch.adversarial for variants that need it. Attacks never move
/// running statistics.
inline void generate_adversarial_views(Model& model, ViewBatch& batch, const PretrainConfig& cfg, Rng& rng) {
  const float tau = cfg.contrastive.temperature;
  switch (cfg.variant) {
    case Variant::S2S:
      batch.adversarial.reset();
      return;
    case Variant::A2A:
    case Variant::DS:
      batch.adversarial = joint_contrastive_attack(model, batch.views, tau, cfg.attack, rng, BranchMode::Adversarial,
                                                    cfg.attack_batch_stats);
      return;
    case Variant::A2S: {
      Tensor view_i, view_j;
      {
        NoGradGuard no_grad;
        view_i = rows_with_parity(batch.views, 0).detach();
        view_j = rows_with_parity(batch.views, 1).detach();
      }
      Tensor zj;
      {
        NoGradGuard no_grad;
        zj = model.project(model.encode(view_j, BranchMode::Standard, cfg.attack_batch_stats, false)).detach();
      }
      auto loss = [&](const Tensor& vi) {
        return nt_xent(
            interleave_rows(model.project(model.encode(vi, BranchMode::Adversarial, cfg.attack_batch_stats, false)), zj), tau);
      };
      Tensor adv_i = pgd_attack(loss, view_i, cfg.attack, rng);
      NoGradGuard no_grad;
      batch.adversarial = interleave_rows(adv_i, view_j).detach();
      return;
    }
  }
}

/// The variant's training loss for a prepared batch.
inline Tensor pretrain_objective(Model& model, const ViewBatch& batch, const PretrainConfig& cfg) {
  const float tau = cfg.contrastive.temperature;
  const bool train = cfg.bn_training;
  auto adversarial = [&]() -> const Tensor& {
    if (!batch.adversarial) throw std::logic_error(std::string("pretrain: variant ") + variant_name(cfg.variant) + " needs adversarial views");
    return *batch.adversarial;
  };
  switch (cfg.variant) {
    case Variant::S2S:
      return contrastive_term(model, batch.views, BranchMode::Standard, train, tau);
    case Variant::A2A:
      return contrastive_term(model, adversarial(), BranchMode::Adversarial, train, tau);
    case Variant::A2S:
      return mixed_contrastive_term(model, rows_with_parity(adversarial(), 0), rows_with_parity(batch.views, 1), train, tau);
    case Variant::DS: {
      const Tensor standard = contrastive_term(model, batch.views, BranchMode::Standard, train, tau);
      const Tensor robust = contrastive_term(model, adversarial(), BranchMode::Adversarial, train, tau);
      return add(standard, scale(robust, cfg.ds_weight));
    }
  }
  throw std::logic_error("pretrain: unknown variant");
}

/// Attack (if any), loss, backward and one SGD step. Returns the loss.
inline float pretrain_step(Model& model, Sgd& opt, ViewBatch& batch, const PretrainConfig& cfg, float lr, Rng& rng) {
  const auto context = [&] {
    return std::string("variant ") + variant_name(cfg.variant) + ", lr " + std::to_string(lr) + ", batch " +
           std::to_string(batch.size());
  };
  Tensor loss;
  try {
    generate_adversarial_views(model, batch, cfg, rng);
    opt.zero_grad();
    loss = pretrain_objective(model, batch, cfg);
  } catch (const NumericError& e) {
    throw NumericError(std::string("pretrain: ") + e.what() + " (" + context() + ")");
  }
  const float value = loss.item();
  if (!std::isfinite(value)) throw NumericError("pretrain: non-finite loss (" + context() + ")");
  backward(loss);
  opt.step(lr);
  return value;
}

struct PretrainEpoch {
  std::size_t epoch;
  float loss;
  float lr;
  double seconds;
};

struct PretrainResult {
  Model model;
  std::vector<PretrainEpoch> epochs;
  std::size_t steps = 0;
};

struct PretrainOutputs {
  std::filesystem::path metrics_csv;  // epoch,variant,loss,lr,wallclock
  std::filesystem::path checkpoint;   // rewritten after every finished epoch
  std::map<std::string, std::string> meta;
};

inline std::map<std::string, std::string> pretrain_meta(const PretrainConfig& cfg, std::size_t epoch) {
  return {{"variant", variant_name(cfg.variant)}, {"epoch", std::to_string(epoch)}, {"seed", std::to_string(cfg.seed)}};
}

/// Runs epochs x batches of pretrain_step on the images of `data` (labels are
/// ignored) with a per-step cosine learning-rate schedule.
inline PretrainResult run_pretraining(const Dataset& data, const PretrainConfig& cfg, Model model,
                                      const PretrainOutputs& out = {}) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("run_pretraining: empty dataset");
  Rng rng(cfg.seed);
  std::vector<Tensor> params = model.encoder_parameters();
  for (auto& t : model.head_parameters()) params.push_back(t);
  Sgd opt(params, cfg.momentum, cfg.weight_decay);

  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  CsvLog log(out.metrics_csv, {"epoch", "variant", "loss", "lr", "wallclock"});
  Stopwatch clock;
  PretrainResult result{std::move(model), {}, 0};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t count = 0;
    float lr = cfg.lr();
    for (const auto& idx : epoch_batches(data.size(), cfg.batch_size, rng)) {
      lr = cosine_lr(cfg.lr(), result.steps, total);
      ViewBatch batch = make_view_batch(data, idx, cfg.augment, rng);
      loss_sum += pretrain_step(result.model, opt, batch, cfg, lr, rng);
      ++count;
      ++result.steps;
    }
    const float mean_loss = count ? static_cast<float>(loss_sum / static_cast<double>(count)) : 0.0f;
    result.epochs.push_back({epoch + 1, mean_loss, lr, clock.seconds()});
    log.row({CsvLog::cell(epoch + 1), variant_name(cfg.variant), CsvLog::cell(mean_loss), CsvLog::cell(lr),
             CsvLog::cell(clock.seconds())});
    if (!out.checkpoint.empty()) {
      auto meta = out.meta;
      for (auto& [k, v] : pretrain_meta(cfg, epoch + 1)) meta[k] = v;
      save_checkpoint(model_checkpoint(result.model, meta), out.checkpoint);
    }
  }
  return result;
}

}  // namespace acl

#endif  // ACL_PRETRAIN_HPP
