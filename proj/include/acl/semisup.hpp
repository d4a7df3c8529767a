#ifndef ACL_SEMISUP_HPP
#define ACL_SEMISUP_HPP

#include <filesystem>
#include <optional>

#include "acl/finetune.hpp"
#include "acl/io.hpp"
#include "acl/pretrain.hpp"

namespace acl {

struct SemiSupConfig {
  double label_fraction = 0.1;
  float mix_alpha = 0.5f;          // CE vs distillation on labelled rows
  float temperature = 2.0f;        // distillation temperature T
  float consistency_weight = 6.0f; // 1/lambda on the clean/adversarial KL
  AttackConfig attack = AttackConfig::pretraining();
  AttackConfig eval_attack = AttackConfig::evaluation();
  BranchMode bn_branch = BranchMode::Adversarial;
  std::size_t pseudo_epochs = 30;  // step ii
  std::size_t train_epochs = 15;   // step iii
  std::size_t batch_size = 64;
  float lr = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw std::invalid_argument("SemiSupConfig: label_fraction must be in (0,1]");
    if (!(mix_alpha >= 0.0f && mix_alpha <= 1.0f)) throw std::invalid_argument("SemiSupConfig: mix alpha must be in [0,1]");
    if (!(temperature > 0.0f)) throw std::invalid_argument("SemiSupConfig: temperature must be positive");
    if (!(consistency_weight >= 0.0f)) throw std::invalid_argument("SemiSupConfig: consistency weight must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("SemiSupConfig: batch_size must be >= 2");
    attack.validate();
    eval_attack.validate();
  }

  std::vector<std::size_t> decay_epochs(std::size_t epochs) const {
    return {epochs * 3 / 5, epochs * 4 / 5};
  }
};

/// Soft logits of the step-ii model for one training example. Only
/// labelled examples carry a label.
struct PseudoLabel {
  std::uint32_t index = 0;
  std::optional<std::int32_t> label;
  std::vector<float> logits;
};

/// Binary layout (little-endian): "ACLP", u32 version, u32 classes,
/// u32 count, then per record u32 index, i32 label (-1 if unlabelled),
/// f32 logits[classes].
struct PseudoLabelStore {
  static constexpr std::uint32_t kVersion = 1;

  std::size_t num_classes = 0;
  std::vector<PseudoLabel> entries;  // entries[i].index == i

  std::size_t labeled_count() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const PseudoLabel& e) { return e.label.has_value(); }));
  }
  std::size_t unlabeled_count() const { return entries.size() - labeled_count(); }

  std::vector<unsigned char> serialize() const {
    ByteWriter w;
    w.raw("ACLP");
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(num_classes));
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
      w.u32(e.index);
      w.i32(e.label.value_or(-1));
      for (float v : e.logits) w.f32(v);
    }
    return w.bytes();
  }

  void save(const std::filesystem::path& path) const { atomic_write(path, serialize()); }

  static PseudoLabelStore load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("PseudoLabelStore: cannot open " + path.string());
    ByteReader r(in);
    if (r.raw(4) != "ACLP") throw FormatError("PseudoLabelStore: bad magic (expected ACLP)");
    if (auto v = r.u32(); v != kVersion) throw FormatError("PseudoLabelStore: unsupported version " + std::to_string(v));
    PseudoLabelStore s;
    s.num_classes = r.u32();
    const auto count = r.u32();
    s.entries.resize(count);
    for (auto& e : s.entries) {
      e.index = r.u32();
      const auto label = r.i32();
      if (label >= 0) e.label = label;
      e.logits.resize(s.num_classes);
      for (auto& v : e.logits) {
        v = r.f32();
        if (!std::isfinite(v)) throw FormatError("PseudoLabelStore: non-finite logit for example " + std::to_string(e.index));
      }
    }
    if (!r.at_end()) throw FormatError("PseudoLabelStore: trailing bytes after offset " + std::to_string(r.offset()));
    return s;
  }
};

/// T^2-free distillation term: cross-entropy between target probabilities
/// and log_softmax(logits / T), per row.
inline Tensor distill_rows(const Tensor& logits, const Tensor& target_probs, float temperature) {
  if (!(temperature > 0.0f)) throw std::invalid_argument("distill: temperature must be positive");
  return soft_cross_entropy_rows(scale(logits, 1.0f / temperature), target_probs);
}

/// Per-batch semi-supervised objective given clean and adversarial logits:
///   [ a*CE(adv_l, y_l) + (1-a) T^2 distill(adv_l, p_l) + T^2 distill(adv_u, p_u)
///     + (1/lambda) KL(p(x) || p(adv)) ] / (N_l + N_u)
/// where every term is summed over its rows.
inline Tensor semisup_objective(const Tensor& clean_logits, const Tensor& adv_logits,
                                const std::vector<const PseudoLabel*>& rows, const SemiSupConfig& cfg) {
  if (!(cfg.temperature > 0.0f)) throw std::invalid_argument("semisup: temperature must be positive");
  const std::size_t n = rows.size(), c = clean_logits.dim(1);
  if (clean_logits.dim(0) != n || adv_logits.shape() != clean_logits.shape()) {
    throw ShapeError("semisup: logits " + shape_str(adv_logits.shape()) + " do not match " + std::to_string(n) + " rows");
  }
  const float t = cfg.temperature, t2 = t * t;
  std::vector<int> labels(n, 0);
  Tensor ce_weight({n}), distill_weight({n});
  Tensor targets({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const PseudoLabel& e = *rows[i];
    if (e.logits.size() != c) throw ShapeError("semisup: pseudo-label width mismatch");
    float mx = *std::max_element(e.logits.begin(), e.logits.end());
    float z = 0.0f;
    for (std::size_t k = 0; k < c; ++k) z += std::exp((e.logits[k] - mx) / t);
    for (std::size_t k = 0; k < c; ++k) targets.values()[i * c + k] = std::exp((e.logits[k] - mx) / t) / z;
    if (e.label) {
      labels[i] = *e.label;
      ce_weight.values()[i] = cfg.mix_alpha;
      distill_weight.values()[i] = (1.0f - cfg.mix_alpha) * t2;
    } else {
      distill_weight.values()[i] = t2;
    }
  }
  Tensor total = add(mul(cross_entropy_rows(adv_logits, labels), ce_weight),
                     mul(distill_rows(adv_logits, targets, t), distill_weight));
  if (cfg.consistency_weight != 0.0f) total = add(total, scale(kl_rows(clean_logits, adv_logits), cfg.consistency_weight));
  return scale(sum(total), 1.0f / static_cast<float>(n));
}

/// Attack (KL consistency PGD), forward passes and the objective.
inline Tensor semisup_loss(Model& model, const Tensor& x, const std::vector<const PseudoLabel*>& rows,
                           const SemiSupConfig& cfg, Rng& rng) {
  const Tensor adv = kl_attack(model, x, cfg.bn_branch, cfg.attack, rng);
  const Tensor clean_logits = model.logits(x, cfg.bn_branch, true);
  const Tensor adv_logits = model.logits(adv, cfg.bn_branch, true);
  return semisup_objective(clean_logits, adv_logits, rows, cfg);
}

struct PseudoLabelResult {
  PseudoLabelStore store;
  double pseudo_accuracy = 0.0;  // argmax agreement with held-back labels (unlabelled rows only)
  double labeled_accuracy = 0.0; // training accuracy on the labelled subset
};

/// Step ii: plain CE training on the labelled subset starting from the
/// pretrained encoder, then soft logits for every example. `data.labels` is
/// read for labelled rows and, separately, for reporting pseudo-label
/// accuracy; it never enters the store for unlabelled rows.
inline PseudoLabelResult generate_pseudo_labels(const Model& pretrained, const Dataset& data,
                                                const std::vector<std::size_t>& labeled, const SemiSupConfig& cfg) {
  cfg.validate();
  if (labeled.empty()) throw std::invalid_argument("generate_pseudo_labels: empty labelled subset");
  const Dataset train = data.subset(labeled);
  Model model = downstream_model(pretrained, cfg.bn_branch);
  Sgd opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  Rng rng(cfg.seed ^ 0x51ULL);
  const auto decay = cfg.decay_epochs(cfg.pseudo_epochs);
  for (std::size_t epoch = 0; epoch < cfg.pseudo_epochs; ++epoch) {
    const float lr = step_lr(cfg.lr, epoch, decay, 0.1f);
    for (const auto& idx : epoch_batches(train.size(), cfg.batch_size, rng)) {
      opt.zero_grad();
      Tensor loss = cross_entropy(model.logits(train.batch(idx), cfg.bn_branch, true), train.labels_of(idx));
      if (!std::isfinite(loss.item())) throw NumericError("generate_pseudo_labels: non-finite loss");
      backward(loss);
      opt.step(lr);
    }
  }

  PseudoLabelResult out;
  out.store.num_classes = data.num_classes;
  out.store.entries.resize(data.size());
  std::vector<char> is_labeled(data.size(), 0);
  for (auto i : labeled) is_labeled.at(i) = 1;
  std::size_t unlabeled = 0, agree = 0;
  NoGradGuard no_grad;
  for (std::size_t s = 0; s < data.size(); s += detail::kEvalChunk) {
    std::vector<std::size_t> idx(std::min(detail::kEvalChunk, data.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    const Tensor logits = model.logits(data.batch(idx), cfg.bn_branch, false);
    const auto pred = argmax_rows(logits);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      PseudoLabel& e = out.store.entries[idx[k]];
      e.index = static_cast<std::uint32_t>(idx[k]);
      e.logits.assign(logits.values().begin() + static_cast<std::ptrdiff_t>(k * data.num_classes),
                      logits.values().begin() + static_cast<std::ptrdiff_t>((k + 1) * data.num_classes));
      if (is_labeled[idx[k]]) {
        e.label = data.labels[idx[k]];
      } else {
        ++unlabeled;
        agree += pred[k] == data.labels[idx[k]] ? 1 : 0;
      }
    }
  }
  out.pseudo_accuracy = unlabeled ? static_cast<double>(agree) / static_cast<double>(unlabeled) : 1.0;
  out.labeled_accuracy = standard_accuracy(model, train, cfg.bn_branch);
  return out;
}

/// Same images with every label replaced by -1.
inline Dataset without_labels(const Dataset& d) {
  Dataset out = d;
  std::fill(out.labels.begin(), out.labels.end(), -1);
  return out;
}

/// Step iii: adversarial training of the whole network from the pretrained
/// model on all images, supervised only through the store.
inline Model semisup_train(const Model& pretrained, const Dataset& images, const PseudoLabelStore& store,
                           const SemiSupConfig& cfg, const std::filesystem::path& metrics_csv = {}) {
  cfg.validate();
  if (store.entries.size() != images.size()) throw std::invalid_argument("semisup_train: store does not cover the image set");
  Model model = downstream_model(pretrained, cfg.bn_branch);
  Sgd opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  Rng rng(cfg.seed ^ 0x53ULL);
  CsvLog csv(metrics_csv, {"epoch", "loss"});
  const auto decay = cfg.decay_epochs(cfg.train_epochs);
  for (std::size_t epoch = 0; epoch < cfg.train_epochs; ++epoch) {
    const float lr = step_lr(cfg.lr, epoch, decay, 0.1f);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& idx : epoch_batches(images.size(), cfg.batch_size, rng)) {
      std::vector<const PseudoLabel*> rows;
      for (auto i : idx) rows.push_back(&store.entries.at(i));
      opt.zero_grad();
      Tensor loss = semisup_loss(model, images.batch(idx), rows, cfg, rng);
      if (!std::isfinite(loss.item())) throw NumericError("semisup_train: non-finite loss at epoch " + std::to_string(epoch + 1));
      loss_sum += loss.item();
      ++batches;
      backward(loss);
      opt.step(lr);
    }
    csv.row({CsvLog::cell(epoch + 1), CsvLog::cell(batches ? loss_sum / static_cast<double>(batches) : 0.0)});
  }
  return model;
}

struct SemiSupResult {
  Model model;
  PseudoLabelResult pseudo;
  EvalReport report;
};

/// Steps ii and iii plus evaluation, from an already pretrained model.
inline SemiSupResult run_semisup_from(const Model& pretrained, const Dataset& train, const Dataset& test,
                                      const SemiSupConfig& cfg, const std::filesystem::path& out_dir = {}) {
  cfg.validate();
  auto [rest, labeled] = stratified_split(train.labels, cfg.label_fraction, cfg.seed ^ 0x1ABE1ULL);
  PseudoLabelResult pseudo = generate_pseudo_labels(pretrained, train, labeled, cfg);
  if (!out_dir.empty()) pseudo.store.save(out_dir / "pseudo_labels.bin");
  Model model = semisup_train(pretrained, without_labels(train), pseudo.store, cfg,
                              out_dir.empty() ? std::filesystem::path{} : out_dir / "semisup_metrics.csv");
  EvalReport report = evaluate(model, test, cfg.bn_branch, cfg.eval_attack, cfg.seed);
  return {std::move(model), std::move(pseudo), report};
}

/// Full three-step routine: DS pretraining on all training images, pseudo
/// labels, then adversarial training over all data.
inline SemiSupResult run_semisup_pipeline(const Dataset& train, const Dataset& test, const EncoderConfig& encoder,
                                          const PretrainConfig& pretrain, const SemiSupConfig& cfg,
                                          const std::filesystem::path& out_dir = {}) {
  PretrainConfig p = pretrain;
  p.variant = Variant::DS;
  PretrainOutputs outs;
  if (!out_dir.empty()) {
    outs.metrics_csv = out_dir / "pretrain_metrics.csv";
    outs.checkpoint = out_dir / "pretrain.ckpt";
  }
  PretrainResult pre = run_pretraining(train, p, Model(encoder, p.seed), outs);
  return run_semisup_from(pre.model, train, test, cfg, out_dir);
}

}  // namespace acl

#endif  // ACL_SEMISUP_HPP
