#ifndef ACL_CONFIG_HPP
#define ACL_CONFIG_HPP

// JSON mapping for every configuration type, the dataset description used by
// the command-line tool, and the desk-scale preset.
//
// Reading is strict: a key that the target type does not know is a
// ConfigError, so typos never fall back silently to a default. Missing keys
// keep the value already in the object, which lets a file override a preset
// field by field.

#include <initializer_list>
#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "acl/checkpoint.hpp"
#include "acl/finetune.hpp"
#include "acl/pretrain.hpp"
#include "acl/semisup.hpp"

namespace acl {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void require_keys(const nlohmann::json& j, const char* type, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(type) + ": expected a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError(std::string(type) + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& dst) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      // Own structs merge into the current value; everything else is replaced.
      if constexpr (requires { from_json(*it, dst); }) {
        from_json(*it, dst);
      } else {
        dst = it->template get<T>();
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

}  // namespace detail

inline FinetuneMode parse_mode(const std::string& s) {
  if (s == "full") return FinetuneMode::FullFinetune;
  if (s == "linear-standard") return FinetuneMode::LinearStandard;
  if (s == "linear-adversarial") return FinetuneMode::LinearAdversarial;
  throw ConfigError("unknown fine-tuning mode '" + s + "' (expected full|linear-standard|linear-adversarial)");
}

inline std::string mode_key(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::FullFinetune: return "full";
    case FinetuneMode::LinearStandard: return "linear-standard";
    case FinetuneMode::LinearAdversarial: return "linear-adversarial";
  }
  return "?";
}

// Enum adapters: nlohmann picks these up through ADL on the acl namespace.
inline void to_json(nlohmann::json& j, const Variant& v) { j = variant_name(v); }
inline void from_json(const nlohmann::json& j, Variant& v) {
  try {
    v = parse_variant(j.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}
inline void to_json(nlohmann::json& j, const BranchMode& b) { j = branch_name(b); }
inline void from_json(const nlohmann::json& j, BranchMode& b) {
  try {
    b = parse_branch(j.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}
inline void to_json(nlohmann::json& j, const FinetuneMode& m) { j = mode_key(m); }
inline void from_json(const nlohmann::json& j, FinetuneMode& m) { m = parse_mode(j.get<std::string>()); }

inline void to_json(nlohmann::json& j, const SyntheticPattern& p) { j = p == SyntheticPattern::Blobs ? "blobs" : "grating"; }
inline void from_json(const nlohmann::json& j, SyntheticPattern& p) {
  const auto s = j.get<std::string>();
  if (s == "grating") p = SyntheticPattern::Grating;
  else if (s == "blobs") p = SyntheticPattern::Blobs;
  else throw ConfigError("unknown synthetic pattern '" + s + "' (expected grating|blobs)");
}

inline void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"epsilon", c.epsilon}, {"step_size", c.step_size}, {"steps", c.steps},
       {"random_start", c.random_start}, {"low", c.low}, {"high", c.high}};
}
inline void from_json(const nlohmann::json& j, AttackConfig& c) {
  detail::require_keys(j, "attack", {"epsilon", "step_size", "steps", "random_start", "low", "high"});
  detail::read(j, "epsilon", c.epsilon);
  detail::read(j, "step_size", c.step_size);
  detail::read(j, "steps", c.steps);
  detail::read(j, "random_start", c.random_start);
  detail::read(j, "low", c.low);
  detail::read(j, "high", c.high);
}

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"crop_pad", c.crop_pad},       {"flip_prob", c.flip_prob},     {"brightness_delta", c.brightness_delta},
       {"contrast_lo", c.contrast_lo}, {"contrast_hi", c.contrast_hi}, {"grayscale_prob", c.grayscale_prob},
       {"rng_seed", c.rng_seed}};
}
inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
  detail::require_keys(j, "augment",
                       {"crop_pad", "flip_prob", "brightness_delta", "contrast_lo", "contrast_hi", "grayscale_prob", "rng_seed"});
  detail::read(j, "crop_pad", c.crop_pad);
  detail::read(j, "flip_prob", c.flip_prob);
  detail::read(j, "brightness_delta", c.brightness_delta);
  detail::read(j, "contrast_lo", c.contrast_lo);
  detail::read(j, "contrast_hi", c.contrast_hi);
  detail::read(j, "grayscale_prob", c.grayscale_prob);
  detail::read(j, "rng_seed", c.rng_seed);
}

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"variant", c.variant},
       {"ds_weight", c.ds_weight},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"base_lr", c.base_lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"temperature", c.contrastive.temperature},
       {"attack", c.attack},
       {"augment", c.augment},
       {"bn_training", c.bn_training},
       {"attack_batch_stats", c.attack_batch_stats},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
  detail::require_keys(j, "pretrain",
                       {"variant", "ds_weight", "epochs", "batch_size", "base_lr", "momentum", "weight_decay", "temperature",
                        "attack", "augment", "bn_training", "attack_batch_stats", "seed"});
  detail::read(j, "variant", c.variant);
  detail::read(j, "ds_weight", c.ds_weight);
  detail::read(j, "epochs", c.epochs);
  detail::read(j, "batch_size", c.batch_size);
  detail::read(j, "base_lr", c.base_lr);
  detail::read(j, "momentum", c.momentum);
  detail::read(j, "weight_decay", c.weight_decay);
  detail::read(j, "temperature", c.contrastive.temperature);
  detail::read(j, "attack", c.attack);
  detail::read(j, "augment", c.augment);
  detail::read(j, "bn_training", c.bn_training);
  detail::read(j, "attack_batch_stats", c.attack_batch_stats);
  detail::read(j, "seed", c.seed);
}

inline void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = {{"mode", c.mode},
       {"trades_beta", c.trades_beta},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"decay_epochs", c.decay_epochs},
       {"decay_factor", c.decay_factor},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"bn_branch", c.bn_branch},
       {"attack", c.attack},
       {"eval_attack", c.eval_attack},
       {"val_fraction", c.val_fraction},
       {"evals_per_epoch", c.evals_per_epoch},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  detail::require_keys(j, "finetune",
                       {"mode", "trades_beta", "epochs", "batch_size", "lr", "decay_epochs", "decay_factor", "momentum",
                        "weight_decay", "bn_branch", "attack", "eval_attack", "val_fraction", "evals_per_epoch", "seed"});
  detail::read(j, "mode", c.mode);
  detail::read(j, "trades_beta", c.trades_beta);
  detail::read(j, "epochs", c.epochs);
  detail::read(j, "batch_size", c.batch_size);
  detail::read(j, "lr", c.lr);
  detail::read(j, "decay_epochs", c.decay_epochs);
  detail::read(j, "decay_factor", c.decay_factor);
  detail::read(j, "momentum", c.momentum);
  detail::read(j, "weight_decay", c.weight_decay);
  detail::read(j, "bn_branch", c.bn_branch);
  detail::read(j, "attack", c.attack);
  detail::read(j, "eval_attack", c.eval_attack);
  detail::read(j, "val_fraction", c.val_fraction);
  detail::read(j, "evals_per_epoch", c.evals_per_epoch);
  detail::read(j, "seed", c.seed);
}

inline void to_json(nlohmann::json& j, const SemiSupConfig& c) {
  j = {{"label_fraction", c.label_fraction},
       {"mix_alpha", c.mix_alpha},
       {"temperature", c.temperature},
       {"consistency_weight", c.consistency_weight},
       {"attack", c.attack},
       {"eval_attack", c.eval_attack},
       {"bn_branch", c.bn_branch},
       {"pseudo_epochs", c.pseudo_epochs},
       {"train_epochs", c.train_epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, SemiSupConfig& c) {
  detail::require_keys(j, "semisup",
                       {"label_fraction", "mix_alpha", "temperature", "consistency_weight", "attack", "eval_attack",
                        "bn_branch", "pseudo_epochs", "train_epochs", "batch_size", "lr", "momentum", "weight_decay", "seed"});
  detail::read(j, "label_fraction", c.label_fraction);
  detail::read(j, "mix_alpha", c.mix_alpha);
  detail::read(j, "temperature", c.temperature);
  detail::read(j, "consistency_weight", c.consistency_weight);
  detail::read(j, "attack", c.attack);
  detail::read(j, "eval_attack", c.eval_attack);
  detail::read(j, "bn_branch", c.bn_branch);
  detail::read(j, "pseudo_epochs", c.pseudo_epochs);
  detail::read(j, "train_epochs", c.train_epochs);
  detail::read(j, "batch_size", c.batch_size);
  detail::read(j, "lr", c.lr);
  detail::read(j, "momentum", c.momentum);
  detail::read(j, "weight_decay", c.weight_decay);
  detail::read(j, "seed", c.seed);
}

inline void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"pattern", c.pattern},
       {"num_classes", c.num_classes},
       {"per_class", c.per_class},
       {"resolution", c.resolution},
       {"grating_amplitude", c.grating_amplitude},
       {"period_min", c.period_min},
       {"period_max", c.period_max},
       {"band_gap", c.band_gap},
       {"background_lo", c.background_lo},
       {"background_hi", c.background_hi},
       {"distractors", c.distractors},
       {"distractor_amplitude", c.distractor_amplitude},
       {"noise_std", c.noise_std},
       {"class_blobs", c.class_blobs},
       {"blob_jitter", c.blob_jitter},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  detail::require_keys(j, "synthetic",
                       {"pattern", "num_classes", "per_class", "resolution", "grating_amplitude", "period_min", "period_max",
                        "band_gap", "background_lo", "background_hi", "distractors", "distractor_amplitude", "noise_std",
                        "class_blobs", "blob_jitter", "seed"});
  detail::read(j, "pattern", c.pattern);
  detail::read(j, "num_classes", c.num_classes);
  detail::read(j, "per_class", c.per_class);
  detail::read(j, "resolution", c.resolution);
  detail::read(j, "grating_amplitude", c.grating_amplitude);
  detail::read(j, "period_min", c.period_min);
  detail::read(j, "period_max", c.period_max);
  detail::read(j, "band_gap", c.band_gap);
  detail::read(j, "background_lo", c.background_lo);
  detail::read(j, "background_hi", c.background_hi);
  detail::read(j, "distractors", c.distractors);
  detail::read(j, "distractor_amplitude", c.distractor_amplitude);
  detail::read(j, "noise_std", c.noise_std);
  detail::read(j, "class_blobs", c.class_blobs);
  detail::read(j, "blob_jitter", c.blob_jitter);
  detail::read(j, "seed", c.seed);
}

/// Where the images come from. For "synthetic" the train split uses
/// `synthetic` as given and the test split the same generator with
/// `test_per_class` images per class and a different seed, so the two never
/// share an image. For "cifar-binary" both files are read and optionally cut
/// to a stratified subset of `subset` rows (0 keeps everything).
struct DatasetSpec {
  std::string format = "synthetic";
  std::string train_path;
  std::string test_path;
  std::size_t num_classes = 10;  // cifar-binary only; synthetic uses synthetic.num_classes
  std::size_t subset = 0;
  std::size_t test_subset = 0;
  std::uint64_t split_seed = 0;
  SyntheticConfig synthetic;
  std::size_t test_per_class = 100;

  void validate() const {
    if (format == "synthetic") {
      synthetic.validate();
      if (test_per_class == 0) throw ConfigError("dataset: test_per_class must be >= 1");
    } else if (format == "cifar-binary") {
      if (train_path.empty() || test_path.empty()) throw ConfigError("dataset: cifar-binary needs train_path and test_path");
      if (num_classes == 0 || num_classes > 256) throw ConfigError("dataset: num_classes must be in [1,256]");
    } else {
      throw ConfigError("dataset: unknown format '" + format + "' (expected synthetic|cifar-binary)");
    }
  }

  std::size_t classes() const { return format == "synthetic" ? synthetic.num_classes : num_classes; }
  std::size_t resolution() const { return format == "synthetic" ? synthetic.resolution : 32; }

  Dataset load_train() const {
    validate();
    if (format == "synthetic") return make_synthetic(synthetic);
    return stratified_subset(load_cifar_binary(train_path, num_classes), subset ? subset : SIZE_MAX, split_seed);
  }

  Dataset load_test() const {
    validate();
    if (format == "synthetic") {
      SyntheticConfig t = synthetic;
      t.per_class = test_per_class;
      t.seed = synthetic.seed ^ 0x7E57'0000'0000'0001ULL;
      return make_synthetic(t);
    }
    return stratified_subset(load_cifar_binary(test_path, num_classes), test_subset ? test_subset : SIZE_MAX,
                             split_seed ^ 0x7E57ULL);
  }
};

inline void to_json(nlohmann::json& j, const DatasetSpec& d) {
  j = {{"format", d.format},       {"train_path", d.train_path},   {"test_path", d.test_path},
       {"num_classes", d.num_classes}, {"subset", d.subset},       {"test_subset", d.test_subset},
       {"split_seed", d.split_seed}, {"synthetic", d.synthetic},   {"test_per_class", d.test_per_class}};
}
inline void from_json(const nlohmann::json& j, DatasetSpec& d) {
  detail::require_keys(j, "dataset",
                       {"format", "train_path", "test_path", "num_classes", "subset", "test_subset", "split_seed",
                        "synthetic", "test_per_class"});
  detail::read(j, "format", d.format);
  detail::read(j, "train_path", d.train_path);
  detail::read(j, "test_path", d.test_path);
  detail::read(j, "num_classes", d.num_classes);
  detail::read(j, "subset", d.subset);
  detail::read(j, "test_subset", d.test_subset);
  detail::read(j, "split_seed", d.split_seed);
  detail::read(j, "synthetic", d.synthetic);
  detail::read(j, "test_per_class", d.test_per_class);
}

/// Semi-supervised hyperparameter grid for the search helper.
struct SemiSupGrid {
  std::vector<float> mix_alpha{0.25f, 0.5f, 0.75f};
  std::vector<float> temperature{1.0f, 2.0f, 4.0f};
  std::vector<float> consistency_weight{1.0f, 6.0f};
  double val_fraction = 0.1;
};

inline void to_json(nlohmann::json& j, const SemiSupGrid& g) {
  j = {{"mix_alpha", g.mix_alpha},
       {"temperature", g.temperature},
       {"consistency_weight", g.consistency_weight},
       {"val_fraction", g.val_fraction}};
}
inline void from_json(const nlohmann::json& j, SemiSupGrid& g) {
  detail::require_keys(j, "semisup_grid", {"mix_alpha", "temperature", "consistency_weight", "val_fraction"});
  detail::read(j, "mix_alpha", g.mix_alpha);
  detail::read(j, "temperature", g.temperature);
  detail::read(j, "consistency_weight", g.consistency_weight);
  detail::read(j, "val_fraction", g.val_fraction);
}

/// Everything one command-line run needs. `seed` is the single source of
/// randomness: apply_seed() copies it into every stage before a run.
struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  EncoderConfig encoder;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  FinetuneConfig linear;
  SemiSupConfig semisup;
  SemiSupGrid semisup_grid;
  AttackConfig eval_attack = AttackConfig::evaluation();
  BranchMode eval_branch = BranchMode::Adversarial;
  float noise_sigma = 0.05f;

  RunConfig() {
    linear.mode = FinetuneMode::LinearAdversarial;
    pretrain.augment = AugmentConfig::for_resolution(encoder.resolution);
  }

  void apply_seed() {
    pretrain.seed = seed;
    finetune.seed = seed;
    linear.seed = seed;
    semisup.seed = seed;
  }

  /// Makes the encoder agree with the dataset it will be trained on.
  void fit_encoder_to_data() {
    encoder.resolution = dataset.resolution();
    encoder.num_classes = dataset.classes();
  }

  void validate() const {
    try {
      dataset.validate();
      encoder.validate();
      pretrain.validate();
      finetune.validate();
      linear.validate();
      semisup.validate();
      eval_attack.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (finetune.mode != FinetuneMode::FullFinetune) throw ConfigError("finetune.mode must be full");
    if (linear.mode == FinetuneMode::FullFinetune) throw ConfigError("linear.mode must be a linear protocol");
    if (!(noise_sigma >= 0.0f)) throw ConfigError("noise_sigma must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},           {"dataset", c.dataset},     {"encoder", c.encoder},
       {"pretrain", c.pretrain},   {"finetune", c.finetune},   {"linear", c.linear},
       {"semisup", c.semisup},     {"semisup_grid", c.semisup_grid}, {"eval_attack", c.eval_attack},
       {"eval_branch", c.eval_branch}, {"noise_sigma", c.noise_sigma}};
}
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  detail::require_keys(j, "run",
                       {"seed", "dataset", "encoder", "pretrain", "finetune", "linear", "semisup", "semisup_grid",
                        "eval_attack", "eval_branch", "noise_sigma"});
  detail::read(j, "seed", c.seed);
  detail::read(j, "dataset", c.dataset);
  if (auto it = j.find("encoder"); it != j.end()) {
    detail::require_keys(*it, "encoder",
                         {"in_channels", "resolution", "widths", "proj_dim", "num_classes", "dual_bn", "bn_momentum", "bn_eps"});
    detail::read(j, "encoder", c.encoder);
  }
  detail::read(j, "pretrain", c.pretrain);
  detail::read(j, "finetune", c.finetune);
  detail::read(j, "linear", c.linear);
  detail::read(j, "semisup", c.semisup);
  detail::read(j, "semisup_grid", c.semisup_grid);
  detail::read(j, "eval_attack", c.eval_attack);
  detail::read(j, "eval_branch", c.eval_branch);
  detail::read(j, "noise_sigma", c.noise_sigma);
}

/// Settings that train the default 4-block encoder in minutes on a laptop
/// CPU: a 2-class 16x16 grating set (250 train / 100 test per class),
/// faster-moving BN statistics, crop+flip views only, and a gentler linear
/// probe. Library defaults stay at their full-scale values.
inline RunConfig desk_preset() {
  RunConfig c;
  c.dataset.synthetic.num_classes = 2;
  c.dataset.synthetic.per_class = 250;
  c.dataset.synthetic.resolution = 16;
  c.dataset.synthetic.grating_amplitude = 0.2f;
  c.dataset.synthetic.distractors = 0;
  c.dataset.synthetic.background_lo = 0.5f;
  c.dataset.synthetic.background_hi = 0.5f;
  c.dataset.test_per_class = 100;
  c.fit_encoder_to_data();
  c.encoder.bn_momentum = 0.5f;

  c.pretrain.base_lr = 0.25f;
  c.pretrain.augment = AugmentConfig::for_resolution(16);
  c.pretrain.augment.brightness_delta = 0.0f;
  c.pretrain.augment.contrast_lo = c.pretrain.augment.contrast_hi = 1.0f;
  c.pretrain.augment.grayscale_prob = 0.0f;
  c.pretrain.attack.step_size = c.pretrain.attack.epsilon / 4.0f;

  c.linear.lr = 0.01f;
  // 500 images saturate at 15 epochs; a short run keeps RA off the ceiling.
  c.semisup.train_epochs = 5;
  return c;
}

}  // namespace acl

#endif  // ACL_CONFIG_HPP
