#ifndef ACL_FINETUNE_HPP
#define ACL_FINETUNE_HPP

#include <filesystem>

#include "acl/dataset.hpp"
#include "acl/eval.hpp"
#include "acl/io.hpp"
#include "acl/losses.hpp"
#include "acl/model.hpp"
#include "acl/optim.hpp"

namespace acl {

enum class FinetuneMode { FullFinetune, LinearStandard, LinearAdversarial };

inline const char* mode_name(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::FullFinetune: return "full";
    case FinetuneMode::LinearStandard: return "linear-standard";
    case FinetuneMode::LinearAdversarial: return "linear-adversarial";
  }
  return "?";
}

struct FinetuneConfig {
  float trades_beta = 6.0f;  // 1/lambda
  std::size_t epochs = 15;
  std::size_t batch_size = 64;
  float lr = 0.1f;
  std::vector<std::size_t> decay_epochs{9, 12};
  float decay_factor = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  BranchMode bn_branch = BranchMode::Adversarial;
  AttackConfig attack = AttackConfig::pretraining();      // inner maximization while training
  AttackConfig eval_attack = AttackConfig::evaluation();  // TA/RA reporting
  FinetuneMode mode = FinetuneMode::FullFinetune;
  double val_fraction = 0.1;
  std::size_t evals_per_epoch = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(trades_beta >= 0.0f)) throw std::invalid_argument("FinetuneConfig: trades_beta must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("FinetuneConfig: batch_size must be >= 2");
    for (auto e : decay_epochs) {
      if (epochs > 0 && e >= epochs) throw std::invalid_argument("FinetuneConfig: decay epoch " + std::to_string(e) + " not before epoch count");
    }
    if (evals_per_epoch == 0) throw std::invalid_argument("FinetuneConfig: evals_per_epoch must be >= 1");
    attack.validate();
    eval_attack.validate();
  }
};

/// CE(clean, y) + beta * mean KL(softmax(clean) || softmax(adversarial)).
inline Tensor trades_objective(const Tensor& clean_logits, const Tensor& adv_logits, const std::vector<int>& labels,
                               float beta) {
  return add(cross_entropy(clean_logits, labels), scale(kl_div(clean_logits, adv_logits), beta));
}

/// Perturbation maximizing KL(p(x) || p(x')) with p(x) held fixed; BN in
/// inference mode throughout.
inline Tensor kl_attack(Model& model, const Tensor& x, BranchMode branch, const AttackConfig& attack, Rng& rng) {
  Tensor clean;
  {
    NoGradGuard no_grad;
    clean = model.logits(x, branch, false).detach();
  }
  auto loss = [&](const Tensor& v) { return sum(kl_rows(clean, model.logits(v, branch, false))); };
  return pgd_attack(loss, x, attack, rng);
}

struct TradesOptions {
  float beta = 6.0f;
  AttackConfig attack = AttackConfig::pretraining();
  BranchMode branch = BranchMode::Adversarial;
  bool bn_training = true;
};

/// TRADES loss on a batch; the inner maximization is solved by PGD on the KL
/// term. Differentiable with respect to the model parameters.
inline Tensor trades_loss(Model& model, const Tensor& x, const std::vector<int>& labels, const TradesOptions& opt,
                          Rng& rng) {
  const Tensor adv = kl_attack(model, x, opt.branch, opt.attack, rng);
  const Tensor clean_logits = model.logits(x, opt.branch, opt.bn_training);
  if (opt.beta == 0.0f) return cross_entropy(clean_logits, labels);
  const Tensor adv_logits = model.logits(adv, opt.branch, opt.bn_training);
  return trades_objective(clean_logits, adv_logits, labels, opt.beta);
}

struct FinetuneLog {
  double epoch;  // fractional when evaluated more than once per epoch
  double val_ta;
  double val_ra;
  double loss;
};

struct FinetuneResult {
  Model model;
  EvalReport report;  // on the test set
  std::vector<FinetuneLog> log;
  double best_epoch = 0.0;
};

/// Loads the chosen BN branch into a single-BN network with a zero
/// classifier, the starting point of every downstream protocol.
inline Model downstream_model(const Model& pretrained, BranchMode branch) {
  Model m = pretrained.single_bn_copy(branch);
  m.reset_classifier();
  return m;
}

namespace detail {

inline std::vector<std::size_t> evaluation_points(std::size_t batches, std::size_t evals_per_epoch) {
  std::vector<std::size_t> points;
  for (std::size_t k = 1; k <= evals_per_epoch; ++k) {
    points.push_back(std::max<std::size_t>(1, (batches * k + evals_per_epoch - 1) / evals_per_epoch));
  }
  points.erase(std::unique(points.begin(), points.end()), points.end());
  return points;
}

}  // namespace detail

/// TRADES fine-tuning of encoder and classifier. Model selection keeps the
/// snapshot with the best held-out validation RA (ties: TA, then latest).
inline FinetuneResult adversarial_finetune(const Model& pretrained, const Dataset& train, const Dataset& test,
                                           const FinetuneConfig& cfg, const std::filesystem::path& metrics_csv = {}) {
  cfg.validate();
  if (cfg.mode != FinetuneMode::FullFinetune) throw std::invalid_argument("adversarial_finetune: mode must be FullFinetune");
  if (pretrained.config().in_channels != train.channels || pretrained.config().resolution != train.height ||
      pretrained.config().num_classes != train.num_classes) {
    throw std::invalid_argument("adversarial_finetune: checkpoint incompatible with dataset");
  }
  auto [fit_idx, val_idx] = stratified_split(train.labels, cfg.val_fraction, cfg.seed ^ 0x7A11ULL);
  const Dataset fit = train.subset(fit_idx);
  const Dataset val = val_idx.empty() ? fit : train.subset(val_idx);

  Model model = downstream_model(pretrained, cfg.bn_branch);
  Sgd opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  Rng rng(cfg.seed);
  CsvLog csv(metrics_csv, {"epoch", "ta", "ra", "loss"});
  TradesOptions trades{cfg.trades_beta, cfg.attack, cfg.bn_branch, true};

  FinetuneResult result{model.clone(), {}, {}, 0.0};
  double best_ra = -1.0, best_ta = -1.0;
  auto consider = [&](double epoch, double loss) {
    const double ta = standard_accuracy(model, val, cfg.bn_branch);
    const double ra = robust_accuracy(model, val, cfg.bn_branch, cfg.eval_attack, cfg.seed);
    result.log.push_back({epoch, ta, ra, loss});
    csv.row({CsvLog::cell(epoch), CsvLog::cell(ta), CsvLog::cell(ra), CsvLog::cell(loss)});
    if (ra > best_ra || (ra == best_ra && ta >= best_ta)) {
      best_ra = ra;
      best_ta = ta;
      result.model = model.clone();
      result.best_epoch = epoch;
    }
  };
  consider(0.0, 0.0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = step_lr(cfg.lr, epoch, cfg.decay_epochs, cfg.decay_factor);
    const auto batches = epoch_batches(fit.size(), cfg.batch_size, rng);
    const auto points = detail::evaluation_points(batches.size(), cfg.evals_per_epoch);
    double loss_sum = 0.0;
    std::size_t done = 0, next_point = 0;
    for (const auto& idx : batches) {
      opt.zero_grad();
      Tensor loss = trades_loss(model, fit.batch(idx), fit.labels_of(idx), trades, rng);
      if (!std::isfinite(loss.item())) throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch + 1));
      loss_sum += loss.item();
      backward(loss);
      opt.step(lr);
      ++done;
      if (next_point < points.size() && done == points[next_point]) {
        const double at = static_cast<double>(epoch) + static_cast<double>(done) / static_cast<double>(batches.size());
        consider(at, loss_sum / static_cast<double>(done));
        ++next_point;
      }
    }
  }
  result.report = evaluate(result.model, test, cfg.bn_branch, cfg.eval_attack, cfg.seed);
  return result;
}

struct LinearEvalResult {
  double ta = 0.0;
  double ra = 0.0;
  Model model;
};

/// Trains only the linear classifier on top of the frozen encoder (BN in
/// inference mode with cfg.bn_branch statistics) by CE or by TRADES.
inline LinearEvalResult linear_eval(const Model& pretrained, const Dataset& train, const Dataset& test,
                                    const FinetuneConfig& cfg) {
  cfg.validate();
  if (cfg.mode == FinetuneMode::FullFinetune) throw std::invalid_argument("linear_eval: mode must be a linear protocol");
  if (pretrained.config().in_channels != train.channels || pretrained.config().resolution != train.height ||
      pretrained.config().num_classes != train.num_classes) {
    throw std::invalid_argument("linear_eval: checkpoint incompatible with dataset");
  }
  Model model = downstream_model(pretrained, cfg.bn_branch);
  const std::vector<Tensor> head = model.classifier_parameters();
  Sgd opt(head, cfg.momentum, cfg.weight_decay);
  Rng rng(cfg.seed);

  Tensor features;  // standard protocol: features computed once
  if (cfg.mode == FinetuneMode::LinearStandard) {
    NoGradGuard no_grad;
    features = model.encode(train.batch(train.all_indices()), cfg.bn_branch, false).detach();
  }
  TradesOptions trades{cfg.trades_beta, cfg.attack, cfg.bn_branch, false};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = step_lr(cfg.lr, epoch, cfg.decay_epochs, cfg.decay_factor);
    for (const auto& idx : epoch_batches(train.size(), cfg.batch_size, rng)) {
      opt.zero_grad();
      Tensor loss;
      if (cfg.mode == FinetuneMode::LinearStandard) {
        loss = cross_entropy(model.classify(gather_rows(features, idx)), train.labels_of(idx));
      } else {
        loss = trades_loss(model, train.batch(idx), train.labels_of(idx), trades, rng);
      }
      if (!std::isfinite(loss.item())) throw NumericError("linear_eval: non-finite loss at epoch " + std::to_string(epoch + 1));
      backward(loss, head);
      opt.step(lr);
    }
  }
  LinearEvalResult r{0.0, 0.0, std::move(model)};
  r.ta = standard_accuracy(r.model, test, cfg.bn_branch);
  r.ra = robust_accuracy(r.model, test, cfg.bn_branch, cfg.eval_attack, cfg.seed);
  return r;
}

}  // namespace acl

#endif  // ACL_FINETUNE_HPP
