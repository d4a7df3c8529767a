#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "support/grad_suite.hpp"

using namespace acl;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.resolution = 8;
  c.widths = {4, 8};
  c.proj_dim = 4;
  return c;
}

Dataset tiny_data(std::size_t per_class = 8, std::uint64_t seed = 1) {
  SyntheticConfig s;
  s.per_class = per_class;
  s.resolution = 8;
  s.seed = seed;
  return make_synthetic(s);
}

PretrainConfig quick(Variant v) {
  PretrainConfig c;
  c.variant = v;
  c.epochs = 1;
  c.batch_size = 8;
  c.augment = AugmentConfig::for_resolution(8);
  c.seed = 3;
  return c;
}

ViewBatch batch_for(const Dataset& d, const PretrainConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
  return make_view_batch(d, idx, cfg.augment, rng);
}

void copy_std_to_adv(Model& m) {
  for (auto& bn : m.batch_norms()) {
    auto& s = bn.params(BranchMode::Standard);
    auto& a = bn.params(BranchMode::Adversarial);
    std::copy(s.gamma.values().begin(), s.gamma.values().end(), a.gamma.values().begin());
    std::copy(s.beta.values().begin(), s.beta.values().end(), a.beta.values().begin());
  }
}

std::vector<float> branch_state(const Model& m, BranchMode b) {
  std::vector<float> out;
  for (const auto& bn : m.batch_norms()) {
    const auto& p = bn.params(b);
    for (const Tensor* t : {&p.gamma, &p.beta, &p.running_mean, &p.running_var}) out.insert(out.end(), t->values().begin(), t->values().end());
  }
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("acl_pretrain_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(ViewBatch, InterleavesTheTwoViews) {
  const Dataset d = tiny_data();
  PretrainConfig cfg = quick(Variant::S2S);
  cfg.augment = AugmentConfig::identity();
  const ViewBatch b = batch_for(d, cfg, 1);
  EXPECT_EQ(b.views.shape(), (Shape{12, 3, 8, 8}));
  EXPECT_EQ(rows_with_parity(b.views, 0).vec(), b.clean.vec());
  EXPECT_EQ(rows_with_parity(b.views, 1).vec(), b.clean.vec());
}

TEST(PretrainObjective, DsWithZeroBudgetIsTwiceS2sWhenBranchesAgree) {
  const Dataset d = tiny_data();
  Model m(tiny_config(), 5);
  copy_std_to_adv(m);
  PretrainConfig cfg = quick(Variant::DS);
  cfg.attack.epsilon = 0.0f;
  cfg.bn_training = false;
  ViewBatch b = batch_for(d, cfg, 2);
  Rng rng(1);
  generate_adversarial_views(m, b, cfg, rng);
  const float ds = pretrain_objective(m, b, cfg).item();
  cfg.variant = Variant::S2S;
  const float s2s = pretrain_objective(m, b, cfg).item();
  EXPECT_NEAR(ds, 2.0f * s2s, 1e-6);
}

TEST(PretrainObjective, DsDecomposesIntoIndependentTerms) {
  const Dataset d = tiny_data();
  for (float alpha : {1.0f, 0.5f, 2.0f}) {
    Model m(tiny_config(), 6);
    PretrainConfig cfg = quick(Variant::DS);
    cfg.ds_weight = alpha;
    ViewBatch b = batch_for(d, cfg, 3);
    Rng rng(2);
    generate_adversarial_views(m, b, cfg, rng);
    const float ds = pretrain_objective(m, b, cfg).item();
    PretrainConfig s2s = cfg, a2a = cfg;
    s2s.variant = Variant::S2S;
    a2a.variant = Variant::A2A;
    const float standard = pretrain_objective(m, b, s2s).item();
    const float robust = pretrain_objective(m, b, a2a).item();  // reuses the same delta
    EXPECT_NEAR(ds, standard + alpha * robust, 1e-6) << alpha;
  }
}

TEST(PretrainObjective, DsGradientIsTheSumOfStreamGradients) {
  const Dataset d = tiny_data();
  Model m(tiny_config(), 7);
  PretrainConfig cfg = quick(Variant::DS);
  ViewBatch b = batch_for(d, cfg, 4);
  Rng rng(3);
  generate_adversarial_views(m, b, cfg, rng);
  auto grads = [&](Variant v) {
    PretrainConfig c = cfg;
    c.variant = v;
    m.clear_grads();
    backward(pretrain_objective(m, b, c));
    std::vector<float> out;
    for (const auto& t : m.encoder_parameters()) {
      if (t.has_grad()) out.insert(out.end(), t.grad().begin(), t.grad().end());
      else out.insert(out.end(), t.numel(), 0.0f);
    }
    return out;
  };
  const auto ds = grads(Variant::DS), s2s = grads(Variant::S2S), a2a = grads(Variant::A2A);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_NEAR(ds[i], s2s[i] + a2a[i], 1e-6);
}

TEST(PretrainObjective, A2aAtZeroBudgetIsS2sOnTheAdversarialBranch) {
  const Dataset d = tiny_data();
  Model m(tiny_config(), 8);
  PretrainConfig cfg = quick(Variant::A2A);
  cfg.attack.epsilon = 0.0f;
  ViewBatch b = batch_for(d, cfg, 5);
  Rng rng(4);
  generate_adversarial_views(m, b, cfg, rng);
  EXPECT_EQ(b.adversarial->vec(), b.views.vec());
  const float a2a = pretrain_objective(m, b, cfg).item();
  const float s2s_adv = contrastive_term(m, b.views, BranchMode::Adversarial, true, cfg.contrastive.temperature).item();
  EXPECT_NEAR(a2a, s2s_adv, 1e-6);
}

TEST(PretrainObjective, A2sPerturbsOnlyViewI) {
  const Dataset d = tiny_data();
  Model m(tiny_config(), 9);
  PretrainConfig cfg = quick(Variant::A2S);
  ViewBatch b = batch_for(d, cfg, 6);
  Rng rng(5);
  generate_adversarial_views(m, b, cfg, rng);
  EXPECT_EQ(rows_with_parity(*b.adversarial, 1).vec(), rows_with_parity(b.views, 1).vec());
  EXPECT_NE(rows_with_parity(*b.adversarial, 0).vec(), rows_with_parity(b.views, 0).vec());
  for (std::size_t i = 0; i < b.views.numel(); ++i) {
    EXPECT_LE(std::abs(static_cast<double>(b.adversarial->vec()[i]) - b.views.vec()[i]), static_cast<double>(cfg.attack.epsilon));
  }
  EXPECT_TRUE(std::isfinite(pretrain_objective(m, b, cfg).item()));
}

TEST(PretrainObjective, AttackedVariantsNeedAdversarialViews) {
  const Dataset d = tiny_data();
  Model m(tiny_config(), 1);
  ViewBatch b = batch_for(d, quick(Variant::A2A), 1);
  EXPECT_THROW(pretrain_objective(m, b, quick(Variant::A2A)), std::logic_error);
}

TEST(RunPretraining, OneBatchIsOneStep) {
  const Dataset d = tiny_data(4);
  PretrainConfig cfg = quick(Variant::DS);
  const auto dir = temp_dir("one_step");
  PretrainOutputs out{dir / "metrics.csv", dir / "ckpt.bin", {}};
  const auto r = run_pretraining(d, cfg, Model(tiny_config(), 1), out);
  EXPECT_EQ(r.steps, 1u);
  ASSERT_EQ(r.epochs.size(), 1u);
  std::ifstream csv(out.metrics_csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], "epoch,variant,loss,lr,wallclock");
  EXPECT_EQ(lines[1].rfind("1,ds,", 0), 0u);
  EXPECT_TRUE(std::filesystem::exists(out.checkpoint));
}

TEST(RunPretraining, SameSeedGivesBitIdenticalCheckpoints) {
  const Dataset d = tiny_data();
  for (Variant v : {Variant::S2S, Variant::A2A, Variant::A2S, Variant::DS}) {
    PretrainConfig cfg = quick(v);
    cfg.epochs = 2;
    const auto a = model_checkpoint(run_pretraining(d, cfg, Model(tiny_config(), 2)).model).serialize();
    const auto b = model_checkpoint(run_pretraining(d, cfg, Model(tiny_config(), 2)).model).serialize();
    EXPECT_EQ(a, b) << variant_name(v);
  }
}

TEST(RunPretraining, S2sNeverTouchesAdversarialStatisticsAndViceVersa) {
  const Dataset d = tiny_data();
  const Model init(tiny_config(), 3);
  PretrainConfig cfg = quick(Variant::S2S);
  cfg.epochs = 2;
  const auto s2s = run_pretraining(d, cfg, init.clone());
  EXPECT_EQ(branch_state(s2s.model, BranchMode::Adversarial), branch_state(init, BranchMode::Adversarial));
  EXPECT_NE(branch_state(s2s.model, BranchMode::Standard), branch_state(init, BranchMode::Standard));
  cfg.variant = Variant::A2A;
  const auto a2a = run_pretraining(d, cfg, init.clone());
  EXPECT_EQ(branch_state(a2a.model, BranchMode::Standard), branch_state(init, BranchMode::Standard));
  EXPECT_NE(branch_state(a2a.model, BranchMode::Adversarial), branch_state(init, BranchMode::Adversarial));
}

TEST(RunPretraining, DsLossFallsOnAToyProblem) {
  const Dataset d = tiny_data(16, 4);
  PretrainConfig cfg = quick(Variant::DS);
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.base_lr = 4.0f;
  cfg.augment.brightness_delta = 0.0f;  // colour jitter swamps gratings this small
  cfg.augment.contrast_lo = cfg.augment.contrast_hi = 1.0f;
  cfg.augment.grayscale_prob = 0.0f;
  EncoderConfig enc = tiny_config();
  enc.widths = {8, 16};  // a 16-unit head hidden layer rarely goes all-dead on one row
  enc.proj_dim = 8;
  const auto r = run_pretraining(d, cfg, Model(enc, 4));
  for (const auto& e : r.epochs) ASSERT_TRUE(std::isfinite(e.loss));
  EXPECT_LT(r.epochs.back().loss, r.epochs.front().loss);
}

TEST(RunPretraining, NonFiniteLossAbortsAndKeepsTheLastGoodCheckpoint) {
  const Dataset d = tiny_data(4);
  PretrainConfig cfg = quick(Variant::S2S);
  cfg.epochs = 50;
  cfg.batch_size = 64;  // one step per epoch, so epoch 1 always finishes
  cfg.base_lr = 1e30f;
  cfg.weight_decay = 0.0f;
  const auto dir = temp_dir("nan");
  PretrainOutputs out{{}, dir / "ckpt.bin", {}};
  try {
    run_pretraining(d, cfg, Model(tiny_config(), 5), out);
    FAIL() << "expected a non-finite loss";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("s2s"), std::string::npos);
  }
  ASSERT_TRUE(std::filesystem::exists(out.checkpoint));
  const Checkpoint ck = load_checkpoint(out.checkpoint);
  for (const auto& [name, t] : ck.tensors)
    for (float v : t.values()) ASSERT_TRUE(std::isfinite(v)) << name;
}

TEST(PretrainConfig, ValidatesFields) {
  PretrainConfig c;
  c.ds_weight = -1.0f;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PretrainConfig{};
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_variant("a2s"), Variant::A2S);
  EXPECT_THROW(parse_variant("xyz"), std::invalid_argument);
  EXPECT_FLOAT_EQ(PretrainConfig{}.lr(), 0.5f * 64.0f / 512.0f);
}
