#include <gtest/gtest.h>

#include <cmath>

#include "support/grad_suite.hpp"

using namespace acl;

namespace {

// One 1x1 grey pixel p; a 3x3 conv whose centre tap is 1 reads it, BN at
// initial running stats scales by ~1 and shifts by beta = 1 (keeps the relu
// off its kink at p = 0), so the logit gap is 2 * (p - t) up to 1e-5.
Model threshold_model(float t) {
  EncoderConfig c;
  c.in_channels = 1;
  c.resolution = 1;
  c.widths = {1};
  c.proj_dim = 1;
  Model m(c, 1);
  for (auto& [name, tensor] : m.state()) {
    auto v = tensor.values();
    if (name == "enc.block0.conv.weight") {
      std::fill(v.begin(), v.end(), 0.0f);
      v[4] = 1.0f;
    } else if (name.find(".beta") != std::string::npos) {
      v[0] = 1.0f;
    } else if (name == "cls.weight") {
      v[0] = 1.0f;
      v[1] = -1.0f;
    } else if (name == "cls.bias") {
      v[0] = -(t + 1.0f);
      v[1] = t + 1.0f;
    }
  }
  return m;
}

Dataset pixels(const std::vector<float>& p, const std::vector<int>& y) {
  Dataset d;
  d.channels = d.height = d.width = 1;
  d.num_classes = 2;
  d.pixels = p;
  d.labels = y;
  return d;
}

Model tiny_model(std::uint64_t seed) {
  EncoderConfig c;
  c.resolution = 8;
  c.widths = {4, 8};
  c.proj_dim = 4;
  return Model(c, seed);
}

Dataset tiny_data(std::size_t per_class, std::uint64_t seed) {
  SyntheticConfig s;
  s.per_class = per_class;
  s.resolution = 8;
  s.seed = seed;
  return make_synthetic(s);
}

}  // namespace

TEST(Accuracy, ArgmaxTiesGoToLowestIndex) {
  EXPECT_EQ(argmax_rows(Tensor({2, 3}, {1, 1, 0, 0, 2, 2})), (std::vector<int>{0, 1}));
}

TEST(Accuracy, ManualCount) {
  const Tensor logits({4, 2}, {2, 1, 0, 3, 5, 5, -1, -2});
  EXPECT_EQ(count_correct(logits, {0, 1, 1, 1}), 2u);
}

TEST(Accuracy, ConstantPredictorScoresClassShare) {
  Model m = tiny_model(1);  // zero classifier: every logit ties
  const Dataset d = tiny_data(10, 1);
  EXPECT_DOUBLE_EQ(standard_accuracy(m, d, BranchMode::Adversarial), 0.5);
  EXPECT_DOUBLE_EQ(robust_accuracy(m, d, BranchMode::Adversarial, AttackConfig::evaluation(), 3), 0.5);
}

TEST(Accuracy, PerfectThresholdModel) {
  Model m = threshold_model(0.5f);
  const Dataset d = pixels({0.1f, 0.9f, 0.3f, 0.7f}, {1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(standard_accuracy(m, d, BranchMode::Standard), 1.0);
}

TEST(RobustAccuracy, MatchesTheMarginOracle) {
  const float t = 0.5f;
  Model m = threshold_model(t);
  std::vector<float> p;
  std::vector<int> y;
  for (int k = 0; k <= 40; ++k) {
    const float v = 0.0125f + 0.02375f * static_cast<float>(k);
    if (std::abs(v - t) < 1e-3f) continue;
    p.push_back(v);
    y.push_back(v > t ? 0 : 1);
  }
  const Dataset d = pixels(p, y);
  for (float eps : {0.0f, 0.05f, 8.0f / 255.0f, 0.1f, 0.3f, 0.6f}) {
    AttackConfig a;
    a.epsilon = eps;
    a.step_size = eps > 0.0f ? eps / 4.0f : 1.0f;
    a.steps = 10;
    std::size_t robust = 0;
    for (float v : p) {
      // Only a move across t flips the decision; the [0,1] box can block it.
      const float worst = v > t ? std::max(v - eps, 0.0f) : std::min(v + eps, 1.0f);
      robust += (v > t) == (worst > t) ? 1 : 0;
    }
    EXPECT_DOUBLE_EQ(robust_accuracy(m, d, BranchMode::Adversarial, a, 7),
                     static_cast<double>(robust) / static_cast<double>(p.size()))
        << eps;
  }
}

TEST(RobustAccuracy, ZeroBudgetEqualsClean) {
  Model m = tiny_model(2);
  for (auto& t : m.classifier_parameters()) {
    Rng rng(4);
    const Tensor r = fixtures::random_tensor(t.shape(), rng);
    std::copy(r.values().begin(), r.values().end(), t.values().begin());
  }
  const Dataset d = tiny_data(20, 2);
  const auto r = evaluate(m, d, BranchMode::Standard, AttackConfig::none(), 1);
  EXPECT_EQ(r.ra, r.ta);
  AttackConfig zero = AttackConfig::evaluation();
  zero.epsilon = 0.0f;
  EXPECT_EQ(robust_accuracy(m, d, BranchMode::Standard, zero, 1), r.ta);
}

TEST(RobustAccuracy, NonIncreasingInBudget) {
  Model m = threshold_model(0.45f);
  Rng rng(8);
  std::vector<float> p;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    p.push_back(rng.uniform(0.0f, 1.0f));
    y.push_back(p.back() > 0.45f ? 0 : 1);
  }
  const Dataset d = pixels(p, y);
  double prev = 2.0;
  for (float eps : {0.0f, 0.01f, 0.02f, 0.05f, 0.1f, 0.2f}) {
    AttackConfig a = AttackConfig::evaluation();
    a.epsilon = eps;
    a.step_size = eps > 0.0f ? eps / 4.0f : 1.0f;
    const double ra = robust_accuracy(m, d, BranchMode::Adversarial, a, 2);
    EXPECT_LE(ra, prev) << eps;
    prev = ra;
  }
}

TEST(RobustAccuracy, IndependentOfChunkOrderAndRepeatable) {
  Model m = tiny_model(3);
  for (auto& t : m.classifier_parameters()) {
    Rng rng(5);
    const Tensor r = fixtures::random_tensor(t.shape(), rng);
    std::copy(r.values().begin(), r.values().end(), t.values().begin());
  }
  const Dataset d = tiny_data(60, 3);  // 120 examples: two chunks
  const auto a = robust_accuracy(m, d, BranchMode::Adversarial, AttackConfig::evaluation(), 9);
  const auto b = robust_accuracy(m, d, BranchMode::Adversarial, AttackConfig::evaluation(), 9);
  EXPECT_EQ(a, b);
}

TEST(NoiseAccuracy, ZeroSigmaIsClean) {
  Model m = threshold_model(0.5f);
  const Dataset d = pixels({0.1f, 0.45f, 0.55f, 0.9f}, {1, 1, 0, 0});
  EXPECT_EQ(gaussian_noise_accuracy(m, d, BranchMode::Standard, 0.0f, 1), standard_accuracy(m, d, BranchMode::Standard));
}

TEST(NoiseAccuracy, LargeSigmaApproachesChance) {
  Model m = threshold_model(0.5f);
  std::vector<float> p(2000);
  std::vector<int> y(2000);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = i % 2 ? 0.2f : 0.8f;
    y[i] = i % 2 ? 1 : 0;
  }
  const Dataset d = pixels(p, y);
  const double acc = gaussian_noise_accuracy(m, d, BranchMode::Standard, 100.0f, 3);
  EXPECT_NEAR(acc, 0.5, 0.05);
  EXPECT_EQ(acc, gaussian_noise_accuracy(m, d, BranchMode::Standard, 100.0f, 3));
  EXPECT_THROW(gaussian_noise_accuracy(m, d, BranchMode::Standard, -1.0f, 3), std::invalid_argument);
}

TEST(Evaluate, ReportCarriesSettings) {
  Model m = threshold_model(0.5f);
  const Dataset d = pixels({0.1f, 0.9f}, {1, 0});
  const auto r = evaluate(m, d, BranchMode::Standard, AttackConfig::evaluation(), 11, 0.0f);
  EXPECT_EQ(r.n_examples, 2u);
  EXPECT_EQ(r.seed, 11u);
  ASSERT_TRUE(r.corruption_acc.has_value());
  EXPECT_EQ(*r.corruption_acc, 1.0);
  EXPECT_EQ(r.attack.steps, 20u);
  EXPECT_THROW(evaluate(m, Dataset{}, BranchMode::Standard, AttackConfig::none(), 1), std::invalid_argument);
}
