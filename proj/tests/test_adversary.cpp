#include <gtest/gtest.h>

#include <cmath>

#include "support/grad_suite.hpp"

using namespace acl;

namespace {

AttackConfig attack(float eps, float step, std::size_t steps, bool random_start) {
  AttackConfig c;
  c.epsilon = eps;
  c.step_size = step;
  c.steps = steps;
  c.random_start = random_start;
  return c;
}

// sum(w * x)
InputLossFn linear_loss(const Tensor& w) {
  return [w](const Tensor& x) { return sum(mul(w, x)); };
}

bool feasible(const Tensor& x, const Tensor& adv, float eps, float low, float high) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = std::abs(static_cast<double>(adv.vec()[i]) - static_cast<double>(x.vec()[i]));
    if (d > static_cast<double>(eps) || adv.vec()[i] < low || adv.vec()[i] > high) return false;
  }
  return true;
}

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.resolution = 8;
  c.widths = {4, 8};
  c.proj_dim = 4;
  return c;
}

}  // namespace

TEST(ProjectLinf, ClampsAndIsIdempotent) {
  const Tensor p = project_linf(Tensor({2}, {0.3f, -0.2f}), 0.1f);
  EXPECT_EQ(p.vec(), (std::vector<float>{0.1f, -0.1f}));
  EXPECT_EQ(project_linf(p, 0.1f).vec(), p.vec());
  const Tensor inside({2}, {0.05f, -0.02f});
  EXPECT_EQ(project_linf(inside, 0.1f).vec(), inside.vec());
  const Tensor zero = project_linf(Tensor({3}, {1, -2, 0.5f}), 0.0f);
  for (float v : zero.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Pgd, ZeroBudgetReturnsInputExactly) {
  Rng rng(1), xr(2);
  const Tensor x = fixtures::random_tensor({2, 3}, xr, 0.0f, 1.0f);
  const Tensor adv = pgd_attack(linear_loss(Tensor({2, 3}, 1.0f)), x, attack(0.0f, 0.1f, 10, true), rng);
  EXPECT_EQ(adv.vec(), x.vec());
}

TEST(Pgd, NoStepsNoStartReturnsInput) {
  Rng rng(1);
  const Tensor x({3}, {0.2f, 0.4f, 0.6f});
  EXPECT_EQ(pgd_attack(linear_loss(Tensor({3}, 1.0f)), x, attack(0.1f, 0.1f, 0, false), rng).vec(), x.vec());
}

TEST(Pgd, LinearLossIsSolvedByOneSignStep) {
  // Dyadic inputs keep x + eps exactly representable. From a random start
  // the first step must cover up to 2 eps to reach the vertex.
  const Tensor x({4}, {0.5f, 0.25f, 0.75f, 0.375f});
  const Tensor w({4}, {2.0f, -0.5f, 1e-3f, -7.0f});
  const float eps = 0.125f;
  for (bool start : {false, true})
    for (std::size_t steps : {1u, 3u, 10u}) {
      Rng rng(steps);
      const Tensor adv = pgd_attack(linear_loss(w), x, attack(eps, start ? 2.0f * eps : eps, steps, start), rng);
      for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(adv.vec()[i], x.vec()[i] + eps * detail::sign(w.vec()[i]));
    }
}

TEST(Pgd, LinearLossWithDecimalBudgetLandsOnTheBallEdge) {
  // eps = 0.1 is not a float; the result is the float nearest x + 0.1*sign(w)
  // that still satisfies the constraint exactly.
  Rng xr(4);
  const Tensor x = fixtures::random_tensor({64}, xr, 0.2f, 0.8f);
  Rng wr(5);
  const Tensor w = fixtures::away_from_zero({64}, wr);
  Rng rng(6);
  const Tensor adv = pgd_attack(linear_loss(w), x, attack(0.1f, 0.2f, 1, true), rng);
  ASSERT_TRUE(feasible(x, adv, 0.1f, 0.0f, 1.0f));
  for (std::size_t i = 0; i < 64; ++i) {
    const float target = x.vec()[i] + 0.1f * detail::sign(w.vec()[i]);
    EXPECT_LE(std::abs(adv.vec()[i] - target), std::abs(std::nextafter(target, 2.0f) - target)) << i;
  }
}

TEST(Pgd, FeasibilityHoldsExactlyOnFuzzedInstances) {
  Rng meta(2024);
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t n = 1 + meta.below(16);
    const float eps = meta.bernoulli(0.1f) ? 0.0f : meta.uniform(0.0f, 0.3f);
    const float low = meta.bernoulli(0.5f) ? 0.0f : meta.uniform(-1.0f, 0.0f);
    const float high = low + meta.uniform(0.1f, 1.5f);
    Tensor x({n});
    for (auto& v : x.values()) {
      const float pick = meta.uniform();
      v = pick < 0.2f ? low : pick < 0.4f ? high : meta.uniform(low, high);
    }
    Rng wr = Rng::derive(inst, 1);
    const Tensor w = fixtures::random_tensor({n}, wr);
    const Tensor c = fixtures::random_tensor({n}, wr);
    auto loss = [w, c](const Tensor& v) { return add(sum(mul(w, v)), sum(mul(sub(v, c), sub(v, c)))); };
    AttackConfig cfg = attack(eps, meta.uniform(1e-4f, 0.5f), meta.below(8), meta.bernoulli(0.7f));
    cfg.low = low;
    cfg.high = high;
    Rng rng(inst);
    const Tensor adv = pgd_attack(loss, x, cfg, rng);
    ASSERT_TRUE(feasible(x, adv, eps, low, high)) << "instance " << inst;
  }
}

TEST(Pgd, AttainsTheBestGridPointOnQuadratics) {
  // 2-D quadratics whose centre lies outside the box, so the gradient sign
  // is constant inside it and the maximum sits on a box vertex.
  for (std::uint64_t s = 1; s <= 50; ++s) {
    Rng rng(s);
    const float eps = rng.uniform(0.02f, 0.1f);
    const Tensor x({2}, {rng.uniform(0.3f, 0.7f), rng.uniform(0.3f, 0.7f)});
    float curv[2], centre[2];
    for (int k = 0; k < 2; ++k) {
      curv[k] = rng.bernoulli(0.5f) ? rng.uniform(0.5f, 3.0f) : -rng.uniform(0.5f, 3.0f);
      centre[k] = x.vec()[k] + (rng.bernoulli(0.5f) ? 1.0f : -1.0f) * rng.uniform(2.0f * eps, 1.0f);
    }
    auto value = [&](float a, float b) {
      return curv[0] * (a - centre[0]) * (a - centre[0]) + curv[1] * (b - centre[1]) * (b - centre[1]);
    };
    const Tensor k({2}, {curv[0], curv[1]}), c({2}, {centre[0], centre[1]});
    auto loss = [k, c](const Tensor& v) { return sum(mul(k, mul(sub(v, c), sub(v, c)))); };
    Rng arng(s + 100);
    const Tensor adv = pgd_attack(loss, x, attack(eps, eps / 4.0f, 20, true), arng);
    float best = -INFINITY;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        const float a = x.vec()[0] + eps * (-1.0f + 0.5f * static_cast<float>(i));
        const float b = x.vec()[1] + eps * (-1.0f + 0.5f * static_cast<float>(j));
        best = std::max(best, value(a, b));
      }
    EXPECT_GE(value(adv.vec()[0], adv.vec()[1]), best - 1e-6f) << "seed " << s;
  }
}

TEST(Pgd, RandomStartIsDeterministicGivenSeed) {
  const Tensor x({5}, 0.5f);
  auto loss = [](const Tensor& v) { return sum(mul(v, v)); };
  Rng a(77), b(77), c(78);
  const AttackConfig cfg = attack(0.1f, 0.01f, 3, true);
  EXPECT_EQ(pgd_attack(loss, x, cfg, a).vec(), pgd_attack(loss, x, cfg, b).vec());
  EXPECT_NE(pgd_attack(loss, x, cfg, a).vec(), pgd_attack(loss, x, cfg, c).vec());
}

TEST(Pgd, SignOfZeroGradientIsZero) {
  const Tensor x({2}, {0.5f, 0.5f});
  const Tensor w({2}, {1.0f, 0.0f});
  Rng rng(1);
  const Tensor adv = pgd_attack(linear_loss(w), x, attack(0.125f, 0.125f, 1, false), rng);
  EXPECT_EQ(adv.vec(), (std::vector<float>{0.625f, 0.5f}));
}

TEST(Pgd, NaNGradientIsAnError) {
  const Tensor x({2}, {0.5f, 0.5f});
  auto loss = [](const Tensor& v) { return sum(mul(log(sub(v, Tensor({2}, 0.5f))), Tensor({2}, 0.0f))); };
  Rng rng(1);
  EXPECT_THROW(pgd_attack(loss, x, attack(0.1f, 0.05f, 2, false), rng), NumericError);
}

TEST(Pgd, InvalidConfigIsRejected) {
  Rng rng(1);
  const Tensor x({1}, 0.5f);
  EXPECT_THROW(pgd_attack(linear_loss(x), x, attack(-0.1f, 0.1f, 1, true), rng), std::invalid_argument);
  EXPECT_THROW(pgd_attack(linear_loss(x), x, attack(0.1f, 0.0f, 1, true), rng), std::invalid_argument);
  AttackConfig bad = attack(0.1f, 0.1f, 1, true);
  bad.low = 1.0f;
  EXPECT_THROW(pgd_attack(linear_loss(x), x, bad, rng), std::invalid_argument);
}

TEST(JointAttack, LeavesModelParameterGradientsUntouched) {
  Model m(tiny_config(), 3);
  Rng data(4);
  const Tensor views = fixtures::random_tensor({8, 3, 8, 8}, data, 0.0f, 1.0f);
  // Seed every parameter with a known gradient, plus one without a buffer.
  auto params = m.parameters();
  for (std::size_t k = 1; k < params.size(); ++k) {
    auto g = params[k].mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.001f * static_cast<float>(i % 7);
  }
  params[0].clear_grad();
  std::vector<std::vector<float>> before;
  for (const auto& p : params) before.emplace_back(p.grad().begin(), p.grad().end());
  const auto state_before = model_checkpoint(m).serialize();
  for (bool batch_stats : {false, true}) {
    Rng rng(5);
    joint_contrastive_attack(m, views, 0.5f, AttackConfig::pretraining(), rng, BranchMode::Adversarial, batch_stats);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    EXPECT_EQ(std::vector<float>(params[k].grad().begin(), params[k].grad().end()), before[k]) << k;
  }
  EXPECT_FALSE(params[0].has_grad());
  EXPECT_EQ(model_checkpoint(m).serialize(), state_before);  // running statistics too
}

TEST(JointAttack, ZeroBudgetKeepsViews) {
  Model m(tiny_config(), 3);
  Rng data(4), rng(5);
  const Tensor views = fixtures::random_tensor({4, 3, 8, 8}, data, 0.0f, 1.0f);
  AttackConfig cfg = AttackConfig::pretraining();
  cfg.epsilon = 0.0f;
  EXPECT_EQ(joint_contrastive_attack(m, views, 0.5f, cfg, rng).vec(), views.vec());
}

TEST(JointAttack, BothViewsStayInTheirBallsAndTheLossRises) {
  int rose = 0;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    Model m(tiny_config(), s);
    Rng data(s + 50), rng(s + 90);
    const Tensor views = fixtures::random_tensor({8, 3, 8, 8}, data, 0.0f, 1.0f);
    const AttackConfig cfg = AttackConfig::pretraining();
    const Tensor adv = joint_contrastive_attack(m, views, 0.5f, cfg, rng);
    ASSERT_TRUE(feasible(views, adv, cfg.epsilon, 0.0f, 1.0f));
    NoGradGuard no_grad;
    auto loss = [&](const Tensor& v) { return nt_xent(m.project(m.encode(v, BranchMode::Adversarial, false)), 0.5f).item(); };
    rose += loss(adv) >= loss(views);
  }
  EXPECT_GE(rose, 11);
}
