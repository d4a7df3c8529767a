// Finite-difference gradient cases shared by the unit tests and the
// acceptance runner. Each case builds a seeded instance and returns the
// scalar function and the point at which its gradient is checked.
#ifndef ACL_TESTS_GRAD_SUITE_HPP
#define ACL_TESTS_GRAD_SUITE_HPP

#include <functional>
#include <string>
#include <vector>

#include "acl/acl.hpp"

namespace acl::fixtures {

inline Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so kinks (relu) sit far from x +- h.
inline Tensor away_from_zero(Shape shape, Rng& rng, float margin = 0.05f) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) {
    const float mag = rng.uniform(margin, 1.0f);
    v = rng.bernoulli(0.5f) ? mag : -mag;
  }
  return t;
}

// Distinct values on a 0.02 grid, shuffled, so max-pool winners are stable under +-h.
inline Tensor distinct_values(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::vector<float> grid(t.numel());
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = -1.0f + 0.02f * static_cast<float>(i);
  rng.shuffle(grid);
  std::copy(grid.begin(), grid.end(), t.values().begin());
  return t;
}

// Fixed random weights turn any tensor-valued op into a scalar with a
// nontrivial upstream gradient. Small weights keep |f| near 1: in float32 the
// central difference carries a round-off of about ulp(f) / h.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0xC0FFEE);
  return sum(mul(y, random_tensor(y.shape(), rng, -0.25f, 0.25f)));
}

struct GradInstance {
  std::function<Tensor(const Tensor&)> f;
  Tensor x;
};

struct GradCase {
  std::string name;
  std::function<GradInstance(std::uint64_t)> make;
};

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

inline std::vector<GradCase> grad_cases() {
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, std::function<GradInstance(std::uint64_t)> make) {
    cases.push_back({std::move(name), std::move(make)});
  };

  add_case("add", [](std::uint64_t s) {
    Rng rng(s);
    Tensor b = random_tensor({3, 4}, rng);
    return GradInstance{[b, s](const Tensor& x) { return weighted_sum(add(x, b), s); }, random_tensor({3, 4}, rng)};
  });
  add_case("add_scalar_tensor", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng);
    return GradInstance{[a, s](const Tensor& x) { return weighted_sum(add(a, x), s); }, random_tensor({1}, rng)};
  });
  add_case("sub", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({5}, rng);
    return GradInstance{[a, s](const Tensor& x) { return weighted_sum(sub(a, x), s); }, random_tensor({5}, rng)};
  });
  add_case("scale", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(scale(x, -1.7f), s); }, random_tensor({2, 3}, rng)};
  });
  add_case("mul", [](std::uint64_t s) {
    Rng rng(s);
    Tensor b = random_tensor({2, 5}, rng);
    return GradInstance{[b, s](const Tensor& x) { return weighted_sum(mul(x, b), s); }, random_tensor({2, 5}, rng)};
  });
  add_case("mul_self", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(mul(x, x), s); }, random_tensor({6}, rng)};
  });
  add_case("relu", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(relu(x), s); }, away_from_zero({4, 4}, rng)};
  });
  add_case("exp", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(exp(x), s); }, random_tensor({7}, rng)};
  });
  add_case("log", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(log(x), s); }, random_tensor({7}, rng, 0.5f, 2.0f)};
  });
  add_case("sum_all", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[](const Tensor& x) { return sum(mul(x, x)); }, random_tensor({3, 3}, rng)};
  });
  add_case("mean_all", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[](const Tensor& x) { return mean(mul(x, x)); }, random_tensor({3, 3}, rng)};
  });
  add_case("sum_axis", [](std::uint64_t s) {
    Rng rng(s);
    const std::size_t axis = s % 3;
    return GradInstance{[s, axis](const Tensor& x) { return weighted_sum(sum(x, axis), s); }, random_tensor({2, 3, 4}, rng)};
  });
  add_case("mean_axis", [](std::uint64_t s) {
    Rng rng(s);
    const std::size_t axis = s % 3;
    return GradInstance{[s, axis](const Tensor& x) { return weighted_sum(mean(x, axis), s); }, random_tensor({2, 3, 4}, rng)};
  });
  add_case("softmax", [](std::uint64_t s) {
    Rng rng(s);
    const std::size_t axis = s % 2;
    return GradInstance{[s, axis](const Tensor& x) { return weighted_sum(softmax(x, axis), s); }, random_tensor({3, 4}, rng, -2.0f, 2.0f)};
  });
  add_case("log_softmax", [](std::uint64_t s) {
    Rng rng(s);
    const std::size_t axis = s % 2;
    return GradInstance{[s, axis](const Tensor& x) { return weighted_sum(log_softmax(x, axis), s); }, random_tensor({3, 4}, rng, -2.0f, 2.0f)};
  });
  add_case("l2_normalize", [](std::uint64_t s) {
    Rng rng(s);
    const std::size_t axis = s % 2;
    return GradInstance{[s, axis](const Tensor& x) { return weighted_sum(l2_normalize(x, axis), s); }, random_tensor({3, 4}, rng, 0.2f, 1.0f)};
  });
  add_case("matmul_lhs", [](std::uint64_t s) {
    Rng rng(s);
    Tensor b = random_tensor({4, 2}, rng);
    return GradInstance{[b, s](const Tensor& x) { return weighted_sum(matmul(x, b), s); }, random_tensor({3, 4}, rng)};
  });
  add_case("matmul_rhs", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng);
    return GradInstance{[a, s](const Tensor& x) { return weighted_sum(matmul(a, x), s); }, random_tensor({4, 2}, rng)};
  });
  add_case("transpose", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(transpose(x), s); }, random_tensor({2, 5}, rng)};
  });
  add_case("add_channel", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({2, 3, 2, 2}, rng);
    return GradInstance{[a, s](const Tensor& x) { return weighted_sum(add_channel(a, x), s); }, random_tensor({3}, rng)};
  });
  add_case("linear_weight", [](std::uint64_t s) {
    Rng rng(s);
    Tensor in = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    return GradInstance{[in, b, s](const Tensor& x) { return weighted_sum(linear(in, x, b), s); }, random_tensor({3, 2}, rng)};
  });
  add_case("conv2d_input", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    const std::size_t stride = 1 + s % 2, pad = s % 2;
    return GradInstance{[w, s, stride, pad](const Tensor& x) { return weighted_sum(conv2d(x, w, stride, pad), s); },
                        random_tensor({2, 2, 5, 5}, rng)};
  });
  add_case("conv2d_weight", [](std::uint64_t s) {
    Rng rng(s);
    Tensor in = random_tensor({2, 2, 5, 5}, rng);
    const std::size_t stride = 1 + s % 2, pad = (s / 2) % 2;
    return GradInstance{[in, s, stride, pad](const Tensor& x) { return weighted_sum(conv2d(in, x, stride, pad), s); },
                        random_tensor({3, 2, 3, 3}, rng)};
  });
  add_case("max_pool2d", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(max_pool2d(x, 2, 2), s); }, distinct_values({2, 2, 4, 4}, rng)};
  });
  add_case("global_avg_pool", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(global_avg_pool(x), s); }, random_tensor({2, 3, 3, 3}, rng)};
  });
  add_case("batch_norm_train_input", [](std::uint64_t s) {
    Rng rng(s);
    Tensor g = random_tensor({3}, rng, 0.5f, 1.5f), b = random_tensor({3}, rng);
    return GradInstance{[g, b, s](const Tensor& x) { return weighted_sum(batch_norm_train(x, g, b, 1e-5f, nullptr), s); },
                        random_tensor({4, 3, 2, 2}, rng)};
  });
  add_case("batch_norm_train_affine", [](std::uint64_t s) {
    Rng rng(s);
    Tensor in = random_tensor({4, 3, 2, 2}, rng), b = random_tensor({3}, rng);
    return GradInstance{[in, b, s](const Tensor& x) { return weighted_sum(batch_norm_train(in, x, b, 1e-5f, nullptr), s); },
                        random_tensor({3}, rng, 0.5f, 1.5f)};
  });
  add_case("batch_norm_eval", [](std::uint64_t s) {
    Rng rng(s);
    Tensor g = random_tensor({3}, rng, 0.5f, 1.5f), b = random_tensor({3}, rng);
    std::vector<float> rm{0.1f, -0.2f, 0.3f}, rv{0.5f, 1.5f, 2.0f};
    return GradInstance{[g, b, rm, rv, s](const Tensor& x) {
                          return weighted_sum(batch_norm_eval(x, g, b, rm, rv, 1e-5f), s);
                        },
                        random_tensor({3, 3, 2}, rng)};
  });
  add_case("concat", [](std::uint64_t s) {
    Rng rng(s);
    Tensor other = random_tensor({2, 2}, rng);
    const std::size_t axis = s % 2;
    Tensor x = axis == 0 ? random_tensor({3, 2}, rng) : random_tensor({2, 3}, rng);
    return GradInstance{[other, axis, s](const Tensor& v) { return weighted_sum(concat({v, other, v}, axis), s); }, x};
  });
  add_case("slice", [](std::uint64_t s) {
    Rng rng(s);
    const std::size_t axis = s % 2;
    return GradInstance{[axis, s](const Tensor& x) { return weighted_sum(slice(x, axis, 1, 3), s); }, random_tensor({4, 4}, rng)};
  });
  add_case("gather_rows", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(gather_rows(x, {2, 0, 2, 1}), s); }, random_tensor({3, 2}, rng)};
  });
  add_case("pick", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(pick(x, {1, 0, 2}), s); }, random_tensor({3, 3}, rng)};
  });
  add_case("reshape", [](std::uint64_t s) {
    Rng rng(s);
    return GradInstance{[s](const Tensor& x) { return weighted_sum(reshape(x, {3, 2}), s); }, random_tensor({2, 3}, rng)};
  });
  add_case("composed_graph", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({3, 3}, rng);
    return GradInstance{[w](const Tensor& x) { return mean(exp(scale(matmul(x, w), 0.5f))); }, random_tensor({2, 3}, rng)};
  });
  add_case("cross_entropy", [](std::uint64_t s) {
    Rng rng(s);
    auto y = random_labels(5, 3, rng);
    return GradInstance{[y](const Tensor& x) { return cross_entropy(x, y); }, random_tensor({5, 3}, rng, -2.0f, 2.0f)};
  });
  add_case("kl_div_both_args", [](std::uint64_t s) {
    Rng rng(s);
    Tensor q = random_tensor({4, 3}, rng, -2.0f, 2.0f);
    return GradInstance{[q](const Tensor& x) { return add(kl_div(x, q), kl_div(q, x)); }, random_tensor({4, 3}, rng, -2.0f, 2.0f)};
  });
  add_case("soft_cross_entropy", [](std::uint64_t s) {
    Rng rng(s);
    Tensor t = softmax_values(random_tensor({4, 3}, rng, -2.0f, 2.0f));
    return GradInstance{[t](const Tensor& x) { return mean(soft_cross_entropy_rows(x, t)); }, random_tensor({4, 3}, rng, -2.0f, 2.0f)};
  });
  add_case("nt_xent", [](std::uint64_t s) {
    Rng rng(s);
    const float tau = s % 2 ? 0.5f : 0.2f;
    return GradInstance{[tau](const Tensor& x) { return nt_xent(x, tau); }, random_tensor({6, 4}, rng)};
  });
  // Outer objectives at a fixed adversarial point: gradients w.r.t. a
  // classifier weight that feeds both the clean and the perturbed logits.
  add_case("trades_objective", [](std::uint64_t s) {
    Rng rng(s);
    Tensor clean = random_tensor({4, 5}, rng), adv = random_tensor({4, 5}, rng);
    auto y = random_labels(4, 3, rng);
    const float beta = 6.0f;
    return GradInstance{[clean, adv, y, beta](const Tensor& w) {
                          Tensor b({3});
                          return trades_objective(linear(clean, w, b), linear(adv, w, b), y, beta);
                        },
                        random_tensor({5, 3}, rng)};
  });
  add_case("semisup_objective", [](std::uint64_t s) {
    Rng rng(s);
    Tensor clean = random_tensor({5, 4}, rng), adv = random_tensor({5, 4}, rng);
    std::vector<PseudoLabel> store(5);
    for (std::uint32_t i = 0; i < 5; ++i) {
      store[i].index = i;
      if (i % 2 == 0) store[i].label = static_cast<std::int32_t>(rng.below(3));
      store[i].logits = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    }
    SemiSupConfig cfg;
    return GradInstance{[clean, adv, store, cfg](const Tensor& w) {
                          std::vector<const PseudoLabel*> rows;
                          for (const auto& e : store) rows.push_back(&e);
                          Tensor b({3});
                          return semisup_objective(linear(clean, w, b), linear(adv, w, b), rows, cfg);
                        },
                        random_tensor({4, 3}, rng)};
  });
  // Encoder path without the relu kink: conv, batch-stat BN, pooling, head.
  add_case("model_forward_conv_weight", [](std::uint64_t s) {
    Rng rng(s);
    Tensor views = random_tensor({4, 2, 4, 4}, rng, 0.0f, 1.0f);
    Tensor g({3}, 1.0f), b = random_tensor({3}, rng, 0.5f, 1.5f);
    Tensor w2 = random_tensor({3, 4}, rng);
    return GradInstance{[views, g, b, w2](const Tensor& w) {
                          Tensor h = batch_norm_train(conv2d(views, w, 1, 1), g, b, 1e-5f, nullptr);
                          Tensor z = linear(global_avg_pool(h), w2, Tensor({4}));
                          return nt_xent(z, 0.5f);
                        },
                        random_tensor({3, 2, 3, 3}, rng)};
  });
  return cases;
}

struct GradSuiteResult {
  std::string name;
  float worst = 0.0f;
  std::size_t instances = 0;
};

inline std::vector<GradSuiteResult> run_grad_suite(std::size_t instances = 20, float h = 1e-3f) {
  std::vector<GradSuiteResult> out;
  for (const auto& c : grad_cases()) {
    GradSuiteResult r{c.name, 0.0f, instances};
    for (std::size_t seed = 1; seed <= instances; ++seed) {
      GradInstance inst = c.make(seed);
      r.worst = std::max(r.worst, grad_check(inst.f, inst.x, h));
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace acl::fixtures

#endif  // ACL_TESTS_GRAD_SUITE_HPP
