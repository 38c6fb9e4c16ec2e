#include <gtest/gtest.h>

#include <cmath>

#include "pbmr/optim.hpp"
#include "pbmr/rng.hpp"

using namespace pbmr;
using P = NamedTensor<double>;

namespace {

P param(std::string name, std::vector<double> w, std::vector<double> g) {
  P p{std::move(name), Tensor<double>::from({w.size()}, w, true)};
  p.value.impl()->grad = std::move(g);
  return p;
}

std::vector<double> values(const P& p) { return {p.value.data().begin(), p.value.data().end()}; }

OptimizerConfig config(OptimizerKind kind, double lr) {
  OptimizerConfig c;
  c.kind = kind;
  c.lr = lr;
  return c;
}

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.uniform(-1, 1);
  return v;
}

} // namespace

TEST(Sgd, PlainStepExample) {
  auto c = config(OptimizerKind::sgd, 0.1);
  c.momentum = 0;
  Optimizer<double> opt(c);
  std::vector<P> ps{param("w", {1.0}, {0.5})};
  opt.step(ps);
  EXPECT_EQ(values(ps[0])[0], 0.95);
}

TEST(Sgd, NoMomentumIsExactlyWMinusLrG) {
  Rng rng(1);
  auto c = config(OptimizerKind::sgd, 0.037);
  c.momentum = 0;
  Optimizer<double> opt(c);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_vec(rng, 9), g = random_vec(rng, 9);
    std::vector<P> ps{param("w" + std::to_string(trial), w, g)};
    opt.step(ps);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(values(ps[0])[i], w[i] - 0.037 * g[i]);
  }
}

TEST(Sgd, MomentumRecurrence) {
  Rng rng(2);
  auto c = config(OptimizerKind::sgd, 0.01);
  c.momentum = 0.9;
  Optimizer<double> opt(c);
  auto w = random_vec(rng, 5);
  std::vector<double> v(5, 0.0);
  std::vector<P> ps{param("w", w, {})};
  for (int step = 0; step < 6; ++step) {
    const auto g = random_vec(rng, 5);
    ps[0].value.impl()->grad = g;
    opt.step(ps);
    for (std::size_t i = 0; i < 5; ++i) {
      v[i] = 0.9 * v[i] + g[i];
      w[i] = w[i] - 0.01 * v[i];
      EXPECT_EQ(values(ps[0])[i], w[i]);
    }
  }
}

TEST(Adam, FirstStepExample) {
  Optimizer<double> opt(config(OptimizerKind::adam, 0.1));
  std::vector<P> ps{param("w", {1.0}, {2.0})};
  opt.step(ps);
  EXPECT_NEAR(values(ps[0])[0], 0.9, 1e-8);
}

TEST(Adam, FirstStepClosedForm) {
  Rng rng(3);
  Optimizer<double> opt(config(OptimizerKind::adam, 1e-3));
  const auto w = random_vec(rng, 50, 3), g = random_vec(rng, 50, 10);
  std::vector<P> ps{param("w", w, g)};
  opt.step(ps);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double expect = w[i] - 1e-3 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(values(ps[0])[i], expect, 1e-10);
  }
}

TEST(Adam, MatchesReferenceRecurrence) {
  Rng rng(4);
  OptimizerConfig c = config(OptimizerKind::adam, 0.01);
  c.beta1 = 0.8;
  c.beta2 = 0.95;
  c.eps = 1e-6;
  Optimizer<double> opt(c);
  auto w = random_vec(rng, 4);
  std::vector<double> m(4, 0), v(4, 0);
  std::vector<P> ps{param("w", w, {})};
  for (int t = 1; t <= 8; ++t) {
    const auto g = random_vec(rng, 4);
    ps[0].value.impl()->grad = g;
    opt.step(ps);
    for (std::size_t i = 0; i < 4; ++i) {
      m[i] = 0.8 * m[i] + 0.2 * g[i];
      v[i] = 0.95 * v[i] + 0.05 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.8, t)), vh = v[i] / (1 - std::pow(0.95, t));
      w[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-6);
      EXPECT_NEAR(values(ps[0])[i], w[i], 1e-12);
    }
  }
}

TEST(Adam, EarlyUpdatesAreBoundedByLr) {
  Rng rng(5);
  Optimizer<double> opt(config(OptimizerKind::adam, 1e-3));
  auto w = random_vec(rng, 30);
  std::vector<P> ps{param("w", w, {})};
  for (int t = 0; t < 3; ++t) {
    ps[0].value.impl()->grad = random_vec(rng, 30, 100);
    const auto before = values(ps[0]);
    opt.step(ps);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_LE(std::abs(values(ps[0])[i] - before[i]), 1e-3 * 1.5);
  }
}

TEST(Lars, UnitNormExample) {
  auto c = config(OptimizerKind::lars, 1e-3);
  c.trust_coefficient = 1e-3;
  Optimizer<double> opt(c);
  std::vector<P> ps{param("w", {0.6, 0.8}, {0.0, 1.0})};
  opt.step(ps);
  const auto w = values(ps[0]);
  EXPECT_NEAR(std::hypot(w[0] - 0.6, w[1] - 0.8), 1e-6, 1e-15);
}

TEST(Lars, GradientScaleInvariance) {
  Rng rng(6);
  for (double scale : {0.1, 10.0}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto w = random_vec(rng, 12), g = random_vec(rng, 12);
      std::vector<double> gs(g);
      for (auto& x : gs) x *= scale;
      Optimizer<double> a(config(OptimizerKind::lars, 0.5)), b(config(OptimizerKind::lars, 0.5));
      std::vector<P> pa{param("w", w, g)}, pb{param("w", w, gs)};
      a.step(pa);
      b.step(pb);
      for (std::size_t i = 0; i < 12; ++i)
        EXPECT_NEAR(values(pa[0])[i] - w[i], values(pb[0])[i] - w[i], 1e-10);
    }
  }
}

TEST(Lars, WeightDecayRule) {
  auto c = config(OptimizerKind::lars, 0.1);
  c.trust_coefficient = 0.02;
  c.weight_decay = 0.5;
  Optimizer<double> opt(c);
  const std::vector<double> w{3, 4}, g{1, 0};
  std::vector<P> ps{param("w", w, g)};
  opt.step(ps);
  const double local = 0.02 * 5 / (1 + 0.5 * 5);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(values(ps[0])[i], w[i] - 0.1 * local * (g[i] + 0.5 * w[i]), 1e-15);
}

TEST(Lars, ZeroWeightFallsBackToSgdScale) {
  Optimizer<double> opt(config(OptimizerKind::lars, 0.1));
  std::vector<P> ps{param("b", {0, 0}, {1, -2})};
  opt.step(ps);
  EXPECT_EQ(values(ps[0]), (std::vector<double>{-0.1, 0.2}));
}

TEST(Optimizers, ZeroGradLeavesParametersUnchanged) {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::lars}) {
    Optimizer<double> opt(config(kind, 0.1));
    std::vector<P> ps{param("w", {1, -2, 3}, {0, 0, 0}), param("b", {0, 0}, {0, 0})};
    opt.step(ps);
    EXPECT_EQ(values(ps[0]), (std::vector<double>{1, -2, 3})) << to_string(kind);
    EXPECT_EQ(values(ps[1]), (std::vector<double>{0, 0})) << to_string(kind);
  }
}

TEST(Optimizers, MissingGradIsAValidationError) {
  Optimizer<double> opt(config(OptimizerKind::sgd, 0.1));
  std::vector<P> ps{param("w", {1}, {0.5}), P{"b", Tensor<double>::from({1}, {2}, true)}};
  EXPECT_THROW(opt.step(ps), ValidationError);
  EXPECT_EQ(values(ps[0])[0], 1.0);
}

TEST(Optimizers, NonFiniteGradAbortsTheStep) {
  Optimizer<double> opt(config(OptimizerKind::adam, 0.1));
  std::vector<P> ps{param("w", {1}, {0.5}), param("b", {2}, {std::nan("")})};
  EXPECT_THROW(opt.step(ps), RuntimeFailure);
  EXPECT_EQ(values(ps[0])[0], 1.0);
  EXPECT_EQ(opt.steps(), 0);
}

TEST(Optimizers, ConfigValidation) {
  auto bad = [](auto mutate) {
    OptimizerConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(Optimizer<double>(bad([](auto& c) { c.lr = 0; })), ValidationError);
  EXPECT_THROW(Optimizer<double>(bad([](auto& c) { c.momentum = 1; })), ValidationError);
  EXPECT_THROW(Optimizer<double>(bad([](auto& c) { c.beta2 = 1; })), ValidationError);
  EXPECT_THROW(Optimizer<double>(bad([](auto& c) { c.eps = 0; })), ValidationError);
  EXPECT_THROW(Optimizer<double>(bad([](auto& c) { c.trust_coefficient = 0; })), ValidationError);
  EXPECT_THROW(Optimizer<double>(bad([](auto& c) { c.weight_decay = -1; })), ValidationError);
  EXPECT_THROW(parse_optimizer("rmsprop"), ValidationError);
}

TEST(ZeroGrad, ClearsAndIsIdempotent) {
  std::vector<P> ps{param("w", {1, 2}, {3, 4})};
  zero_grad(std::span(ps));
  zero_grad(std::span(ps));
  for (double g : ps[0].value.grad()) EXPECT_EQ(g, 0.0);
}
