#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "promptsched/grad_check.hpp"
#include "promptsched/scheduler.hpp"

using namespace promptsched;

TEST(InitScheduler, UniformRowsAtStart) {
  auto [pool, state] = init_scheduler(3, 4, 8, 0);
  EXPECT_EQ(pool.prompts.shape, (Shape{4, 8}));
  for (std::size_t t = 0; t < 3; ++t)
    for (double w : schedule_weights(state, t).values) EXPECT_DOUBLE_EQ(w, 0.25);
}

TEST(InitScheduler, DeterministicInSeed) {
  auto a = init_scheduler(3, 4, 8, 42, 2).first;
  auto b = init_scheduler(3, 4, 8, 42, 2).first;
  auto c = init_scheduler(3, 4, 8, 43, 2).first;
  EXPECT_EQ(a.prompts.values, b.prompts.values);
  EXPECT_NE(a.prompts.values, c.prompts.values);
}

TEST(InitScheduler, DegenerateSimplex) {
  auto [pool, state] = init_scheduler(1, 1, 1, 5);
  EXPECT_EQ(schedule_weights(state, 0).values, std::vector<double>{1.0});
}

TEST(InitScheduler, RejectsZeroSizes) {
  EXPECT_THROW(init_scheduler(0, 4, 8, 0), Error);
  EXPECT_THROW(init_scheduler(2, 0, 8, 0), Error);
  EXPECT_THROW(init_scheduler(2, 4, 0, 0), Error);
}

TEST(InitScheduler, PoolScaleMatchesOneOverSqrtD) {
  auto pool = init_scheduler(1, 64, 64, 9).first;
  double ss = 0.0;
  for (double v : pool.prompts.values) ss += v * v;
  const double sd = std::sqrt(ss / static_cast<double>(pool.prompts.size()));
  EXPECT_NEAR(sd, 0.125, 0.01);
}

TEST(ScheduleWeights, Examples) {
  SchedulerState s{Tensor::matrix(2, 2, {1.0, 2.0, 0.0, 0.0}), 1.0};
  auto w = schedule_weights(s, 0);
  EXPECT_NEAR(w[0], 0.26894142, 1e-8);
  EXPECT_NEAR(w[1], 0.73105858, 1e-8);
  EXPECT_THROW(schedule_weights(s, 2), Error);

  SchedulerState cold{Tensor::matrix(1, 3, {10.0, 0.0, 0.0}), 0.001};
  EXPECT_GE(schedule_weights(cold, 0)[0], 1.0 - 1e-6);
}

TEST(ComposePrompt, OneHotSelectsPrompt) {
  auto pool = init_scheduler(1, 3, 4, 1, 2).first;
  auto c = compose_prompt(Tensor::vector({0.0, 1.0, 0.0}), pool);
  EXPECT_EQ(c.vector.values, pool.prompt(1).values);
  EXPECT_EQ(c.vector.shape, (Shape{2, 4}));
}

TEST(ComposePrompt, ConstantPool) {
  PromptPool pool{3, 1, 2, Tensor::matrix(3, 2, {0.7, -1.1, 0.7, -1.1, 0.7, -1.1})};
  auto c = compose_prompt(Tensor::vector({0.2, 0.5, 0.3}), pool);
  EXPECT_NEAR(c.vector[0], 0.7, 1e-15);
  EXPECT_NEAR(c.vector[1], -1.1, 1e-15);
}

TEST(ComposePrompt, HalfHalf) {
  PromptPool pool{2, 1, 2, Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 1.0})};
  auto c = compose_prompt(Tensor::vector({0.5, 0.5}), pool);
  EXPECT_EQ(c.vector.values, (std::vector<double>{0.5, 0.5}));
}

TEST(ComposePrompt, Rejections) {
  PromptPool pool{2, 1, 2, Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 1.0})};
  EXPECT_THROW(compose_prompt(Tensor::vector({0.2, 0.3, 0.5}), pool), Error);
  EXPECT_THROW(compose_prompt(Tensor::vector({0.2, 0.3}), pool), Error);
}

TEST(SchedulingEntropy, Examples) {
  EXPECT_NEAR(scheduling_entropy(Tensor::vector({0.25, 0.25, 0.25, 0.25})), 1.3862944, 1e-7);
  EXPECT_EQ(scheduling_entropy(Tensor::vector({0.0, 1.0, 0.0})), 0.0);
  EXPECT_NEAR(scheduling_entropy(Tensor::vector({0.26894142, 0.73105858})), 0.5822, 1e-4);
  EXPECT_THROW(scheduling_entropy(Tensor::vector({-0.1, 1.1})), Error);
}

TEST(SchedulerProperties, SimplexHullAndEntropyMonotone) {
  std::mt19937_64 rng(123);
  std::normal_distribution<double> nd(0.0, 2.0);
  const double grid[] = {0.5, 0.7, 0.9, 1.1, 1.3};
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t K = 2 + trial % 6, d = 1 + trial % 5, m = 1 + trial % 3;
    auto pool = init_scheduler(1, K, d, static_cast<std::uint64_t>(trial), m).first;
    SchedulerState s{Tensor::zeros({1, K}), 1.0};
    for (auto& v : s.logits.values) v = nd(rng);
    double prev = -1.0;
    for (double tau : grid) {
      s.tau = tau;
      auto w = schedule_weights(s, 0);
      double sum = 0.0;
      for (double v : w.values) sum += v;
      ASSERT_NEAR(sum, 1.0, 1e-9);
      const double h = scheduling_entropy(w);
      EXPECT_GT(h, prev);
      prev = h;
      auto c = compose_prompt(w, pool);
      for (std::size_t j = 0; j < m * d; ++j) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t k = 0; k < K; ++k) {
          lo = std::min(lo, pool.prompts.at(k, j));
          hi = std::max(hi, pool.prompts.at(k, j));
        }
        EXPECT_GE(c.vector[j], lo - 1e-12);
        EXPECT_LE(c.vector[j], hi + 1e-12);
      }
    }
  }
}

TEST(SchedulerProperties, GradientThroughScheduleAndCompose) {
  auto pool = init_scheduler(2, 3, 4, 17, 2).first;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor Z = Tensor::zeros({2, 3});
  for (auto& v : Z.values) v = nd(rng);
  Tensor target = Tensor::zeros({2, 4});
  for (auto& v : target.values) v = nd(rng);
  auto res = ad::grad_check(
      [&](ad::Tape& t, std::span<const ad::Var> x) {
        auto w = schedule_weights(x[0], 1, 0.7);
        auto c = compose_prompt(w, x[1], 2, 4);
        return ad::sum(ad::mul(c, t.constant(target)));
      },
      {Z, pool.prompts}, 1e-5);
  EXPECT_LE(res.max_rel_error, 1e-6);
}

TEST(SchedulerCsv, HeaderAndRows) {
  SchedulerState s{Tensor::matrix(2, 3, {0, 0, 0, 1, 2, 3}), 1.0};
  std::ostringstream os;
  write_scheduler_csv(os, s);
  const auto text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "task,k0,k1,k2");
  EXPECT_NE(text.find("\n0,0.3333333333333333,0.3333333333333333,0.3333333333333333\n"), std::string::npos);
}
