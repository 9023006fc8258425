// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "vala/ddim.hpp"

namespace {

using namespace vala;
using namespace vala::ddim;

Latent random_latent(Eigen::Index n, std::uint64_t seed) {
  return oracle::random_matrix(n, 1, seed).col(0);
}

double max_abs(const Latent& v) { return v.cwiseAbs().maxCoeff(); }

TEST(Schedule, LinearBetaProducts) {
  const auto sched = linear_schedule(50);
  ASSERT_EQ(sched.steps(), 50);
  EXPECT_EQ(sched.alpha(0), 1.0);
  double product = 1.0;
  for (int t = 1; t <= 50; ++t) {
    const double beta = 1e-4 + (2e-2 - 1e-4) * (t - 1) / 49.0;
    product *= 1.0 - beta;
    EXPECT_NEAR(sched.alpha(t), product, 1e-15);
  }
}

TEST(Schedule, RejectsNonDecreasingOrOutOfRange) {
  EXPECT_THROW(DiffusionSchedule({1.0, 1.0}), ConfigError);
  EXPECT_THROW(DiffusionSchedule({1.0, 0.5, 0.7}), ConfigError);
  EXPECT_THROW(DiffusionSchedule({1.0, 0.0}), ConfigError);
  EXPECT_THROW(DiffusionSchedule({1.5, 0.5}), ConfigError);
}

TEST(Denoise, HandExample) {
  const DiffusionSchedule sched({1.0, 0.25});
  const Latent out = denoise_step(Latent::Ones(2), 1, sched, zero_predictor());
  EXPECT_NEAR(out(0), 2.0, 1e-15);
  EXPECT_NEAR(out(1), 2.0, 1e-15);
}

TEST(Denoise, NearlyFlatScheduleIsNearlyIdentity) {
  const DiffusionSchedule sched({1.0, 0.5, 0.5 - 1e-12});
  const Latent z = random_latent(4, 1);
  const Latent eps = random_latent(4, 2);
  EXPECT_LT(max_abs(denoise_step_with(z, 2, sched, eps) - z), 1e-10);
}

TEST(Denoise, LinearInLatentForZeroPredictor) {
  const auto sched = linear_schedule(10);
  const Latent z = random_latent(6, 3);
  const Latent a = denoise_step(Latent(3.5 * z), 7, sched, zero_predictor());
  const Latent b = denoise_step(z, 7, sched, zero_predictor());
  EXPECT_LT(max_abs(a - 3.5 * b), 1e-14);
}

TEST(Denoise, RejectsBadTimestep) {
  const auto sched = linear_schedule(5);
  EXPECT_THROW(denoise_step(Latent::Ones(2), 0, sched, zero_predictor()), ConfigError);
  EXPECT_THROW(invert_step(Latent::Ones(2), 6, sched, zero_predictor()), ConfigError);
}

TEST(Invert, ZeroNoiseIsPureScaling) {
  const auto sched = linear_schedule(20);
  const Latent z = random_latent(5, 4);
  const Latent out = invert_step(z, 9, sched, zero_predictor());
  EXPECT_LT(max_abs(out - std::sqrt(sched.alpha(9) / sched.alpha(8)) * z), 1e-15);
}

TEST(Invert, PerStepInverseForAnyFixedNoise) {
  const auto sched = linear_schedule(50);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Latent z = random_latent(32, seed);
    const Latent eps = random_latent(32, 1000 + seed);
    const int t = 1 + static_cast<int>(seed % 50);
    const Latent back = denoise_step_with(invert_step_with(z, t, sched, eps), t, sched, eps);
    EXPECT_LE(max_abs(back - z), 1e-10);
  }
}

TEST(Trajectory, RoundTripWithLatentIndependentPredictors) {
  const auto sched = linear_schedule(50);
  const Latent z0 = random_latent(64, 5);
  for (const auto& pred : {zero_predictor(), timestep_predictor()}) {
    const auto up = run_trajectory(z0, sched, pred, Direction::invert, kSourceCondition);
    const auto down = run_trajectory(up.back(), sched, pred, Direction::denoise, kSourceCondition);
    ASSERT_EQ(up.size(), 51u);
    ASSERT_EQ(down.size(), 51u);
    EXPECT_LE(max_abs(down.back() - z0), 1e-8);
    // Every intermediate state is revisited.
    for (std::size_t i = 0; i <= 50; ++i) EXPECT_LE(max_abs(down[50 - i] - up[i]), 1e-8);
  }
}

TEST(Trajectory, SingleStepHasTwoStates) {
  const auto sched = linear_schedule(1);
  EXPECT_EQ(run_trajectory(Latent::Ones(3), sched, zero_predictor(), Direction::invert).size(), 2u);
}

TEST(Trajectory, ZeroNoiseTelescopes) {
  const auto sched = linear_schedule(50);
  const Latent z0 = random_latent(8, 6);
  const auto up = run_trajectory(z0, sched, zero_predictor(), Direction::invert);
  const Latent expected = std::sqrt(sched.alpha(50) / sched.alpha(0)) * z0;
  EXPECT_LT(max_abs(up.back() - expected), 1e-13);
}

TEST(Trajectory, Deterministic) {
  const auto sched = linear_schedule(30);
  const Latent z0 = random_latent(16, 7);
  const auto pred = guided(linear_predictor(), {});
  const auto a = run_trajectory(z0, sched, pred, Direction::invert);
  const auto b = run_trajectory(z0, sched, pred, Direction::invert);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Trajectory, LatentDependentPredictorDriftStaysSmall) {
  // Not an exact inverse; only a sanity bound on the drift.
  const auto sched = linear_schedule(50);
  const Latent z0 = random_latent(64, 8);
  const auto pred = linear_predictor();
  const auto up = run_trajectory(z0, sched, pred, Direction::invert, kSourceCondition);
  const auto down = run_trajectory(up.back(), sched, pred, Direction::denoise, kSourceCondition);
  EXPECT_TRUE(down.back().allFinite());
  EXPECT_LT(max_abs(down.back() - z0), 0.1);
}

TEST(Guidance, Examples) {
  const Latent one = Latent::Ones(3), zero = Latent::Zero(3);
  EXPECT_EQ(cfg_combine(one, zero, 1.0), one);
  EXPECT_EQ(cfg_combine(one, zero, 0.0), zero);
  EXPECT_EQ(cfg_combine(one, zero, 7.5), Latent::Constant(3, 7.5));
  EXPECT_THROW(cfg_combine(one, Latent::Zero(2), 1.0), DimensionError);
}

TEST(Guidance, IsAffine) {
  const Latent a = random_latent(5, 1), b = random_latent(5, 2), c = random_latent(5, 3),
               d = random_latent(5, 4);
  const Latent lhs = cfg_combine(a + b, c + d, 7.5);
  const Latent rhs = cfg_combine(a, c, 7.5) + cfg_combine(b, d, 7.5);
  EXPECT_LT(max_abs(lhs - rhs), 1e-13);
}

TEST(Guidance, WrappedPredictorCombinesTags) {
  const auto base = timestep_predictor();
  const auto pred = guided(base, {7.5, kSourceCondition, kNullCondition});
  const Latent z = Latent::Zero(4);
  const Latent expected = cfg_combine(base(z, 3, kSourceCondition), base(z, 3, kNullCondition), 7.5);
  EXPECT_EQ(pred(z, 3, kTargetCondition), expected);
}

TEST(Predictor, UnknownNameRejected) {
  EXPECT_THROW(make_predictor("unet"), ConfigError);
}

}  // namespace
