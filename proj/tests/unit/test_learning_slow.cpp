#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace sfsci;
using namespace testutil;

namespace {

std::vector<Tensor<float>> values_of(const UnfoldingModel<float>& m) {
  std::vector<Tensor<float>> out;
  m.visit_parameters([&](const std::string&, const Parameter<float>& p) { out.push_back(p.value()); });
  return out;
}

struct SmallProblem {
  CodedMask mask = make_mask(32, 32, 0.5, 11);
  std::vector<TrainingPair<float>> pairs;

  explicit SmallProblem(std::size_t n, std::uint64_t seed = 5) {
    SyntheticConfig sc{32, 32, 4, 3.0, 2, 3.0, n, seed};
    for (auto& x : gen_synthetic<float>(sc)) pairs.push_back({forward(x, mask, 1), x});
  }

  DistillSet<float> distill_set() const {
    DistillSet<float> d{{}, mask};
    for (const auto& p : pairs) d.measurements.push_back(p.y);
    return d;
  }
};

}  // namespace

TEST(TrainSupervised, OverfitsSinglePair) {
  SmallProblem prob(1);
  const auto model = make_unfolding_model<float>(DenoiserConfig{8, 2, true}, 2, 1, 4, 3);
  TrainConfig tc{500, 1, 2e-3, LrSchedule::cosine_annealing, 1};
  const auto res = train_supervised(model, prob.pairs, prob.mask, tc);
  ASSERT_FALSE(res.aborted) << res.message;
  EXPECT_EQ(res.losses.size(), 500u);
  EXPECT_LE(res.final_loss, 1e-3);
  EXPECT_LT(res.final_loss, res.initial_loss);
}

TEST(TrainSupervised, ZeroEpochsLeavesModelUnchanged) {
  SmallProblem prob(2);
  const auto model = make_unfolding_model<float>(DenoiserConfig{4, 2, true}, 2, 1, 4, 3);
  TrainConfig tc{0, 1, 1e-3, LrSchedule::constant, 0};
  const auto res = train_supervised(model, prob.pairs, prob.mask, tc);
  EXPECT_EQ(values_of(res.model), values_of(model));
  EXPECT_EQ(res.initial_loss, res.final_loss);
  EXPECT_TRUE(res.losses.empty());
}

TEST(TrainSupervised, DeterministicForFixedSeed) {
  SmallProblem prob(3);
  const auto model = make_unfolding_model<float>(DenoiserConfig{4, 2, true}, 2, 1, 4, 3);
  TrainConfig tc{3, 2, 1e-3, LrSchedule::cosine_annealing, 7};
  const auto a = train_supervised(model, prob.pairs, prob.mask, tc);
  const auto b = train_supervised(model, prob.pairs, prob.mask, tc);
  EXPECT_EQ(values_of(a.model), values_of(b.model));
  EXPECT_EQ(a.losses, b.losses);
}

TEST(TrainSupervised, EmptyPairsRejected) {
  const auto model = make_unfolding_model<float>(DenoiserConfig{4, 2, true}, 1, 1, 4, 3);
  EXPECT_THROW(train_supervised(model, {}, make_mask(8, 8, 0.5, 0), TrainConfig{}), ConfigError);
}

TEST(Distill, CopyOfTeacherHasZeroLoss) {
  SmallProblem prob(2);
  const auto teacher = make_unfolding_model<float>(DenoiserConfig{4, 2, true}, 2, 1, 4, 9);
  const auto res = distill(teacher, teacher, prob.distill_set(), TrainConfig{1, 1, 1e-3, LrSchedule::constant, 0});
  EXPECT_EQ(res.initial_loss, 0.0);
}

TEST(Distill, TeacherUntouchedAndLossDrops) {
  SmallProblem prob(4);
  const auto teacher = make_unfolding_model<float>(DenoiserConfig{6, 2, true}, 4, 1, 4, 9);
  const auto student = make_unfolding_model<float>(DenoiserConfig{6, 2, true}, 2, 1, 4, 10);
  const auto before = values_of(teacher);
  const auto res = distill(teacher, student, prob.distill_set(), TrainConfig{40, 2, 2e-3, LrSchedule::cosine_annealing, 2});
  ASSERT_FALSE(res.aborted) << res.message;
  EXPECT_EQ(values_of(teacher), before);
  EXPECT_LT(res.final_loss, res.initial_loss);
  EXPECT_EQ(res.model.stages.size(), 2u);
}

TEST(Distill, LossMatchesManualFrobenius) {
  SmallProblem prob(2);
  const auto teacher = make_unfolding_model<float>(DenoiserConfig{4, 2, true}, 3, 1, 4, 9);
  const auto student = make_unfolding_model<float>(DenoiserConfig{4, 2, true}, 1, 1, 4, 10);
  const auto dset = prob.distill_set();
  double expect = 0;
  for (const auto& y : dset.measurements) {
    const auto d = reconstruct(student, y, prob.mask).data - reconstruct(teacher, y, prob.mask).data;
    for (float v : d.vec()) expect += static_cast<double>(v) * v;
  }
  expect /= 2;
  EXPECT_NEAR(distillation_loss(student, teacher_outputs(teacher, dset), dset), expect, 1e-4 * expect);
}

TEST(Distill, MismatchedArchitecturesRejected) {
  SmallProblem prob(1);
  const auto teacher = make_unfolding_model<float>(DenoiserConfig{4, 2, true}, 2, 1, 4, 9);
  const auto other = make_unfolding_model<float>(DenoiserConfig{8, 2, true}, 1, 1, 4, 9);
  EXPECT_THROW(distill(teacher, other, prob.distill_set(), TrainConfig{}), ConfigError);
  DistillSet<float> empty{{}, prob.mask};
  EXPECT_THROW(distill(teacher, teacher, empty, TrainConfig{}), ConfigError);
}

TEST(TrainingLoop, NonFiniteLossAbortsAndRestoresLastGood) {
  Parameter<double> p(Tensor<double>({1}, 1.0));
  std::vector<double> seen;
  int calls = 0;
  const auto res = run_training_loop<double>({&p}, 1, TrainConfig{10, 1, 0.1, LrSchedule::constant, 0}, [&](std::size_t) {
    seen.push_back(p.value()[0]);
    if (++calls == 4) return ad::scale(ad::mse(p.var(), p.var()), std::numeric_limits<double>::quiet_NaN());
    return ad::mse(p.var(), ad::constant(Tensor<double>({1}, 0.0)));
  });
  EXPECT_TRUE(res.aborted);
  EXPECT_NE(res.message.find("epoch 3"), std::string::npos);
  EXPECT_EQ(res.epoch_losses.size(), 3u);
  // back to the last values that gave a finite loss, not the ones that failed
  ASSERT_EQ(seen.size(), 4u);
  EXPECT_EQ(p.value()[0], seen[2]);
  EXPECT_LT(p.value()[0], 1.0);
}

TEST(TrainingLoop, CosineScheduleEndpoints) {
  EXPECT_EQ(scheduled_lr(1.0, LrSchedule::cosine_annealing, 0, 10), 1.0);
  EXPECT_NEAR(scheduled_lr(1.0, LrSchedule::cosine_annealing, 5, 10), 0.5, 1e-15);
  EXPECT_EQ(scheduled_lr(0.3, LrSchedule::constant, 7, 10), 0.3);
}

TEST(TrainingLoop, InvalidConfigRejected) {
  Parameter<double> p(Tensor<double>({1}, 1.0));
  auto f = [&](std::size_t) { return ad::mse(p.var(), p.var()); };
  EXPECT_THROW(run_training_loop<double>({&p}, 1, TrainConfig{1, 0, 0.1, LrSchedule::constant, 0}, f), ConfigError);
  EXPECT_THROW(run_training_loop<double>({&p}, 1, TrainConfig{1, 1, 0.0, LrSchedule::constant, 0}, f), ConfigError);
}
