#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace sfsci;
using namespace testutil;

namespace {

Tensor<double> grid(std::size_t b, std::size_t h, std::size_t w) {
  Tensor<double> t({b, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  return t;
}

// B = 1, d = 0 and an all-ones mask make Phi the identity; with zero-residual
// denoisers and adapters the whole pipeline returns y unchanged.
struct IdentityProblem {
  CodedMask mask = ones_mask(8, 8);
  SensingOperator<double> op{mask, 0, 1};
  AdaptedModel<double> model = attach_adapters(
      make_unfolding_model<double>(DenoiserConfig{4, 2, true}, 2, 0, 1, 3, InitMode::zero_residual),
      {AdapterInit::Kind::zero_residual, 4});
  std::mt19937_64 rng{1};
  Var<double> y = ad::constant(random_tensor({1, 8, 8}, rng));
};

struct SmallTarget {
  CodedMask mask = make_mask(16, 16, 0.5, 21);
  std::vector<HyperspectralCube<double>> truth;
  DistillSet<double> set{{}, mask};

  explicit SmallTarget(std::size_t n) {
    SyntheticConfig sc{16, 16, 4, 2.0, 3, 1.0, n, 8};
    truth = gen_synthetic<double>(sc);
    for (const auto& x : truth) set.measurements.push_back(forward(x, mask, 1));
  }
};

AdaptedModel<double> small_adapted(std::uint64_t seed, AdapterInit::Kind kind = AdapterInit::Kind::random) {
  return attach_adapters(make_unfolding_model<double>(DenoiserConfig{4, 2, true}, 2, 1, 4, seed), {kind, seed + 1});
}

std::vector<Tensor<double>> backbone_values(const AdaptedModel<double>& m) {
  std::vector<Tensor<double>> out;
  m.backbone.visit_parameters([&](const std::string&, const Parameter<double>& p) { out.push_back(p.value()); });
  return out;
}

std::vector<Tensor<double>> adapter_values(AdaptedModel<double>& m) {
  std::vector<Tensor<double>> out;
  for (auto* p : m.trainable_parameters()) out.push_back(p->value());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// transforms

TEST(Transforms, FlipTwiceIsIdentity) {
  const auto x = grid(2, 3, 5);
  EXPECT_EQ(apply_transform(apply_transform(x, Transform::flip_h()), Transform::flip_h()), x);
  EXPECT_EQ(apply_transform(apply_transform(x, Transform::flip_v()), Transform::flip_v()), x);
  EXPECT_NE(apply_transform(x, Transform::flip_h()), x);
}

TEST(Transforms, ShiftInverseAndFullPeriod) {
  const auto x = grid(2, 4, 6);
  const auto t = Transform::shift(3, -2);
  EXPECT_EQ(invert_transform(apply_transform(x, t), t), x);
  EXPECT_EQ(apply_transform(x, Transform::shift(4, 6)), x);
  EXPECT_EQ(apply_transform(x, Transform::shift(1, 0))(0, 1, 0), x(0, 0, 0));
}

TEST(Transforms, FourQuarterTurnsIsIdentity) {
  const auto x = grid(3, 4, 4);
  auto y = x;
  for (int k = 0; k < 4; ++k) y = apply_transform(y, Transform::rot90(1));
  EXPECT_EQ(y, x);
  EXPECT_EQ(apply_transform(x, Transform::rot90(4)), x);
  EXPECT_EQ(invert_transform(apply_transform(x, Transform::rot90(3)), Transform::rot90(3)), x);
}

TEST(Transforms, QuarterTurnHandExample) {
  // [[1,2],[3,4]] turned counter-clockwise is [[2,4],[1,3]]
  const Tensor<double> x({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(apply_transform(x, Transform::rot90(1)).vec(), (std::vector<double>{2, 4, 1, 3}));
}

TEST(Transforms, RotationOfNonSquareRejected) {
  EXPECT_THROW(apply_transform(grid(1, 3, 4), Transform::rot90(1)), ConfigError);
  TransformSpec spec;
  EXPECT_THROW(spec.validate(3, 4), ConfigError);
  spec.rot90 = false;
  EXPECT_NO_THROW(spec.validate(3, 4));
}

TEST(Transforms, GradientIsInversePermutation) {
  std::mt19937_64 rng(2);
  for (const auto& t : {Transform::flip_h(), Transform::rot90(1), Transform::shift(2, 3)}) {
    Var<double> x(random_tensor({2, 5, 5}, rng), true);
    const auto g = random_tensor({2, 5, 5}, rng);
    backward(ad::mean(ad::mul_const(apply_transform(x, t), g)));
    const auto expect = invert_transform(g, t) * (1.0 / 50.0);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(x.grad()[i], expect[i], 1e-15);
  }
}

TEST(Transforms, SamplingDeterministicAndRestricted) {
  TransformSpec only_shift{false, false, false, true, 3};
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 20; ++i) {
    const auto t = only_shift.sample(a);
    EXPECT_EQ(t, only_shift.sample(b));
    EXPECT_EQ(t.kind, Transform::Kind::shift);
    EXPECT_LE(std::abs(t.du), 3);
    EXPECT_LE(std::abs(t.dv), 3);
  }
  TransformSpec none{false, false, false, false, 0};
  EXPECT_EQ(none.sample(a), Transform::identity());
}

// ---------------------------------------------------------------------------
// individual losses

TEST(LossMeasurement, ZeroAtGroundTruth) {
  std::mt19937_64 rng(3);
  const auto m = make_mask(6, 6, 0.5, 1);
  SensingOperator<double> op(m, 1, 3);
  const auto x = random_cube(6, 6, 3, rng);
  const auto y = forward(x, m, 1);
  EXPECT_EQ(loss_measurement(ad::constant(x.data), ad::constant(y.data), op).item(), 0.0);
}

TEST(LossMeasurement, ZeroEstimateGivesMeasurementEnergy) {
  std::mt19937_64 rng(4);
  const auto m = make_mask(6, 6, 0.5, 1);
  SensingOperator<double> op(m, 1, 3);
  const auto y = random_tensor({1, 6, 8}, rng);
  double e = 0;
  for (double v : y.vec()) e += v * v;
  EXPECT_NEAR(loss_measurement(ad::constant(Tensor<double>({3, 6, 6})), ad::constant(y), op).item(), e / 48.0, 1e-15);
}

TEST(LossMeasurement, MatchesDenseOracle) {
  std::mt19937_64 rng(5);
  const auto m = make_mask(5, 4, 0.5, 2);
  SensingOperator<double> op(m, 2, 3);
  const auto x = random_tensor({3, 5, 4}, rng), y = random_tensor({1, 5, 8}, rng);
  const Eigen::VectorXd r = dense_phi(m, 2, 3) * to_eigen(x) - to_eigen(y);
  EXPECT_NEAR(loss_measurement(ad::constant(x), ad::constant(y), op).item(), r.squaredNorm() / 40.0, 1e-13);
}

TEST(LossMeasurement, BlindToNullSpace) {
  // Phi Phi^T is diagonal, so z - Phi^T ((Phi z) / diag) lies in null(Phi).
  std::mt19937_64 rng(6);
  const auto m = make_mask(6, 6, 0.5, 3);
  SensingOperator<double> op(m, 1, 4);
  const auto x = random_tensor({4, 6, 6}, rng), z = random_tensor({4, 6, 6}, rng);
  const auto y = random_tensor({1, 6, 9}, rng);
  auto pz = op.forward(z);
  const auto& dg = op.diag();
  for (std::size_t i = 0; i < pz.size(); ++i) pz[i] = dg[i] > 0 ? pz[i] / dg[i] : 0.0;
  const Tensor<double> null = z - op.adjoint(pz);
  EXPECT_LT(norm2(op.forward(null)), 1e-12);
  EXPECT_GT(norm2(null), 0.1);
  EXPECT_NEAR(loss_measurement(ad::constant(Tensor<double>(x + null)), ad::constant(y), op).item(),
              loss_measurement(ad::constant(x), ad::constant(y), op).item(), 1e-12);
}

TEST(LossEi, ZeroForPerfectInverse) {
  IdentityProblem p;
  NoGradGuard ng;
  const auto xhat = reconstruct(p.model, p.y, p.op);
  EXPECT_EQ(xhat.value(), p.y.value());
  for (const auto& t : {Transform::flip_h(), Transform::rot90(1), Transform::shift(3, 5)}) {
    EXPECT_EQ(loss_ei(p.model, xhat, p.op, t).item(), 0.0);
    EXPECT_EQ(loss_ei(p.model, xhat, p.op, t, true).item(), 0.0);
  }
}

TEST(LossEi, IdentityLikeTransformsAgree) {
  SmallTarget st(1);
  const auto model = small_adapted(2);
  SensingOperator<double> op(st.mask, 1, 4);
  NoGradGuard ng;
  const auto xhat = reconstruct(model, ad::constant(st.set.measurements[0].data), op);
  const double base = loss_ei(model, xhat, op, Transform::identity()).item();
  EXPECT_EQ(loss_ei(model, xhat, op, Transform::rot90(4)).item(), base);
  EXPECT_EQ(loss_ei(model, xhat, op, Transform::shift(16, -16)).item(), base);
}

TEST(LossEi, MatchesManualComposition) {
  SmallTarget st(1);
  const auto model = small_adapted(3);
  SensingOperator<double> op(st.mask, 1, 4);
  const auto& y = st.set.measurements[0];
  NoGradGuard ng;
  const auto xhat = reconstruct(model, y, st.mask);
  const auto t = Transform::flip_v();
  const HyperspectralCube<double> tx(apply_transform(xhat.data, t));
  const auto again = reconstruct(model, forward(tx, st.mask, 1), st.mask);
  double expect = 0;
  for (std::size_t i = 0; i < tx.data.size(); ++i) expect += std::pow(again.data[i] - tx.data[i], 2);
  expect /= static_cast<double>(tx.data.size());
  EXPECT_NEAR(loss_ei(model, ad::constant(xhat.data), op, t).item(), expect, 1e-14);
}

TEST(LossIu, NoNoiseIsZero) {
  SmallTarget st(1);
  const auto model = small_adapted(4);
  SensingOperator<double> op(st.mask, 1, 4);
  EXPECT_EQ(loss_iu(model, ad::constant(st.set.measurements[0].data), op, NoNoise{}, 1).item(), 0.0);
}

TEST(LossIu, DeterministicAndMatchesManual) {
  SmallTarget st(1);
  const auto model = small_adapted(5);
  SensingOperator<double> op(st.mask, 1, 4);
  const auto& y = st.set.measurements[0];
  NoGradGuard ng;
  const double a = loss_iu(model, ad::constant(y.data), op, ShotNoise{11}, 77).item();
  EXPECT_EQ(a, loss_iu(model, ad::constant(y.data), op, ShotNoise{11}, 77).item());
  EXPECT_NE(a, loss_iu(model, ad::constant(y.data), op, ShotNoise{11}, 78).item());
  const auto noisy = add_noise(y, SensingConfig{1, ShotNoise{11}, 77});
  const auto d = reconstruct(model, noisy, st.mask).data - reconstruct(model, y, st.mask).data;
  double expect = 0;
  for (double v : d.vec()) expect += v * v;
  EXPECT_NEAR(a, expect / static_cast<double>(d.size()), 1e-14);
  EXPECT_GT(a, 0.0);
}

TEST(LossTv, ConstantIsZero) {
  EXPECT_EQ(loss_tv(ad::constant(Tensor<double>({3, 5, 4}, 0.42))).item(), 0.0);
}

TEST(LossTv, StepEdgeHandExample) {
  // one vertical edge of height 1 across 4 rows: 4 unit jumps over 24 terms
  Tensor<double> x({1, 4, 4});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 2; c < 4; ++c) x(0, r, c) = 1.0;
  EXPECT_DOUBLE_EQ(loss_tv(ad::constant(x)).item(), 4.0 / 24.0);
}

TEST(LossTv, AbsolutelyHomogeneous) {
  std::mt19937_64 rng(7);
  const auto x = random_tensor({2, 6, 5}, rng);
  const double base = loss_tv(ad::constant(x)).item();
  EXPECT_NEAR(loss_tv(ad::constant(Tensor<double>(x * -2.5))).item(), 2.5 * base, 1e-14);
}

TEST(LossTv, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(8);
  Parameter<double> p(random_tensor({2, 4, 5}, rng));
  backward(loss_tv(p.var()));
  const auto g = p.grad();
  for (std::size_t i = 0; i < p.size(); i += 3) {
    const double fd = central_diff(p, i, [&] { return loss_tv(ad::constant(p.value())).item(); }, 1e-7);
    EXPECT_LT(grad_err(g[i], fd), 1e-5) << i;
  }
}

// ---------------------------------------------------------------------------
// registry

TEST(LossRegistryTest, UnknownNameRejected) {
  EXPECT_THROW(LossRegistry<double>::instance().get("nope"), ConfigError);
  SmallTarget st(1);
  SSTConfig cfg;
  cfg.ei_loss = "nope";
  std::mt19937_64 rng(1);
  SensingOperator<double> op(st.mask, 1, 4);
  EXPECT_THROW(sst_sample_loss(small_adapted(1), ad::constant(st.set.measurements[0].data), op, cfg, rng), ConfigError);
}

TEST(LossRegistryTest, CustomLossIsUsed) {
  LossRegistry<double>::instance().add("test_const", [](const LossContext<double>&) { return ad::scalar(3.0); });
  SmallTarget st(1);
  SSTConfig cfg;
  cfg.ei_loss = "test_const";
  cfg.w2 = 0;
  cfg.w3 = 0;
  std::mt19937_64 rng(1);
  SensingOperator<double> op(st.mask, 1, 4);
  SSTBreakdown bd;
  NoGradGuard ng;
  sst_sample_loss(small_adapted(1), ad::constant(st.set.measurements[0].data), op, cfg, rng, &bd);
  EXPECT_EQ(bd.ei, 3.0);
  EXPECT_NEAR(bd.total, bd.m + cfg.w1 * 3.0, 1e-15);
}

// ---------------------------------------------------------------------------
// train_adapters

TEST(TrainAdapters, BackboneUntouchedAndObjectiveDrops) {
  SmallTarget st(4);
  const auto model = small_adapted(6, AdapterInit::Kind::zero_residual);
  SSTConfig cfg;
  cfg.epochs = 15;
  cfg.lr = 3e-3;
  cfg.seed = 2;
  const auto res = train_adapters(model, st.set, cfg);
  ASSERT_FALSE(res.aborted) << res.message;
  EXPECT_EQ(backbone_values(res.model), backbone_values(model));
  EXPECT_TRUE(res.model.backbone.frozen());
  EXPECT_EQ(res.epochs.size(), 15u);
  EXPECT_LT(res.final_.total, res.initial.total);
}

TEST(TrainAdapters, ZeroWeightsReduceToMeasurementLoss) {
  SmallTarget st(2);
  SSTConfig cfg;
  cfg.w1 = cfg.w2 = cfg.w3 = 0;
  cfg.epochs = 2;
  const auto res = train_adapters(small_adapted(7), st.set, cfg);
  for (const auto& e : res.epochs) {
    EXPECT_EQ(e.total, e.m);
    EXPECT_EQ(e.ei, 0.0);
    EXPECT_EQ(e.iu, 0.0);
    EXPECT_EQ(e.tv, 0.0);
  }
  EXPECT_EQ(res.initial.total, res.initial.m);
}

TEST(TrainAdapters, Deterministic) {
  SmallTarget st(2);
  SSTConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 9;
  auto a = train_adapters(small_adapted(8), st.set, cfg);
  auto b = train_adapters(small_adapted(8), st.set, cfg);
  EXPECT_EQ(adapter_values(a.model), adapter_values(b.model));
}

TEST(TrainAdapters, UnfrozenBackboneAndBadWeightsRejected) {
  SmallTarget st(1);
  auto model = small_adapted(9);
  SSTConfig bad;
  bad.w2 = -1;
  EXPECT_THROW(train_adapters(model, st.set, bad), ConfigError);
  model.backbone.set_frozen(false);
  EXPECT_THROW(train_adapters(model, st.set, SSTConfig{}), ConfigError);
}

// ---------------------------------------------------------------------------
// test-time adaptation

TEST(LossTta, LambdaZeroIsMeasurementLossExactly) {
  SmallTarget st(1);
  const auto model = small_adapted(10);
  SensingOperator<double> op(st.mask, 1, 4);
  const auto y = ad::constant(st.set.measurements[0].data);
  NoGradGuard ng;
  const auto l = loss_tta(model, y, op, 0.0, Transform::flip_h());
  EXPECT_EQ(l.total.item(), l.im);
  EXPECT_EQ(l.ker, 0.0);
  EXPECT_EQ(l.im, loss_measurement(reconstruct(model, y, op), y, op).item());
}

TEST(LossTta, ZeroForPerfectInverse) {
  IdentityProblem p;
  NoGradGuard ng;
  const auto l = loss_tta(p.model, p.y, p.op, 0.7, Transform::rot90(1));
  EXPECT_EQ(l.total.item(), 0.0);
}

TEST(LossTta, TotalIsImPlusLambdaKer) {
  SmallTarget st(1);
  const auto model = small_adapted(11);
  SensingOperator<double> op(st.mask, 1, 4);
  const auto y = ad::constant(st.set.measurements[0].data);
  NoGradGuard ng;
  const auto l = loss_tta(model, y, op, 0.7, Transform::shift(2, 1));
  EXPECT_NEAR(l.total.item(), l.im + 0.7 * l.ker, 1e-15);
  EXPECT_NEAR(l.ker, loss_ei(model, l.xhat, op, Transform::shift(2, 1), true).item(), 1e-15);
}

TEST(LossTta, KernelLabelIsDetached) {
  // With the label detached, d L_ker / d theta only flows through the second
  // pass, so it differs from the undetached equivariance gradient.
  SmallTarget st(1);
  auto model = small_adapted(12);
  SensingOperator<double> op(st.mask, 1, 4);
  const auto y = ad::constant(st.set.measurements[0].data);
  auto params = model.trainable_parameters();
  auto grads = [&](bool detach) {
    for (auto* p : params) p->zero_grad();
    backward(loss_ei(model, reconstruct(model, y, op), op, Transform::flip_h(), detach));
    std::vector<Tensor<double>> g;
    for (auto* p : params) g.push_back(p->grad());
    return g;
  };
  EXPECT_NE(grads(true), grads(false));
}

TEST(Adapt, ZeroIterationsEqualsPlainReconstruction) {
  SmallTarget st(1);
  const auto model = small_adapted(13);
  TTAConfig cfg;
  cfg.iters = 0;
  const auto res = adapt(model, st.set.measurements[0], st.mask, cfg, &st.truth[0]);
  EXPECT_EQ(res.reconstruction, reconstruct(model, st.set.measurements[0], st.mask));
  ASSERT_EQ(res.trace.size(), 1u);
  EXPECT_FALSE(std::isnan(res.trace[0].psnr));
}

TEST(Adapt, BackboneUntouchedBestNotWorseAndDeterministic) {
  SmallTarget st(1);
  const auto model = small_adapted(14);
  TTAConfig cfg;
  cfg.iters = 10;
  cfg.lr = 2e-3;
  cfg.seed = 3;
  auto a = adapt(model, st.set.measurements[0], st.mask, cfg);
  auto b = adapt(model, st.set.measurements[0], st.mask, cfg);
  EXPECT_EQ(backbone_values(a.model), backbone_values(model));
  ASSERT_EQ(a.trace.size(), 11u);
  for (std::size_t i = 1; i < a.trace.size(); ++i) EXPECT_LE(a.trace[i].best_loss, a.trace[i - 1].best_loss);
  EXPECT_LE(a.trace.back().best_loss, a.trace.front().loss);
  EXPECT_EQ(a.reconstruction, b.reconstruction);
  EXPECT_EQ(adapter_values(a.model), adapter_values(b.model));
}

TEST(Adapt, InvalidConfigRejected) {
  SmallTarget st(1);
  TTAConfig cfg;
  cfg.lam = -1;
  EXPECT_THROW(adapt(small_adapted(1), st.set.measurements[0], st.mask, cfg), ConfigError);
}

// ---------------------------------------------------------------------------
// end-to-end gradient of the adapted pipeline

TEST(AdaptedGradient, MatchesCentralDifferences) {
  // L_m + lam L_ei without a stop-gradient, so autodiff must agree with the
  // derivative of the value itself
  SmallTarget st(1);
  auto model = small_adapted(15);
  SensingOperator<double> op(st.mask, 1, 4);
  const auto y = ad::constant(st.set.measurements[0].data);
  const auto t = Transform::rot90(1);
  auto objective = [&] {
    const auto xhat = reconstruct(model, y, op);
    return ad::weighted_sum<double>({{1.0, loss_measurement(xhat, y, op)}, {0.7, loss_ei(model, xhat, op, t)}});
  };
  auto params = model.trainable_parameters();
  for (auto* p : params) p->zero_grad();
  backward(objective());
  auto f = [&] {
    NoGradGuard ng;
    return objective().item();
  };
  std::size_t checked = 0;
  for (auto* p : params) {
    const Tensor<double> g = p->grad();
    for (std::size_t idx : {std::size_t{0}, p->size() / 2, p->size() - 1}) {
      const double fd = central_diff(*p, idx, f, 1e-6);
      EXPECT_LT(grad_err(g[idx], fd), 1e-3) << "param " << checked;
      ++checked;
    }
  }
  EXPECT_GE(checked, 20u);
}
