#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace sfsci;
using namespace testutil;

namespace {

struct Fixture {
  CodedMask mask = make_mask(8, 8, 0.5, 4);
  SensingOperator<double> op{mask, 1, 4};
  std::mt19937_64 rng{3};
  Var<double> y = ad::constant(random_tensor({1, 8, 11}, rng));
  Var<double> x = ad::constant(random_tensor({4, 8, 8}, rng));
};

}  // namespace

TEST(AdapterForward, ZeroInitEqualsOwnDataUpdate) {
  Fixture f;
  std::mt19937_64 rng(1);
  const auto a = make_adapter<double>(4, rng, AdapterInit::Kind::zero_residual);
  NoGradGuard ng;
  const auto mu = mu_net_forward(a.mu_net, mu_features(f.y, f.op, 2));
  const auto r = data_update(f.x, f.y, f.op, mu);
  EXPECT_EQ(adapter_forward(f.x, f.y, f.op, a, 2).value(), r.value());
}

TEST(AdapterForward, PreservesShape) {
  Fixture f;
  std::mt19937_64 rng(2);
  const auto a = make_adapter<double>(4, rng, AdapterInit::Kind::random);
  NoGradGuard ng;
  EXPECT_EQ(adapter_forward(f.x, f.y, f.op, a).value().shape(), f.x.value().shape());
}

TEST(AdapterForward, EqualsManualComposition) {
  Fixture f;
  std::mt19937_64 rng(3);
  const auto a = make_adapter<double>(4, rng, AdapterInit::Kind::random);
  NoGradGuard ng;
  const auto mu = mu_net_forward(a.mu_net, mu_features(f.y, f.op, 1));
  const Tensor<double> r = data_update(f.x, f.y, f.op, mu).value();
  Tensor<double> h = conv2d_value(r, a.spatial1.weight.value(), a.spatial1.bias.value());
  for (auto& v : h.vec()) v = std::max(v, 0.0);
  const Tensor<double> spatial = conv2d_value(h, a.spatial2.weight.value(), a.spatial2.bias.value());
  const Tensor<double> spectral = conv2d_value(r, a.spectral.weight.value(), a.spectral.bias.value());
  const Tensor<double> expect = (r + spatial) + spectral;
  EXPECT_EQ(adapter_forward(f.x, f.y, f.op, a, 1).value(), expect);
}

TEST(AdapterParams, EnforcedKernelShapes) {
  std::mt19937_64 rng(4);
  const auto a = make_adapter<float>(8, rng, AdapterInit::Kind::random);
  EXPECT_EQ(a.spatial1.weight.value().shape(), (std::vector<std::size_t>{8, 8, 3, 3}));
  EXPECT_EQ(a.spatial2.weight.value().shape(), (std::vector<std::size_t>{8, 8, 3, 3}));
  EXPECT_EQ(a.spectral.weight.value().shape(), (std::vector<std::size_t>{8, 8, 1, 1}));
  // 2 * (9*64 + 8) + (64 + 8) + mu net (24 + 8 + 8 + 1)
  EXPECT_EQ(a.param_count(), 2u * (9 * 64 + 8) + (64 + 8) + 41);
}

TEST(AttachAdapters, ParameterBookkeeping) {
  const auto student = make_unfolding_model<float>(DenoiserConfig{32, 3, true}, 2, 1, 8, 1);
  const auto am = attach_adapters(student, {AdapterInit::Kind::random, 5});
  ASSERT_EQ(am.adapters.size(), 2u);
  std::size_t sum = 0;
  for (const auto& a : am.adapters) sum += a.param_count();
  EXPECT_EQ(am.param_count() - student.param_count(), sum);
}

TEST(AttachAdapters, BackboneBitIdenticalAndFrozen) {
  const auto student = make_unfolding_model<float>(DenoiserConfig{8, 2, true}, 3, 1, 4, 2);
  const auto am = attach_adapters(student);
  EXPECT_TRUE(am.backbone.frozen());
  std::vector<Tensor<float>> before, after;
  student.visit_parameters([&](const std::string&, const Parameter<float>& p) { before.push_back(p.value()); });
  am.backbone.visit_parameters([&](const std::string&, const Parameter<float>& p) { after.push_back(p.value()); });
  EXPECT_EQ(before, after);
}

TEST(AttachAdapters, TrainableParametersExcludeBackbone) {
  auto am = attach_adapters(make_unfolding_model<float>(DenoiserConfig{8, 2, true}, 2, 1, 4, 2));
  std::set<const void*> backbone;
  am.backbone.visit_parameters([&](const std::string&, Parameter<float>& p) { backbone.insert(&p); });
  const auto params = am.trainable_parameters();
  EXPECT_EQ(params.size(), 2u * 10);
  for (auto* p : params) {
    EXPECT_EQ(backbone.count(p), 0u);
    EXPECT_FALSE(p->frozen());
  }
}

TEST(AttachAdapters, ZeroInitForwardInterleavesBareDataUpdates) {
  std::mt19937_64 rng(6);
  const auto backbone = make_unfolding_model<double>(DenoiserConfig{6, 2, true}, 3, 1, 4, 7);
  const auto am = attach_adapters(backbone, {AdapterInit::Kind::zero_residual, 9});
  const auto m = make_mask(8, 8, 0.5, 2);
  Measurement<double> y{random_tensor({1, 8, 11}, rng), 1, 4};
  auto x = initial_estimate(y, m);
  for (std::size_t k = 0; k < 3; ++k) {
    x = denoise(data_update(x, y, m, estimate_mu(y, m, k, backbone.stages[k])), backbone.stages[k], backbone.denoiser_cfg);
    SensingOperator<double> op(m, 1, 4);
    const double mu_a = mu_net_forward(am.adapters[k].mu_net, mu_features(ad::constant(y.data), op, k)).item();
    x = data_update(x, y, m, mu_a);
  }
  EXPECT_EQ(reconstruct(am, y, m), x);
}

TEST(AttachAdapters, LightweightForDeskConfig) {
  const auto cfg = desk_preset();
  const auto student = make_unfolding_model<float>(cfg.denoiser, cfg.student_stages, 1, 8, 0);
  const auto am = attach_adapters(student);
  const double stage = static_cast<double>(student.param_count()) / static_cast<double>(cfg.student_stages);
  for (const auto& a : am.adapters) EXPECT_LE(static_cast<double>(a.param_count()), 0.15 * stage);
  EXPECT_LE(static_cast<double>(am.adapter_param_count()), 0.15 * static_cast<double>(student.param_count()));
}

TEST(AdaptedModelStats, AddsAdapterMacs) {
  const auto student = make_unfolding_model<float>(DenoiserConfig{8, 2, true}, 2, 1, 4, 0);
  const auto am = attach_adapters(student);
  const std::size_t per_adapter = 2 * conv2d_macs(4, 4, 3, 16, 16) + conv2d_macs(4, 4, 1, 16, 16);
  EXPECT_EQ(model_stats(am, 16, 16).mac_estimate, model_stats(student, 16, 16).mac_estimate + 2 * per_adapter);
}
