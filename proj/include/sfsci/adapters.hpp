#pragma once

// Lightweight per-stage adaptation module appended after each frozen
// unfolding stage: its own data update (with its own mu net), then a residual
// sum of a spatial block (3x3 conv, ReLU, 3x3 conv) and a spectral block
// (1x1 conv), all at the band width B.

#include "sfsci/unfolding.hpp"

namespace sfsci {

template <typename T>
struct AdapterParams {
  ConvLayer<T> spatial1;  // 3x3, B -> B
  ConvLayer<T> spatial2;  // 3x3, B -> B
  ConvLayer<T> spectral;  // 1x1, B -> B
  MuNet<T> mu_net;

  template <typename F>
  void visit_parameters(const std::string& prefix, F& f) {
    f(prefix + ".spatial1.weight", spatial1.weight);
    f(prefix + ".spatial1.bias", spatial1.bias);
    f(prefix + ".spatial2.weight", spatial2.weight);
    f(prefix + ".spatial2.bias", spatial2.bias);
    f(prefix + ".spectral.weight", spectral.weight);
    f(prefix + ".spectral.bias", spectral.bias);
    f(prefix + ".mu.w1", mu_net.w1);
    f(prefix + ".mu.b1", mu_net.b1);
    f(prefix + ".mu.w2", mu_net.w2);
    f(prefix + ".mu.b2", mu_net.b2);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    auto count = [&](const std::string&, Parameter<T>& p) { n += p.size(); };
    const_cast<AdapterParams*>(this)->visit_parameters("", count);
    return n;
  }

  bool operator==(const AdapterParams&) const = default;
};

struct AdapterInit {
  enum class Kind { zero_residual, random } kind = Kind::zero_residual;
  std::uint64_t seed = 0;
};

template <typename T>
AdapterParams<T> make_adapter(std::size_t bands, std::mt19937_64& rng, AdapterInit::Kind kind, double mu_init = 0.1) {
  AdapterParams<T> a;
  a.spatial1 = detail::make_conv<T>(bands, bands, 3, rng, T(1));
  a.spatial2 = detail::make_conv<T>(bands, bands, 3, rng, T(0.1));
  a.spectral = detail::make_conv<T>(bands, bands, 1, rng, T(0.1));
  if (kind == AdapterInit::Kind::zero_residual) {
    a.spatial2.weight.mutable_value().fill(T(0));
    a.spectral.weight.mutable_value().fill(T(0));
  }
  a.mu_net = detail::make_mu_net<T>(rng, mu_init);
  return a;
}

/// out = r + spatial(r) + spectral(r) with r the adapter's own data update.
template <typename T>
Var<T> adapter_forward(const Var<T>& x_stage, const Var<T>& y, const SensingOperator<T>& op,
                       const AdapterParams<T>& adapter, std::size_t stage_index = 0) {
  Var<T> mu = mu_net_forward(adapter.mu_net, mu_features(y, op, stage_index));
  Var<T> r = data_update(x_stage, y, op, mu);
  Var<T> spatial = adapter.spatial2(ad::relu(adapter.spatial1(r)));
  Var<T> spectral = adapter.spectral(r);
  return ad::add(ad::add(r, spatial), spectral);
}

/// Frozen backbone plus one adapter per stage.
template <typename T>
struct AdaptedModel {
  UnfoldingModel<T> backbone;
  std::vector<AdapterParams<T>> adapters;

  template <typename F>
  void visit_adapter_parameters(F&& f) {
    for (std::size_t k = 0; k < adapters.size(); ++k) adapters[k].visit_parameters("adapter" + std::to_string(k), f);
  }

  /// Only the adapter parameters; this is what optimizers receive.
  std::vector<Parameter<T>*> trainable_parameters() {
    std::vector<Parameter<T>*> out;
    visit_adapter_parameters([&](const std::string&, Parameter<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t adapter_param_count() const {
    std::size_t n = 0;
    for (const auto& a : adapters) n += a.param_count();
    return n;
  }
  std::size_t param_count() const { return backbone.param_count() + adapter_param_count(); }

  bool operator==(const AdaptedModel&) const = default;
};

/// Copies the backbone, marks it frozen, and appends one adapter per stage.
template <typename T>
AdaptedModel<T> attach_adapters(const UnfoldingModel<T>& model, AdapterInit init = {}) {
  AdaptedModel<T> am;
  am.backbone = model;
  am.backbone.set_frozen(true);
  std::mt19937_64 rng(init.seed);
  for (std::size_t k = 0; k < model.num_stages(); ++k) am.adapters.push_back(make_adapter<T>(model.bands, rng, init.kind));
  return am;
}

/// Backbone stage k followed by adapter k, for every stage.
template <typename T>
Var<T> reconstruct(const AdaptedModel<T>& model, const Var<T>& y, const SensingOperator<T>& op) {
  if (model.adapters.size() != model.backbone.num_stages()) {
    throw DimensionError("adapter count must equal backbone stage count");
  }
  StageHook<T> hook = [&](std::size_t k, const Var<T>& x) { return adapter_forward(x, y, op, model.adapters[k], k); };
  return reconstruct(model.backbone, y, op, hook);
}

template <typename T>
HyperspectralCube<T> reconstruct(const AdaptedModel<T>& model, const Measurement<T>& y, const CodedMask& mask) {
  NoGradGuard ng;
  SensingOperator<T> op(mask, y.shift, y.bands);
  return HyperspectralCube<T>(reconstruct(model, ad::constant(y.data), op).value());
}

template <typename T>
ModelStats model_stats(const AdaptedModel<T>& model, std::size_t height, std::size_t width) {
  ModelStats st = model_stats(model.backbone, height, width);
  st.param_count = model.param_count();
  for (const auto& a : model.adapters) {
    st.mac_estimate += conv2d_macs(a.spatial1.in_channels(), a.spatial1.out_channels(), 3, height, width);
    st.mac_estimate += conv2d_macs(a.spatial2.in_channels(), a.spatial2.out_channels(), 3, height, width);
    st.mac_estimate += conv2d_macs(a.spectral.in_channels(), a.spectral.out_channels(), 1, height, width);
  }
  return st;
}

}  // namespace sfsci
