#pragma once

// Half-quadratic-splitting unfolding network. Each stage performs the
// closed-form data update
//
//   r = x + Phi^T [ (y - Phi x) / (mu + diag(Phi Phi^T)) ]
//
// followed by a learned residual CNN denoiser x' = r + f(r). The penalty mu
// is predicted per stage by a small fully connected net on global statistics
// of the measurement.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "sfsci/conv.hpp"
#include "sfsci/sensing.hpp"

namespace sfsci {

struct DenoiserConfig {
  std::size_t base_channels = 32;
  std::size_t depth = 3;
  bool residual = true;

  void validate() const {
    if (base_channels < 1) throw ConfigError("denoiser.base_channels must be >= 1");
    if (depth < 1) throw ConfigError("denoiser.depth must be >= 1");
  }
  bool operator==(const DenoiserConfig&) const = default;
};

template <typename T>
struct ConvLayer {
  Parameter<T> weight;  // (out, in, k, k)
  Parameter<T> bias;    // (out)

  std::size_t in_channels() const { return weight.value().dim(1); }
  std::size_t out_channels() const { return weight.value().dim(0); }
  std::size_t kernel() const { return weight.value().dim(2); }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight.var(), bias.var()); }
  bool operator==(const ConvLayer&) const = default;
};

/// Two-layer perceptron mapping measurement statistics to a positive scalar.
template <typename T>
struct MuNet {
  static constexpr std::size_t kFeatures = 3;
  static constexpr std::size_t kHidden = 8;

  Parameter<T> w1, b1, w2, b2;
  bool operator==(const MuNet&) const = default;
};

template <typename T>
struct StageParams {
  std::vector<ConvLayer<T>> denoiser;
  MuNet<T> mu_net;
  bool operator==(const StageParams&) const = default;
};

enum class InitMode { random, zero_residual };

/// Smallest penalty the mu nets can emit.
inline constexpr double kMuFloor = 1e-6;
/// Energy normalization floor used by the initial estimate.
inline constexpr double kDiagEpsilon = 1e-6;

namespace detail {

template <typename T>
ConvLayer<T> make_conv(std::size_t in, std::size_t out, std::size_t k, std::mt19937_64& rng, T gain) {
  Tensor<T> w({out, in, k, k});
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(in * k * k)));
  for (auto& v : w.vec()) v = static_cast<T>(gain * n(rng));
  return ConvLayer<T>{Parameter<T>(std::move(w)), Parameter<T>(Tensor<T>({out}))};
}

template <typename T>
MuNet<T> make_mu_net(std::mt19937_64& rng, double mu_init) {
  MuNet<T> net;
  std::normal_distribution<double> n1(0.0, 1.0 / std::sqrt(static_cast<double>(MuNet<T>::kFeatures)));
  std::normal_distribution<double> n2(0.0, 0.1);
  Tensor<T> w1({MuNet<T>::kHidden, MuNet<T>::kFeatures});
  for (auto& v : w1.vec()) v = static_cast<T>(n1(rng));
  Tensor<T> w2({1, MuNet<T>::kHidden});
  for (auto& v : w2.vec()) v = static_cast<T>(n2(rng));
  net.w1 = Parameter<T>(std::move(w1));
  net.b1 = Parameter<T>(Tensor<T>({MuNet<T>::kHidden}));
  net.w2 = Parameter<T>(std::move(w2));
  // inverse softplus of the requested initial penalty
  net.b2 = Parameter<T>(Tensor<T>({1}, static_cast<T>(std::log(std::expm1(mu_init)))));
  return net;
}

}  // namespace detail

template <typename T>
class UnfoldingModel {
 public:
  std::vector<StageParams<T>> stages;
  DenoiserConfig denoiser_cfg;
  std::size_t shift = 1;
  std::size_t bands = 1;

  std::size_t num_stages() const { return stages.size(); }

  /// Visits every learnable tensor in a fixed order with a stable name.
  template <typename F>
  void visit_parameters(F&& f) {
    for (std::size_t k = 0; k < stages.size(); ++k) visit_stage(stages[k], "stage" + std::to_string(k), f);
  }
  template <typename F>
  void visit_parameters(F&& f) const {
    const_cast<UnfoldingModel*>(this)->visit_parameters([&](const std::string& name, Parameter<T>& p) {
      f(name, static_cast<const Parameter<T>&>(p));
    });
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    visit_parameters([&](const std::string&, Parameter<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    visit_parameters([&](const std::string&, const Parameter<T>& p) { n += p.size(); });
    return n;
  }

  void set_frozen(bool frozen) {
    for (auto* p : parameters()) p->set_frozen(frozen);
  }
  bool frozen() const {
    bool all = true;
    visit_parameters([&](const std::string&, const Parameter<T>& p) { all = all && p.frozen(); });
    return all;
  }
  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  bool operator==(const UnfoldingModel&) const = default;

  template <typename F>
  static void visit_stage(StageParams<T>& s, const std::string& prefix, F& f) {
    for (std::size_t l = 0; l < s.denoiser.size(); ++l) {
      f(prefix + ".denoiser" + std::to_string(l) + ".weight", s.denoiser[l].weight);
      f(prefix + ".denoiser" + std::to_string(l) + ".bias", s.denoiser[l].bias);
    }
    f(prefix + ".mu.w1", s.mu_net.w1);
    f(prefix + ".mu.b1", s.mu_net.b1);
    f(prefix + ".mu.w2", s.mu_net.w2);
    f(prefix + ".mu.b2", s.mu_net.b2);
  }
};

/// Builds one stage. With zero_residual the last denoiser layer starts at
/// zero so the stage is a pure data update.
template <typename T>
StageParams<T> make_stage(const DenoiserConfig& cfg, std::size_t bands, std::mt19937_64& rng, InitMode init,
                          double mu_init = 0.1) {
  cfg.validate();
  StageParams<T> s;
  const std::size_t c = cfg.base_channels;
  if (cfg.depth == 1) {
    s.denoiser.push_back(detail::make_conv<T>(bands, bands, 3, rng, T(0.1)));
  } else {
    s.denoiser.push_back(detail::make_conv<T>(bands, c, 3, rng, T(1)));
    for (std::size_t l = 2; l < cfg.depth; ++l) s.denoiser.push_back(detail::make_conv<T>(c, c, 3, rng, T(1)));
    s.denoiser.push_back(detail::make_conv<T>(c, bands, 3, rng, T(0.1)));
  }
  if (init == InitMode::zero_residual) s.denoiser.back().weight.mutable_value().fill(T(0));
  s.mu_net = detail::make_mu_net<T>(rng, mu_init);
  return s;
}

template <typename T>
UnfoldingModel<T> make_unfolding_model(const DenoiserConfig& cfg, std::size_t num_stages, std::size_t shift,
                                       std::size_t bands, std::uint64_t seed, InitMode init = InitMode::random) {
  if (num_stages < 1) throw ConfigError("stage count must be >= 1");
  UnfoldingModel<T> m;
  m.denoiser_cfg = cfg;
  m.shift = shift;
  m.bands = bands;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < num_stages; ++k) m.stages.push_back(make_stage<T>(cfg, bands, rng, init));
  return m;
}

// ---------------------------------------------------------------------------
// Stage building blocks (autodiff level)

/// x0 = Phi^T ( y / max(diag, eps) ).
template <typename T>
Var<T> initial_estimate(const Var<T>& y, const SensingOperator<T>& op) {
  Tensor<T> inv = op.diag();
  for (auto& v : inv.vec()) v = T(1) / std::max(v, static_cast<T>(kDiagEpsilon));
  return op.adjoint(ad::mul_const(y, inv));
}

/// r = x + Phi^T[(y - Phi x) / (mu + diag)], mu a one-element var.
template <typename T>
Var<T> data_update(const Var<T>& x, const Var<T>& y, const SensingOperator<T>& op, const Var<T>& mu) {
  const T mu_v = mu.item();
  if (!(mu_v > T(0))) throw ParameterError("data_update: mu must be > 0");
  Var<T> residual = ad::sub(y, op.forward(x));
  const Tensor<T>& diag = op.diag();
  Tensor<T> out = residual.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= (mu_v + diag[i]);
  auto rn = residual.node(), mn = mu.node();
  Var<T> scaled = Var<T>::make(std::move(out), {residual, mu}, [rn, mn, diag, mu_v](const Tensor<T>& g) {
    if (rn->requires_grad) {
      Tensor<T> gr = g;
      for (std::size_t i = 0; i < gr.size(); ++i) gr[i] /= (mu_v + diag[i]);
      rn->accumulate(gr);
    }
    if (mn->requires_grad) {
      T acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T den = mu_v + diag[i];
        acc -= g[i] * rn->value[i] / (den * den);
      }
      mn->accumulate(Tensor<T>({1}, acc));
    }
  });
  return ad::add(x, op.adjoint(scaled));
}

template <typename T>
Var<T> data_update(const Var<T>& x, const Var<T>& y, const SensingOperator<T>& op, T mu) {
  return data_update(x, y, op, ad::scalar(mu));
}

/// Global statistics fed to the mu nets: normalized mean and mean square of
/// the measurement, plus the stage position.
template <typename T>
Var<T> mu_features(const Var<T>& y, const SensingOperator<T>& op, std::size_t stage_index) {
  T c = sum(op.diag()) / static_cast<T>(op.diag().size());
  if (!(c > T(0))) c = T(1);
  const Tensor<T>& yv = y.value();
  const T n = static_cast<T>(yv.size());
  T m1 = 0, m2 = 0;
  for (T v : yv.vec()) {
    m1 += v;
    m2 += v * v;
  }
  Tensor<T> f({MuNet<T>::kFeatures});
  f[0] = m1 / (n * c);
  f[1] = m2 / (n * c * c);
  f[2] = static_cast<T>(0.1) * static_cast<T>(stage_index);
  auto yn = y.node();
  return Var<T>::make(std::move(f), {y}, [yn, n, c](const Tensor<T>& g) {
    Tensor<T> gy(yn->value.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gy[i] = g[0] / (n * c) + g[1] * T(2) * yn->value[i] / (n * c * c);
    yn->accumulate(gy);
  });
}

template <typename T>
Var<T> mu_net_forward(const MuNet<T>& net, const Var<T>& features) {
  Var<T> h = ad::tanh(ad::linear(features, net.w1.var(), net.b1.var()));
  Var<T> z = ad::linear(h, net.w2.var(), net.b2.var());
  Tensor<T> floor({1}, static_cast<T>(kMuFloor));
  return ad::add(ad::softplus(z), ad::constant(floor));
}

/// Strictly positive penalty for one stage.
template <typename T>
Var<T> estimate_mu(const Var<T>& y, const SensingOperator<T>& op, std::size_t stage_index, const StageParams<T>& stage) {
  return mu_net_forward(stage.mu_net, mu_features(y, op, stage_index));
}

/// x' = r + f(r) (residual) or f(r).
template <typename T>
Var<T> denoise(const Var<T>& r, const StageParams<T>& stage, const DenoiserConfig& cfg) {
  if (!all_finite(r.value())) throw DomainError("denoise: non-finite input");
  Var<T> h = r;
  for (std::size_t l = 0; l < stage.denoiser.size(); ++l) {
    h = stage.denoiser[l](h);
    if (l + 1 < stage.denoiser.size()) h = ad::relu(h);
  }
  return cfg.residual ? ad::add(r, h) : h;
}

/// Per-stage hook invoked after the backbone stage (used by the adapters).
template <typename T>
using StageHook = std::function<Var<T>(std::size_t stage_index, const Var<T>& x)>;

/// Full K-stage reconstruction on autodiff vars.
template <typename T>
Var<T> reconstruct(const UnfoldingModel<T>& model, const Var<T>& y, const SensingOperator<T>& op,
                   const StageHook<T>& hook = {}) {
  if (op.shift() != model.shift || op.bands() != model.bands) {
    throw DimensionError("sensing geometry (shift, bands) does not match model");
  }
  if (y.value().dim(2) != op.measurement_width() || y.value().dim(1) != op.height()) {
    throw DimensionError("measurement shape does not match sensing operator");
  }
  Var<T> x = initial_estimate(y, op);
  for (std::size_t k = 0; k < model.stages.size(); ++k) {
    Var<T> mu = estimate_mu(y, op, k, model.stages[k]);
    Var<T> r = data_update(x, y, op, mu);
    x = denoise(r, model.stages[k], model.denoiser_cfg);
    if (hook) x = hook(k, x);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Value-level convenience API

template <typename T>
HyperspectralCube<T> initial_estimate(const Measurement<T>& y, const CodedMask& mask) {
  NoGradGuard ng;
  SensingOperator<T> op(mask, y.shift, y.bands);
  return HyperspectralCube<T>(initial_estimate(ad::constant(y.data), op).value());
}

template <typename T>
HyperspectralCube<T> data_update(const HyperspectralCube<T>& x, const Measurement<T>& y, const CodedMask& mask, T mu) {
  NoGradGuard ng;
  SensingOperator<T> op(mask, y.shift, y.bands);
  return HyperspectralCube<T>(data_update(ad::constant(x.data), ad::constant(y.data), op, mu).value());
}

template <typename T>
HyperspectralCube<T> denoise(const HyperspectralCube<T>& r, const StageParams<T>& stage, const DenoiserConfig& cfg) {
  NoGradGuard ng;
  return HyperspectralCube<T>(denoise(ad::constant(r.data), stage, cfg).value());
}

template <typename T>
T estimate_mu(const Measurement<T>& y, const CodedMask& mask, std::size_t stage_index, const StageParams<T>& stage) {
  NoGradGuard ng;
  SensingOperator<T> op(mask, y.shift, y.bands);
  return estimate_mu(ad::constant(y.data), op, stage_index, stage).item();
}

template <typename T>
HyperspectralCube<T> reconstruct(const UnfoldingModel<T>& model, const Measurement<T>& y, const CodedMask& mask) {
  NoGradGuard ng;
  SensingOperator<T> op(mask, y.shift, y.bands);
  return HyperspectralCube<T>(reconstruct(model, ad::constant(y.data), op).value());
}

struct ModelStats {
  std::size_t param_count = 0;
  std::size_t mac_estimate = 0;
};

template <typename T>
std::size_t stage_macs(const StageParams<T>& s, std::size_t h, std::size_t w) {
  std::size_t macs = 0;
  for (const auto& l : s.denoiser) macs += conv2d_macs(l.in_channels(), l.out_channels(), l.kernel(), h, w);
  return macs;
}

/// Exact learnable-scalar count and conv MACs for one reconstruction.
template <typename T>
ModelStats model_stats(const UnfoldingModel<T>& model, std::size_t height, std::size_t width) {
  ModelStats st;
  st.param_count = model.param_count();
  for (const auto& s : model.stages) st.mac_estimate += stage_macs(s, height, width);
  return st;
}

}  // namespace sfsci
