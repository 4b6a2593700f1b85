#pragma once

// Fast learning: self-supervised adapter training on unlabeled target
// measurements and per-sample test-time adaptation. Only adapter parameters
// are ever handed to an optimizer; the backbone stays frozen.

#include <functional>
#include <limits>
#include <map>

#include "sfsci/adapters.hpp"
#include "sfsci/learning_slow.hpp"
#include "sfsci/metrics.hpp"
#include "sfsci/transforms.hpp"

namespace sfsci {

// ---------------------------------------------------------------------------
// Individual losses

/// L_m = ||Phi xhat - y||^2 / n.
template <typename T>
Var<T> loss_measurement(const Var<T>& xhat, const Var<T>& y, const SensingOperator<T>& op) {
  return ad::mse(op.forward(xhat), y);
}

/// L_ei = MSE(F(Phi T xhat), T xhat). With `detach_label` the target T xhat
/// is a constant, as for L_ker at test time.
template <typename T>
Var<T> loss_ei(const AdaptedModel<T>& model, const Var<T>& xhat, const SensingOperator<T>& op, const Transform& t,
               bool detach_label = false) {
  Var<T> tx = apply_transform(xhat, t);
  return ad::mse(reconstruct(model, op.forward(tx), op), detach_label ? ad::detach(tx) : tx);
}

/// L_iu = MSE(F(y + fresh noise), F(y)). `xhat` is F(y) when already known.
template <typename T>
Var<T> loss_iu(const AdaptedModel<T>& model, const Var<T>& y, const SensingOperator<T>& op, const NoiseModel& noise,
               std::uint64_t seed, const Var<T>* xhat = nullptr) {
  if (std::holds_alternative<NoNoise>(noise)) return ad::scalar(T(0));
  Measurement<T> m{y.value(), op.shift(), op.bands()};
  Measurement<T> noisy = add_noise(m, SensingConfig{op.shift(), noise, seed});
  Var<T> clean = xhat ? *xhat : reconstruct(model, y, op);
  return ad::mse(reconstruct(model, ad::constant(noisy.data), op), clean);
}

/// Anisotropic TV with forward differences, normalized by the number of
/// difference terms per band and averaged over bands.
template <typename T>
Var<T> loss_tv(const Var<T>& x) {
  const std::size_t b = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  const std::size_t terms = h * (w - 1) + (h - 1) * w;
  if (terms == 0) return ad::scalar(T(0));
  const T norm = T(1) / static_cast<T>(terms * b);
  const Tensor<T>& v = x.value();
  T total = 0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        if (c + 1 < w) total += std::abs(v(i, r, c + 1) - v(i, r, c));
        if (r + 1 < h) total += std::abs(v(i, r + 1, c) - v(i, r, c));
      }
  auto xn = x.node();
  return Var<T>::make(Tensor<T>({1}, total * norm), {x}, [xn, norm, b, h, w](const Tensor<T>& g) {
    const Tensor<T>& v = xn->value;
    Tensor<T> gx(v.shape());
    const T s = g[0] * norm;
    auto sgn = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          if (c + 1 < w) {
            const T d = sgn(v(i, r, c + 1) - v(i, r, c)) * s;
            gx(i, r, c + 1) += d;
            gx(i, r, c) -= d;
          }
          if (r + 1 < h) {
            const T d = sgn(v(i, r + 1, c) - v(i, r, c)) * s;
            gx(i, r + 1, c) += d;
            gx(i, r, c) -= d;
          }
        }
    xn->accumulate(gx);
  });
}

// ---------------------------------------------------------------------------
// Loss registry for the two self-supervised terms whose exact form is a
// design choice (equivariance and re-corruption consistency).

template <typename T>
struct LossContext {
  const AdaptedModel<T>& model;
  const Var<T>& y;
  const Var<T>& xhat;
  const SensingOperator<T>& op;
  Transform transform;
  NoiseModel noise;
  std::uint64_t noise_seed;
};

template <typename T>
using RegisteredLoss = std::function<Var<T>(const LossContext<T>&)>;

template <typename T>
class LossRegistry {
 public:
  static LossRegistry& instance() {
    static LossRegistry reg;
    return reg;
  }
  void add(const std::string& name, RegisteredLoss<T> fn) { losses_[name] = std::move(fn); }
  bool contains(const std::string& name) const { return losses_.count(name) > 0; }
  const RegisteredLoss<T>& get(const std::string& name) const {
    auto it = losses_.find(name);
    if (it == losses_.end()) throw ConfigError("unknown loss '" + name + "'");
    return it->second;
  }

 private:
  LossRegistry() {
    add("ei", [](const LossContext<T>& c) { return loss_ei(c.model, c.xhat, c.op, c.transform); });
    add("ei_detached", [](const LossContext<T>& c) { return loss_ei(c.model, c.xhat, c.op, c.transform, true); });
    add("iu", [](const LossContext<T>& c) { return loss_iu(c.model, c.y, c.op, c.noise, c.noise_seed, &c.xhat); });
  }
  std::map<std::string, RegisteredLoss<T>> losses_;
};

// ---------------------------------------------------------------------------
// Self-supervised adapter training

struct SSTConfig {
  double w1 = 0.7;    // L_ei
  double w2 = 0.4;    // L_iu
  double w3 = 0.001;  // L_tv
  std::size_t epochs = 100;
  std::size_t batch_size = 2;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  TransformSpec transforms;
  NoiseModel iu_noise = ShotNoise{11};
  std::string ei_loss = "ei";
  std::string iu_loss = "iu";

  void validate() const {
    if (w1 < 0 || w2 < 0 || w3 < 0) throw ConfigError("sst weights w1, w2, w3 must be >= 0");
    if (!(lr > 0)) throw ConfigError("sst.lr must be > 0");
    if (batch_size < 1) throw ConfigError("sst.batch_size must be >= 1");
  }
};

struct SSTBreakdown {
  double total = 0, m = 0, ei = 0, iu = 0, tv = 0;
};

template <typename T>
struct SSTResult {
  AdaptedModel<T> model;
  std::vector<SSTBreakdown> epochs;
  SSTBreakdown initial;
  SSTBreakdown final_;
  bool aborted = false;
  std::string message;
};

/// One sample of L_sst = L_m + w1 L_ei + w2 L_iu + w3 L_tv. Terms with zero
/// weight are not evaluated and reported as zero.
template <typename T>
Var<T> sst_sample_loss(const AdaptedModel<T>& model, const Var<T>& y, const SensingOperator<T>& op,
                       const SSTConfig& cfg, std::mt19937_64& rng, SSTBreakdown* out = nullptr) {
  Var<T> xhat = reconstruct(model, y, op);
  const Transform t = cfg.transforms.sample(rng);
  const std::uint64_t noise_seed = rng();
  std::vector<std::pair<T, Var<T>>> terms;
  SSTBreakdown bd;
  Var<T> lm = loss_measurement(xhat, y, op);
  bd.m = lm.item();
  terms.emplace_back(T(1), lm);
  const LossContext<T> ctx{model, y, xhat, op, t, cfg.iu_noise, noise_seed};
  if (cfg.w1 > 0) {
    Var<T> l = LossRegistry<T>::instance().get(cfg.ei_loss)(ctx);
    bd.ei = l.item();
    terms.emplace_back(static_cast<T>(cfg.w1), l);
  }
  if (cfg.w2 > 0) {
    Var<T> l = LossRegistry<T>::instance().get(cfg.iu_loss)(ctx);
    bd.iu = l.item();
    terms.emplace_back(static_cast<T>(cfg.w2), l);
  }
  if (cfg.w3 > 0) {
    Var<T> l = loss_tv(xhat);
    bd.tv = l.item();
    terms.emplace_back(static_cast<T>(cfg.w3), l);
  }
  Var<T> total = ad::weighted_sum(terms);
  bd.total = total.item();
  if (out) *out = bd;
  return total;
}

/// Mean L_sst over a set with transforms and noise drawn from `eval_seed`.
template <typename T>
SSTBreakdown sst_objective(const AdaptedModel<T>& model, const DistillSet<T>& dset, const SSTConfig& cfg,
                           std::uint64_t eval_seed) {
  NoGradGuard ng;
  const auto& m0 = dset.measurements.front();
  SensingOperator<T> op(dset.mask, m0.shift, m0.bands);
  std::mt19937_64 rng(eval_seed);
  SSTBreakdown acc;
  for (const auto& m : dset.measurements) {
    SSTBreakdown bd;
    sst_sample_loss(model, ad::constant(m.data), op, cfg, rng, &bd);
    acc.total += bd.total;
    acc.m += bd.m;
    acc.ei += bd.ei;
    acc.iu += bd.iu;
    acc.tv += bd.tv;
  }
  const double n = static_cast<double>(dset.measurements.size());
  acc.total /= n;
  acc.m /= n;
  acc.ei /= n;
  acc.iu /= n;
  acc.tv /= n;
  return acc;
}

template <typename T>
SSTResult<T> train_adapters(const AdaptedModel<T>& model, const DistillSet<T>& dset, const SSTConfig& cfg) {
  cfg.validate();
  dset.validate();
  if (!model.backbone.frozen()) throw ConfigError("train_adapters: backbone must be frozen");
  cfg.transforms.validate(dset.mask.height(), dset.mask.width());
  SSTResult<T> res{model, {}, {}, {}, false, {}};
  const auto& m0 = dset.measurements.front();
  SensingOperator<T> op(dset.mask, m0.shift, m0.bands);
  std::vector<Var<T>> ys;
  for (const auto& m : dset.measurements) ys.push_back(ad::constant(m.data));
  const std::uint64_t eval_seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
  res.initial = sst_objective(res.model, dset, cfg, eval_seed);

  std::mt19937_64 rng(cfg.seed + 1);
  SSTBreakdown epoch_acc;
  auto loop = run_training_loop<T>(
      res.model.trainable_parameters(), ys.size(),
      TrainConfig{cfg.epochs, cfg.batch_size, cfg.lr, LrSchedule::constant, cfg.seed},
      [&](std::size_t i) {
        SSTBreakdown bd;
        Var<T> l = sst_sample_loss(res.model, ys[i], op, cfg, rng, &bd);
        epoch_acc.total += bd.total;
        epoch_acc.m += bd.m;
        epoch_acc.ei += bd.ei;
        epoch_acc.iu += bd.iu;
        epoch_acc.tv += bd.tv;
        return l;
      },
      [&](std::size_t) {
        const double n = static_cast<double>(ys.size());
        res.epochs.push_back({epoch_acc.total / n, epoch_acc.m / n, epoch_acc.ei / n, epoch_acc.iu / n, epoch_acc.tv / n});
        epoch_acc = {};
      });
  res.aborted = loop.aborted;
  res.message = loop.message;
  res.final_ = sst_objective(res.model, dset, cfg, eval_seed);
  return res;
}

// ---------------------------------------------------------------------------
// Test-time adaptation

struct TTAConfig {
  double lam = 0.7;
  std::size_t iters = 50;
  double lr = 1e-3;
  TransformSpec transforms;
  std::uint64_t seed = 0;
  bool online = false;  // carry adapter state across samples instead of resetting

  void validate() const {
    if (lam < 0) throw ConfigError("tta.lam must be >= 0");
    if (!(lr > 0)) throw ConfigError("tta.lr must be > 0");
  }
};

template <typename T>
struct TTALoss {
  Var<T> total;
  Var<T> xhat;  // F(y) at the current parameters
  double im = 0;
  double ker = 0;
};

/// L_tta = L_im + lam L_ker with L_im = MSE(Phi F(y), y) and
/// L_ker = MSE(F(Phi T F(y)), sg[T F(y)]); the label is detached.
template <typename T>
TTALoss<T> loss_tta(const AdaptedModel<T>& model, const Var<T>& y, const SensingOperator<T>& op, double lam,
                    const Transform& t) {
  TTALoss<T> out;
  out.xhat = reconstruct(model, y, op);
  Var<T> im = ad::mse(op.forward(out.xhat), y);
  out.im = im.item();
  if (lam == 0.0) {
    out.total = ad::weighted_sum<T>({{T(1), im}});
    return out;
  }
  Var<T> tx = apply_transform(out.xhat, t);
  Var<T> ker = ad::mse(reconstruct(model, op.forward(tx), op), ad::detach(tx));
  out.ker = ker.item();
  out.total = ad::weighted_sum<T>({{T(1), im}, {static_cast<T>(lam), ker}});
  return out;
}

template <typename T>
TTALoss<T> loss_tta(const AdaptedModel<T>& model, const Var<T>& y, const SensingOperator<T>& op, const TTAConfig& cfg,
                    std::mt19937_64& rng) {
  return loss_tta(model, y, op, cfg.lam, cfg.transforms.sample(rng));
}

struct TTATracePoint {
  std::size_t iter = 0;
  double loss = 0, im = 0, ker = 0;
  double best_loss = 0;
  double psnr = std::numeric_limits<double>::quiet_NaN();
};

template <typename T>
struct TTAResult {
  AdaptedModel<T> model;
  HyperspectralCube<T> reconstruction;
  std::vector<TTATracePoint> trace;  // iters + 1 points; point 0 is the unadapted model
  bool stopped_early = false;
};

/// Runs cfg.iters Adam steps on the adapter parameters, then returns F(y).
/// If a non-finite loss appears, the best-so-far parameters are restored.
/// Passing `truth` fills the per-iteration PSNR column of the trace.
template <typename T>
TTAResult<T> adapt(const AdaptedModel<T>& model, const Measurement<T>& y, const CodedMask& mask, const TTAConfig& cfg,
                   const HyperspectralCube<T>* truth = nullptr) {
  cfg.validate();
  if (!model.backbone.frozen()) throw ConfigError("adapt: backbone must be frozen");
  if (cfg.iters > 0 && cfg.lam > 0) cfg.transforms.validate(mask.height(), mask.width());
  TTAResult<T> res{model, {}, {}, false};
  SensingOperator<T> op(mask, y.shift, y.bands);
  Var<T> yv = ad::constant(y.data);
  auto params = res.model.trainable_parameters();
  Adam<T> opt(params, cfg.lr);
  std::mt19937_64 rng(cfg.seed);

  auto snapshot = [&] {
    std::vector<Tensor<T>> s;
    for (auto* p : params) s.push_back(p->value());
    return s;
  };
  std::vector<Tensor<T>> best = snapshot();
  double best_loss = std::numeric_limits<double>::infinity();
  Tensor<T> best_x, last_x;

  for (std::size_t it = 0; it <= cfg.iters; ++it) {
    const bool last = it == cfg.iters;
    TTALoss<T> l;
    double v = std::numeric_limits<double>::quiet_NaN();
    try {
      if (last) {
        // final evaluation only; no gradient needed
        NoGradGuard ng;
        l = loss_tta(res.model, yv, op, cfg, rng);
      } else {
        l = loss_tta(res.model, yv, op, cfg, rng);
      }
      v = l.total.item();
    } catch (const DomainError&) {
    } catch (const ParameterError&) {
    }
    if (!std::isfinite(v)) {
      res.stopped_early = true;
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->mutable_value() = best[i];
      break;
    }
    last_x = l.xhat.value();
    if (v < best_loss) {
      best_loss = v;
      best = snapshot();
      best_x = last_x;
    }
    TTATracePoint tp{it, v, l.im, l.ker, best_loss};
    if (truth) tp.psnr = psnr(HyperspectralCube<T>(last_x), *truth);
    res.trace.push_back(tp);
    if (last) break;
    opt.zero_grad();
    backward(l.total);
    opt.step();
  }
  opt.zero_grad();
  if (res.stopped_early && best_x.empty()) {
    NoGradGuard ng;
    best_x = reconstruct(res.model, yv, op).value();
  }
  res.reconstruction = HyperspectralCube<T>(res.stopped_early ? best_x : last_x);
  return res;
}

}  // namespace sfsci
