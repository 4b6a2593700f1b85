#pragma once

#include "sfsci/training.hpp"
#include "sfsci/unfolding.hpp"

namespace sfsci {

template <typename T>
struct TrainingPair {
  Measurement<T> y;
  HyperspectralCube<T> x;
};

/// Unlabeled measurements sharing one mask and geometry.
template <typename T>
struct DistillSet {
  std::vector<Measurement<T>> measurements;
  CodedMask mask;

  void validate() const {
    if (measurements.empty()) throw ConfigError("distillation set must contain at least one measurement");
    for (const auto& m : measurements) {
      if (m.shift != measurements.front().shift || m.bands != measurements.front().bands ||
          m.data.shape() != measurements.front().data.shape()) {
        throw DimensionError("distillation measurements must share geometry");
      }
    }
  }
};

template <typename T>
struct SlowResult {
  UnfoldingModel<T> model;
  std::vector<double> losses;  // per epoch
  double initial_loss = 0;
  double final_loss = 0;
  bool aborted = false;
  std::string message;
};

/// Supervised MSE pretraining.
template <typename T>
SlowResult<T> train_supervised(const UnfoldingModel<T>& model, const std::vector<TrainingPair<T>>& pairs,
                               const CodedMask& mask, const TrainConfig& cfg) {
  if (pairs.empty()) throw ConfigError("train_supervised: at least one training pair required");
  SlowResult<T> res{model, {}, 0, 0, false, {}};
  SensingOperator<T> op(mask, model.shift, model.bands);
  std::vector<Var<T>> ys, xs;
  for (const auto& p : pairs) {
    ys.push_back(ad::constant(p.y.data));
    xs.push_back(ad::constant(p.x.data));
  }
  auto eval_all = [&] {
    NoGradGuard ng;
    double s = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) s += ad::mse(reconstruct(res.model, ys[i], op), xs[i]).item();
    return s / static_cast<double>(ys.size());
  };
  res.initial_loss = eval_all();
  res.model.set_frozen(false);
  auto loop = run_training_loop<T>(res.model.parameters(), pairs.size(), cfg, [&](std::size_t i) {
    return ad::mse(reconstruct(res.model, ys[i], op), xs[i]);
  });
  res.model.set_frozen(model.frozen());
  res.losses = std::move(loop.epoch_losses);
  res.aborted = loop.aborted;
  res.message = loop.message;
  res.final_loss = res.aborted ? std::numeric_limits<double>::quiet_NaN() : eval_all();
  return res;
}

/// Squared Frobenius distance, the per-sample distillation term.
template <typename T>
Var<T> frobenius_sq(const Var<T>& a, const Var<T>& b) {
  return ad::scale(ad::mse(a, b), static_cast<T>(a.value().size()));
}

template <typename T>
double distillation_loss(const UnfoldingModel<T>& student, const std::vector<Tensor<T>>& teacher_out,
                         const DistillSet<T>& dset) {
  NoGradGuard ng;
  const auto& m0 = dset.measurements.front();
  SensingOperator<T> op(dset.mask, m0.shift, m0.bands);
  double s = 0;
  for (std::size_t i = 0; i < dset.measurements.size(); ++i) {
    s += frobenius_sq(reconstruct(student, ad::constant(dset.measurements[i].data), op), ad::constant(teacher_out[i])).item();
  }
  return s / static_cast<double>(dset.measurements.size());
}

template <typename T>
std::vector<Tensor<T>> teacher_outputs(const UnfoldingModel<T>& teacher, const DistillSet<T>& dset) {
  NoGradGuard ng;
  const auto& m0 = dset.measurements.front();
  SensingOperator<T> op(dset.mask, m0.shift, m0.bands);
  std::vector<Tensor<T>> out;
  for (const auto& m : dset.measurements) out.push_back(reconstruct(teacher, ad::constant(m.data), op).value());
  return out;
}

/// Trains the student to match cached outputs of the frozen teacher:
/// L_dis = (1/N) sum_i ||X_st,i - X_th,i||_F^2.
template <typename T>
SlowResult<T> distill(const UnfoldingModel<T>& teacher, const UnfoldingModel<T>& student, const DistillSet<T>& dset,
                      const TrainConfig& cfg) {
  dset.validate();
  if (!(teacher.denoiser_cfg == student.denoiser_cfg) || teacher.shift != student.shift ||
      teacher.bands != student.bands) {
    throw ConfigError("distill: teacher and student must share denoiser config and sensing geometry");
  }
  const auto cache = teacher_outputs(teacher, dset);
  SlowResult<T> res{student, {}, 0, 0, false, {}};
  const auto& m0 = dset.measurements.front();
  SensingOperator<T> op(dset.mask, m0.shift, m0.bands);
  std::vector<Var<T>> ys, targets;
  for (std::size_t i = 0; i < cache.size(); ++i) {
    ys.push_back(ad::constant(dset.measurements[i].data));
    targets.push_back(ad::constant(cache[i]));
  }
  res.initial_loss = distillation_loss(res.model, cache, dset);
  res.model.set_frozen(false);
  auto loop = run_training_loop<T>(res.model.parameters(), cache.size(), cfg, [&](std::size_t i) {
    return frobenius_sq(reconstruct(res.model, ys[i], op), targets[i]);
  });
  res.losses = std::move(loop.epoch_losses);
  res.aborted = loop.aborted;
  res.message = loop.message;
  res.final_loss = res.aborted ? std::numeric_limits<double>::quiet_NaN() : distillation_loss(res.model, cache, dset);
  return res;
}

}  // namespace sfsci
