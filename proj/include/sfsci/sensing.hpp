#pragma once

// CASSI forward model: per-band masking, lateral shift by d*i columns, and
// summation on the detector. Band i (0-based) lands on detector columns
// [d*i, d*i + W), so the measurement is W + d*(B-1) columns wide.

#include <cmath>
#include <cstdint>
#include <random>
#include <variant>

#include "sfsci/autodiff.hpp"

namespace sfsci {

/// H x W x B reflectance volume stored as a (band, row, col) tensor.
template <typename T>
struct HyperspectralCube {
  Tensor<T> data;

  HyperspectralCube() = default;
  HyperspectralCube(std::size_t height, std::size_t width, std::size_t bands) : data({bands, height, width}) {
    if (height == 0 || width == 0 || bands == 0) throw DimensionError("cube dimensions must be >= 1");
  }
  explicit HyperspectralCube(Tensor<T> t) : data(std::move(t)) {
    if (data.rank() != 3) throw DimensionError("cube tensor must be rank 3 (band,row,col)");
  }

  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
  std::size_t bands() const { return data.dim(0); }

  T& operator()(std::size_t row, std::size_t col, std::size_t band) { return data(band, row, col); }
  T operator()(std::size_t row, std::size_t col, std::size_t band) const { return data(band, row, col); }

  bool operator==(const HyperspectralCube&) const = default;
};

/// Binary coded aperture.
class CodedMask {
 public:
  CodedMask() = default;
  CodedMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits)
      : height_(height), width_(width), bits_(std::move(bits)) {
    if (bits_.size() != height * width) throw DimensionError("mask size does not match height*width");
    for (auto b : bits_)
      if (b > 1) throw DomainError("mask entries must be 0 or 1");
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits_[r * width_ + c]; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  template <typename T>
  Tensor<T> as_tensor() const {
    Tensor<T> t({1, height_, width_});
    for (std::size_t i = 0; i < bits_.size(); ++i) t[i] = static_cast<T>(bits_[i]);
    return t;
  }

  bool operator==(const CodedMask&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Coded snapshot: (1, H, W + d(B-1)) tensor plus the geometry it came from.
template <typename T>
struct Measurement {
  Tensor<T> data;
  std::size_t shift = 0;
  std::size_t bands = 1;

  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
  std::size_t scene_width() const { return width() - shift * (bands - 1); }

  bool operator==(const Measurement&) const = default;
};

struct NoNoise {};
struct ShotNoise {
  int bits = 11;
};
using NoiseModel = std::variant<NoNoise, ShotNoise>;

struct SensingConfig {
  std::size_t shift = 1;
  NoiseModel noise = NoNoise{};
  std::uint64_t seed = 0;
};

inline std::size_t measurement_width(std::size_t width, std::size_t shift, std::size_t bands) {
  return width + shift * (bands - 1);
}

/// Independent Bernoulli(density) entries from a seeded generator.
inline CodedMask make_mask(std::size_t height, std::size_t width, double density, std::uint64_t seed) {
  if (!(density >= 0.0 && density <= 1.0)) throw ParameterError("mask density must lie in [0,1]");
  if (height == 0 || width == 0) throw DimensionError("mask dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::uint8_t> bits(height * width);
  for (auto& b : bits) b = u(rng) < density ? 1 : 0;
  return CodedMask(height, width, std::move(bits));
}

namespace detail {

template <typename T>
Tensor<T> cassi_forward_value(const Tensor<T>& cube, const Tensor<T>& mask, std::size_t shift) {
  const std::size_t b = cube.dim(0), h = cube.dim(1), w = cube.dim(2);
  if (mask.dim(1) != h || mask.dim(2) != w) {
    throw DimensionError("mask " + Tensor<T>::shape_string(mask.shape()) + " does not match cube spatial shape " +
                         Tensor<T>::shape_string(cube.shape()));
  }
  const std::size_t wm = measurement_width(w, shift, b);
  Tensor<T> y({1, h, wm});
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t off = shift * i;
    for (std::size_t r = 0; r < h; ++r) {
      const T* x = &cube(i, r, 0);
      const T* m = &mask(0, r, 0);
      T* dst = &y(0, r, off);
      for (std::size_t c = 0; c < w; ++c) dst[c] += m[c] * x[c];
    }
  }
  return y;
}

template <typename T>
Tensor<T> cassi_adjoint_value(const Tensor<T>& y, const Tensor<T>& mask, std::size_t shift, std::size_t bands) {
  const std::size_t h = mask.dim(1), w = mask.dim(2);
  if (y.rank() != 3 || y.dim(0) != 1 || y.dim(1) != h || y.dim(2) != measurement_width(w, shift, bands)) {
    throw DimensionError("measurement " + Tensor<T>::shape_string(y.shape()) +
                         " inconsistent with mask and (shift, bands)");
  }
  Tensor<T> x({bands, h, w});
  for (std::size_t i = 0; i < bands; ++i) {
    const std::size_t off = shift * i;
    for (std::size_t r = 0; r < h; ++r) {
      const T* src = &y(0, r, off);
      const T* m = &mask(0, r, 0);
      T* dst = &x(i, r, 0);
      for (std::size_t c = 0; c < w; ++c) dst[c] = m[c] * src[c];
    }
  }
  return x;
}

}  // namespace detail

/// Precomputed operator state shared by the reconstruction networks: the
/// mask as a real tensor and the diagonal of Phi Phi^T on the detector plane.
template <typename T>
class SensingOperator {
 public:
  SensingOperator() = default;
  SensingOperator(const CodedMask& mask, std::size_t shift, std::size_t bands)
      : mask_(mask), mask_t_(mask.as_tensor<T>()), shift_(shift), bands_(bands) {
    if (bands == 0) throw DimensionError("bands must be >= 1");
    const std::size_t h = mask.height(), w = mask.width();
    diag_ = Tensor<T>({1, h, sfsci::measurement_width(w, shift, bands)});
    for (std::size_t i = 0; i < bands; ++i)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const T m = mask_t_(0, r, c);
          diag_(0, r, c + shift * i) += m * m;
        }
  }

  const CodedMask& mask() const { return mask_; }
  const Tensor<T>& mask_tensor() const { return mask_t_; }
  const Tensor<T>& diag() const { return diag_; }
  std::size_t shift() const { return shift_; }
  std::size_t bands() const { return bands_; }
  std::size_t height() const { return mask_.height(); }
  std::size_t width() const { return mask_.width(); }
  std::size_t measurement_width() const { return sfsci::measurement_width(width(), shift_, bands_); }

  Tensor<T> forward(const Tensor<T>& cube) const {
    if (cube.dim(0) != bands_) throw DimensionError("cube band count does not match operator");
    return detail::cassi_forward_value(cube, mask_t_, shift_);
  }
  Tensor<T> adjoint(const Tensor<T>& y) const { return detail::cassi_adjoint_value(y, mask_t_, shift_, bands_); }

  Var<T> forward(const Var<T>& cube) const {
    auto cn = cube.node();
    const SensingOperator* self = this;
    return Var<T>::make(forward(cube.value()), {cube},
                        [cn, self](const Tensor<T>& g) { cn->accumulate(self->adjoint(g)); });
  }
  Var<T> adjoint(const Var<T>& y) const {
    auto yn = y.node();
    const SensingOperator* self = this;
    return Var<T>::make(adjoint(y.value()), {y},
                        [yn, self](const Tensor<T>& g) { yn->accumulate(self->forward(g)); });
  }

 private:
  CodedMask mask_;
  Tensor<T> mask_t_;
  Tensor<T> diag_;
  std::size_t shift_ = 0;
  std::size_t bands_ = 1;
};

/// Y(u, v) = sum_i M(u, v - d i) X_i(u, v - d i) for in-range indices.
template <typename T>
Measurement<T> forward(const HyperspectralCube<T>& cube, const CodedMask& mask, std::size_t shift) {
  if (mask.height() != cube.height() || mask.width() != cube.width()) {
    throw DimensionError("mask shape does not match cube spatial shape");
  }
  return Measurement<T>{detail::cassi_forward_value(cube.data, mask.as_tensor<T>(), shift), shift, cube.bands()};
}

/// (Phi^T y)(u, v, i) = M(u, v) Y(u, v + d i).
template <typename T>
HyperspectralCube<T> adjoint(const Measurement<T>& meas, const CodedMask& mask) {
  if (meas.height() != mask.height() || meas.width() != measurement_width(mask.width(), meas.shift, meas.bands)) {
    throw DimensionError("measurement meta (shift, bands) inconsistent with mask shape");
  }
  return HyperspectralCube<T>(
      detail::cassi_adjoint_value(meas.data, mask.as_tensor<T>(), meas.shift, meas.bands));
}

/// Diagonal of Phi Phi^T laid out on the detector plane.
template <typename T = double>
Tensor<T> phi_phiT_diag(const CodedMask& mask, std::size_t shift, std::size_t bands) {
  return SensingOperator<T>(mask, shift, bands).diag();
}

/// Shot noise scales the measurement so its maximum maps to 2^bits - 1
/// photon counts, draws Poisson counts and rescales.
template <typename T>
Measurement<T> add_noise(const Measurement<T>& meas, const SensingConfig& cfg) {
  if (std::holds_alternative<NoNoise>(cfg.noise)) return meas;
  const int bits = std::get<ShotNoise>(cfg.noise).bits;
  if (bits < 1 || bits > 52) throw ParameterError("shot noise bits must lie in [1, 52]");
  T peak = 0;
  for (T v : meas.data.vec()) {
    if (!std::isfinite(v)) throw DomainError("shot noise requires finite measurement entries");
    if (v < T(0)) throw DomainError("shot noise requires nonnegative measurement entries");
    peak = std::max(peak, v);
  }
  if (peak == T(0)) return meas;
  const double scale = (std::ldexp(1.0, bits) - 1.0) / static_cast<double>(peak);
  std::mt19937_64 rng(cfg.seed);
  Measurement<T> out = meas;
  for (auto& v : out.data.vec()) {
    const double lambda = static_cast<double>(v) * scale;
    if (lambda <= 0.0) {
      v = T(0);
      continue;
    }
    std::poisson_distribution<long long> pois(lambda);
    v = static_cast<T>(static_cast<double>(pois(rng)) / scale);
  }
  return out;
}

}  // namespace sfsci
