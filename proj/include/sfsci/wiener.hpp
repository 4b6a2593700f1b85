#pragma once

// Frequency-domain analysis of linear denoisers. A bias-free linear
// convolutional denoiser trained by MSE on stationary signals converges to
// the Wiener filter S / (S + N); a per-sample filter |X|^2 / (|X|^2 + N)
// differs from it by a bounded amount, which is what a small learned
// correction has to absorb.

#include <fftw3.h>

#include <complex>
#include <cstdint>
#include <mutex>
#include <random>

#include "sfsci/tensor.hpp"

namespace sfsci {

using cdouble = std::complex<double>;

/// Second-order statistics per (channel, k1, k2): E|x_hat|^2 and E|eps_hat|^2.
struct SpectrumStats {
  Tensor<double> signal_power;
  Tensor<double> noise_power;
};

/// Real frequency response per (channel, k1, k2).
struct FrequencyFilter {
  Tensor<double> response;
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Unnormalized 2-D DFT (sign -1 forward, +1 backward) of an h x w complex array.
inline std::vector<cdouble> fft2(std::vector<cdouble> in, std::size_t h, std::size_t w, int sign) {
  std::vector<cdouble> out(h * w);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), reinterpret_cast<fftw_complex*>(in.data()),
                            reinterpret_cast<fftw_complex*>(out.data()), sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

}  // namespace detail

/// Forward DFT of one real plane.
inline std::vector<cdouble> dft2(std::span<const double> plane, std::size_t h, std::size_t w) {
  std::vector<cdouble> in(plane.begin(), plane.end());
  return detail::fft2(std::move(in), h, w, FFTW_FORWARD);
}

/// Inverse DFT (normalized by 1/(h w)); returns the real part.
inline std::vector<double> idft2_real(const std::vector<cdouble>& spec, std::size_t h, std::size_t w) {
  auto out = detail::fft2(spec, h, w, FFTW_BACKWARD);
  std::vector<double> re(h * w);
  const double s = 1.0 / static_cast<double>(h * w);
  for (std::size_t i = 0; i < re.size(); ++i) re[i] = out[i].real() * s;
  return re;
}

/// Elementwise S / (S + N); bins with S = N = 0 pass nothing.
inline FrequencyFilter wiener_filter(const SpectrumStats& stats) {
  Tensor<double>::require_same_shape(stats.signal_power, stats.noise_power, "wiener_filter");
  FrequencyFilter f{Tensor<double>(stats.signal_power.shape())};
  for (std::size_t i = 0; i < f.response.size(); ++i) {
    const double s = stats.signal_power[i], n = stats.noise_power[i];
    if (!(s >= 0) || !(n >= 0) || !std::isfinite(s) || !std::isfinite(n)) {
      throw DomainError("wiener_filter: powers must be finite and nonnegative");
    }
    f.response[i] = (s + n > 0) ? s / (s + n) : 0.0;
  }
  return f;
}

/// |X|^2 / (|X|^2 + N) from the DFT of one (channel, row, col) sample and a
/// known noise power spectrum of the same shape.
inline FrequencyFilter per_sample_wiener(const Tensor<double>& sample, const Tensor<double>& noise_power) {
  Tensor<double>::require_same_shape(sample, noise_power, "per_sample_wiener");
  if (!all_finite(sample)) throw DomainError("per_sample_wiener: sample must be finite");
  const std::size_t c = sample.dim(0), h = sample.dim(1), w = sample.dim(2);
  SpectrumStats st{Tensor<double>(sample.shape()), noise_power};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto spec = dft2(sample.plane(ch), h, w);
    auto dst = st.signal_power.plane(ch);
    for (std::size_t i = 0; i < spec.size(); ++i) dst[i] = std::norm(spec[i]);
  }
  return wiener_filter(st);
}

/// inverse-DFT(filter * DFT(image)) per channel.
inline Tensor<double> apply_filter(const Tensor<double>& image, const FrequencyFilter& filt) {
  Tensor<double>::require_same_shape(image, filt.response, "apply_filter");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<double> out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    auto spec = dft2(image.plane(ch), h, w);
    auto resp = filt.response.plane(ch);
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= resp[i];
    const auto re = idft2_real(spec, h, w);
    std::copy(re.begin(), re.end(), out.plane(ch).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear convolutional denoiser

/// Places a centered k x k kernel on the h x w circular lattice.
inline std::vector<double> embed_kernel(std::span<const double> kernel, std::size_t k, std::size_t h, std::size_t w) {
  std::vector<double> full(h * w, 0.0);
  const long p = static_cast<long>(k / 2);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const long r = ((static_cast<long>(i) - p) % static_cast<long>(h) + static_cast<long>(h)) % static_cast<long>(h);
      const long c = ((static_cast<long>(j) - p) % static_cast<long>(w) + static_cast<long>(w)) % static_cast<long>(w);
      full[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)] += kernel[i * k + j];
    }
  return full;
}

/// DFT of the embedded kernel; for circular convolution this is exactly the
/// denoiser's frequency response.
inline std::vector<cdouble> kernel_response(std::span<const double> kernel, std::size_t k, std::size_t h, std::size_t w) {
  const auto full = embed_kernel(kernel, k, h, w);
  return dft2(full, h, w);
}

/// Spatial circular convolution of one plane with a centered k x k kernel.
inline std::vector<double> circular_conv(std::span<const double> image, std::size_t h, std::size_t w,
                                         std::span<const double> kernel, std::size_t k) {
  std::vector<double> out(h * w, 0.0);
  const long p = static_cast<long>(k / 2), lh = static_cast<long>(h), lw = static_cast<long>(w);
  for (long r = 0; r < lh; ++r)
    for (long c = 0; c < lw; ++c) {
      double acc = 0;
      for (long i = 0; i < static_cast<long>(k); ++i)
        for (long j = 0; j < static_cast<long>(k); ++j) {
          const long sr = ((r - (i - p)) % lh + lh) % lh, sc = ((c - (j - p)) % lw + lw) % lw;
          acc += kernel[static_cast<std::size_t>(i) * k + static_cast<std::size_t>(j)] *
                 image[static_cast<std::size_t>(sr) * w + static_cast<std::size_t>(sc)];
        }
      out[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)] = acc;
    }
  return out;
}

/// One (noisy, clean) training pair of (channel, row, col) images.
struct DenoisePair {
  Tensor<double> noisy;
  Tensor<double> clean;
};

struct LinearDenoiserFit {
  Tensor<double> kernel;  // (channel, k, k)
  double final_loss = 0;
  std::vector<double> losses;  // one entry per evaluated step, including step 0
};

/// Empirical MSE (1 / (N h w)) sum ||K * r - x||^2 evaluated spatially.
inline double linear_denoiser_mse(const std::vector<DenoisePair>& pairs, const Tensor<double>& kernel) {
  const std::size_t k = kernel.dim(1);
  double total = 0;
  std::size_t count = 0;
  for (const auto& p : pairs) {
    const std::size_t c = p.noisy.dim(0), h = p.noisy.dim(1), w = p.noisy.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto out = circular_conv(p.noisy.plane(ch), h, w, kernel.plane(ch), k);
      auto clean = p.clean.plane(ch);
      for (std::size_t i = 0; i < out.size(); ++i) total += (out[i] - clean[i]) * (out[i] - clean[i]);
      count += out.size();
    }
  }
  return total / static_cast<double>(count);
}

/// Full-batch gradient descent on a bias-free k x k circular convolution per
/// channel. The objective is accumulated once as per-frequency sufficient
/// statistics (Parseval), so each step costs two DFTs per channel regardless
/// of the number of pairs. `init` defaults to the zero kernel.
inline LinearDenoiserFit fit_linear_denoiser(const std::vector<DenoisePair>& pairs, std::size_t kernel_size,
                                             std::size_t steps, double lr, const Tensor<double>* init = nullptr) {
  if (pairs.empty()) throw ConfigError("fit_linear_denoiser: at least one pair required");
  if (kernel_size % 2 == 0) throw ConfigError("fit_linear_denoiser: kernel_size must be odd");
  if (!(lr > 0)) throw ConfigError("fit_linear_denoiser: lr must be > 0");
  const std::size_t c = pairs[0].noisy.dim(0), h = pairs[0].noisy.dim(1), w = pairs[0].noisy.dim(2);
  if (kernel_size > h || kernel_size > w) throw ConfigError("fit_linear_denoiser: kernel larger than image");
  const std::size_t k = kernel_size, n = h * w;
  for (const auto& p : pairs) {
    Tensor<double>::require_same_shape(p.noisy, p.clean, "fit_linear_denoiser pair");
    Tensor<double>::require_same_shape(p.noisy, pairs[0].noisy, "fit_linear_denoiser pairs");
  }

  // A = sum |R|^2, C = sum R conj(X), E = sum |X|^2 per channel and bin.
  std::vector<std::vector<double>> a(c, std::vector<double>(n, 0.0)), e(c, std::vector<double>(n, 0.0));
  std::vector<std::vector<cdouble>> cc(c, std::vector<cdouble>(n, 0.0));
  for (const auto& p : pairs)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto r = dft2(p.noisy.plane(ch), h, w);
      const auto x = dft2(p.clean.plane(ch), h, w);
      for (std::size_t i = 0; i < n; ++i) {
        a[ch][i] += std::norm(r[i]);
        cc[ch][i] += r[i] * std::conj(x[i]);
        e[ch][i] += std::norm(x[i]);
      }
    }
  // loss = scale * sum_k (A |K|^2 - 2 Re(K C) + E), Parseval factor 1/(h w).
  const double scale = 1.0 / (static_cast<double>(pairs.size()) * static_cast<double>(n) * static_cast<double>(n));

  LinearDenoiserFit fit;
  fit.kernel = init ? *init : Tensor<double>({c, k, k});
  if (fit.kernel.shape() != std::vector<std::size_t>{c, k, k}) throw DimensionError("fit_linear_denoiser: bad init shape");

  auto loss_and_grad = [&](bool want_grad, Tensor<double>* grad) {
    double loss = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto kr = kernel_response(fit.kernel.plane(ch), k, h, w);
      std::vector<cdouble> z(n);
      for (std::size_t i = 0; i < n; ++i) {
        loss += scale * (a[ch][i] * std::norm(kr[i]) - 2.0 * (kr[i] * cc[ch][i]).real() + e[ch][i]);
        z[i] = a[ch][i] * std::conj(kr[i]) - cc[ch][i];
      }
      if (!want_grad) continue;
      // d loss / d K(m) = 2 scale Re sum_k z_k exp(-2 pi i k.m / n)
      const auto gz = detail::fft2(z, h, w, FFTW_FORWARD);
      const long p = static_cast<long>(k / 2);
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const long r = ((static_cast<long>(i) - p) % static_cast<long>(h) + static_cast<long>(h)) % static_cast<long>(h);
          const long col = ((static_cast<long>(j) - p) % static_cast<long>(w) + static_cast<long>(w)) % static_cast<long>(w);
          (*grad)(ch, i, j) = 2.0 * scale * gz[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(col)].real();
        }
    }
    return loss / static_cast<double>(c);
  };

  Tensor<double> grad({c, k, k});
  for (std::size_t s = 0; s < steps; ++s) {
    const double loss = loss_and_grad(true, &grad);
    if (!std::isfinite(loss)) {
      throw TrainingError("fit_linear_denoiser diverged at step " + std::to_string(s) + " (loss " +
                          std::to_string(loss) + ", lr " + std::to_string(lr) + ")");
    }
    fit.losses.push_back(loss);
    for (std::size_t i = 0; i < grad.size(); ++i) fit.kernel[i] -= lr * grad[i];
  }
  fit.final_loss = loss_and_grad(false, nullptr);
  if (!std::isfinite(fit.final_loss)) {
    throw TrainingError("fit_linear_denoiser diverged (final loss non-finite, lr " + std::to_string(lr) + ")");
  }
  fit.losses.push_back(fit.final_loss);
  return fit;
}

// ---------------------------------------------------------------------------
// Stationary Gaussian test signals

/// Radially symmetric power spectrum sampled on the h x w DFT grid. `f` is
/// the signed frequency magnitude in cycles per pixel.
template <typename Fn>
Tensor<double> radial_spectrum(std::size_t channels, std::size_t h, std::size_t w, Fn&& fn) {
  Tensor<double> s({channels, h, w});
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const double fr = (r <= h / 2 ? static_cast<double>(r) : static_cast<double>(r) - static_cast<double>(h)) / h;
        const double fc = (c <= w / 2 ? static_cast<double>(c) : static_cast<double>(c) - static_cast<double>(w)) / w;
        s(ch, r, c) = fn(std::sqrt(fr * fr + fc * fc));
      }
  return s;
}

/// Draws (noisy, clean) pairs: clean = IDFT(sqrt(S) DFT(white)), so that
/// E|x_hat|^2 = h w S; noise is white with variance sigma^2, so
/// E|eps_hat|^2 = h w sigma^2.
inline std::vector<DenoisePair> stationary_pairs(const Tensor<double>& density, double noise_sigma, std::size_t count,
                                                 std::uint64_t seed) {
  const std::size_t c = density.dim(0), h = density.dim(1), w = density.dim(2);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<DenoisePair> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    DenoisePair p{Tensor<double>({c, h, w}), Tensor<double>({c, h, w})};
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<double> white(h * w);
      for (auto& v : white) v = nd(rng);
      auto spec = dft2(white, h, w);
      auto dens = density.plane(ch);
      for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= std::sqrt(dens[i]);
      const auto clean = idft2_real(spec, h, w);
      auto cp = p.clean.plane(ch);
      auto np = p.noisy.plane(ch);
      for (std::size_t i = 0; i < clean.size(); ++i) {
        cp[i] = clean[i];
        np[i] = clean[i] + noise_sigma * nd(rng);
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// Expected spectra of the signals drawn by stationary_pairs.
inline SpectrumStats stationary_stats(const Tensor<double>& density, double noise_sigma) {
  const double hw = static_cast<double>(density.dim(1) * density.dim(2));
  SpectrumStats st{density * hw, Tensor<double>(density.shape(), hw * noise_sigma * noise_sigma)};
  return st;
}

/// Real part of the learned kernel's frequency response per channel.
inline FrequencyFilter learned_response(const Tensor<double>& kernel, std::size_t h, std::size_t w) {
  const std::size_t c = kernel.dim(0), k = kernel.dim(1);
  FrequencyFilter f{Tensor<double>({c, h, w})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto kr = kernel_response(kernel.plane(ch), k, h, w);
    auto dst = f.response.plane(ch);
    for (std::size_t i = 0; i < kr.size(); ++i) dst[i] = kr[i].real();
  }
  return f;
}

/// ||a - b||_2 / ||b||_2 over all bins.
inline double relative_l2(const Tensor<double>& a, const Tensor<double>& b) {
  return norm2(a - b) / norm2(b);
}

/// Largest possible sup-norm gap between the Wiener filters of two domains
/// whose signal spectra differ by at most a factor rho at every bin (same
/// noise): max_s |s/(s+1) - rho s/(rho s+1)| = (sqrt(rho)-1)/(sqrt(rho)+1).
inline double wiener_gap_bound(double rho) {
  const double r = std::sqrt(std::max(rho, 1.0 / rho));
  return (r - 1.0) / (r + 1.0);
}

}  // namespace sfsci
