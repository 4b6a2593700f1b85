#pragma once

#include <cmath>

#include "sfsci/sensing.hpp"

namespace sfsci {

/// Reported when the two cubes are identical.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE) over the whole cube.
template <typename T>
double psnr(const HyperspectralCube<T>& xhat, const HyperspectralCube<T>& x, double peak = 1.0) {
  Tensor<T>::require_same_shape(xhat.data, x.data, "psnr");
  long double acc = 0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const long double d = static_cast<long double>(xhat.data[i]) - x.data[i];
    acc += d * d;
  }
  const double m = static_cast<double>(acc / static_cast<long double>(x.data.size()));
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

namespace detail {

// 'valid' separable filtering of an h x w image with a 1-D kernel.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                        const std::vector<double>& k) {
  const std::size_t n = k.size(), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(h * ow), out(oh * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * img[y * w + x + i];
      tmp[y * ow + x] = s;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

}  // namespace detail

/// SSIM of one 2-D band with an 11x11 Gaussian window (sigma 1.5).
inline double ssim_plane(std::span<const double> a, std::span<const double> b, std::size_t h, std::size_t w,
                         double peak = 1.0) {
  constexpr std::size_t kWin = 11;
  constexpr double kSigma = 1.5;
  if (h < kWin || w < kWin) throw DimensionError("ssim: image smaller than the 11x11 window");
  std::vector<double> k(kWin);
  double s = 0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    s += k[i] = std::exp(-d * d / (2 * kSigma * kSigma));
  }
  for (auto& v : k) v /= s;
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  std::vector<double> va(a.begin(), a.end()), vb(b.begin(), b.end()), aa(h * w), bb(h * w), ab(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  const auto ma = detail::filter_valid(va, h, w, k), mb = detail::filter_valid(vb, h, w, k);
  const auto saa = detail::filter_valid(aa, h, w, k), sbb = detail::filter_valid(bb, h, w, k),
             sab = detail::filter_valid(ab, h, w, k);
  double total = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va2 = saa[i] - ma[i] * ma[i], vb2 = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
    total += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va2 + vb2 + c2));
  }
  return total / static_cast<double>(ma.size());
}

/// Per-band SSIM averaged over bands.
template <typename T>
double ssim(const HyperspectralCube<T>& xhat, const HyperspectralCube<T>& x, double peak = 1.0) {
  Tensor<T>::require_same_shape(xhat.data, x.data, "ssim");
  const std::size_t h = x.height(), w = x.width();
  double total = 0;
  for (std::size_t i = 0; i < x.bands(); ++i) {
    auto pa = xhat.data.plane(i), pb = x.data.plane(i);
    std::vector<double> a(pa.begin(), pa.end()), b(pb.begin(), pb.end());
    total += ssim_plane(a, b, h, w, peak);
  }
  return total / static_cast<double>(x.bands());
}

struct SceneMetrics {
  double psnr = 0;
  double ssim = 0;
};

struct MetricsReport {
  std::vector<SceneMetrics> per_scene;
  double mean_psnr = 0;
  double mean_ssim = 0;

  void add(double p, double s) {
    per_scene.push_back({p, s});
    const double n = static_cast<double>(per_scene.size());
    mean_psnr += (p - mean_psnr) / n;
    mean_ssim += (s - mean_ssim) / n;
  }
};

template <typename T>
MetricsReport evaluate_cubes(const std::vector<HyperspectralCube<T>>& recon, const std::vector<HyperspectralCube<T>>& truth) {
  if (recon.size() != truth.size()) throw DimensionError("evaluate: scene count mismatch");
  MetricsReport r;
  for (std::size_t i = 0; i < recon.size(); ++i) r.add(psnr(recon[i], truth[i]), ssim(recon[i], truth[i]));
  return r;
}

}  // namespace sfsci
