#pragma once

// Low-rank synthetic hyperspectral scenes. Each cube is a sum of
// `spectral_rank` products of a smooth spatial abundance map and a smooth
// spectral signature. Source and target domains differ in rank and in
// spectral smoothness, which changes the inter-band correlation.

#include <cmath>
#include <cstdint>
#include <random>

#include "sfsci/sensing.hpp"

namespace sfsci {

struct SyntheticConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t bands = 8;
  double spatial_smoothness = 3.0;   // Gaussian correlation length, pixels
  std::size_t spectral_rank = 2;
  double spectral_smoothness = 3.0;  // Gaussian correlation length, bands
  std::size_t count = 10;
  std::uint64_t seed = 0;

  void validate(const std::string& where = "data") const {
    if (height < 1 || width < 1 || bands < 1) throw ConfigError(where + ": height, width, bands must be >= 1");
    if (spectral_rank < 1 || spectral_rank > bands) throw ConfigError(where + ".spectral_rank must lie in [1, bands]");
    if (!(spatial_smoothness > 0)) throw ConfigError(where + ".spatial_smoothness must be > 0");
    if (!(spectral_smoothness > 0)) throw ConfigError(where + ".spectral_smoothness must be > 0");
  }
  bool operator==(const SyntheticConfig&) const = default;
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double s = 0;
  for (int i = -radius; i <= radius; ++i) s += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= s;
  return k;
}

// Circular separable blur of an h x w field.
inline void blur_circular(std::vector<double>& f, std::size_t h, std::size_t w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const long r = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(f.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (long i = -r; i <= r; ++i) {
        const long xx = ((static_cast<long>(x) + i) % static_cast<long>(w) + static_cast<long>(w)) % static_cast<long>(w);
        acc += k[i + r] * f[y * w + xx];
      }
      tmp[y * w + x] = acc;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (long i = -r; i <= r; ++i) {
        const long yy = ((static_cast<long>(y) + i) % static_cast<long>(h) + static_cast<long>(h)) % static_cast<long>(h);
        acc += k[i + r] * tmp[yy * w + x];
      }
      f[y * w + x] = acc;
    }
}

inline void normalize_range(std::vector<double>& v, double lo, double hi) {
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double a = *mn, b = *mx;
  for (auto& x : v) x = (b > a) ? lo + (hi - lo) * (x - a) / (b - a) : 0.5 * (lo + hi);
}

}  // namespace detail

template <typename T = float>
HyperspectralCube<T> gen_synthetic_one(const SyntheticConfig& cfg, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5ca1ab1eU};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t h = cfg.height, w = cfg.width, b = cfg.bands;
  std::vector<double> acc(b * h * w, 0.0);
  for (std::size_t r = 0; r < cfg.spectral_rank; ++r) {
    std::vector<double> field(h * w);
    for (auto& v : field) v = n(rng);
    detail::blur_circular(field, h, w, cfg.spatial_smoothness);
    detail::normalize_range(field, 0.0, 1.0);

    // Spectral signature: reflect-padded blur of white noise along bands.
    std::vector<double> raw(b);
    for (auto& v : raw) v = n(rng);
    const auto k = detail::gaussian_kernel(cfg.spectral_smoothness);
    const long rad = static_cast<long>(k.size() / 2);
    std::vector<double> sig(b);
    for (std::size_t i = 0; i < b; ++i) {
      double s = 0;
      for (long j = -rad; j <= rad; ++j) {
        long idx = static_cast<long>(i) + j;
        const long nb = static_cast<long>(b);
        while (idx < 0 || idx >= nb) idx = idx < 0 ? -idx - 1 : 2 * nb - idx - 1;
        if (nb == 1) idx = 0;
        s += k[j + rad] * raw[static_cast<std::size_t>(idx)];
      }
      sig[i] = s;
    }
    detail::normalize_range(sig, 0.1, 1.0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t p = 0; p < h * w; ++p) acc[i * h * w + p] += field[p] * sig[i];
  }
  const double peak = *std::max_element(acc.begin(), acc.end());
  HyperspectralCube<T> cube(h, w, b);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double v = peak > 0 ? acc[i] / peak : 0.0;
    cube.data[i] = static_cast<T>(std::clamp(v, 0.0, 1.0));
  }
  return cube;
}

/// `cfg.count` cubes in [0,1], deterministic per seed.
template <typename T = float>
std::vector<HyperspectralCube<T>> gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::vector<HyperspectralCube<T>> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(gen_synthetic_one<T>(cfg, i));
  return out;
}

/// Mean Pearson correlation over all band pairs of one cube.
template <typename T>
double mean_interband_correlation(const HyperspectralCube<T>& cube) {
  const std::size_t b = cube.bands(), n = cube.height() * cube.width();
  if (b < 2) return 1.0;
  std::vector<double> mean(b, 0.0), sd(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (T v : cube.data.plane(i)) mean[i] += v;
    mean[i] /= static_cast<double>(n);
    for (T v : cube.data.plane(i)) sd[i] += (v - mean[i]) * (v - mean[i]);
    sd[i] = std::sqrt(sd[i] / static_cast<double>(n));
  }
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j) {
      double c = 0;
      auto pi = cube.data.plane(i), pj = cube.data.plane(j);
      for (std::size_t p = 0; p < n; ++p) c += (pi[p] - mean[i]) * (pj[p] - mean[j]);
      const double den = sd[i] * sd[j] * static_cast<double>(n);
      total += den > 0 ? c / den : 0.0;
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

}  // namespace sfsci
