#pragma once

#include <Eigen/Dense>
#include <random>
#include <unistd.h>

#include "sfsci/harness.hpp"

namespace testutil {

using namespace sfsci;

template <typename T = double>
Tensor<T> random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T = double>
HyperspectralCube<T> random_cube(std::size_t h, std::size_t w, std::size_t b, std::mt19937_64& rng) {
  return HyperspectralCube<T>(random_tensor<T>({b, h, w}, rng));
}

inline CodedMask ones_mask(std::size_t h, std::size_t w) { return CodedMask(h, w, std::vector<std::uint8_t>(h * w, 1)); }

// Explicit matrix of the CASSI operator: rows are detector pixels (row-major
// over H x W'), columns are cube entries in (band, row, col) order.
inline Eigen::MatrixXd dense_phi(const CodedMask& m, std::size_t d, std::size_t b) {
  const std::size_t h = m.height(), w = m.width(), wm = w + d * (b - 1);
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(static_cast<long>(h * wm), static_cast<long>(b * h * w));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        phi(static_cast<long>(r * wm + c + d * i), static_cast<long>((i * h + r) * w + c)) = m(r, c);
  return phi;
}

template <typename T>
Eigen::VectorXd to_eigen(const Tensor<T>& t) {
  Eigen::VectorXd v(static_cast<long>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v[static_cast<long>(i)] = static_cast<double>(t[i]);
  return v;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

inline double max_abs_diff(const Tensor<double>& a, const Eigen::VectorXd& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[static_cast<long>(i)]));
  return m;
}

// Central difference of f with respect to p[idx].
template <typename F>
double central_diff(Parameter<double>& p, std::size_t idx, F&& f, double h = 1e-4) {
  const double orig = p.value()[idx];
  p.mutable_value()[idx] = orig + h;
  const double fp = f();
  p.mutable_value()[idx] = orig - h;
  const double fm = f();
  p.mutable_value()[idx] = orig;
  return (fp - fm) / (2 * h);
}

// Gradient error tolerant of tiny gradients.
inline double grad_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("sfsci_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace testutil
