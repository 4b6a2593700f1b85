#pragma once

// Exact lattice bijections applied identically to every band: flips, quarter
// turns (square inputs only) and cyclic shifts.

#include <random>

#include "sfsci/autodiff.hpp"

namespace sfsci {

struct Transform {
  enum class Kind { identity, flip_h, flip_v, rot90, shift };
  Kind kind = Kind::identity;
  int quarter_turns = 0;  // rot90: counter-clockwise turns in [0, 3]
  long du = 0;            // shift: rows
  long dv = 0;            // shift: columns

  static Transform identity() { return {}; }
  static Transform flip_h() { return {Kind::flip_h}; }
  static Transform flip_v() { return {Kind::flip_v}; }
  static Transform rot90(int turns) { return {Kind::rot90, ((turns % 4) + 4) % 4}; }
  static Transform shift(long du, long dv) { return {Kind::shift, 0, du, dv}; }

  Transform inverse() const {
    switch (kind) {
      case Kind::rot90: return rot90(4 - quarter_turns);
      case Kind::shift: return shift(-du, -dv);
      default: return *this;
    }
  }
  bool operator==(const Transform&) const = default;
};

namespace detail {

inline long wrap(long v, long n) { return ((v % n) + n) % n; }

// Source index (r, c) in the input for output position (r_out, c_out).
inline std::pair<std::size_t, std::size_t> transform_source(const Transform& t, std::size_t r, std::size_t c,
                                                             std::size_t h, std::size_t w) {
  switch (t.kind) {
    case Transform::Kind::identity: return {r, c};
    case Transform::Kind::flip_h: return {r, w - 1 - c};
    case Transform::Kind::flip_v: return {h - 1 - r, c};
    case Transform::Kind::rot90: {
      std::size_t sr = r, sc = c;
      // one counter-clockwise turn: out(r, c) = in(c, n-1-r)
      for (int k = 0; k < t.quarter_turns; ++k) {
        const std::size_t nr = sc, nc = h - 1 - sr;
        sr = nr;
        sc = nc;
      }
      return {sr, sc};
    }
    case Transform::Kind::shift:
      return {static_cast<std::size_t>(wrap(static_cast<long>(r) - t.du, static_cast<long>(h))),
              static_cast<std::size_t>(wrap(static_cast<long>(c) - t.dv, static_cast<long>(w)))};
  }
  return {r, c};
}

}  // namespace detail

/// Applies `t` to every band of a (band, row, col) tensor.
template <typename T>
Tensor<T> apply_transform(const Tensor<T>& x, const Transform& t) {
  const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (t.kind == Transform::Kind::rot90 && t.quarter_turns != 0 && h != w) {
    throw ConfigError("90-degree rotation requires a square input");
  }
  if (t.kind == Transform::Kind::identity || (t.kind == Transform::Kind::rot90 && t.quarter_turns == 0)) return x;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const auto [sr, sc] = detail::transform_source(t, r, c, h, w);
      for (std::size_t i = 0; i < b; ++i) out(i, r, c) = x(i, sr, sc);
    }
  return out;
}

template <typename T>
Tensor<T> invert_transform(const Tensor<T>& x, const Transform& t) {
  return apply_transform(x, t.inverse());
}

/// Permutation op; its adjoint is the inverse permutation.
template <typename T>
Var<T> apply_transform(const Var<T>& x, const Transform& t) {
  auto xn = x.node();
  return Var<T>::make(apply_transform(x.value(), t), {x},
                      [xn, t](const Tensor<T>& g) { xn->accumulate(invert_transform(g, t)); });
}

/// The group T sampled from at every adaptation step.
struct TransformSpec {
  bool flip_h = true;
  bool flip_v = true;
  bool rot90 = true;
  bool shift = true;
  long max_shift = 8;

  std::vector<Transform::Kind> kinds() const {
    std::vector<Transform::Kind> k;
    if (flip_h) k.push_back(Transform::Kind::flip_h);
    if (flip_v) k.push_back(Transform::Kind::flip_v);
    if (rot90) k.push_back(Transform::Kind::rot90);
    if (shift) k.push_back(Transform::Kind::shift);
    return k;
  }

  void validate(std::size_t h, std::size_t w) const {
    if (rot90 && h != w) throw ConfigError("transforms.rot90 requires square scenes");
    if (max_shift < 0) throw ConfigError("transforms.max_shift must be >= 0");
  }

  /// Uniform over the enabled kinds, then uniform over that kind's parameters.
  Transform sample(std::mt19937_64& rng) const {
    const auto k = kinds();
    if (k.empty()) return Transform::identity();
    const auto kind = k[std::uniform_int_distribution<std::size_t>(0, k.size() - 1)(rng)];
    switch (kind) {
      case Transform::Kind::rot90: return Transform::rot90(std::uniform_int_distribution<int>(1, 3)(rng));
      case Transform::Kind::shift: {
        std::uniform_int_distribution<long> d(-max_shift, max_shift);
        const long du = d(rng);
        const long dv = d(rng);
        return Transform::shift(du, dv);
      }
      default: return Transform{kind};
    }
  }
  bool operator==(const TransformSpec&) const = default;
};

}  // namespace sfsci
