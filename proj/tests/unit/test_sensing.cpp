#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace sfsci;
using namespace testutil;

TEST(MakeMask, DensityOneGivesAllOnes) {
  const auto m = make_mask(4, 4, 1.0, 3);
  for (auto b : m.bits()) EXPECT_EQ(b, 1);
}

TEST(MakeMask, DensityZeroGivesAllZeros) {
  const auto m = make_mask(4, 4, 0.0, 3);
  for (auto b : m.bits()) EXPECT_EQ(b, 0);
}

TEST(MakeMask, DeterministicPerSeed) {
  EXPECT_EQ(make_mask(64, 64, 0.5, 7), make_mask(64, 64, 0.5, 7));
  EXPECT_NE(make_mask(64, 64, 0.5, 7), make_mask(64, 64, 0.5, 8));
}

TEST(MakeMask, RejectsBadDensity) {
  EXPECT_THROW(make_mask(4, 4, 1.5, 0), ParameterError);
  EXPECT_THROW(make_mask(4, 4, -0.1, 0), ParameterError);
  EXPECT_THROW(make_mask(4, 4, std::nan(""), 0), ParameterError);
}

TEST(CodedMaskType, RejectsNonBinary) {
  EXPECT_THROW(CodedMask(1, 2, {0, 2}), DomainError);
  EXPECT_THROW(CodedMask(2, 2, {0, 1}), DimensionError);
}

TEST(Forward, ZeroCubeGivesZeroMeasurement) {
  HyperspectralCube<double> x(5, 6, 3);
  const auto y = forward(x, make_mask(5, 6, 0.5, 1), 2);
  for (double v : y.data.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, SingleBandIsMaskedCube) {
  std::mt19937_64 rng(1);
  const auto x = random_cube(5, 7, 1, rng);
  const auto m = make_mask(5, 7, 0.5, 2);
  for (std::size_t d : {0u, 1u, 3u}) {
    const auto y = forward(x, m, d);
    ASSERT_EQ(y.width(), 7u);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(y.data(0, r, c), m(r, c) * x(r, c, 0));
  }
}

TEST(Forward, HandComputedTwoByTwoByTwo) {
  // band 0 = [[1,2],[3,4]], band 1 = [[5,6],[7,8]], all-ones mask, d = 1
  HyperspectralCube<double> x(Tensor<double>({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
  const auto y = forward(x, ones_mask(2, 2), 1);
  ASSERT_EQ(y.data.shape(), (std::vector<std::size_t>{1, 2, 3}));
  const std::vector<double> expect{1, 2 + 5, 6, 3, 4 + 7, 8};
  EXPECT_EQ(y.data.vec(), expect);
  EXPECT_EQ(y.shift, 1u);
  EXPECT_EQ(y.bands, 2u);
}

TEST(Forward, ShapeMismatchThrows) {
  HyperspectralCube<double> x(4, 4, 2);
  EXPECT_THROW(forward(x, make_mask(4, 5, 0.5, 0), 1), DimensionError);
}

TEST(Forward, WidthLawAndLinearity) {
  std::mt19937_64 rng(4);
  for (std::size_t b : {1u, 3u, 8u})
    for (std::size_t d : {0u, 1u, 2u}) {
      const auto m = make_mask(6, 9, 0.5, b * 10 + d);
      const auto x = random_cube(6, 9, b, rng), z = random_cube(6, 9, b, rng);
      const auto yx = forward(x, m, d), yz = forward(z, m, d);
      EXPECT_EQ(yx.width(), 9 + d * (b - 1));
      HyperspectralCube<double> comb(x.data * 2.5 + z.data * -0.75);
      const auto yc = forward(comb, m, d);
      const auto expect = yx.data * 2.5 + yz.data * -0.75;
      for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(yc.data[i], expect[i], 1e-12);
    }
}

TEST(Forward, MatchesDenseOperator) {
  std::mt19937_64 rng(5);
  const auto m = make_mask(4, 5, 0.6, 9);
  const auto x = random_cube(4, 5, 3, rng);
  const Eigen::VectorXd expect = dense_phi(m, 2, 3) * to_eigen(x.data);
  EXPECT_LT(max_abs_diff(forward(x, m, 2).data, expect), 1e-14);
}

TEST(Adjoint, ZeroMeasurementGivesZeroCube) {
  const auto m = make_mask(4, 4, 0.5, 1);
  Measurement<double> y{Tensor<double>({1, 4, 4 + 2 * 2}), 2, 3};
  const auto x = adjoint(y, m);
  EXPECT_EQ(x.bands(), 3u);
  for (double v : x.data.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Adjoint, SingleBandIsMaskedMeasurement) {
  std::mt19937_64 rng(2);
  const auto m = make_mask(5, 5, 0.5, 3);
  Measurement<double> y{random_tensor({1, 5, 5}, rng), 1, 1};
  const auto x = adjoint(y, m);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(x(r, c, 0), m(r, c) * y.data(0, r, c));
}

TEST(Adjoint, DotProductTest) {
  std::mt19937_64 rng(11);
  const auto m = make_mask(8, 8, 0.5, 12);
  const auto x = random_cube(8, 8, 4, rng);
  Measurement<double> y{random_tensor({1, 8, 11}, rng), 1, 4};
  const double lhs = dot(forward(x, m, 1).data, y.data);
  const double rhs = dot(x.data, adjoint(y, m).data);
  EXPECT_LE(rel_err(lhs, rhs), 1e-6);
}

TEST(Adjoint, DotProductManyShapes) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> dim(1, 16), bands(1, 8), dd(1, 2);
  for (int t = 0; t < 50; ++t) {
    const std::size_t h = dim(rng), w = dim(rng), b = bands(rng), d = dd(rng);
    const auto m = make_mask(h, w, 0.5, rng());
    const auto x = random_cube(h, w, b, rng);
    Measurement<double> y{random_tensor({1, h, w + d * (b - 1)}, rng, -1, 1), d, b};
    const double lhs = dot(forward(x, m, d).data, y.data);
    const double rhs = dot(x.data, adjoint(y, m).data);
    EXPECT_LE(std::abs(lhs - rhs), 1e-6 * norm2(x.data) * norm2(y.data));
  }
}

TEST(Adjoint, InconsistentMetaThrows) {
  const auto m = make_mask(4, 4, 0.5, 1);
  Measurement<double> y{Tensor<double>({1, 4, 6}), 1, 2};  // width should be 5
  EXPECT_THROW(adjoint(y, m), DimensionError);
  Measurement<double> y2{Tensor<double>({1, 3, 5}), 1, 2};
  EXPECT_THROW(adjoint(y2, m), DimensionError);
}

TEST(PhiPhiTDiag, SingleBandEqualsMask) {
  const auto m = make_mask(6, 7, 0.5, 4);
  const auto d = phi_phiT_diag(m, 1, 1);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(d(0, r, c), m(r, c));
}

TEST(PhiPhiTDiag, AllOnesFourBandsInteriorIsFour) {
  const auto m = ones_mask(4, 4);
  const auto d = phi_phiT_diag(m, 1, 4);
  ASSERT_EQ(d.dim(2), 7u);
  // column 3 is covered by every band (band i spans columns i..i+3)
  for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(d(0, r, 3), 4.0);
  const std::vector<double> row{1, 2, 3, 4, 3, 2, 1};
  for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(d(0, 0, c), row[c]);
  const Eigen::MatrixXd phi = dense_phi(m, 1, 4);
  const Eigen::VectorXd dense = (phi * phi.transpose()).diagonal();
  EXPECT_EQ(max_abs_diff(d, dense), 0.0);
}

TEST(PhiPhiTDiag, AllZerosMaskGivesZeros) {
  const auto d = phi_phiT_diag(make_mask(5, 5, 0.0, 0), 2, 3);
  for (double v : d.vec()) EXPECT_EQ(v, 0.0);
}

TEST(PhiPhiTDiag, MatchesDenseAndIsDiagonal) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> dim(1, 6), bands(1, 3), dd(0, 2);
  for (int t = 0; t < 30; ++t) {
    const std::size_t h = dim(rng), w = dim(rng), b = bands(rng), d = dd(rng);
    const auto m = make_mask(h, w, 0.5, rng());
    const Eigen::MatrixXd phi = dense_phi(m, d, b);
    const Eigen::MatrixXd g = phi * phi.transpose();
    EXPECT_EQ(max_abs_diff(phi_phiT_diag(m, d, b), g.diagonal()), 0.0);
    const Eigen::MatrixXd off = g - Eigen::MatrixXd(g.diagonal().asDiagonal());
    EXPECT_EQ(off.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(AddNoise, ZeroMeasurementStaysZero) {
  Measurement<double> y{Tensor<double>({1, 4, 5}), 1, 2};
  const auto out = add_noise(y, SensingConfig{1, ShotNoise{11}, 3});
  EXPECT_EQ(out, y);
}

TEST(AddNoise, NoneIsIdentity) {
  std::mt19937_64 rng(3);
  Measurement<double> y{random_tensor({1, 4, 5}, rng), 1, 2};
  EXPECT_EQ(add_noise(y, SensingConfig{1, NoNoise{}, 3}), y);
}

TEST(AddNoise, ShotNoiseMeanMatchesSignal) {
  const double c = 0.37;
  Measurement<double> y{Tensor<double>({1, 100, 100}, c), 0, 1};
  const auto out = add_noise(y, SensingConfig{0, ShotNoise{11}, 5});
  EXPECT_NEAR(sum(out.data) / 1e4, c, 0.01 * c);
  EXPECT_NE(out, y);
}

TEST(AddNoise, DeterministicPerSeed) {
  std::mt19937_64 rng(3);
  Measurement<double> y{random_tensor({1, 8, 9}, rng), 1, 2};
  EXPECT_EQ(add_noise(y, SensingConfig{1, ShotNoise{8}, 9}), add_noise(y, SensingConfig{1, ShotNoise{8}, 9}));
  EXPECT_NE(add_noise(y, SensingConfig{1, ShotNoise{8}, 9}), add_noise(y, SensingConfig{1, ShotNoise{8}, 10}));
}

TEST(AddNoise, NegativeEntriesRejected) {
  Measurement<double> y{Tensor<double>({1, 2, 2}, {0.1, -0.2, 0.3, 0.4}), 0, 1};
  EXPECT_THROW(add_noise(y, SensingConfig{0, ShotNoise{11}, 0}), DomainError);
  EXPECT_NO_THROW(add_noise(y, SensingConfig{0, NoNoise{}, 0}));
}

TEST(SensingOperatorVars, GradientsAreAdjoints) {
  std::mt19937_64 rng(8);
  const auto m = make_mask(5, 6, 0.5, 2);
  SensingOperator<double> op(m, 2, 3);
  Var<double> x(random_tensor({3, 5, 6}, rng), true);
  const auto g = random_tensor({1, 5, 10}, rng);
  backward(ad::mean(ad::mul_const(op.forward(x), g)));
  const auto expect = op.adjoint(g) * (1.0 / 50.0);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(x.grad()[i], expect[i], 1e-14);
}
