#include "jam/numkit.hpp"

#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace jam;
using jam::testing::random_matrix;

namespace {

Matrix reconstruct(const SvdResult& d) { return d.u * d.s.asDiagonal() * d.vt; }

}  // namespace

TEST(Svd, IdentityHasUnitSingularValues) {
  const auto d = svd(Matrix::Identity(3, 3));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(d.s[i], 1.0, 1e-15);
}

TEST(Svd, DiagonalMatrix) {
  Matrix a = Matrix::Zero(3, 3);
  a.diagonal() << 3, 2, 1;
  const auto d = svd(a);
  EXPECT_NEAR(d.s[0], 3.0, 1e-14);
  EXPECT_NEAR(d.s[1], 2.0, 1e-14);
  EXPECT_NEAR(d.s[2], 1.0, 1e-14);
}

TEST(Svd, SingularValuesMatchEigenvaluesOfGram) {
  const Matrix a = random_matrix(11, 10, 4);
  const auto d = svd(a);
  const auto e = sym_eig(a.transpose() * a);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(d.s[i], std::sqrt(e.values[i]), 1e-9);
}

TEST(Svd, ReconstructionAndOrderingOnVariedShapes) {
  const std::vector<std::pair<int, int>> shapes{{1, 1}, {5, 3}, {3, 5}, {40, 40}, {60, 7}, {7, 60}};
  std::uint64_t seed = 100;
  for (auto [r, c] : shapes) {
    Matrix a = random_matrix(seed++, r, c) * 37.0;
    const auto d = svd(a);
    EXPECT_LE(max_abs(reconstruct(d) - a), 1e-9 * max_abs(a)) << r << "x" << c;
    for (Eigen::Index i = 0; i < d.s.size(); ++i) {
      EXPECT_GE(d.s[i], 0.0);
      if (i > 0) {
        EXPECT_LE(d.s[i], d.s[i - 1]);
      }
    }
  }
}

TEST(Svd, RankDeficientInputReconstructs) {
  const Matrix b = random_matrix(3, 12, 2);
  const Matrix a = b * random_matrix(4, 2, 6);
  const auto d = svd(a);
  EXPECT_LE(max_abs(reconstruct(d) - a), 1e-9 * max_abs(a));
  EXPECT_LT(d.s[2], 1e-10 * d.s[0]);
}

TEST(Svd, RejectsNonFinite) {
  Matrix a = Matrix::Ones(2, 2);
  a(0, 1) = std::nan("");
  EXPECT_JAM_ERROR(svd(a), ErrorKind::InvalidInput);
  a(0, 1) = INFINITY;
  EXPECT_JAM_ERROR(svd(a), ErrorKind::InvalidInput);
}

TEST(SymEig, Diagonal) {
  Matrix s = Matrix::Zero(2, 2);
  s.diagonal() << 1, 5;
  const auto e = sym_eig(s);
  EXPECT_NEAR(e.values[0], 5.0, 1e-15);
  EXPECT_NEAR(e.values[1], 1.0, 1e-15);
}

TEST(SymEig, Analytic2x2) {
  Matrix s(2, 2);
  s << 2, 1, 1, 2;
  const auto e = sym_eig(s);
  EXPECT_NEAR(e.values[0], 3.0, 1e-14);
  EXPECT_NEAR(e.values[1], 1.0, 1e-14);
}

TEST(SymEig, ResidualAndOrthonormalityOnRandomSpd) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const Matrix b = random_matrix(seed, 6, 6);
    const Matrix s = b * b.transpose() + Matrix::Identity(6, 6);
    const auto e = sym_eig(s);
    for (int i = 0; i < 6; ++i) {
      const Vector v = e.vectors.col(i);
      const double resid = (s * v - e.values[i] * v).cwiseAbs().maxCoeff();
      EXPECT_LE(resid, 1e-8 * max_abs(s));
      if (i > 0) {
        EXPECT_GE(e.values[i - 1], e.values[i]);
      }
    }
    EXPECT_LE(max_abs(e.vectors.transpose() * e.vectors - Matrix::Identity(6, 6)), 1e-8);
  }
}

TEST(SymEig, RejectsAsymmetric) {
  Matrix s(2, 2);
  s << 1, 2, 2.001, 1;
  EXPECT_JAM_ERROR(sym_eig(s), ErrorKind::InvalidInput);
  s(1, 0) = 2.0 + 1e-13;
  EXPECT_NO_THROW(sym_eig(s));
}

TEST(CenterColumns, ConstantColumnBecomesZero) {
  Matrix x(3, 2);
  x << 4, 1, 4, 2, 4, 6;
  const Matrix c = center_columns(x);
  EXPECT_EQ(c.col(0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(CenterColumns, SmallExample) {
  Matrix x(2, 1);
  x << 1, 3;
  const Matrix c = center_columns(x);
  EXPECT_DOUBLE_EQ(c(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(c(1, 0), 1.0);
}

TEST(CenterColumns, ZeroMeanIdempotentAndLinear) {
  const Matrix x = random_matrix(5, 30, 4) * 3.0 + Matrix::Constant(30, 4, 7.0);
  const Matrix y = random_matrix(6, 30, 4);
  const Matrix c = center_columns(x);
  EXPECT_LE(c.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(max_abs(center_columns(c) - c), 1e-12);
  EXPECT_LE(max_abs(center_columns(2.0 * x + y) - (2.0 * c + center_columns(y))), 1e-12);
}

TEST(Rng, SameSeedSameMatrix) {
  auto a = rng_new(5);
  auto b = rng_new(5);
  EXPECT_EQ(rng_gaussian(a, 4, 7), rng_gaussian(b, 4, 7));
}

TEST(Rng, DifferentSeedsDiffer) {
  auto a = rng_new(5);
  auto b = rng_new(42);
  EXPECT_NE(rng_gaussian(a, 4, 7), rng_gaussian(b, 4, 7));
}

TEST(Rng, GaussianMomentsOverLargeSample) {
  auto rng = rng_new(2024);
  const Matrix g = rng_gaussian(rng, 1000, 100);
  const double mean = g.mean();
  const double var = (g.array() - mean).square().mean();
  EXPECT_LT(std::abs(mean), 0.02);
  EXPECT_LT(std::abs(var - 1.0), 0.02);
}

TEST(Rng, UniformRangeAndBelowIsUnbiased) {
  auto rng = rng_new(9);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ++counts[rng.below(7)];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Rng, ForkedStreamsIgnoreInterleaving) {
  const auto root = rng_new(77);
  auto a1 = root.fork(1);
  auto b1 = root.fork(2);
  const Matrix a_alone = rng_gaussian(a1, 3, 3);
  const Matrix b_alone = rng_gaussian(b1, 3, 3);

  auto a2 = root.fork(1);
  auto b2 = root.fork(2);
  Matrix a_mixed(3, 3), b_mixed(3, 3);
  for (int i = 0; i < 9; ++i) {
    b_mixed.data()[i] = b2.gaussian();
    a_mixed.data()[i] = a2.gaussian();
  }
  EXPECT_EQ(a_alone, a_mixed);
  EXPECT_EQ(b_alone, b_mixed);
  EXPECT_NE(a_alone, b_alone);
}

TEST(Rng, KnownFirstDrawsArePinned) {
  // Guards the bit-level sequence across platforms and refactors.
  auto rng = rng_new(5);
  const std::uint64_t first = rng.next_u64();
  EXPECT_EQ(first, 18134207888297016785ULL);
  EXPECT_EQ(rng_new(5).gaussian(), 0.015216430715045734);
  auto again = rng_new(5);
  EXPECT_EQ(first, again.next_u64());
  auto other = rng_new(6);
  EXPECT_NE(first, other.next_u64());
}

TEST(Permutation, IsAPermutationAndSeeded) {
  auto r1 = rng_new(3);
  auto r2 = rng_new(3);
  const auto p = permutation(r1, 50);
  EXPECT_EQ(p, permutation(r2, 50));
  std::set<std::size_t> seen(p.begin(), p.end());
  EXPECT_EQ(seen.size(), 50u);
  EXPECT_EQ(*seen.rbegin(), 49u);
}

TEST(Orthonormalize, ColumnsAreOrthonormalAndSpanInput) {
  const Matrix a = random_matrix(8, 9, 4);
  const Matrix q = orthonormalize_columns(a);
  EXPECT_LE(max_abs(q.transpose() * q - Matrix::Identity(4, 4)), 1e-12);
  // a lies in span(q)
  EXPECT_LE(max_abs(q * (q.transpose() * a) - a), 1e-12);
}

TEST(GatherRows, SelectsInOrder) {
  Matrix m(3, 2);
  m << 1, 2, 3, 4, 5, 6;
  const Matrix g = gather_rows(m, {2, 0, 2});
  Matrix want(3, 2);
  want << 5, 6, 1, 2, 5, 6;
  EXPECT_EQ(g, want);
}
