#include "oracles/oracles.hpp"
#include "twg/cross_section.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace twg;

namespace {

DiscreteOperators square(Real h, int nmu = 6) {
  return assemble_operators(build_grid({Rectangle{1, 1}, h}), nmu);
}

}  // namespace

TEST(CrossSection, SquareMatchesDiscreteSpectrumExactly) {
  const auto ops = square(1.0 / 16);
  ASSERT_EQ(ops.dim(), 225u);
  const auto ref = oracle::discrete_square_eigenvalues(15);
  for (std::size_t i = 0; i < ops.mu.size(); ++i) EXPECT_NEAR(ops.mu[i], ref[i], 1e-9 * ref[i]) << i;
}

TEST(CrossSection, Mu1ConvergesAtSecondOrder) {
  const Real exact = 2 * oracle::pi * oracle::pi;
  Real prev = 0;
  for (Real h : {1.0 / 8, 1.0 / 16, 1.0 / 32}) {
    const Real err = std::abs(square(h, 1).mu1() - exact);
    if (prev > 0) EXPECT_NEAR(prev / err, 4.0, 0.1);
    prev = err;
  }
}

TEST(CrossSection, OperatorsHaveExactSymmetry) {
  const auto ops = assemble_operators(build_grid({Disc{1}, 0.1}), 1);
  EXPECT_EQ(max_abs(SparseR(ops.L - SparseR(ops.L.transpose()))), 0.0);
  EXPECT_EQ(max_abs(SparseR(ops.Dtau + SparseR(ops.Dtau.transpose()))), 0.0);
}

TEST(CrossSection, RotationGeneratorAnnihilatesRadialFunctions) {
  // Dtau (x1^2 + x2^2) = x1 * 2 x2 - x2 * 2 x1 = 0 holds exactly for centred differences.
  const auto ops = assemble_operators(build_grid({Disc{1}, 0.05}), 0);
  VectorR r2(ops.dim());
  for (std::size_t n = 0; n < ops.dim(); ++n) r2[n] = ops.grid.x1[n] * ops.grid.x1[n] + ops.grid.x2[n] * ops.grid.x2[n];
  const VectorR d = ops.Dtau * r2;
  // Nodes with a missing neighbour see Dirichlet zeros, so test only the interior of the disc.
  for (std::size_t n = 0; n < ops.dim(); ++n)
    if (r2[n] < 0.8) EXPECT_NEAR(d[n], 0.0, 1e-12);
}

TEST(CrossSection, CountBelowMatchesOracle) {
  const auto ops = square(1.0 / 16, 0);
  const auto ref = oracle::discrete_square_eigenvalues(15);
  for (Real lam : {30.0, 100.0, 250.0, 500.0}) {
    const int expect = static_cast<int>(std::count_if(ref.begin(), ref.end(), [&](double v) { return v < lam; }));
    EXPECT_EQ(count_below(ops.L, lam), expect) << lam;
  }
}

TEST(CrossSection, WeylRatioApproachesOne) {
  const auto ops = square(1.0 / 32, 0);
  const auto t = weyl_check(ops, std::vector<Real>{400.0});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_NEAR(t.rows[0].ratio, 1.0, 0.15);
  EXPECT_FALSE(weyl_check(ops, std::vector<Real>{1e6}).warnings.empty());
}

TEST(CrossSection, DiscGridIsInsideAndCentred) {
  const auto g = build_grid({Disc{1}, 0.05});
  Real sx = 0, sy = 0;
  for (std::size_t n = 0; n < g.size(); ++n) {
    EXPECT_LT(g.x1[n] * g.x1[n] + g.x2[n] * g.x2[n], 1.0);
    sx += g.x1[n];
    sy += g.x2[n];
  }
  EXPECT_NEAR(sx, 0.0, 1e-9);
  EXPECT_NEAR(sy, 0.0, 1e-9);
  EXPECT_NEAR(g.area, oracle::pi, 0.15);
}

TEST(CrossSection, TooCoarseGridThrows) {
  EXPECT_THROW(build_grid({Rectangle{1, 1}, 0.25}), GeometryError);
  EXPECT_THROW(build_grid({Disc{-1}, 0.1}), GeometryError);
}

TEST(CrossSection, MaskFileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "twg_test_mask.txt";
  {
    std::ofstream out(path);
    out << "7 7 0.125\n";
    for (int r = 0; r < 7; ++r) out << "#######\n";
  }
  const auto g = build_grid({Mask{path.string()}, 0.125});
  const auto rect = build_grid({Rectangle{1, 1}, 0.125});
  ASSERT_EQ(g.size(), rect.size());
  const auto a = assemble_operators(g, 3), b = assemble_operators(rect, 3);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a.mu[i], b.mu[i], 1e-9);
  {
    std::ofstream out(path);
    out << "2 3 0.1\n#x#\n###\n";
  }
  EXPECT_THROW(build_grid({Mask{path.string()}, 0.1}), GeometryError);
  std::filesystem::remove(path);
  EXPECT_THROW(build_grid({Mask{path.string()}, 0.1}), GeometryError);
}
