#include "oracles/oracles.hpp"
#include "twg/critical_levels.hpp"

#include <gtest/gtest.h>

using namespace twg;

namespace {

struct Problem {
  DiscreteOperators ops;
  FiberFamily fam;
  BandTable table;
  std::vector<Branch> branches;
  CriticalAnalysis a;

  Problem(const GeometrySpec& g, Real beta, Real kmax, int nk, int nmax, Real R)
      : ops(assemble_operators(build_grid(g))),
        fam(ops, beta),
        table(sweep_bands(fam, uniform_grid(-kmax, kmax, nk), nmax)),
        branches(track_branches(table)),
        a(analyze_critical(fam, table, branches, R)) {}
};

const Problem& untwisted() {
  static const Problem s({Rectangle{1, 1}, 1.0 / 16}, 0.0, 3, 61, 4, 60);
  return s;
}

const Problem& twisted_disc() {
  static const Problem s({Disc{1}, 1.0 / 20}, 0.2, 2, 41, 4, 16);
  return s;
}

}  // namespace

TEST(CriticalLevels, UntwistedLevelsAreTransverseEigenvalues) {
  const auto& s = untwisted();
  EXPECT_TRUE(s.a.levels.E2set.empty());
  EXPECT_TRUE(s.a.levels.benign.empty());
  const auto ref = oracle::discrete_square_eigenvalues(15);
  std::vector<Real> expect;
  for (Real v : ref)
    if (v < 60 && (expect.empty() || v - expect.back() > 1e-6)) expect.push_back(v);
  ASSERT_EQ(s.a.levels.Eset.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(s.a.levels.Eset[i], expect[i], 1e-7 * expect[i]);
  for (const auto& p : s.a.levels.E1set) EXPECT_NEAR(p.k0, 0.0, 1e-6);
}

TEST(CriticalLevels, TwistedDiscStationaryPointsSitAtBetaM) {
  const auto& s = twisted_disc();
  std::vector<Real> ks;
  for (const auto& p : s.a.levels.E1set) ks.push_back(p.k0);
  std::sort(ks.begin(), ks.end());
  ASSERT_EQ(ks.size(), 3u);
  EXPECT_NEAR(ks[0], -0.2, 0.01);
  EXPECT_NEAR(ks[1], 0.0, 1e-6);
  EXPECT_NEAR(ks[2], 0.2, 0.01);
  EXPECT_NEAR(ks[0], -ks[2], 1e-6);
}

TEST(CriticalLevels, TwistedDiscHasOppositeSlopeCrossingAtZero) {
  const auto& s = twisted_disc();
  ASSERT_EQ(s.a.levels.E2set.size(), 1u);
  const auto& c = s.a.levels.E2set.front();
  EXPECT_NEAR(c.k0, 0.0, 1e-6);
  EXPECT_LT(c.slope * c.slope2, 0.0);
  // The m = +-1 pair is degenerate at k = 0.
  const auto r = s.fam.solve(0.0, 3);
  EXPECT_NEAR(c.E, r.values[1], 1e-7 * r.values[1]);
  EXPECT_NEAR(r.values[1], r.values[2], 1e-8 * r.values[1]);
  // Slopes are +-2 (k - beta m) at k = 0, about -+0.4.
  EXPECT_NEAR(std::abs(c.slope), 0.4, 0.02);
}

TEST(CriticalLevels, LevelsAreEigenvaluesAtTheirMomenta) {
  for (const Problem* s : {&untwisted(), &twisted_disc()})
    for (const auto* set : {&s->a.levels.E1set, &s->a.levels.E2set})
      for (const auto& p : *set) {
        const auto r = s->fam.solve(p.k0, 6);
        Real best = 1e300;
        for (Eigen::Index i = 0; i < r.values.size(); ++i) best = std::min(best, std::abs(r.values[i] - p.E));
        EXPECT_LT(best, 1e-8 * (1 + p.E));
      }
}

TEST(CriticalLevels, WindowBoundCoversTheRange) {
  const auto& s = twisted_disc();
  EXPECT_GT(s.a.bound.kR, 0.0);
  EXPECT_GE(s.a.bound.NR, 1);
  for (int lbl : s.a.bound.LR) EXPECT_GE(lbl, 0);
  EXPECT_NEAR(s.a.bound.R, 16.0, 0.0);
}
