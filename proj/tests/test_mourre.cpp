#include "twg/mourre.hpp"

#include <gtest/gtest.h>

using namespace twg;

namespace {

struct Square {
  DiscreteOperators ops = assemble_operators(build_grid({Rectangle{1, 1}, 1.0 / 16}));
  FiberFamily fam{ops, 0.0};
  BandTable table = sweep_bands(fam, uniform_grid(-3, 3, 121), 4);
  std::vector<Branch> branches = track_branches(table);
  CriticalAnalysis a = analyze_critical(fam, table, branches, 40);
};

const Square& square() {
  static const Square s;
  return s;
}

}  // namespace

TEST(Mourre, UntwistedEstimateMatchesTwiceTheMomentum) {
  const auto& s = square();
  const Real E = s.ops.mu1() + 1, delta = 0.1;
  const MourreRun run = run_mourre(s.fam, s.table, s.branches, s.a.levels, E, delta);
  EXPECT_EQ(run.window.halvings, 0);
  ASSERT_EQ(run.window.J.size(), 2u);
  EXPECT_EQ(run.window.J[0].sign, -1);
  EXPECT_EQ(run.window.J[1].sign, 1);
  EXPECT_TRUE(run.report.pass);
  const Real expect = 2 * std::sqrt(1 - delta);
  EXPECT_GE(run.report.c_est, 0.95 * expect);
  EXPECT_LE(run.report.c_est, 1.05 * expect);
}

TEST(Mourre, PreimagesSolveTheLevelEquation) {
  const auto& s = square();
  const Real E = s.ops.mu1() + 2.5;
  const MourreWindow w = build_window(s.fam, s.table, s.branches, s.a.levels, E, 0.1);
  ASSERT_EQ(w.kpoints.size(), 2u);
  for (const auto& kp : w.kpoints) {
    EXPECT_NEAR(std::abs(kp.k), std::sqrt(2.5), 1e-8);
    EXPECT_NEAR(kp.slope, 2 * kp.k, 1e-6);
    EXPECT_EQ(kp.cls, 0);
  }
  const BumpGamma g = build_gamma(w);
  for (const auto& J : w.J) {
    EXPECT_EQ(g(0.5 * (J.J.lo + J.J.hi)), J.sign);
    EXPECT_TRUE(J.J.contains(J.witness));
  }
}

TEST(Mourre, CriticalEnergyIsRejectedUnlessBypassed) {
  const auto& s = square();
  const Real E = s.a.levels.Eset.front();
  EXPECT_THROW(build_window(s.fam, s.table, s.branches, s.a.levels, E, 0.1), CriticalEnergyError);
  try {
    build_window(s.fam, s.table, s.branches, s.a.levels, E, 0.1);
  } catch (const CriticalEnergyError& e) {
    EXPECT_DOUBLE_EQ(e.energy(), E);
    EXPECT_DOUBLE_EQ(e.level(), E);
  }
  WindowOptions opt;
  opt.bypass = true;
  const MourreWindow w = build_window(s.fam, s.table, s.branches, s.a.levels, E, 0.1, opt);
  EXPECT_TRUE(w.bypass);
  const MourreReport r = verify_mourre(s.fam, s.table, s.branches, w, build_gamma(w));
  EXPECT_FALSE(r.pass);
  EXPECT_LE(r.c_est, 0.0);
}

TEST(Mourre, WindowShrinksAwayFromNearbyLevels) {
  const auto& s = square();
  // mu1 is a critical level; a request straddling it must be halved until it is excluded.
  const Real mu1 = s.a.levels.Eset.front();
  const MourreWindow w = build_window(s.fam, s.table, s.branches, s.a.levels, mu1 + 0.3, 0.8);
  EXPECT_GT(w.halvings, 0);
  EXPECT_LT(w.delta, 0.3);
}

TEST(Mourre, SampledGeneratorIsAntisymmetric) {
  const BumpGamma g({{-1.0, -0.4, -1}, {0.3, 1.2, 1}});
  const SparseR iA = sampled_generator(uniform_grid(-3, 3, 301), g);
  EXPECT_EQ(max_abs(SparseR(iA + SparseR(iA.transpose()))), 0.0);
}

TEST(Mourre, CommutatorsConvergeToTheDirectForm) {
  const DiscreteOperators ops = assemble_operators(build_grid({Rectangle{1, 1}, 1.0 / 8}));
  const FiberFamily fam(ops, 0.8);
  const BumpGamma g({{0.5, 1.5, 1}});
  const VectorC phi = fam.solve(1.0, 1).vectors.col(0);
  const auto f = [](Real k) { return std::exp(-2 * (k - 1) * (k - 1)); };
  std::vector<CommutatorCheck> runs;
  for (int n : {121, 241, 481}) runs.push_back(double_commutator_check(fam, g, uniform_grid(-2, 4, n), f, phi));
  for (std::size_t i = 1; i < runs.size(); ++i) {
    EXPECT_NEAR(runs[i - 1].c1_residual / runs[i].c1_residual, 4.0, 0.4);
    EXPECT_NEAR(runs[i - 1].c2_residual_direct / runs[i].c2_residual_direct, 4.0, 0.6);
  }
  EXPECT_LT(runs.back().c1_residual, 1e-3);
  EXPECT_GT(runs.back().c2_residual_paper, 0.1);
  EXPECT_EQ(runs.back().consistent_form, "direct");
  EXPECT_EQ(runs.back().generator_asymmetry, 0.0);
}
