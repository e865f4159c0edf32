#include "twg/fiber_bands.hpp"
#include "twg/tube3d.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace twg;

namespace {

const DiscreteOperators& ops8() {
  static const DiscreteOperators ops = assemble_operators(build_grid({Rectangle{1, 1}, 1.0 / 8}));
  return ops;
}

TwistProfile gaussian(Real beta, Real eps0, Real sigma = 1.0) {
  TwistProfile p;
  p.beta = beta;
  p.eps = GaussianPerturbation{eps0, sigma};
  return p;
}

TwistProfile constant(Real beta) {
  TwistProfile p;
  p.beta = beta;
  return p;
}

}  // namespace

TEST(Tube, SplittingIdentitiesHold) {
  const SplittingCheck c = splitting_check(ops8(), gaussian(0.7, 0.3), 3.0, 0.25);
  EXPECT_LT(c.decomp1, 1e-13);
  EXPECT_LT(c.decomp2, 1e-13);
  EXPECT_GT(c.W.nonZeros(), 0);
}

TEST(Tube, OperatorIsSymmetricPositive) {
  const TubeOperator t = assemble_tube(ops8(), gaussian(1.0, 0.5), 2.0, 0.25);
  EXPECT_EQ(t.dim(), ops8().dim() * static_cast<std::size_t>(t.M));
  EXPECT_EQ(max_abs(SparseR(t.H - SparseR(t.H.transpose()))), 0.0);
  const auto r = eig_hermitian(t.H, 1, SolverOptions{});
  EXPECT_GT(r.values[0], 0.0);
}

TEST(Tube, StraightTubeApproachesTheBandEdgeFromAbove) {
  const Real beta = 0.4;
  const FiberFamily fam(ops8(), beta);
  const Real e1 = fam.solve(0.0, 1).values[0];
  std::vector<Real> gaps;
  for (Real L : {2.5, 5.0}) {
    const TubeOperator t = assemble_tube(ops8(), constant(beta), L, 0.2);
    const TubeSpectrum s = tube_low_spectrum(t, 2, ops8().mu1(), e1);
    EXPECT_EQ(s.below_edge, 0);
    gaps.push_back(s.values[0] - e1);
  }
  EXPECT_GT(gaps[1], 0.0);
  EXPECT_NEAR(gaps[0] / gaps[1], 4.0, 0.3);
}

TEST(Tube, PeriodicCellMatchesTheFiberSymbol) {
  const Real beta = 0.6;
  const TubeOperator t = assemble_tube_periodic(ops8(), beta, 1.0, 0.25);
  ASSERT_EQ(t.M, 8);
  Eigen::SelfAdjointEigenSolver<MatrixR> es{MatrixR(t.H)};
  std::vector<Real> tube(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  std::vector<Real> sym;
  for (const auto& p : periodic_symbols(t)) {
    const FiberFamily fam(ops8(), p.beta_eff);
    const auto r = fam.solve(p.s, static_cast<int>(ops8().dim()));
    sym.insert(sym.end(), r.values.data(), r.values.data() + r.values.size());
  }
  std::sort(sym.begin(), sym.end());
  ASSERT_EQ(tube.size(), sym.size());
  for (std::size_t i = 0; i < sym.size(); ++i) EXPECT_NEAR(tube[i], sym[i], 1e-9 * (1 + sym[i]));
}

TEST(Tube, GroundStateDecreasesWithTruncation) {
  const auto prof = gaussian(1.0, 0.4);
  Real prev = 1e300;
  for (Real L : {2.0, 3.0, 4.0}) {
    const TubeOperator t = assemble_tube(ops8(), prof, L, 0.25);
    const Real l1 = tube_low_spectrum(t, 1, ops8().mu1(), 0.0).values[0];
    EXPECT_LE(l1, prev + 1e-10);
    prev = l1;
  }
}

TEST(Tube, HilbertSchmidtNorms) {
  const TubeOperator t = assemble_tube(ops8(), gaussian(1.0, 0.3), 2.0, 0.25);
  HsOptions zero;
  zero.weight = [](Real) { return 0.0; };
  EXPECT_EQ(hs_norm(t, 0.0, zero).norm, 0.0);

  // Exact column probing against a dense inverse.
  const MatrixR inv = MatrixR(t.H).inverse();
  Real ref = 0;
  for (Eigen::Index i = 0; i < inv.rows(); ++i) {
    const Real w = phi_weight(2.0, t.x3(static_cast<std::size_t>(i)));
    ref += w * w * inv.col(i).squaredNorm();
  }
  const auto both = hs_norms(t, {2.0, 0.0});
  EXPECT_NEAR(both[0].norm, std::sqrt(ref), 1e-10 * std::sqrt(ref));
  EXPECT_NEAR(both[1].norm, inv.norm(), 1e-10 * inv.norm());

  HsOptions st;
  st.stochastic = true;
  st.probes = 400;
  st.seed = 7;
  const HsEntry e = hs_norm(t, 2.0, st);
  EXPECT_GT(e.std_error, 0.0);
  EXPECT_LT(std::abs(e.norm - std::sqrt(ref)), 5 * e.std_error + 1e-3 * std::sqrt(ref));
}

TEST(Tube, NonDecayingProfileIsRejected) {
  TwistProfile p;
  p.beta = 1.0;
  p.eps = TabulatedPerturbation{{-100.0, 100.0}, {0.5, 0.5}};
  EXPECT_FALSE(check_decay(p, 5.0).ok);
  EXPECT_THROW(assemble_tube(ops8(), p, 5.0, 0.25), DecayError);
  EXPECT_TRUE(check_decay(gaussian(1.0, 0.5), 5.0).ok);
}

TEST(Tube, MemoryGuard) {
  EXPECT_THROW(assemble_tube(ops8(), constant(1.0), 2000.0, 0.25), MemoryGuardError);
}

TEST(Tube, ProfileTableParsing) {
  std::istringstream ok("x3,eps\n-1,0\n0,0.5\n1,0\n");
  const auto t = read_profile_csv(ok);
  TwistProfile p;
  p.beta = 1;
  p.eps = t;
  EXPECT_DOUBLE_EQ(p.epsilon(-0.5), 0.25);
  EXPECT_DOUBLE_EQ(p.epsilon(2.0), 0.0);
  EXPECT_DOUBLE_EQ(p.epsilon_derivative(0.5), -0.5);
  EXPECT_DOUBLE_EQ(p.g(0.0), 0.5);
  std::istringstream bad("0,1\n0,2\n");
  EXPECT_THROW(read_profile_csv(bad), ConfigError);
  std::istringstream junk("0,1\nfoo,bar\n");
  EXPECT_THROW(read_profile_csv(junk), ConfigError);
}
