#include "twg/conjugate_flow.hpp"

#include <gtest/gtest.h>

using namespace twg;

namespace {

const BumpGamma& bump() {
  static const BumpGamma g({{-1.0, 1.0, 1}});
  return g;
}

SampledFunction packet(int n = 1024, Real kmin = -8, Real kmax = 8) {
  return SampledFunction::sample(kmin, (kmax - kmin) / n, n, [](Real k) {
    const Real u = (k - 0.3) / 0.6;
    return Complex(std::exp(-0.5 * u * u), 0.4 * u * std::exp(-0.5 * u * u));
  });
}

}  // namespace

TEST(SmoothBumps, StepIsSymmetricWithSlopeTwo) {
  Real slope = 0;
  for (int i = 0; i <= 1000; ++i) {
    const Real t = i / 1000.0;
    EXPECT_NEAR(smooth_step(t) + smooth_step(1 - t), 1.0, 1e-15);
    slope = std::max(slope, smooth_step_derivative(t));
  }
  EXPECT_NEAR(slope, kSmoothStepSlope, 1e-12);
  EXPECT_NEAR(smooth_step_derivative(0.5), 2.0, 1e-15);
}

TEST(SmoothBumps, GammaPlateausAndSupport) {
  const BumpGamma g({{-2.0, -1.0, -1}, {0.5, 1.5, 1}});
  EXPECT_EQ(g(-1.5), -1.0);
  EXPECT_EQ(g(1.0), 1.0);
  const auto [lo, hi] = g.support_hull();
  EXPECT_EQ(g(lo - 1e-9), 0.0);
  EXPECT_EQ(g(hi + 1e-9), 0.0);
  Real slope = 0;
  for (Real k = lo; k <= hi; k += 1e-4) slope = std::max(slope, std::abs(g.derivative(k)));
  EXPECT_LE(slope, kSmoothStepSlope / g.min_transition() * (1 + 1e-9));
  EXPECT_THROW(BumpGamma({{0.0, 1.0, 1}, {0.5, 2.0, 1}}), Error);
}

TEST(Flow, ZeroGammaIsTheIdentity) {
  const BumpGamma g = BumpGamma::zero();
  const auto r = integrate_flow(g, {-1.0, 0.0, 2.5}, 1.0, 0.1);
  for (Eigen::Index i = 0; i < r.phi.rows(); ++i)
    for (Eigen::Index c = 0; c < r.phi.cols(); ++c) {
      EXPECT_EQ(r.phi(i, c), r.kstarts[c]);
      EXPECT_EQ(r.dkphi(i, c), 1.0);
    }
  const auto f = packet();
  EXPECT_EQ((apply_group(g, 0.7, f).f.values - f.values).norm(), 0.0);
  EXPECT_EQ(position_form_check(g, f).residual, 0.0);
}

TEST(Flow, PointsOutsideTheSupportAreFixed) {
  const auto [lo, hi] = bump().support_hull();
  const auto r = integrate_flow(bump(), {lo - 0.5, hi + 1e-6, hi + 3}, 1.0, max_flow_step(bump()));
  for (Eigen::Index i = 0; i < r.phi.rows(); ++i)
    for (Eigen::Index c = 0; c < r.phi.cols(); ++c) EXPECT_EQ(r.phi(i, c), r.kstarts[c]);
}

TEST(Flow, GroupLawAndMonotonicity) {
  for (Real k = -3.5; k <= 3.5; k += 0.25) {
    for (Real t : {0.3, 1.0})
      for (Real s : {-0.6, 0.45}) {
        const Real a = flow_map(bump(), t + s, k).first;
        const Real b = flow_map(bump(), t, flow_map(bump(), s, k).first).first;
        EXPECT_LT(std::abs(a - b), 1e-8) << k << " " << t << " " << s;
      }
    EXPECT_GT(flow_map(bump(), 1.0, k).second, 0.0);
  }
}

TEST(Flow, JacobianMatchesFiniteDifferences) {
  FlowOptions tight;
  tight.local_tol = 1e-13;
  tight.max_subdivision = 24;
  const Real dk = 1e-3;
  for (Real k = -3.0; k <= 3.0; k += 0.2) {
    const auto at = [&](Real x) { return flow_map(bump(), 1.0, x, tight).first; };
    const Real fd = (-at(k + 2 * dk) + 8 * at(k + dk) - 8 * at(k - dk) + at(k - 2 * dk)) / (12 * dk);
    const Real d = flow_map(bump(), 1.0, k, tight).second;
    EXPECT_LT(std::abs(fd - d) / d, 1e-6) << k;
  }
}

TEST(Flow, StepLargerThanTheStabilityLimitIsRejected) {
  EXPECT_THROW(integrate_flow(bump(), {0.0}, 1.0, 2 * max_flow_step(bump())), Error);
  EXPECT_THROW(integrate_flow(bump(), {0.0}, 1.0, 0.0), Error);
}

TEST(Flow, GroupIsUnitary) {
  const auto f = packet();
  for (Real t : {0.5, 1.0, -1.0}) {
    const auto w = apply_group(bump(), t, f);
    EXPECT_FALSE(w.support_overflow);
    EXPECT_LT(std::abs(w.f.norm() / f.norm() - 1), 1e-6) << t;
  }
  const auto back = apply_group(bump(), -1.0, apply_group(bump(), 1.0, f).f).f;
  EXPECT_LT(std::sqrt(f.hk) * (back.values - f.values).norm() / f.norm(), 1e-5);
}

TEST(Flow, GeneratorResidualIsFirstOrder) {
  const auto gen = generator_check(bump(), packet(), {0.04, 0.02, 0.01});
  ASSERT_EQ(gen.size(), 3u);
  for (std::size_t i = 1; i < gen.size(); ++i) EXPECT_NEAR(gen[i - 1].residual / gen[i].residual, 2.0, 0.15);
}

TEST(Flow, PositionFormMatches) {
  const auto r = position_form_check(bump(), packet(), 4);
  EXPECT_LT(r.residual, 1e-6);
  EXPECT_FALSE(r.aliasing_warning);
}

TEST(Flow, FourierTransformIsUnitary) {
  const auto f = packet(512);
  const VectorC psi = fourier_k_to_x(f.values, f.k0, f.hk);
  const Real hx = 2 * pi / (512 * f.hk);
  EXPECT_NEAR(std::sqrt(hx) * psi.norm(), f.norm(), 1e-12);
}
