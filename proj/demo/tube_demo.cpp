// Twisted square tube: the ground energy approaches the fiber band edge E1(0) as the
// truncation grows; a slowdown perturbation of the twist is then examined below the edge.
#include "twg/fiber_bands.hpp"
#include "twg/tube3d.hpp"

#include <cstdio>

int main() {
  using namespace twg;
  GeometrySpec geo;
  geo.shape = Rectangle{1.0, 1.0};
  geo.h = 1.0 / 8;
  const auto ops = assemble_operators(build_grid(geo));
  const Real beta = 1.0;
  const Real e1 = FiberFamily(ops, beta).solve(0.0, 1).values[0];
  std::printf("mu1 = %.6f, E1(0) = %.6f\n", ops.mu1(), e1);
  TwistProfile flat;
  flat.beta = beta;
  for (Real L : {2.5, 5.0, 10.0}) {
    const auto s = tube_low_spectrum(assemble_tube(ops, flat, L, 0.2), 2, ops.mu1(), e1);
    std::printf("constant twist, L = %5.1f: lambda1 = %.6f, (lambda1 - E1(0)) L^2 = %.4f\n", L, s.values[0],
                (s.values[0] - e1) * L * L);
  }
  TwistProfile slow = flat;
  slow.eps = GaussianPerturbation{0.5, 1.0};
  for (Real L : {5.0, 10.0}) {
    const auto s = tube_low_spectrum(assemble_tube(ops, slow, L, 0.2), 4, ops.mu1(), e1);
    std::printf("slowdown eps0 = 0.5, L = %5.1f: lambda1 = %.6f, %d eigenvalue(s) below E1(0)\n", L, s.values[0],
                s.below_edge);
  }
  return 0;
}
