#pragma once
// Independent reference values: Bessel zeros for the disc, lattice counts and exact
// eigenvalues for rectangles. Nothing here uses the library's solvers.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace oracle {

inline constexpr double pi = 3.14159265358979323846;

/// j-th positive zero (j >= 1) of J_m, by sign scan and bisection.
inline double bessel_zero(int m, int j) {
  const int am = std::abs(m);
  const double step = 0.02;
  double a = am > 0 ? am * 0.5 + step : step, fa = std::cyl_bessel_j(am, a);
  int found = 0;
  for (double b = a + step; b < 200; b += step) {
    const double fb = std::cyl_bessel_j(am, b);
    if (fa == 0 || (fa < 0) != (fb < 0)) {
      if (++found == j) {
        double lo = a, hi = b, flo = fa;
        for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
          const double mid = 0.5 * (lo + hi), fm = std::cyl_bessel_j(am, mid);
          if ((fm < 0) == (flo < 0)) {
            lo = mid;
            flo = fm;
          } else {
            hi = mid;
          }
        }
        return 0.5 * (lo + hi);
      }
    }
    a = b;
    fa = fb;
  }
  throw std::runtime_error("bessel_zero: not found");
}

struct DiscMode {
  int m = 0, j = 1;
  double value = 0;
};

/// Branches j_{m,j}^2 + (k - beta m)^2 of the unit disc fiber, sorted ascending.
inline std::vector<DiscMode> disc_modes(double beta, double k, int mmax = 12, int jmax = 6, double r = 1.0) {
  std::vector<DiscMode> out;
  for (int m = -mmax; m <= mmax; ++m)
    for (int j = 1; j <= jmax; ++j) {
      const double z = bessel_zero(m, j) / r;
      out.push_back({m, j, z * z + (k - beta * m) * (k - beta * m)});
    }
  std::sort(out.begin(), out.end(), [](const DiscMode& a, const DiscMode& b) { return a.value < b.value; });
  return out;
}

/// Lowest n values of the disc envelope at k.
inline std::vector<double> disc_envelope(double beta, double k, int n, double r = 1.0) {
  const auto modes = disc_modes(beta, k, 12, 6, r);
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(modes[static_cast<std::size_t>(i)].value);
  return v;
}

/// Dirichlet eigenvalues pi^2 (p^2/a^2 + q^2/b^2) of an a x b rectangle, sorted.
inline std::vector<double> rectangle_eigenvalues(double a, double b, int count) {
  std::vector<double> v;
  const int lim = count + 2;
  for (int p = 1; p <= lim; ++p)
    for (int q = 1; q <= lim; ++q) v.push_back(pi * pi * (p * p / (a * a) + q * q / (b * b)));
  std::sort(v.begin(), v.end());
  v.resize(static_cast<std::size_t>(count));
  return v;
}

/// #{(p, q) >= 1 : pi^2 (p^2/a^2 + q^2/b^2) < lambda}.
inline int rectangle_count(double a, double b, double lambda) {
  int c = 0;
  for (int p = 1; pi * pi * p * p / (a * a) < lambda; ++p)
    for (int q = 1; pi * pi * (p * p / (a * a) + q * q / (b * b)) < lambda; ++q) ++c;
  return c;
}

/// Eigenvalues of the five-point Dirichlet Laplacian on the unit square with n interior
/// nodes per side (h = 1/(n+1)), sorted.
inline std::vector<double> discrete_square_eigenvalues(int n) {
  const double h = 1.0 / (n + 1);
  std::vector<double> v;
  for (int p = 1; p <= n; ++p)
    for (int q = 1; q <= n; ++q) {
      const double sp = std::sin(p * pi * h / 2), sq = std::sin(q * pi * h / 2);
      v.push_back(4 / (h * h) * (sp * sp + sq * sq));
    }
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace oracle
