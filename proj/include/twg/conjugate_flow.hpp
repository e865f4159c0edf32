#pragma once
// The flow d(phi)/dt = -gamma(phi) behind the conjugate operator, the unitary group W(t) it
// induces on L^2(R_k), the generator formula and the position-space (convolution) form of A.

#include "twg/core.hpp"
#include "twg/smooth_bumps.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace twg {

struct FlowOptions {
  Real local_tol = 1e-8;  ///< step-doubling error estimate per step
  int max_subdivision = 12;
};

struct FlowResult {
  std::vector<Real> tgrid;
  std::vector<Real> kstarts;
  MatrixR phi;    ///< tgrid.size() x kstarts.size()
  MatrixR dkphi;  ///< d(phi)/dk via the integrated log-Jacobian
  Real dt = 0;
  int order = 4;
  int rejected_steps = 0;  ///< steps that needed subdivision
};

namespace detail {

struct FlowState {
  Real phi = 0, logj = 0;
};

inline FlowState rk4_step(const BumpGamma& g, FlowState s, Real h) {
  const auto f = [&](Real p) { return -g(p); };
  const auto fj = [&](Real p) { return -g.derivative(p); };
  const Real k1 = f(s.phi), l1 = fj(s.phi);
  const Real p2 = s.phi + 0.5 * h * k1;
  const Real k2 = f(p2), l2 = fj(p2);
  const Real p3 = s.phi + 0.5 * h * k2;
  const Real k3 = f(p3), l3 = fj(p3);
  const Real p4 = s.phi + h * k3;
  const Real k4 = f(p4), l4 = fj(p4);
  return {s.phi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), s.logj + h / 6 * (l1 + 2 * l2 + 2 * l3 + l4)};
}

/// One step of size h, subdivided until the step-doubling estimate meets the tolerance.
inline FlowState adaptive_step(const BumpGamma& g, FlowState s, Real h, const FlowOptions& opt, int depth,
                               int& rejected) {
  const FlowState full = rk4_step(g, s, h);
  const FlowState half = rk4_step(g, rk4_step(g, s, 0.5 * h), 0.5 * h);
  const Real err = std::max(std::abs(full.phi - half.phi), std::abs(full.logj - half.logj)) / 15;
  if (err <= opt.local_tol) return half;
  if (depth >= opt.max_subdivision)
    throw Error("flow step rejected: local error " + std::to_string(err) + " exceeds tolerance");
  ++rejected;
  return adaptive_step(g, adaptive_step(g, s, 0.5 * h, opt, depth + 1, rejected), 0.5 * h, opt, depth + 1, rejected);
}

}  // namespace detail

/// Largest step allowed by the stability rule dt <= 0.1 / max(1, sup|gamma'|).
inline Real max_flow_step(const BumpGamma& g) {
  if (g.plateaus().empty()) return 0.1;
  return 0.1 / std::max<Real>(1, kSmoothStepSlope / g.min_transition());
}

/// Integrates phi(t, k) and log d(phi)/dk for t = 0, dt, ..., T (T may be negative).
inline FlowResult integrate_flow(const BumpGamma& g, const std::vector<Real>& kstarts, Real T, Real dt,
                                 const FlowOptions& opt = {}) {
  if (!(dt > 0)) throw Error("flow step must be positive");
  if (dt > max_flow_step(g) * (1 + 1e-12))
    throw Error("flow step too large: dt must not exceed " + std::to_string(max_flow_step(g)));
  const int nsteps = static_cast<int>(std::ceil(std::abs(T) / dt - 1e-12));
  const Real h = nsteps > 0 ? T / nsteps : 0;
  FlowResult r;
  r.dt = std::abs(h);
  r.kstarts = kstarts;
  r.tgrid.resize(nsteps + 1);
  for (int i = 0; i <= nsteps; ++i) r.tgrid[i] = i * h;
  r.phi.resize(nsteps + 1, kstarts.size());
  r.dkphi.resize(nsteps + 1, kstarts.size());
  const auto cols = parallel_map(kstarts.size(), [&](std::size_t c) {
    std::vector<detail::FlowState> out(nsteps + 1);
    int rejected = 0;
    out[0] = {kstarts[c], 0};
    for (int i = 0; i < nsteps; ++i) out[i + 1] = detail::adaptive_step(g, out[i], h, opt, 0, rejected);
    return std::make_pair(out, rejected);
  });
  for (std::size_t c = 0; c < kstarts.size(); ++c) {
    for (int i = 0; i <= nsteps; ++i) {
      r.phi(i, c) = cols[c].first[i].phi;
      r.dkphi(i, c) = std::exp(cols[c].first[i].logj);
    }
    r.rejected_steps += cols[c].second;
  }
  return r;
}

/// phi(t, k) and d(phi)/dk(t, k) at a single t.
inline std::pair<Real, Real> flow_map(const BumpGamma& g, Real t, Real k, const FlowOptions& opt = {}) {
  const int nsteps = std::max(1, static_cast<int>(std::ceil(std::abs(t) / max_flow_step(g) - 1e-12)));
  const Real h = t / nsteps;
  detail::FlowState s{k, 0};
  int rejected = 0;
  for (int i = 0; i < nsteps; ++i) s = detail::adaptive_step(g, s, h, opt, 0, rejected);
  return {s.phi, std::exp(s.logj)};
}

/// Samples f(k0 + j hk), j = 0..n-1, with the rectangle-rule L^2 norm.
struct SampledFunction {
  Real k0 = 0;
  Real hk = 1;
  VectorC values;

  Eigen::Index size() const { return values.size(); }
  Real k(Eigen::Index j) const { return k0 + hk * static_cast<Real>(j); }
  Real norm() const { return std::sqrt(hk) * values.norm(); }

  static SampledFunction sample(Real k0, Real hk, int n, const std::function<Complex(Real)>& f) {
    SampledFunction s;
    s.k0 = k0;
    s.hk = hk;
    s.values.resize(n);
    for (int j = 0; j < n; ++j) s.values[j] = f(k0 + hk * j);
    return s;
  }

  /// Four-point cubic Lagrange interpolation; zero outside the sampled range.
  Complex interpolate(Real k) const {
    const Real x = (k - k0) / hk;
    const Eigen::Index n = values.size();
    if (x < 0 || x > static_cast<Real>(n - 1)) return 0;
    Eigen::Index i = static_cast<Eigen::Index>(std::floor(x));
    i = std::clamp<Eigen::Index>(i - 1, 0, std::max<Eigen::Index>(0, n - 4));
    const Real t = x - static_cast<Real>(i);
    Complex acc = 0;
    for (int a = 0; a < 4 && i + a < n; ++a) {
      Real w = 1;
      for (int b = 0; b < 4; ++b)
        if (b != a) w *= (t - b) / static_cast<Real>(a - b);
      acc += w * values[i + a];
    }
    return acc;
  }
};

struct GroupResult {
  SampledFunction f;
  bool support_overflow = false;  ///< phi carried sample points outside the grid where f is not negligible
};

/// (W(t) f)(k) = sqrt(d(phi)/dk (t, k)) f(phi(t, k)).
inline GroupResult apply_group(const BumpGamma& g, Real t, const SampledFunction& f, const FlowOptions& opt = {}) {
  GroupResult out;
  out.f = f;
  if (t == 0) return out;
  const Real lo = f.k(0), hi = f.k(f.size() - 1);
  const Real fmax = f.values.cwiseAbs().maxCoeff();
  const auto vals = parallel_map(static_cast<std::size_t>(f.size()), [&](std::size_t j) {
    const auto [phi, dk] = flow_map(g, t, f.k(static_cast<Eigen::Index>(j)), opt);
    const bool outside = phi < lo || phi > hi;
    return std::make_pair(std::sqrt(dk) * f.interpolate(phi), outside);
  });
  for (std::size_t j = 0; j < vals.size(); ++j) {
    out.f.values[j] = vals[j].first;
    if (vals[j].second && std::abs(f.values[0]) + std::abs(f.values[f.size() - 1]) > 1e-12 * fmax)
      out.support_overflow = true;
  }
  return out;
}

/// (iA f)(k) = -gamma'(k) f(k) / 2 - gamma(k) f'(k) with f' from sixth-order central differences.
inline VectorC apply_iA(const BumpGamma& g, const SampledFunction& f) {
  const Eigen::Index n = f.size();
  VectorC out(n);
  const auto at = [&](Eigen::Index j) -> Complex { return (j < 0 || j >= n) ? Complex(0) : f.values[j]; };
  for (Eigen::Index j = 0; j < n; ++j) {
    const Complex d = (45.0 * (at(j + 1) - at(j - 1)) - 9.0 * (at(j + 2) - at(j - 2)) + (at(j + 3) - at(j - 3))) /
                      (60.0 * f.hk);
    const Real k = f.k(j);
    out[j] = -0.5 * g.derivative(k) * f.values[j] - g(k) * d;
  }
  return out;
}

struct GeneratorSample {
  Real dt = 0;
  Real residual = 0;  ///< || (W(dt) f - f)/dt - iA f || / ||iA f||
};

inline std::vector<GeneratorSample> generator_check(const BumpGamma& g, const SampledFunction& f,
                                                    const std::vector<Real>& dts, const FlowOptions& opt = {}) {
  const VectorC iaf = apply_iA(g, f);
  const Real scale = std::sqrt(f.hk) * iaf.norm();
  std::vector<GeneratorSample> out;
  for (Real dt : dts) {
    const auto w = apply_group(g, dt, f, opt);
    const VectorC diff = (w.f.values - f.values) / dt - iaf;
    const Real res = std::sqrt(f.hk) * diff.norm();
    out.push_back({dt, scale > 0 ? res / scale : res});
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Position form: A0 = -(Gamma x + x Gamma)/2 with (Gamma psi)(x) = (2 pi)^{-1/2} int gammahat(x - t) psi(t) dt.

/// Unitary Fourier transform psi(x_m) = (2 pi)^{-1/2} sum_j exp(-i x_m k_j) f(k_j) hk on the dual grid
/// x_m = (m - n/2) * 2 pi / (n hk), m = 0..n-1.
inline VectorC fourier_k_to_x(const VectorC& f, Real k0, Real hk) {
  const Eigen::Index n = f.size();
  const Real hx = 2 * pi / (static_cast<Real>(n) * hk);
  // exp(-i x_m k_j) = exp(-i x_m k0) * exp(-2 pi i m j / n) * exp(i pi j)
  std::vector<Complex> in(n), out;
  for (Eigen::Index j = 0; j < n; ++j) in[j] = f[j] * ((j % 2 == 0) ? 1.0 : -1.0);
  Eigen::FFT<Real> fft;
  fft.fwd(out, in);
  VectorC psi(n);
  const Real c = hk / std::sqrt(2 * pi);
  for (Eigen::Index m = 0; m < n; ++m) {
    const Real x = (static_cast<Real>(m) - static_cast<Real>(n / 2)) * hx;
    psi[m] = c * std::exp(Complex(0, -x * k0)) * out[m];
  }
  return psi;
}

inline std::vector<Real> dual_grid(Eigen::Index n, Real hk) {
  const Real hx = 2 * pi / (static_cast<Real>(n) * hk);
  std::vector<Real> x(n);
  for (Eigen::Index m = 0; m < n; ++m) x[m] = (static_cast<Real>(m) - static_cast<Real>(n / 2)) * hx;
  return x;
}

struct FourierKernel {
  Real hx = 0;
  int half = 0;        ///< gammahat sampled at x = i * hx, i = -half..half
  VectorC values;      ///< gammahat(i * hx) at index i + half
  Real tail_fraction = 0;

  Complex at(int i) const { return (i < -half || i > half) ? Complex(0) : values[i + half]; }
};

/// gammahat on x = i * hx for |i| <= half, from gamma sampled `padding` times finer than hk.
inline FourierKernel gamma_kernel(const BumpGamma& g, Real k0, Real hk, Eigen::Index n, int padding) {
  const Eigen::Index np = n * padding;
  const Real hkp = hk / padding;
  VectorC gs(np);
  for (Eigen::Index j = 0; j < np; ++j) gs[j] = g(k0 + hkp * static_cast<Real>(j));
  const VectorC gh = fourier_k_to_x(gs, k0, hkp);  // spacing hx = 2 pi / (np hkp) = 2 pi / (n hk)
  FourierKernel ker;
  ker.hx = 2 * pi / (static_cast<Real>(n) * hk);
  ker.half = static_cast<int>(n);
  ker.values.resize(2 * ker.half + 1);
  for (int i = -ker.half; i <= ker.half; ++i) ker.values[i + ker.half] = gh[static_cast<Eigen::Index>(np / 2 + i)];
  Real total = 0, tail = 0;
  for (Eigen::Index m = 0; m < np; ++m) {
    const Real a = std::norm(gh[m]);
    total += a;
    if (std::abs(static_cast<Real>(m) - static_cast<Real>(np / 2)) > 0.9 * static_cast<Real>(np / 2)) tail += a;
  }
  ker.tail_fraction = total > 0 ? std::sqrt(tail / total) : 0;
  return ker;
}

/// (Gamma psi)(x_m) by direct discrete convolution on the dual grid.
inline VectorC apply_Gamma(const FourierKernel& ker, const VectorC& psi) {
  const Eigen::Index n = psi.size();
  VectorC out = VectorC::Zero(n);
  const Real c = ker.hx / std::sqrt(2 * pi);
  for (Eigen::Index m = 0; m < n; ++m) {
    Complex acc = 0;
    for (Eigen::Index t = 0; t < n; ++t) acc += ker.at(static_cast<int>(m - t)) * psi[t];
    out[m] = c * acc;
  }
  return out;
}

struct PositionFormCheck {
  Real residual = 0;        ///< relative L^2 mismatch on the dual grid
  Real tail_fraction = 0;   ///< gammahat mass near the padded grid edge
  bool aliasing_warning = false;
};

/// Compares F(A f) computed in k with -(Gamma x + x Gamma)/2 applied to F f.
inline PositionFormCheck position_form_check(const BumpGamma& g, const SampledFunction& f, int padding = 4) {
  const Eigen::Index n = f.size();
  PositionFormCheck r;
  // A f = i * (gamma f' + gamma' f / 2) = -i * (iA f)
  const VectorC af = Complex(0, -1) * apply_iA(g, f);
  const VectorC lhs = fourier_k_to_x(af, f.k0, f.hk);
  const VectorC psi = fourier_k_to_x(f.values, f.k0, f.hk);
  const auto x = dual_grid(n, f.hk);
  const FourierKernel ker = gamma_kernel(g, f.k0, f.hk, n, padding);
  r.tail_fraction = ker.tail_fraction;
  r.aliasing_warning = ker.tail_fraction > 1e-8;
  VectorC xpsi(n);
  for (Eigen::Index m = 0; m < n; ++m) xpsi[m] = x[m] * psi[m];
  const VectorC gpsi = apply_Gamma(ker, psi);
  VectorC rhs = apply_Gamma(ker, xpsi);
  for (Eigen::Index m = 0; m < n; ++m) rhs[m] += x[m] * gpsi[m];
  rhs *= -0.5;
  const Real scale = std::max<Real>(lhs.norm(), 1e-300);
  r.residual = (lhs - rhs).norm() / scale;
  if (lhs.norm() == 0 && rhs.norm() == 0) r.residual = 0;
  return r;
}

inline void write_flow_csv(std::ostream& os, const FlowResult& r) {
  os << "t,k,phi,dkphi\n";
  os.precision(15);
  for (std::size_t i = 0; i < r.tgrid.size(); ++i)
    for (std::size_t c = 0; c < r.kstarts.size(); ++c)
      os << r.tgrid[i] << ',' << r.kstarts[c] << ',' << r.phi(i, c) << ',' << r.dkphi(i, c) << '\n';
}

}  // namespace twg
