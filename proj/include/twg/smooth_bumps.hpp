#pragma once
// C-infinity ramps, plateau bumps (the conjugate-operator weight gamma) and the energy cutoff chi.

#include "twg/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace twg {

/// Smooth step S(t) = f(t) / (f(t) + f(1 - t)) with f(t) = exp(-1/t); S = 0 for t <= 0, 1 for t >= 1.
inline Real smooth_step(Real t) {
  if (t <= 0) return 0;
  if (t >= 1) return 1;
  const Real u = 1 / t - 1 / (1 - t);
  if (u > 700) return 0;
  return 1 / (1 + std::exp(u));
}

inline Real smooth_step_derivative(Real t) {
  if (t <= 0 || t >= 1) return 0;
  const Real u = 1 / t - 1 / (1 - t);
  if (std::abs(u) > 700) return 0;
  const Real s = 1 / (1 + std::exp(u));
  return s * (1 - s) * (1 / (t * t) + 1 / ((1 - t) * (1 - t)));
}

/// sup |S'| over (0,1), attained at t = 1/2.
inline constexpr Real kSmoothStepSlope = 2.0;

struct Plateau {
  Real lo = 0, hi = 0;
  int sign = 1;
};

/// gamma(k) = sum_J s_J psi_J with psi_J = 1 on the closed plateau J and smooth transitions of
/// width gap/3 towards the neighbouring plateaus (the plateau's own width at the outer ends).
class BumpGamma {
 public:
  BumpGamma() = default;
  explicit BumpGamma(std::vector<Plateau> plateaus) : plateaus_(std::move(plateaus)) {
    std::sort(plateaus_.begin(), plateaus_.end(), [](const Plateau& a, const Plateau& b) { return a.lo < b.lo; });
    for (std::size_t i = 0; i + 1 < plateaus_.size(); ++i)
      if (!(plateaus_[i].hi < plateaus_[i + 1].lo)) throw Error("gamma plateaus must be pairwise disjoint");
    left_.resize(plateaus_.size());
    right_.resize(plateaus_.size());
    for (std::size_t i = 0; i < plateaus_.size(); ++i) {
      const Real own = std::max<Real>(plateaus_[i].hi - plateaus_[i].lo, 1e-3);
      left_[i] = i > 0 ? (plateaus_[i].lo - plateaus_[i - 1].hi) / 3 : own;
      right_[i] = i + 1 < plateaus_.size() ? (plateaus_[i + 1].lo - plateaus_[i].hi) / 3 : own;
    }
  }

  static BumpGamma zero() { return BumpGamma(); }

  const std::vector<Plateau>& plateaus() const { return plateaus_; }
  Real left_width(std::size_t i) const { return left_[i]; }
  Real right_width(std::size_t i) const { return right_[i]; }

  /// Smallest transition width; sup |gamma'| <= kSmoothStepSlope / min_transition().
  Real min_transition() const {
    Real w = std::numeric_limits<Real>::infinity();
    for (std::size_t i = 0; i < plateaus_.size(); ++i) w = std::min({w, left_[i], right_[i]});
    return w;
  }

  /// Closed support [lo, hi] of the i-th bump.
  std::pair<Real, Real> support(std::size_t i) const {
    return {plateaus_[i].lo - left_[i], plateaus_[i].hi + right_[i]};
  }

  std::pair<Real, Real> support_hull() const {
    if (plateaus_.empty()) return {0, 0};
    return {support(0).first, support(plateaus_.size() - 1).second};
  }

  Real operator()(Real k) const {
    Real g = 0;
    for (std::size_t i = 0; i < plateaus_.size(); ++i) g += plateaus_[i].sign * psi(i, k);
    return g;
  }

  Real derivative(Real k) const {
    Real g = 0;
    for (std::size_t i = 0; i < plateaus_.size(); ++i) g += plateaus_[i].sign * dpsi(i, k);
    return g;
  }

  BumpGamma negated() const {
    BumpGamma b = *this;
    for (auto& p : b.plateaus_) p.sign = -p.sign;
    return b;
  }

 private:
  Real psi(std::size_t i, Real k) const {
    const auto& p = plateaus_[i];
    if (k >= p.lo && k <= p.hi) return 1;
    if (k < p.lo) return smooth_step((k - (p.lo - left_[i])) / left_[i]);
    return smooth_step((p.hi + right_[i] - k) / right_[i]);
  }
  Real dpsi(std::size_t i, Real k) const {
    const auto& p = plateaus_[i];
    if (k >= p.lo && k <= p.hi) return 0;
    if (k < p.lo) return smooth_step_derivative((k - (p.lo - left_[i])) / left_[i]) / left_[i];
    return -smooth_step_derivative((p.hi + right_[i] - k) / right_[i]) / right_[i];
  }

  std::vector<Plateau> plateaus_;
  std::vector<Real> left_, right_;
};

/// chi: 1 on [E - delta + eta, E + delta - eta], 0 outside (E - delta, E + delta).
struct CutoffChi {
  Real E = 0, delta = 1, eta = 0.5;

  Real lo() const { return E - delta; }
  Real hi() const { return E + delta; }

  Real operator()(Real r) const {
    if (r <= lo() || r >= hi()) return 0;
    if (r < lo() + eta) return smooth_step((r - lo()) / eta);
    if (r > hi() - eta) return smooth_step((hi() - r) / eta);
    return 1;
  }
};

}  // namespace twg
