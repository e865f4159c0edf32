#pragma once
// Mourre windows: interval decomposition around an energy, the conjugate-operator weight gamma,
// fiberwise commutator certification and discrete commutator identities.

#include "twg/critical_levels.hpp"
#include "twg/smooth_bumps.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace twg {

struct Interval {
  Real lo = 0, hi = 0;
  bool contains(Real k) const { return k > lo && k < hi; }
  bool contains_closed(Real k) const { return k >= lo && k <= hi; }
  bool overlaps_closed(const Interval& o) const { return !(hi < o.lo || o.hi < lo); }
};

/// Preimage k of the energy E on a branch.
struct KPoint {
  int branch = -1;
  Real k = 0;
  Real slope = 0;
  int cls = 0;      ///< 0: a single band attains E here; 1: several bands do
  int cluster = -1;  ///< index of the J1 cluster for class 1
};

/// Connected component of {k : lambda_branch(k) in (E - delta, E + delta)}.
struct QInterval {
  int branch = -1;
  Interval q;
  int kpoint = -1;
  int cls = 0;
};

struct JInterval {
  Interval J;
  int cls = 0;
  Real witness = 0;  ///< k_{0,l} or k_{1,p}
  int sign = 1;
  std::vector<int> branches;
};

struct MourreWindow {
  Real E = 0;
  Real delta = 0;
  Real delta_requested = 0;
  int halvings = 0;
  Real eta = 0;
  int N = 0;
  bool bypass = false;
  std::vector<KPoint> kpoints;
  std::vector<QInterval> Q;
  std::vector<JInterval> J;
  std::vector<std::string> notes;

  Interval I() const { return {E - delta, E + delta}; }
  CutoffChi chi() const { return CutoffChi{E, delta, eta}; }
};

struct WindowOptions {
  int max_halvings = 20;
  Real critical_tol = 1e-6;  ///< relative (times 1 + |E|) tolerance for E being a critical level
  Real kpoint_tol = 1e-10;
  Real cluster_tol = 1e-6;   ///< K points of different branches closer than this coincide
  bool bypass = false;       ///< skip the criticality and disjointness conditions (negative controls)
};

namespace detail {

/// Open sub-intervals of the sweep where the piecewise-linear branch lies in (lo, hi).
inline std::vector<Interval> level_set_intervals(const std::vector<Real>& k, const std::vector<Real>& e, Real lo,
                                                 Real hi) {
  std::vector<Interval> out;
  for (std::size_t j = 0; j + 1 < k.size(); ++j) {
    const Real a = e[j], b = e[j + 1];
    Real t0 = 0, t1 = 1;
    if (a == b) {
      if (!(a > lo && a < hi)) continue;
    } else {
      const Real ta = (lo - a) / (b - a), tb = (hi - a) / (b - a);
      t0 = std::max<Real>(0, std::min(ta, tb));
      t1 = std::min<Real>(1, std::max(ta, tb));
      if (!(t1 > t0)) continue;
    }
    Interval iv{k[j] + t0 * (k[j + 1] - k[j]), k[j] + t1 * (k[j + 1] - k[j])};
    if (!out.empty() && std::abs(out.back().hi - iv.lo) <= 1e-14 * (1 + std::abs(iv.lo)))
      out.back().hi = iv.hi;
    else
      out.push_back(iv);
  }
  return out;
}

/// Illinois-accelerated regula falsi on lambda_branch(k) - E inside [a, b], with fresh solves.
inline std::optional<std::pair<Real, Real>> refine_level(const FiberFamily& fam, const BandTable& table,
                                                         const Branch& br, int j, Real E, Real tol) {
  Real a = table.kgrid[j], b = table.kgrid[j + 1];
  Real fa = br.value_at(j) - E, fb = br.value_at(j + 1) - E;
  Real va = br.velocity_at(j);
  if (fa == 0) return std::make_pair(a, va);
  if (fb == 0) return std::make_pair(b, br.velocity_at(j + 1));
  MatrixC ref = unit_vectors(table, br, j);
  MatrixC warm = table.spectra[j].solver_vectors;
  int side = 0;
  Real kk = a, vv = va;
  for (int it = 0; it < 100; ++it) {
    kk = (a * fb - b * fa) / (fb - fa);
    const Probe p = probe(fam, table.nstored, kk, ref, nullptr, &warm);
    if (!p.ok) return std::nullopt;
    warm = p.all;
    ref = p.vec;
    vv = p.v;
    const Real fk = p.E - E;
    if (std::abs(fk) <= 1e-13 * (1 + std::abs(E)) || b - a < tol) break;
    if (sgn(fk) == sgn(fa)) {
      a = kk;
      fa = fk;
      if (side == -1) fb *= 0.5;
      side = -1;
    } else {
      b = kk;
      fb = fk;
      if (side == 1) fa *= 0.5;
      side = 1;
    }
  }
  return std::make_pair(kk, vv);
}

}  // namespace detail

/// Builds the interval decomposition of the proof around E: B-sets per branch, their components Q,
/// the classification of preimages into K0/K1 and the merged J0/J1 intervals. delta is halved until
/// all separation conditions hold.
inline MourreWindow build_window(const FiberFamily& fam, const BandTable& table, const std::vector<Branch>& branches,
                                 const CriticalLevelSet& levels, Real E, Real delta, const WindowOptions& opt = {}) {
  if (!(delta > 0)) throw Error("window half-width must be positive");
  const Real etol = opt.critical_tol * (1 + std::abs(E));
  if (!opt.bypass)
    for (Real x : levels.Eset)
      if (std::abs(x - E) <= etol)
        throw CriticalEnergyError("energy " + std::to_string(E) + " is a critical level (" + std::to_string(x) + ")",
                                  E, x);

  MourreWindow w;
  w.E = E;
  w.delta_requested = delta;
  w.bypass = opt.bypass;
  const Real kmin = table.kgrid.front(), kmax = table.kgrid.back();

  // Preimages of E on every branch, refined with fresh solves (independent of delta).
  std::vector<KPoint> kpts;
  for (const auto& b : branches) {
    for (int j = b.j0; j < b.j1(); ++j) {
      const Real fa = b.value_at(j) - E, fb = b.value_at(j + 1) - E;
      const bool hit = (fa == 0) || (detail::sgn(fa) * detail::sgn(fb) < 0);
      if (!hit) continue;
      const auto r = detail::refine_level(fam, table, b, j, E, opt.kpoint_tol);
      if (!r) throw Error("could not refine a preimage of E on branch " + std::to_string(b.label));
      kpts.push_back({b.label, r->first, r->second, 0, -1});
    }
    if (b.value_at(b.j1()) == E) kpts.push_back({b.label, table.kgrid[b.j1()], b.velocity_at(b.j1()), 0, -1});
  }
  // K1: several bands attain E at the same k (crossing at E, or a degenerate branch).
  int nclusters = 0;
  for (std::size_t a = 0; a < kpts.size(); ++a) {
    if (branches[kpts[a].branch].multiplicity > 1) kpts[a].cls = 1;
    for (std::size_t b = 0; b < a; ++b)
      if (kpts[b].branch != kpts[a].branch && std::abs(kpts[a].k - kpts[b].k) <= opt.cluster_tol) {
        kpts[a].cls = kpts[b].cls = 1;
        if (kpts[b].cluster < 0) kpts[b].cluster = nclusters++;
        kpts[a].cluster = kpts[b].cluster;
      }
  }
  for (auto& kp : kpts)
    if (kp.cls == 1 && kp.cluster < 0) kp.cluster = nclusters++;
  w.kpoints = kpts;

  const BkrsFit fit = fit_bkrs(table, fam);
  std::vector<Real> others;
  for (Real x : levels.Ecset)
    if (std::abs(x - E) > etol) others.push_back(x);

  for (int halving = 0;; ++halving) {
    if (halving > opt.max_halvings)
      throw Error("no admissible window half-width found after " + std::to_string(opt.max_halvings) + " halvings");
    const Real d = delta * std::pow(0.5, halving);
    w.delta = d;
    w.halvings = halving;
    w.eta = d / 2;
    w.Q.clear();
    w.J.clear();
    w.notes.clear();
    std::string why;

    Real dist = std::numeric_limits<Real>::infinity();
    for (Real x : others) dist = std::min(dist, std::abs(x - E));
    if (!opt.bypass && !(dist > d)) why = "critical level within delta";

    if (why.empty() && E + d >= scan_ceiling(table))
      throw Error("sweep does not store enough bands for the window (raise nmax)");
    for (const auto& b : branches) {
      if (!why.empty()) break;
      std::vector<Real> ks(table.kgrid.begin() + b.j0, table.kgrid.begin() + b.j1() + 1);
      const auto ivs = detail::level_set_intervals(ks, b.values, E - d, E + d);
      for (const auto& iv : ivs) {
        if ((iv.lo <= kmin || iv.hi >= kmax)) {
          if (b.j0 > 0 || b.j1() + 1 < static_cast<int>(table.nk()))
            throw Error("window touches a branch that leaves the stored bands (raise nmax)");
          throw Error("sweep range too short for the window: extend kmax beyond " + std::to_string(kmax));
        }
        QInterval q;
        q.branch = b.label;
        q.q = iv;
        int count = 0;
        for (std::size_t i = 0; i < kpts.size(); ++i)
          if (kpts[i].branch == b.label && iv.contains_closed(kpts[i].k)) {
            ++count;
            q.kpoint = static_cast<int>(i);
          }
        if (count != 1 && !opt.bypass) {
          why = "a Q interval holds " + std::to_string(count) + " preimages";
          break;
        }
        q.cls = q.kpoint >= 0 ? kpts[q.kpoint].cls : 0;
        w.Q.push_back(q);
      }
    }
    if (why.empty()) {
      // Merge: J0 = Q0 intervals; J1 = union of Q1 intervals sharing a K1 cluster.
      std::vector<JInterval> js;
      std::vector<int> cluster_j(nclusters, -1);
      for (const auto& q : w.Q) {
        const int c = q.kpoint >= 0 ? kpts[q.kpoint].cluster : -1;
        if (q.cls == 1 && c >= 0 && cluster_j[c] >= 0) {
          auto& J = js[cluster_j[c]];
          J.J.lo = std::min(J.J.lo, q.q.lo);
          J.J.hi = std::max(J.J.hi, q.q.hi);
          J.branches.push_back(q.branch);
          continue;
        }
        JInterval J;
        J.J = q.q;
        J.cls = q.cls;
        J.witness = q.kpoint >= 0 ? kpts[q.kpoint].k : 0.5 * (q.q.lo + q.q.hi);
        J.branches = {q.branch};
        if (q.cls == 1 && c >= 0) cluster_j[c] = static_cast<int>(js.size());
        js.push_back(J);
      }
      if (opt.bypass) {
        // Overlapping components are merged without conditions.
        std::sort(js.begin(), js.end(), [](const JInterval& a, const JInterval& b) { return a.J.lo < b.J.lo; });
        std::vector<JInterval> merged;
        for (auto& J : js) {
          if (!merged.empty() && merged.back().J.overlaps_closed(J.J)) {
            merged.back().J.hi = std::max(merged.back().J.hi, J.J.hi);
            merged.back().branches.insert(merged.back().branches.end(), J.branches.begin(), J.branches.end());
            merged.back().cls = 1;
          } else {
            merged.push_back(J);
          }
        }
        js = std::move(merged);
      }
      for (std::size_t a = 0; a < js.size() && why.empty(); ++a)
        for (std::size_t b = a + 1; b < js.size(); ++b)
          if (js[a].J.overlaps_closed(js[b].J)) {
            why = "J intervals intersect";
            break;
          }
      // Slope signs on each J (branch velocities at grid points inside and at the preimages).
      for (auto& J : js) {
        if (!why.empty()) break;
        int pos = 0, neg = 0;
        for (int lab : J.branches) {
          const Branch& b = branches[lab];
          for (int j = b.j0; j <= b.j1(); ++j)
            if (J.J.contains_closed(table.kgrid[j]) && b.value_at(j) > E - d && b.value_at(j) < E + d)
              (b.velocity_at(j) > 0 ? pos : neg)++;
          for (const auto& kp : kpts)
            if (kp.branch == lab && J.J.contains_closed(kp.k)) (kp.slope > 0 ? pos : neg)++;
        }
        if (pos > 0 && neg > 0 && !opt.bypass) {
          why = "slopes change sign on a J interval";
          break;
        }
        J.sign = pos >= neg ? 1 : -1;
      }
      std::sort(js.begin(), js.end(), [](const JInterval& a, const JInterval& b) { return a.J.lo < b.J.lo; });
      w.J = std::move(js);
    }
    if (why.empty() || opt.bypass) {
      const WindowBound wb = band_window_bound(table, branches, E + d, fit.c_lower > 0 ? fit.c_lower : fit.c_ls,
                                               fit.e1_at_zero);
      w.N = wb.NR;
      if (w.N > table.nstored) throw Error("missing bands: the window needs " + std::to_string(w.N) + " bands");
      if (halving > 0) w.notes.push_back("delta halved " + std::to_string(halving) + " times");
      return w;
    }
  }
}

inline BumpGamma build_gamma(const MourreWindow& w) {
  std::vector<Plateau> ps;
  for (const auto& J : w.J) ps.push_back({J.J.lo, J.J.hi, J.sign});
  return BumpGamma(ps);
}

/// Compressed fiber commutator at one k: M(k) = V Mred V^H and P(k) = V diag(chi^2) V^H, where V
/// holds the eigenvectors of the bands with chi(E_n(k)) > 0.
struct FiberCommutator {
  Real k = 0;
  Real gamma = 0;
  std::vector<int> bands;
  VectorR chi;
  MatrixC V;
  MatrixC K;     ///< 2 V^H (kI + i beta Dtau) V
  MatrixC Mred;  ///< gamma * diag(chi) K diag(chi)

  MatrixC dense_M() const { return V * Mred * V.adjoint(); }
  MatrixC dense_P() const {
    return V * chi.cwiseAbs2().cast<Complex>().asDiagonal() * V.adjoint();
  }
  /// Minimum of <x, M x> / <x, P x> over range(P).
  Real min_rayleigh() const {
    if (bands.empty()) return std::numeric_limits<Real>::infinity();
    MatrixC R = gamma * K;
    R = (0.5 * (R + R.adjoint())).eval();
    Eigen::SelfAdjointEigenSolver<MatrixC> es(R, Eigen::EigenvaluesOnly);
    return es.eigenvalues()[0];
  }
};

inline constexpr Real kChiFloor = 1e-12;

inline FiberCommutator fiber_commutator(const FiberFamily& fam, Real k, Real gamma_k, const CutoffChi& chi,
                                        const VectorR& values, const MatrixC& vectors, int N) {
  if (values.size() < N || vectors.cols() < N) throw Error("missing bands: fewer than N eigenpairs at k");
  FiberCommutator fc;
  fc.k = k;
  fc.gamma = gamma_k;
  std::vector<Real> cs;
  for (int n = 0; n < N; ++n) {
    const Real c = chi(values[n]);
    if (c > kChiFloor) {
      fc.bands.push_back(n);
      cs.push_back(c);
    }
  }
  fc.chi = Eigen::Map<VectorR>(cs.data(), static_cast<Eigen::Index>(cs.size()));
  fc.V.resize(vectors.rows(), static_cast<Eigen::Index>(fc.bands.size()));
  for (std::size_t i = 0; i < fc.bands.size(); ++i) fc.V.col(i) = vectors.col(fc.bands[i]);
  MatrixC K = fc.V.adjoint() * fam.velocity_apply(k, fc.V);
  fc.K = K + K.adjoint();
  const auto X = fc.chi.cast<Complex>().asDiagonal();
  fc.Mred = gamma_k * (X * fc.K * X);
  return fc;
}

struct MourreSample {
  Real k = 0;
  Real rho_min = 0;
  int rank = 0;
};

struct CrossTerm {
  Real btilde = 0;          ///< max |<d_k psi_s, psi_s'>| over J1 grid points
  Real C_est = 0;           ///< 2 * btilde * (bands in the crossing - 1)
  Real max_ratio = 0;       ///< max |K_ss'| / (btilde |lambda_s - lambda_s'|)
  int samples = 0;
};

struct MourreReport {
  Real E = 0, delta = 0, eta = 0;
  Real c_est = std::numeric_limits<Real>::infinity();
  Real d0 = std::numeric_limits<Real>::infinity();
  Real d1 = std::numeric_limits<Real>::infinity();
  Real d_scale = 0;  ///< largest |slope| seen on the window's B sets
  bool pass = false;
  bool has_J0 = false, has_J1 = false;
  std::optional<CrossTerm> crossterm;
  std::vector<MourreSample> per_k;
};

namespace detail {

inline Real interp_velocity(const BandTable& t, const Branch& b, Real k) {
  for (int j = b.j0; j < b.j1(); ++j)
    if (k >= t.kgrid[j] && k <= t.kgrid[j + 1]) {
      const Real s = (k - t.kgrid[j]) / (t.kgrid[j + 1] - t.kgrid[j]);
      return (1 - s) * b.velocity_at(j) + s * b.velocity_at(j + 1);
    }
  return b.velocity_at(k < t.kgrid[b.j0] ? b.j0 : b.j1());
}

/// Infimum of |slope| of the listed branches over the closed J (grid points and interpolated ends).
inline Real inf_slope(const BandTable& t, const std::vector<Branch>& branches, const JInterval& J) {
  Real m = std::numeric_limits<Real>::infinity();
  for (int lab : J.branches) {
    const Branch& b = branches[lab];
    m = std::min({m, std::abs(interp_velocity(t, b, J.J.lo)), std::abs(interp_velocity(t, b, J.J.hi))});
    for (int j = b.j0; j <= b.j1(); ++j)
      if (J.J.contains_closed(t.kgrid[j])) m = std::min(m, std::abs(b.velocity_at(j)));
  }
  return m;
}

/// Aligns the columns of `u` to `ref` by the unitary polar factor of u^H ref.
inline MatrixC align_to(const MatrixC& u, const MatrixC& ref) {
  const MatrixC g = u.adjoint() * ref;
  Eigen::JacobiSVD<MatrixC> svd(g, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return u * (svd.matrixU() * svd.matrixV().adjoint());
}

}  // namespace detail

/// Finite-difference estimate of the cross-term constant on the J1 intervals.
inline CrossTerm estimate_crossterm(const FiberFamily& fam, const BandTable& table, const std::vector<Branch>& branches,
                                    const MourreWindow& w, Real dk = 1e-4) {
  CrossTerm ct;
  int maxbands = 1;
  std::vector<Real> ratios_num, ratios_den;
  for (const auto& J : w.J) {
    if (J.cls != 1 || J.branches.size() < 2) continue;
    int nb = 0;
    for (int lab : J.branches) nb += branches[lab].multiplicity;
    maxbands = std::max(maxbands, nb);
    for (std::size_t j = 0; j < table.nk(); ++j) {
      const Real k = table.kgrid[j];
      if (!J.J.contains_closed(k)) continue;
      std::vector<MatrixC> psi, dpsi;
      std::vector<Real> lam;
      bool ok = true;
      for (int lab : J.branches) {
        const Branch& b = branches[lab];
        if (!b.covers(static_cast<int>(j))) {
          ok = false;
          break;
        }
        const MatrixC& u = detail::unit_vectors(table, b, static_cast<int>(j));
        const auto pp = detail::probe(fam, table.nstored, k + dk, u, nullptr, &table.spectra[j].solver_vectors);
        const auto pm = detail::probe(fam, table.nstored, k - dk, u, nullptr, &table.spectra[j].solver_vectors);
        if (!pp.ok || !pm.ok) {
          ok = false;
          break;
        }
        psi.push_back(u);
        dpsi.push_back((detail::align_to(pp.vec, u) - detail::align_to(pm.vec, u)) / (2 * dk));
        lam.push_back(b.value_at(static_cast<int>(j)));
      }
      if (!ok) continue;
      for (std::size_t s = 0; s < psi.size(); ++s)
        for (std::size_t r = 0; r < psi.size(); ++r) {
          if (r == s) continue;
          const Real bval = (psi[r].adjoint() * dpsi[s]).norm();
          ct.btilde = std::max(ct.btilde, bval);
          const MatrixC kk = psi[r].adjoint() * fam.velocity_apply(k, psi[s]) * Complex(2);
          ratios_num.push_back(kk.norm());
          ratios_den.push_back(std::abs(lam[s] - lam[r]));
          ++ct.samples;
        }
    }
  }
  ct.C_est = 2 * ct.btilde * (maxbands - 1);
  for (std::size_t i = 0; i < ratios_num.size(); ++i) {
    const Real den = ct.btilde * ratios_den[i];
    if (den > 0) ct.max_ratio = std::max(ct.max_ratio, ratios_num[i] / den);
  }
  return ct;
}

struct VerifyOptions {
  int samples_per_J = 17;  ///< extra fresh solves across each closed J interval
  bool crossterm = true;
};

/// Certifies chi [H, iA] chi >= c chi^2 fiberwise on the sweep grid plus samples across every J.
inline MourreReport verify_mourre(const FiberFamily& fam, const BandTable& table, const std::vector<Branch>& branches,
                                  const MourreWindow& w, const BumpGamma& gamma, const VerifyOptions& vopt = {}) {
  MourreReport r;
  r.E = w.E;
  r.delta = w.delta;
  r.eta = w.eta;
  const CutoffChi chi = w.chi();
  if (w.N > table.nstored) throw Error("missing bands: the sweep stores fewer than N bands");
  struct Job {
    Real k;
    int j;  ///< sweep index, or -1 for a fresh solve
  };
  std::vector<Job> jobs;
  for (std::size_t j = 0; j < table.nk(); ++j) jobs.push_back({table.kgrid[j], static_cast<int>(j)});
  for (const auto& J : w.J)
    for (int i = 0; i < vopt.samples_per_J; ++i) {
      const Real k = vopt.samples_per_J == 1 ? 0.5 * (J.J.lo + J.J.hi)
                                             : J.J.lo + (J.J.hi - J.J.lo) * i / (vopt.samples_per_J - 1);
      jobs.push_back({k, -1});
    }
  std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) { return a.k < b.k; });
  auto samples = parallel_map(jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    MourreSample m;
    m.k = job.k;
    FiberCommutator fc;
    if (job.j >= 0) {
      const auto& s = table.spectra[job.j];
      fc = fiber_commutator(fam, job.k, gamma(job.k), chi, s.values, s.vectors, w.N);
    } else {
      const auto it = std::lower_bound(table.kgrid.begin(), table.kgrid.end(), job.k);
      std::size_t near = std::min<std::size_t>(it - table.kgrid.begin(), table.nk() - 1);
      if (near > 0 && std::abs(table.kgrid[near - 1] - job.k) < std::abs(table.kgrid[near] - job.k)) --near;
      const ResolvedSpectrum s = solve_resolved(fam, job.k, table.nstored, 2, &table.spectra[near].solver_vectors);
      fc = fiber_commutator(fam, job.k, gamma(job.k), chi, s.values, s.vectors, w.N);
    }
    m.rank = static_cast<int>(fc.bands.size());
    m.rho_min = fc.min_rayleigh();
    return m;
  });
  for (const auto& m : samples)
    if (m.rank > 0) {
      r.per_k.push_back(m);
      r.c_est = std::min(r.c_est, m.rho_min);
    }
  if (r.per_k.empty()) r.c_est = 0;
  for (const auto& J : w.J) {
    const Real s = detail::inf_slope(table, branches, J);
    if (J.cls == 0) {
      r.has_J0 = true;
      r.d0 = std::min(r.d0, s);
    } else {
      r.has_J1 = true;
      r.d1 = std::min(r.d1, s);
    }
  }
  for (const auto& b : branches)
    for (int j = b.j0; j <= b.j1(); ++j)
      if (chi(b.value_at(j)) > kChiFloor) r.d_scale = std::max(r.d_scale, std::abs(b.velocity_at(j)));
  if (!r.has_J0) r.d0 = 0;
  if (!r.has_J1) r.d1 = 0;
  r.pass = r.c_est > 0;
  if (vopt.crossterm && r.has_J1) r.crossterm = estimate_crossterm(fam, table, branches, w);
  return r;
}

/// Window, gamma and report in one call; throws CriticalEnergyError for critical E.
struct MourreRun {
  MourreWindow window;
  BumpGamma gamma;
  MourreReport report;
};

inline MourreRun run_mourre(const FiberFamily& fam, const BandTable& table, const std::vector<Branch>& branches,
                            const CriticalLevelSet& levels, Real E, Real delta, const WindowOptions& opt = {}) {
  MourreRun run;
  run.window = build_window(fam, table, branches, levels, E, delta, opt);
  run.gamma = build_gamma(run.window);
  run.report = verify_mourre(fam, table, branches, run.window, run.gamma);
  return run;
}

// ---------------------------------------------------------------------------------------------
// Commutators over k (x) omega.

/// Central-difference matrix on a uniform grid with zero values outside (antisymmetric).
inline SparseR central_difference(int nk, Real dk) {
  std::vector<TripletR> t;
  for (int j = 0; j < nk; ++j) {
    if (j + 1 < nk) t.emplace_back(j, j + 1, 0.5 / dk);
    if (j > 0) t.emplace_back(j, j - 1, -0.5 / dk);
  }
  SparseR d(nk, nk);
  d.setFromTriplets(t.begin(), t.end());
  return d;
}

/// Sampled generator iA = -(Gamma D + D Gamma)/2 (real antisymmetric, so A is Hermitian).
inline SparseR sampled_generator(const std::vector<Real>& kgrid, const BumpGamma& gamma) {
  const int nk = static_cast<int>(kgrid.size());
  const Real dk = (kgrid.back() - kgrid.front()) / (nk - 1);
  const SparseR d = central_difference(nk, dk);
  std::vector<TripletR> t;
  for (int j = 0; j < nk; ++j) t.emplace_back(j, j, gamma(kgrid[j]));
  SparseR G(nk, nk);
  G.setFromTriplets(t.begin(), t.end());
  SparseR out = -0.5 * (SparseR(G * d) + SparseR(d * G));
  out.prune(0.0);
  return out;
}

struct CommutatorCheck {
  Real dk = 0;
  Real c1_residual = 0;         ///< ||C1 u - 2 gamma (k + i beta Dtau) u|| / ||2 gamma (k + i beta Dtau) u||
  Real c2_residual_direct = 0;  ///< against 2 gamma^2 + 2 gamma gamma' (k + i beta Dtau)
  Real c2_residual_paper = 0;   ///< against gamma^2 + gamma gamma' (k - i beta Dtau)
  Real generator_asymmetry = 0; ///< ||iA + (iA)^T||_max
  std::string consistent_form;  ///< "direct", "paper", or "undetermined" when neither fits
};

/// Applies C1 = [H, iA] and C2 = [C1, iA] on k (x) omega to u(k, x) = f(k) phi(x) and compares with
/// the closed forms. H is the block diagonal of fiber operators on the uniform kgrid.
inline CommutatorCheck double_commutator_check(const FiberFamily& fam, const BumpGamma& gamma,
                                               const std::vector<Real>& kgrid, const std::function<Real(Real)>& f,
                                               const VectorC& phi) {
  const int nk = static_cast<int>(kgrid.size());
  const Eigen::Index n = fam.dim();
  CommutatorCheck out;
  out.dk = (kgrid.back() - kgrid.front()) / (nk - 1);
  const SparseR iA = sampled_generator(kgrid, gamma);
  out.generator_asymmetry = max_abs(SparseR(iA + SparseR(iA.transpose())));

  // Vectors are stored as n x nk matrices (column j = value at k_j).
  MatrixC u(n, nk);
  for (int j = 0; j < nk; ++j) u.col(j) = f(kgrid[j]) * phi;
  const auto apply_H = [&](const MatrixC& x) {
    MatrixC y(n, nk);
    for (int j = 0; j < nk; ++j) y.col(j) = fam.at(kgrid[j]).H * x.col(j);
    return y;
  };
  const auto apply_A = [&](const MatrixC& x) -> MatrixC { return x * iA.transpose().cast<Complex>(); };
  const auto apply_C1 = [&](const MatrixC& x) -> MatrixC { return apply_H(apply_A(x)) - apply_A(apply_H(x)); };
  const auto apply_C2 = [&](const MatrixC& x) -> MatrixC { return apply_C1(apply_A(x)) - apply_A(apply_C1(x)); };
  const auto with_k = [&](const MatrixC& x, auto&& coef, Real sgn_beta) {
    MatrixC y(n, nk);
    for (int j = 0; j < nk; ++j) {
      const Real k = kgrid[j];
      const VectorC kx = k * x.col(j) + sgn_beta * fam.beta() * (fam.idtau() * x.col(j));
      y.col(j) = coef(k) * kx;
    }
    return y;
  };
  const MatrixC c1 = apply_C1(u);
  const MatrixC e1 = with_k(u, [&](Real k) { return 2 * gamma(k); }, 1.0);
  out.c1_residual = (c1 - e1).norm() / std::max<Real>(e1.norm(), 1e-300);
  const MatrixC c2 = apply_C2(u);
  MatrixC direct = with_k(u, [&](Real k) { return 2 * gamma(k) * gamma.derivative(k); }, 1.0);
  MatrixC paper = with_k(u, [&](Real k) { return gamma(k) * gamma.derivative(k); }, -1.0);
  for (int j = 0; j < nk; ++j) {
    const Real g = gamma(kgrid[j]);
    direct.col(j) += 2 * g * g * u.col(j);
    paper.col(j) += g * g * u.col(j);
  }
  const Real scale = std::max<Real>(c2.norm(), 1e-300);
  out.c2_residual_direct = (c2 - direct).norm() / scale;
  out.c2_residual_paper = (c2 - paper).norm() / scale;
  const Real best = std::min(out.c2_residual_direct, out.c2_residual_paper);
  if (best > 0.25 || std::max(out.c2_residual_direct, out.c2_residual_paper) < 2 * best)
    out.consistent_form = "undetermined";
  else
    out.consistent_form = out.c2_residual_direct <= out.c2_residual_paper ? "direct" : "paper";
  return out;
}

}  // namespace twg
