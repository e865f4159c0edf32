#pragma once
// Critical levels: stationary values of branches, opposite-slope crossings, and the
// finiteness witnesses k_R, N_R of the energy window below R.

#include "twg/fiber_bands.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace twg {

enum class CriticalKind { stationary, crossing };

struct CriticalPoint {
  CriticalKind kind = CriticalKind::stationary;
  Real E = 0;
  Real k0 = 0;
  int branch = -1;
  int branch2 = -1;  ///< crossings only
  Real slope = 0;
  Real slope2 = 0;
  Real gap = 0;  ///< |lambda - lambda'| at k0 (crossings)
  bool endpoint = false;
  bool refinement_failed = false;
};

struct WindowBound {
  Real R = 0;
  Real kR = 0;
  int NR = 1;
  std::vector<int> LR;  ///< labels of branches dipping to or below R on [-kR, kR]
};

struct CriticalLevelSet {
  std::vector<CriticalPoint> E1set;
  std::vector<CriticalPoint> E2set;
  std::vector<CriticalPoint> benign;    ///< same-sign crossings (in E_c, not in E)
  std::vector<CriticalPoint> flagged;   ///< endpoint or failed refinements, stationary points at crossings
  std::vector<Real> Eset;               ///< E1 and E2 energies, merged
  std::vector<Real> Ecset;              ///< all critical energies incl. same-sign crossings
  Real Rceiling = 0;
  std::vector<std::string> warnings;

  bool contains(Real e, Real tol) const {
    for (Real x : Eset)
      if (std::abs(x - e) <= tol) return true;
    return false;
  }
};

struct RefineOptions {
  Real k_tol = 1e-6;
  Real zero_velocity = 1e-9;  ///< velocities below this (times 1+E) count as exact zeros
  int max_steps = 80;
};

namespace detail {

struct Probe {
  Real k = 0;
  Real E = 0, E2 = 0;
  Real v = 0, v2 = 0;
  MatrixC vec, vec2;
  MatrixC all;  ///< every stored eigenvector, reused as a warm start
  bool ok = false;
};

inline Probe probe(const FiberFamily& fam, int nstored, Real k, const MatrixC& ref, const MatrixC* ref2 = nullptr,
                   const MatrixC* start = nullptr) {
  Probe p;
  p.k = k;
  const ResolvedSpectrum s = solve_resolved(fam, k, nstored, 2, start);
  p.all = s.solver_vectors;
  Real o1 = 0, o2 = 0;
  const int a = match_unit(s, ref, &o1);
  if (a < 0 || o1 < 0.5) return p;
  p.E = s.units[a].energy;
  p.v = s.units[a].velocity;
  p.vec = s.units[a].vectors;
  if (ref2) {
    const int b = match_unit(s, *ref2, &o2);
    if (b < 0 || b == a || o2 < 0.5) return p;
    p.E2 = s.units[b].energy;
    p.v2 = s.units[b].velocity;
    p.vec2 = s.units[b].vectors;
  }
  p.ok = true;
  return p;
}

inline const MatrixC& unit_vectors(const BandTable& t, const Branch& b, int j) {
  return t.spectra[j].units[b.unit[j - b.j0]].vectors;
}

inline int sgn(Real x) { return (x > 0) - (x < 0); }

}  // namespace detail

/// Stationary points of each branch: velocity sign changes refined by bisection with fresh solves.
inline std::vector<CriticalPoint> find_stationary(const FiberFamily& fam, const BandTable& table,
                                                  const std::vector<Branch>& branches, const RefineOptions& opt = {}) {
  struct Job {
    int branch, j;
    bool exact;
  };
  std::vector<Job> jobs;
  for (const auto& b : branches) {
    for (int j = b.j0; j <= b.j1(); ++j) {
      const Real v = b.velocity_at(j);
      const bool zero = std::abs(v) <= opt.zero_velocity * (1 + std::abs(b.value_at(j)));
      if (zero) {
        jobs.push_back({b.label, j, true});
        continue;
      }
      if (j < b.j1()) {
        const Real w = b.velocity_at(j + 1);
        const bool wzero = std::abs(w) <= opt.zero_velocity * (1 + std::abs(b.value_at(j + 1)));
        if (!wzero && detail::sgn(v) * detail::sgn(w) < 0) jobs.push_back({b.label, j, false});
      }
    }
  }
  return parallel_map(jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    const Branch& b = branches[job.branch];
    CriticalPoint cp;
    cp.kind = CriticalKind::stationary;
    cp.branch = b.label;
    if (job.exact) {
      cp.k0 = table.kgrid[job.j];
      cp.E = b.value_at(job.j);
      cp.slope = b.velocity_at(job.j);
      cp.endpoint = (job.j == 0 || job.j == static_cast<int>(table.nk()) - 1);
      return cp;
    }
    Real lo = table.kgrid[job.j], hi = table.kgrid[job.j + 1];
    int slo = detail::sgn(b.velocity_at(job.j));
    MatrixC ref_lo = detail::unit_vectors(table, b, job.j);
    MatrixC warm = table.spectra[job.j].solver_vectors;
    detail::Probe last;
    int steps = 0;
    while (hi - lo >= opt.k_tol && steps++ < opt.max_steps) {
      const Real mid = 0.5 * (lo + hi);
      const detail::Probe p = detail::probe(fam, table.nstored, mid, ref_lo, nullptr, &warm);
      if (!p.ok) {
        cp.refinement_failed = true;
        break;
      }
      warm = p.all;
      last = p;
      const int s = detail::sgn(p.v);
      if (s == 0) {
        lo = hi = mid;
        break;
      }
      if (s == slo) {
        lo = mid;
        ref_lo = p.vec;
      } else {
        hi = mid;
      }
    }
    const Real k0 = 0.5 * (lo + hi);
    const detail::Probe fin = cp.refinement_failed ? detail::Probe{} : detail::probe(fam, table.nstored, k0, ref_lo, nullptr, &warm);
    if (!fin.ok) {
      cp.refinement_failed = true;
      cp.k0 = k0;
      cp.E = last.ok ? last.E : b.value_at(job.j);
      cp.slope = last.ok ? last.v : 0;
      return cp;
    }
    cp.k0 = k0;
    cp.E = fin.E;
    cp.slope = fin.v;
    return cp;
  });
}

/// Zeros of lambda_l - lambda_l' for every branch pair; classified by the slope product.
inline std::vector<CriticalPoint> find_crossings(const FiberFamily& fam, const BandTable& table,
                                                 const std::vector<Branch>& branches, const RefineOptions& opt = {}) {
  struct Job {
    int a, b, j;
    bool exact;
  };
  std::vector<Job> jobs;
  for (std::size_t ia = 0; ia < branches.size(); ++ia)
    for (std::size_t ib = ia + 1; ib < branches.size(); ++ib) {
      const Branch& A = branches[ia];
      const Branch& B = branches[ib];
      const int j0 = std::max(A.j0, B.j0), j1 = std::min(A.j1(), B.j1());
      for (int j = j0; j <= j1; ++j) {
        const Real d = A.value_at(j) - B.value_at(j);
        if (std::abs(d) <= degeneracy_tol(A.value_at(j))) {
          jobs.push_back({A.label, B.label, j, true});
          continue;
        }
        if (j < j1) {
          const Real d2 = A.value_at(j + 1) - B.value_at(j + 1);
          if (std::abs(d2) > degeneracy_tol(A.value_at(j + 1)) && detail::sgn(d) * detail::sgn(d2) < 0)
            jobs.push_back({A.label, B.label, j, false});
        }
      }
    }
  return parallel_map(jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    const Branch& A = branches[job.a];
    const Branch& B = branches[job.b];
    CriticalPoint cp;
    cp.kind = CriticalKind::crossing;
    cp.branch = A.label;
    cp.branch2 = B.label;
    if (job.exact) {
      cp.k0 = table.kgrid[job.j];
      cp.E = 0.5 * (A.value_at(job.j) + B.value_at(job.j));
      cp.slope = A.velocity_at(job.j);
      cp.slope2 = B.velocity_at(job.j);
      cp.gap = std::abs(A.value_at(job.j) - B.value_at(job.j));
      cp.endpoint = (job.j == 0 || job.j == static_cast<int>(table.nk()) - 1);
      return cp;
    }
    Real lo = table.kgrid[job.j], hi = table.kgrid[job.j + 1];
    const int slo = detail::sgn(A.value_at(job.j) - B.value_at(job.j));
    MatrixC ra = detail::unit_vectors(table, A, job.j), rb = detail::unit_vectors(table, B, job.j);
    MatrixC warm = table.spectra[job.j].solver_vectors;
    int steps = 0;
    detail::Probe fin;
    while (hi - lo >= opt.k_tol && steps++ < opt.max_steps) {
      const Real mid = 0.5 * (lo + hi);
      const detail::Probe p = detail::probe(fam, table.nstored, mid, ra, &rb, &warm);
      if (!p.ok) {
        cp.refinement_failed = true;
        break;
      }
      warm = p.all;
      fin = p;
      const int s = detail::sgn(p.E - p.E2);
      if (s == 0) {
        lo = hi = mid;
        break;
      }
      if (s == slo) {
        lo = mid;
        ra = p.vec;
        rb = p.vec2;
      } else {
        hi = mid;
      }
    }
    const Real k0 = 0.5 * (lo + hi);
    if (!cp.refinement_failed) {
      const detail::Probe p = detail::probe(fam, table.nstored, k0, ra, &rb, &warm);
      if (p.ok) fin = p;
      else cp.refinement_failed = true;
    }
    cp.k0 = k0;
    cp.E = 0.5 * (fin.E + fin.E2);
    cp.slope = fin.v;
    cp.slope2 = fin.v2;
    cp.gap = std::abs(fin.E - fin.E2);
    return cp;
  });
}

namespace detail {

inline std::vector<Real> dedup_sorted(std::vector<Real> v, Real tol) {
  std::sort(v.begin(), v.end());
  std::vector<Real> out;
  for (Real x : v)
    if (out.empty() || x - out.back() > tol) out.push_back(x);
  return out;
}

}  // namespace detail

inline constexpr Real kDedupTol = 1e-6;

/// Highest energy below which every branch of the sweep lies inside the stored bands.
inline Real scan_ceiling(const BandTable& table) {
  const int row = std::min(table.nmax, table.nstored - 1);
  return table.energies.row(row).minCoeff();
}

inline CriticalLevelSet critical_set(const std::vector<CriticalPoint>& stationary,
                                     const std::vector<CriticalPoint>& crossings, Real R, Real Rceiling) {
  CriticalLevelSet cs;
  cs.Rceiling = Rceiling;
  if (R > Rceiling)
    cs.warnings.push_back("scan incomplete: R exceeds the stored-band ceiling " + std::to_string(Rceiling));
  std::vector<Real> e, ec;
  for (const auto& p : stationary) {
    if (p.E > R) continue;
    if (p.endpoint || p.refinement_failed) {
      cs.flagged.push_back(p);
      continue;
    }
    cs.E1set.push_back(p);
    e.push_back(p.E);
  }
  for (const auto& p : crossings) {
    if (p.E > R) continue;
    if (p.refinement_failed || p.endpoint) {
      cs.flagged.push_back(p);
      continue;
    }
    const Real prod = p.slope * p.slope2;
    if (prod < 0) {
      cs.E2set.push_back(p);
      e.push_back(p.E);
    } else {
      cs.benign.push_back(p);
      ec.push_back(p.E);
    }
  }
  // A stationary point sitting on a crossing is ambiguous between the two definitions.
  for (const auto& s : cs.E1set)
    for (const auto& c : crossings)
      if (std::abs(s.k0 - c.k0) < 1e-5 && (s.branch == c.branch || s.branch == c.branch2) &&
          std::abs(s.E - c.E) < 1e-5)
        cs.flagged.push_back(s);
  const auto by_energy = [](const CriticalPoint& a, const CriticalPoint& b) {
    if (a.E != b.E) return a.E < b.E;
    return a.k0 < b.k0;
  };
  std::sort(cs.E1set.begin(), cs.E1set.end(), by_energy);
  std::sort(cs.E2set.begin(), cs.E2set.end(), by_energy);
  std::sort(cs.benign.begin(), cs.benign.end(), by_energy);
  cs.Eset = detail::dedup_sorted(e, kDedupTol);
  ec.insert(ec.end(), e.begin(), e.end());
  cs.Ecset = detail::dedup_sorted(ec, kDedupTol);
  return cs;
}

inline WindowBound band_window_bound(const BandTable& table, const std::vector<Branch>& branches, Real R, Real cfit,
                                     Real e1_at_zero) {
  WindowBound w;
  w.R = R;
  if (R <= e1_at_zero) return w;
  if (!(cfit > 0)) throw Error("band_window_bound needs a positive fitted constant");
  w.kR = std::sqrt((R - e1_at_zero) / cfit);
  int extra = 0;
  for (const auto& b : branches) {
    bool dips = false;
    for (int j = b.j0; j <= b.j1(); ++j)
      if (std::abs(table.kgrid[j]) <= w.kR && b.value_at(j) <= R) dips = true;
    if (dips) {
      w.LR.push_back(b.label);
      extra += b.multiplicity;
    }
  }
  w.NR = 1 + extra;
  return w;
}

/// Complete critical-level analysis up to R on an existing sweep.
struct CriticalAnalysis {
  CriticalLevelSet levels;
  WindowBound bound;
  BkrsFit fit;
};

inline CriticalAnalysis analyze_critical(const FiberFamily& fam, const BandTable& table,
                                         const std::vector<Branch>& branches, Real R, const RefineOptions& opt = {}) {
  CriticalAnalysis a;
  a.fit = fit_bkrs(table, fam);
  const auto st = find_stationary(fam, table, branches, opt);
  const auto cr = find_crossings(fam, table, branches, opt);
  a.levels = critical_set(st, cr, R, scan_ceiling(table));
  a.bound = band_window_bound(table, branches, R, a.fit.c_lower > 0 ? a.fit.c_lower : a.fit.c_ls, a.fit.e1_at_zero);
  Real kmax = 0;
  for (Real k : table.kgrid) kmax = std::max(kmax, std::abs(k));
  if (a.bound.kR > kmax + 1e-12)
    a.levels.warnings.push_back("scan incomplete: sweep range " + std::to_string(kmax) + " does not reach kR " +
                                std::to_string(a.bound.kR));
  return a;
}

}  // namespace twg
