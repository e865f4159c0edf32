#pragma once
// Fiber operators h_beta(k) = L + (k + i beta Dtau)^2, band sweeps, Feynman-Hellmann
// velocities and overlap-based branch tracking.

#include "twg/core.hpp"
#include "twg/cross_section.hpp"
#include "twg/eigen_solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace twg {

struct FiberOperator {
  Real beta = 0;
  Real k = 0;
  SparseC H;
};

/// Pieces of h_beta(k) that do not depend on k, so that H(k) = base + 2 k beta (i Dtau) + k^2 I.
class FiberFamily {
 public:
  FiberFamily(const DiscreteOperators& ops, Real beta, SolverOptions solver = {})
      : beta_(beta), solver_(solver), mu1_(ops.mu1()) {
    const auto n = static_cast<Eigen::Index>(ops.dim());
    const SparseR dtau2 = symmetrized(SparseR(ops.Dtau.transpose() * ops.Dtau));  // = -Dtau^2
    base_ = (ops.L + (beta * beta) * dtau2).cast<Complex>();
    idtau_ = (ops.Dtau.cast<Complex>() * Complex(0, 1)).pruned();
    ident_.resize(n, n);
    ident_.setIdentity();
  }

  Real beta() const { return beta_; }
  Eigen::Index dim() const { return base_.rows(); }
  const SparseC& base() const { return base_; }
  /// i * Dtau (Hermitian).
  const SparseC& idtau() const { return idtau_; }
  const SolverOptions& solver() const { return solver_; }
  SolverOptions& solver() { return solver_; }
  Real mu1() const { return mu1_; }

  FiberOperator at(Real k) const {
    FiberOperator f;
    f.beta = beta_;
    f.k = k;
    f.H = base_ + Complex(2 * k * beta_) * idtau_ + Complex(k * k) * ident_;
    return f;
  }

  /// (k I + i beta Dtau) v; the k-derivative of H(k) is twice this operator.
  MatrixC velocity_apply(Real k, const MatrixC& v) const {
    MatrixC out = idtau_ * v;
    out *= beta_;
    out += k * v;
    return out;
  }

  /// `start` seeds the iterative solver, typically with eigenvectors at a nearby k.
  EigResult<Complex> solve(Real k, int nev, const MatrixC* start = nullptr) const {
    return eig_hermitian<Complex>(at(k).H, nev, solver_, start);
  }

 private:
  Real beta_;
  SolverOptions solver_;
  Real mu1_;
  SparseC base_;
  SparseC idtau_;
  SparseC ident_;
};

inline FiberOperator assemble_fiber(const DiscreteOperators& ops, Real beta, Real k) {
  return FiberFamily(ops, beta).at(k);
}

inline EigResult<Complex> eig_hermitian(const FiberOperator& f, int nev, const SolverOptions& opt = {}) {
  return eig_hermitian<Complex>(f.H, nev, opt);
}

/// Eigenvalues equal within this tolerance form one eigengroup.
inline Real degeneracy_tol(Real e) { return 1e-8 * (1 + std::abs(e)); }
inline Real velocity_tol(Real v) { return 1e-7 * (1 + std::abs(v)); }

struct FhResult {
  std::vector<Real> velocities;  ///< ascending eigenvalues of 2 V^H (kI + i beta Dtau) V
  MatrixC directions;            ///< group vectors rotated to diagonalize the velocity matrix
  bool split = false;            ///< distinct velocities inside one degenerate group
};

/// Feynman-Hellmann velocities for an eigengroup with orthonormal columns `group`.
inline FhResult fh_derivative(const FiberFamily& fam, Real k, const MatrixC& group) {
  MatrixC m = group.adjoint() * fam.velocity_apply(k, group);
  m = (m + m.adjoint()).eval();  // 2 * Hermitian part
  FhResult r;
  if (m.rows() == 1) {
    r.velocities = {std::real(m(0, 0))};
    r.directions = group;
    return r;
  }
  Eigen::SelfAdjointEigenSolver<MatrixC> es(m);
  r.velocities.assign(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  r.directions = group * es.eigenvectors();
  r.split = (r.velocities.back() - r.velocities.front()) > velocity_tol(r.velocities.back());
  return r;
}

inline Real fh_derivative(const FiberFamily& fam, Real k, const VectorC& v) {
  return 2 * std::real(v.dot(fam.velocity_apply(k, v).col(0)));
}

/// A cluster of eigenpairs sharing energy and velocity: one analytic branch locally.
struct EigenUnit {
  Real energy = 0;
  Real velocity = 0;
  int first_band = 0;
  int multiplicity = 1;
  MatrixC vectors;  ///< n x multiplicity
};

/// Eigendata at one k with degenerate groups resolved into units.
struct ResolvedSpectrum {
  Real k = 0;
  VectorR values;
  VectorR velocities;
  VectorR residuals;
  MatrixC vectors;  ///< columns rotated inside degenerate groups to velocity eigenvectors
  MatrixC solver_vectors;  ///< all computed eigenvectors (warm start for nearby k)
  std::vector<EigenUnit> units;
  std::vector<int> unit_of_band;  ///< -1 for bands of a group cut off by the solve
  bool split_flag = false;
};

inline ResolvedSpectrum resolve_spectrum(const FiberFamily& fam, Real k, const EigResult<Complex>& eig, int nkeep) {
  ResolvedSpectrum s;
  s.k = k;
  const int nev = static_cast<int>(eig.values.size());
  nkeep = std::min(nkeep, nev);
  s.values = eig.values.head(nkeep);
  s.residuals = eig.residuals.head(nkeep);
  s.vectors = eig.vectors.leftCols(nkeep);
  s.solver_vectors = eig.vectors;
  s.velocities = VectorR::Zero(nkeep);
  s.unit_of_band.assign(nkeep, -1);
  int start = 0;
  while (start < nkeep) {
    int end = start + 1;
    while (end < nev && eig.values[end] - eig.values[end - 1] <= degeneracy_tol(eig.values[end])) ++end;
    if (end > nkeep) break;  // group continues beyond the kept range
    const MatrixC group = eig.vectors.middleCols(start, end - start);
    const FhResult fh = fh_derivative(fam, k, group);
    s.split_flag = s.split_flag || fh.split;
    s.vectors.middleCols(start, end - start) = fh.directions;
    int a = 0;
    while (a < end - start) {
      int b = a + 1;
      while (b < end - start && fh.velocities[b] - fh.velocities[b - 1] <= velocity_tol(fh.velocities[b])) ++b;
      EigenUnit u;
      u.first_band = start + a;
      u.multiplicity = b - a;
      u.energy = eig.values.segment(start + a, b - a).mean();
      u.velocity = 0;
      for (int i = a; i < b; ++i) {
        u.velocity += fh.velocities[i] / (b - a);
        s.velocities[start + i] = fh.velocities[i];
        s.unit_of_band[start + i] = static_cast<int>(s.units.size());
      }
      u.vectors = fh.directions.middleCols(a, b - a);
      s.units.push_back(std::move(u));
      a = b;
    }
    start = end;
  }
  return s;
}

inline ResolvedSpectrum solve_resolved(const FiberFamily& fam, Real k, int nkeep, int extra = 2,
                                       const MatrixC* start = nullptr) {
  const int nev = std::min<int>(nkeep + extra, static_cast<int>(fam.dim()));
  return resolve_spectrum(fam, k, fam.solve(k, nev, start), nkeep);
}

/// k points per warm-started chain in a sweep; fixed so results do not depend on the job count.
inline constexpr std::size_t kSweepChain = 8;

struct BandTable {
  Real beta = 0;
  std::vector<Real> kgrid;
  int nmax = 0;      ///< bands reported
  int nstored = 0;   ///< bands kept for tracking (nmax plus a buffer)
  MatrixR energies;  ///< nstored x nk
  MatrixR velocities;
  std::vector<ResolvedSpectrum> spectra;

  std::size_t nk() const { return kgrid.size(); }
};

inline BandTable sweep_bands(const FiberFamily& fam, const std::vector<Real>& kgrid, int nmax, int buffer = 2) {
  if (kgrid.empty()) throw Error("empty k grid");
  for (std::size_t j = 1; j < kgrid.size(); ++j)
    if (!(kgrid[j] > kgrid[j - 1])) throw Error("k grid must be strictly ascending");
  if (nmax < 1 || nmax > fam.dim() / 4) throw Error("nmax must lie in [1, dim/4]");
  BandTable t;
  t.beta = fam.beta();
  t.kgrid = kgrid;
  t.nmax = nmax;
  t.nstored = std::min<int>(nmax + buffer, static_cast<int>(fam.dim()));
  const std::size_t chains = (kgrid.size() + kSweepChain - 1) / kSweepChain;
  auto parts = parallel_map(chains, [&](std::size_t c) {
    std::vector<ResolvedSpectrum> out;
    const std::size_t lo = c * kSweepChain, hi = std::min(kgrid.size(), lo + kSweepChain);
    for (std::size_t j = lo; j < hi; ++j)
      out.push_back(solve_resolved(fam, kgrid[j], t.nstored, 2, out.empty() ? nullptr : &out.back().solver_vectors));
    return out;
  });
  for (auto& part : parts)
    for (auto& s : part) t.spectra.push_back(std::move(s));
  int kept = t.nstored;
  for (const auto& s : t.spectra) kept = std::min<int>(kept, static_cast<int>(s.values.size()));
  t.nstored = kept;
  t.energies.resize(kept, kgrid.size());
  t.velocities.resize(kept, kgrid.size());
  for (std::size_t j = 0; j < kgrid.size(); ++j) {
    t.energies.col(j) = t.spectra[j].values.head(kept);
    t.velocities.col(j) = t.spectra[j].velocities.head(kept);
  }
  return t;
}

inline std::vector<Real> uniform_grid(Real lo, Real hi, int n) {
  std::vector<Real> g(n);
  for (int i = 0; i < n; ++i) g[i] = (n == 1) ? lo : lo + (hi - lo) * i / (n - 1);
  return g;
}

/// A continuous eigenvalue curve followed through the k grid.
struct Branch {
  int label = 0;
  int j0 = 0;  ///< first k index
  int multiplicity = 1;
  std::vector<Real> values;
  std::vector<Real> velocities;
  std::vector<int> unit;         ///< unit index in the spectrum at k index j0 + i
  std::vector<Real> min_overlap;  ///< overlap with the previous point (1 at the start)

  int j1() const { return j0 + static_cast<int>(values.size()) - 1; }
  bool covers(int j) const { return j >= j0 && j <= j1(); }
  Real value_at(int j) const { return values[j - j0]; }
  Real velocity_at(int j) const { return velocities[j - j0]; }
};

/// Normalized subspace overlap ||A^H B||_F^2 / q.
inline Real subspace_overlap(const MatrixC& a, const MatrixC& b) {
  return (a.adjoint() * b).squaredNorm() / static_cast<Real>(std::max(a.cols(), b.cols()));
}

namespace detail {

/// Maximum-weight assignment on a square cost matrix (Hungarian algorithm, minimizing -w).
inline std::vector<int> hungarian_max(const MatrixR& w) {
  const int n = static_cast<int>(w.rows());
  const Real inf = std::numeric_limits<Real>::infinity();
  std::vector<Real> u(n + 1), v(n + 1), minv(n + 1);
  std::vector<int> p(n + 1), way(n + 1);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      Real delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j)
        if (!used[j]) {
          const Real cur = -w(i0 - 1, j - 1) - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assign[p[j] - 1] = j - 1;
  return assign;
}

}  // namespace detail

struct TrackingOptions {
  Real ambiguity = 0.5;   ///< below this best overlap the grid is too coarse
  Real confident = 0.8;   ///< greedy results below this trigger the Hungarian pass
  int edge_units = 2;     ///< units this close to the top of the stored window may enter or leave
};

/// Relabels sorted bands into continuous branches by maximal eigenvector overlap between
/// neighbouring k points. Units near the top of the stored window may start or end a branch.
inline std::vector<Branch> track_branches(const BandTable& table, const TrackingOptions& opt = {}) {
  std::vector<Branch> branches;
  if (table.nk() == 0) return branches;
  std::vector<int> active;  // branch index per unit at the current k
  const auto start_branch = [&](int j, int unit) {
    const auto& u = table.spectra[j].units[unit];
    Branch b;
    b.label = static_cast<int>(branches.size());
    b.j0 = j;
    b.multiplicity = u.multiplicity;
    b.values.push_back(u.energy);
    b.velocities.push_back(u.velocity);
    b.unit.push_back(unit);
    b.min_overlap.push_back(1.0);
    branches.push_back(std::move(b));
    return static_cast<int>(branches.size()) - 1;
  };
  {
    const auto& s0 = table.spectra[0];
    active.resize(s0.units.size());
    for (std::size_t u = 0; u < s0.units.size(); ++u) active[u] = start_branch(0, static_cast<int>(u));
  }
  for (std::size_t j = 1; j < table.nk(); ++j) {
    const auto& prev = table.spectra[j - 1];
    const auto& cur = table.spectra[j];
    const int np = static_cast<int>(prev.units.size()), nc = static_cast<int>(cur.units.size());
    MatrixR ov = MatrixR::Zero(np, nc);
    for (int a = 0; a < np; ++a)
      for (int b = 0; b < nc; ++b)
        if (prev.units[a].multiplicity == cur.units[b].multiplicity)
          ov(a, b) = subspace_overlap(prev.units[a].vectors, cur.units[b].vectors);
    // Greedy maximal assignment.
    std::vector<int> match(np, -1), taken(nc, -1);
    std::vector<std::tuple<Real, int, int>> pairs;
    for (int a = 0; a < np; ++a)
      for (int b = 0; b < nc; ++b)
        if (ov(a, b) > 0) pairs.emplace_back(ov(a, b), a, b);
    std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
      if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
      if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
      return std::get<2>(x) < std::get<2>(y);
    });
    for (auto [w, a, b] : pairs)
      if (match[a] < 0 && taken[b] < 0 && w >= opt.ambiguity) {
        match[a] = b;
        taken[b] = a;
      }
    bool weak = false;
    for (int a = 0; a < np; ++a)
      if (match[a] >= 0 && ov(a, match[a]) < opt.confident) weak = true;
    if (weak) {
      const int n = std::max(np, nc);
      MatrixR w = MatrixR::Zero(n, n);
      w.topLeftCorner(np, nc) = ov;
      const auto assign = detail::hungarian_max(w);
      std::fill(match.begin(), match.end(), -1);
      std::fill(taken.begin(), taken.end(), -1);
      for (int a = 0; a < np; ++a)
        if (assign[a] >= 0 && assign[a] < nc && ov(a, assign[a]) >= opt.ambiguity) {
          match[a] = assign[a];
          taken[assign[a]] = a;
        }
    }
    const auto near_edge = [&](const ResolvedSpectrum& s, int unit) {
      return s.units[unit].first_band + s.units[unit].multiplicity > table.nstored - opt.edge_units;
    };
    for (int a = 0; a < np; ++a)
      if (match[a] < 0 && !near_edge(prev, a)) {
        Real best = 0;
        for (int b = 0; b < nc; ++b) best = std::max(best, ov(a, b));
        throw TrackingError("branch tracking ambiguous between k=" + std::to_string(table.kgrid[j - 1]) +
                            " and k=" + std::to_string(table.kgrid[j]) + ": best overlap " + std::to_string(best) +
                            " (refine the k grid)");
      }
    std::vector<int> next(nc, -1);
    for (int a = 0; a < np; ++a) {
      if (match[a] < 0) continue;
      const int b = match[a];
      Branch& br = branches[active[a]];
      br.values.push_back(cur.units[b].energy);
      br.velocities.push_back(cur.units[b].velocity);
      br.unit.push_back(b);
      br.min_overlap.push_back(ov(a, b));
      next[b] = active[a];
    }
    for (int b = 0; b < nc; ++b)
      if (next[b] < 0) next[b] = start_branch(static_cast<int>(j), b);
    active = std::move(next);
  }
  return branches;
}

/// Least-squares and lower-envelope constants c in E1(k) - E1(0) >= c k^2.
struct BkrsFit {
  Real e1_at_zero = 0;
  Real c_ls = 0;     ///< least-squares fit over |k| >= 0.2 kmax
  Real c_lower = 0;  ///< min over the sweep of (E1(k) - E1(0)) / k^2
  int samples = 0;
};

inline BkrsFit fit_bkrs(const BandTable& table, Real e1_at_zero) {
  BkrsFit f;
  f.e1_at_zero = e1_at_zero;
  Real kmax = 0;
  for (Real k : table.kgrid) kmax = std::max(kmax, std::abs(k));
  Real num = 0, den = 0;
  f.c_lower = std::numeric_limits<Real>::infinity();
  for (std::size_t j = 0; j < table.nk(); ++j) {
    const Real k = table.kgrid[j];
    if (std::abs(k) < 1e-12) continue;
    const Real de = table.energies(0, j) - e1_at_zero;
    f.c_lower = std::min(f.c_lower, de / (k * k));
    if (std::abs(k) >= 0.2 * kmax) {
      num += de * k * k;
      den += k * k * k * k;
      ++f.samples;
    }
  }
  f.c_ls = den > 0 ? num / den : 0.0;
  if (!std::isfinite(f.c_lower)) f.c_lower = 0;
  return f;
}

inline BkrsFit fit_bkrs(const BandTable& table, const FiberFamily& fam) {
  for (std::size_t j = 0; j < table.nk(); ++j)
    if (std::abs(table.kgrid[j]) < 1e-14) return fit_bkrs(table, table.energies(0, j));
  return fit_bkrs(table, fam.solve(0.0, 1).values[0]);
}

namespace detail {

/// Unit of `s` that best continues the subspace `ref` (same multiplicity).
inline int match_unit(const ResolvedSpectrum& s, const MatrixC& ref, Real* overlap = nullptr) {
  int best = -1;
  Real bo = -1;
  for (std::size_t u = 0; u < s.units.size(); ++u) {
    if (s.units[u].multiplicity != ref.cols()) continue;
    const Real o = subspace_overlap(ref, s.units[u].vectors);
    if (o > bo) {
      bo = o;
      best = static_cast<int>(u);
    }
  }
  if (overlap) *overlap = bo;
  return best;
}

}  // namespace detail

/// Feynman-Hellmann velocities against central differences of the same unit at k +- dk.
struct FhCheck {
  Real dk = 1e-3;
  Real max_rel_error = 0;  ///< |fd - v| / max(|v|, 1)
  Real worst_k = 0;
  int worst_band = -1;
  int samples = 0;
  int unmatched = 0;  ///< units whose continuation at k +- dk was ambiguous (overlap < 0.5)
};

/// Checks every unit among the lowest nbands bands at every `stride`-th grid point of the sweep.
inline FhCheck fh_check(const FiberFamily& fam, const BandTable& table, int nbands, Real dk = 1e-3, int stride = 1) {
  FhCheck c;
  c.dk = dk;
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < table.nk(); j += static_cast<std::size_t>(std::max(stride, 1))) idx.push_back(j);
  struct Row {
    Real err = 0, k = 0;
    int band = -1, samples = 0, unmatched = 0;
  };
  const auto rows = parallel_map(idx.size(), [&](std::size_t i) {
    const auto& s = table.spectra[idx[i]];
    const ResolvedSpectrum sp = solve_resolved(fam, s.k + dk, table.nstored, 2, &s.solver_vectors);
    const ResolvedSpectrum sm = solve_resolved(fam, s.k - dk, table.nstored, 2, &s.solver_vectors);
    Row r;
    r.k = s.k;
    for (const auto& u : s.units) {
      if (u.first_band >= nbands) continue;
      Real op = 0, om = 0;
      const int a = detail::match_unit(sp, u.vectors, &op), b = detail::match_unit(sm, u.vectors, &om);
      if (a < 0 || b < 0 || op < 0.5 || om < 0.5) {
        ++r.unmatched;
        continue;
      }
      const Real fd = (sp.units[a].energy - sm.units[b].energy) / (2 * dk);
      const Real err = std::abs(fd - u.velocity) / std::max<Real>(std::abs(u.velocity), 1);
      ++r.samples;
      if (err > r.err || r.band < 0) {
        r.err = err;
        r.band = u.first_band;
      }
    }
    return r;
  });
  for (const auto& r : rows) {
    c.samples += r.samples;
    c.unmatched += r.unmatched;
    if (r.band >= 0 && (c.worst_band < 0 || r.err > c.max_rel_error)) {
      c.max_rel_error = r.err;
      c.worst_k = r.k;
      c.worst_band = r.band + 1;
    }
  }
  return c;
}

/// Worst violations of |dE| <= 2 sqrt(E) and the square-root Lipschitz bound along branches.
struct InequalityReport {
  Real velocity_bound_excess = -std::numeric_limits<Real>::infinity();   ///< max |v| - 2 sqrt(E), relative
  Real sqrt_lipschitz_excess = -std::numeric_limits<Real>::infinity();   ///< max |dsqrt| - |dk|
  bool holds(Real tol) const { return velocity_bound_excess <= tol && sqrt_lipschitz_excess <= tol; }
};

inline InequalityReport check_band_inequalities(const BandTable& table, const std::vector<Branch>& branches) {
  InequalityReport r;
  for (std::size_t j = 0; j < table.nk(); ++j)
    for (int n = 0; n < table.nstored; ++n) {
      const Real e = table.energies(n, j), v = table.velocities(n, j);
      const Real bound = 2 * std::sqrt(std::max<Real>(e, 0));
      r.velocity_bound_excess = std::max(r.velocity_bound_excess, (std::abs(v) - bound) / std::max<Real>(bound, 1));
    }
  for (const auto& b : branches)
    for (std::size_t i = 0; i < b.values.size(); ++i)
      for (std::size_t l = i + 1; l < b.values.size(); ++l) {
        const Real dk = std::abs(table.kgrid[b.j0 + l] - table.kgrid[b.j0 + i]);
        const Real ds = std::abs(std::sqrt(b.values[l]) - std::sqrt(b.values[i]));
        r.sqrt_lipschitz_excess = std::max(r.sqrt_lipschitz_excess, ds - dk);
      }
  return r;
}

inline void write_bands_csv(std::ostream& os, const BandTable& t) {
  os << "k,n,E,dE\n";
  os.precision(15);
  for (std::size_t j = 0; j < t.nk(); ++j)
    for (int n = 0; n < t.nmax; ++n)
      os << t.kgrid[j] << ',' << n + 1 << ',' << t.energies(n, j) << ',' << t.velocities(n, j) << '\n';
}

inline void write_branches_csv(std::ostream& os, const BandTable& t, const std::vector<Branch>& branches) {
  os << "k,ell,lambda,dlambda,mult\n";
  os.precision(15);
  for (const auto& b : branches)
    for (std::size_t i = 0; i < b.values.size(); ++i)
      os << t.kgrid[b.j0 + i] << ',' << b.label << ',' << b.values[i] << ',' << b.velocities[i] << ','
         << b.multiplicity << '\n';
}

}  // namespace twg
