#pragma once
// Truncated 3D straightened twisted tube: H_g = -d1^2 - d2^2 - (d3 + g d_tau)^2 on
// omega x (-L, L) with Dirichlet ends, the twist splittings and a Hilbert-Schmidt diagnostic.

#include "twg/core.hpp"
#include "twg/cross_section.hpp"
#include "twg/eigen_solvers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <istream>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace twg {

/// The perturbation does not decay like (1 + x3^2)^{-1} on the truncation.
class DecayError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// The tube matrix would exceed the unknown budget.
class MemoryGuardError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::size_t kTubeMaxUnknowns = 200000;

struct NoPerturbation {};

struct GaussianPerturbation {
  Real eps0 = 0.1;
  Real sigma = 1.0;
};

/// Piecewise-linear eps(x3) through the nodes, zero outside [x.front(), x.back()].
struct TabulatedPerturbation {
  std::vector<Real> x;
  std::vector<Real> eps;
};

/// theta'(x3) = beta - eps(x3).
struct TwistProfile {
  Real beta = 0;
  std::variant<NoPerturbation, GaussianPerturbation, TabulatedPerturbation> eps = NoPerturbation{};

  bool constant() const { return std::holds_alternative<NoPerturbation>(eps); }

  Real epsilon(Real x) const {
    if (const auto* g = std::get_if<GaussianPerturbation>(&eps)) {
      const Real u = x / g->sigma;
      return g->eps0 * std::exp(-0.5 * u * u);
    }
    if (const auto* t = std::get_if<TabulatedPerturbation>(&eps)) {
      if (t->x.empty() || x < t->x.front() || x > t->x.back()) return 0.0;
      const auto it = std::upper_bound(t->x.begin(), t->x.end(), x);
      if (it == t->x.end()) return t->eps.back();
      const auto i = static_cast<std::size_t>(it - t->x.begin());
      const Real s = (x - t->x[i - 1]) / (t->x[i] - t->x[i - 1]);
      return (1 - s) * t->eps[i - 1] + s * t->eps[i];
    }
    return 0.0;
  }

  Real epsilon_derivative(Real x) const {
    if (const auto* g = std::get_if<GaussianPerturbation>(&eps)) {
      const Real u = x / g->sigma;
      return -g->eps0 * u / g->sigma * std::exp(-0.5 * u * u);
    }
    if (const auto* t = std::get_if<TabulatedPerturbation>(&eps)) {
      if (t->x.size() < 2 || x < t->x.front() || x >= t->x.back()) return 0.0;
      const auto it = std::upper_bound(t->x.begin(), t->x.end(), x);
      const auto i = static_cast<std::size_t>(it - t->x.begin());
      return (t->eps[i] - t->eps[i - 1]) / (t->x[i] - t->x[i - 1]);
    }
    return 0.0;
  }

  Real g(Real x) const { return beta - epsilon(x); }
};

/// Reads a "x3,eps" table (header line optional).
inline TabulatedPerturbation read_profile_csv(std::istream& is) {
  TabulatedPerturbation t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError("profile table: expected 'x3,eps' rows");
    try {
      const Real x = std::stod(line.substr(0, comma));
      const Real e = std::stod(line.substr(comma + 1));
      t.x.push_back(x);
      t.eps.push_back(e);
    } catch (const std::invalid_argument&) {
      if (t.x.empty()) continue;  // header
      throw ConfigError("profile table: unparsable row '" + line + "'");
    }
  }
  if (t.x.size() < 2) throw ConfigError("profile table needs at least two rows");
  for (std::size_t i = 1; i < t.x.size(); ++i)
    if (!(t.x[i] > t.x[i - 1])) throw ConfigError("profile table: x3 must be strictly increasing");
  return t;
}

struct DecayCheck {
  Real sup_eps = 0;   ///< sup |eps| (1 + x^2) on [-L, L]
  Real sup_deps = 0;  ///< sup |eps'| (1 + x^2) on [-L, L]
  Real ratio = 1;     ///< sup over [-L, L] divided by sup over [-L/2, L/2]
  bool ok = true;
};

/// Samples eps and eps' weighted by (1 + x^2). A weighted sup that keeps growing between
/// [-L/2, L/2] and [-L, L] (ratio above max_ratio) is taken as a decay violation.
inline DecayCheck check_decay(const TwistProfile& p, Real Ltube, int samples = 4001, Real max_ratio = 1.5) {
  DecayCheck d;
  if (p.constant()) return d;
  Real half_e = 0, half_d = 0;
  for (int i = 0; i < samples; ++i) {
    const Real x = -Ltube + 2 * Ltube * i / (samples - 1);
    const Real w = 1 + x * x;
    const Real e = std::abs(p.epsilon(x)) * w;
    const Real de = std::abs(p.epsilon_derivative(x)) * w;
    d.sup_eps = std::max(d.sup_eps, e);
    d.sup_deps = std::max(d.sup_deps, de);
    if (std::abs(x) <= 0.5 * Ltube) {
      half_e = std::max(half_e, e);
      half_d = std::max(half_d, de);
    }
  }
  const Real full = std::max(d.sup_eps, d.sup_deps), half = std::max(half_e, half_d);
  if (full == 0) return d;
  d.ratio = half > 0 ? full / half : std::numeric_limits<Real>::infinity();
  d.ok = std::isfinite(d.sup_eps) && std::isfinite(d.sup_deps) && d.ratio <= max_ratio;
  return d;
}

/// Kronecker product of sparse matrices.
inline SparseR kron(const SparseR& a, const SparseR& b) {
  std::vector<TripletR> t;
  t.reserve(static_cast<std::size_t>(a.nonZeros() * b.nonZeros()));
  for (int ca = 0; ca < a.outerSize(); ++ca)
    for (SparseR::InnerIterator ia(a, ca); ia; ++ia)
      for (int cb = 0; cb < b.outerSize(); ++cb)
        for (SparseR::InnerIterator ib(b, cb); ib; ++ib)
          t.emplace_back(ia.row() * b.rows() + ib.row(), ia.col() * b.cols() + ib.col(), ia.value() * ib.value());
  SparseR k(a.rows() * b.rows(), a.cols() * b.cols());
  k.setFromTriplets(t.begin(), t.end());
  return k;
}

inline SparseR sparse_identity(Eigen::Index n) {
  SparseR i(n, n);
  i.setIdentity();
  return i;
}

inline SparseR sparse_diagonal(const VectorR& d) {
  std::vector<TripletR> t;
  t.reserve(static_cast<std::size_t>(d.size()));
  for (Eigen::Index i = 0; i < d.size(); ++i) t.emplace_back(i, i, d[i]);
  SparseR m(d.size(), d.size());
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

/// Staggered x3 stencil: M interior nodes x_j = -L + j h3 (j = 1..M), M + 1 edges at the
/// midpoints, ghost zeros at x = +-L. With `periodic` the M nodes wrap and there are M edges.
struct AxialGrid {
  Real Ltube = 0, h3 = 0;
  int M = 0;
  bool periodic = false;
  std::vector<Real> nodes, mids;
  SparseR D3;   ///< edges x nodes difference
  SparseR Avg;  ///< edges x nodes average
};

inline AxialGrid axial_grid(Real Ltube, Real h3, bool periodic = false) {
  if (!(Ltube > 0) || !(h3 > 0)) throw ConfigError("tube: Ltube and h3 must be positive");
  AxialGrid a;
  a.Ltube = Ltube;
  a.periodic = periodic;
  const int steps = static_cast<int>(std::lround(2 * Ltube / h3));
  if (steps < 3) throw ConfigError("tube: h3 too coarse for the truncation");
  a.h3 = 2 * Ltube / steps;
  a.M = periodic ? steps : steps - 1;
  const int edges = periodic ? a.M : a.M + 1;
  for (int j = 1; j <= a.M; ++j) a.nodes.push_back(-Ltube + j * a.h3);
  for (int e = 0; e < edges; ++e) a.mids.push_back(-Ltube + (e + 0.5) * a.h3);
  std::vector<TripletR> d, s;
  // Edge e joins node e (left, column e-1) and node e+1 (right, column e).
  for (int e = 0; e < edges; ++e) {
    int left = e - 1, right = e;
    if (periodic) {
      left = (e - 1 + a.M) % a.M;
      right = e % a.M;
    }
    if (left >= 0) {
      d.emplace_back(e, left, -1.0 / a.h3);
      s.emplace_back(e, left, 0.5);
    }
    if (right < a.M) {
      d.emplace_back(e, right, 1.0 / a.h3);
      s.emplace_back(e, right, 0.5);
    }
  }
  a.D3.resize(edges, a.M);
  a.D3.setFromTriplets(d.begin(), d.end());
  a.Avg.resize(edges, a.M);
  a.Avg.setFromTriplets(s.begin(), s.end());
  return a;
}

/// H = I (x) L + A^T A with A = D + G S, D = D3 (x) I, S = Avg (x) Dtau, G = diag(g(mid)) (x) I.
struct TubeOperator {
  SparseR H;
  Real Ltube = 0, h3 = 0;
  int M = 0;
  std::size_t n2d = 0;
  bool periodic = false;
  TwistProfile profile;
  std::vector<Real> nodes;
  VectorR g_mid;
  SparseR D, S;

  std::size_t dim() const { return static_cast<std::size_t>(H.rows()); }
  Real x3(std::size_t row) const { return nodes[row / n2d]; }
};

namespace detail {

inline SparseR tube_matrix(const SparseR& L, const SparseR& D, const SparseR& S, const VectorR& g_mid,
                           std::size_t n2d, int M) {
  const SparseR G = kron(sparse_diagonal(g_mid), sparse_identity(static_cast<Eigen::Index>(n2d)));
  const SparseR A = D + G * S;
  SparseR H = kron(sparse_identity(M), L) + SparseR(A.transpose() * A);
  return symmetrized(H);
}

inline void guard_size(std::size_t n2d, int M) {
  const std::size_t unknowns = n2d * static_cast<std::size_t>(M);
  if (unknowns > kTubeMaxUnknowns)
    throw MemoryGuardError("tube: " + std::to_string(unknowns) + " unknowns exceed the limit of " +
                           std::to_string(kTubeMaxUnknowns));
}

}  // namespace detail

inline TubeOperator assemble_tube(const DiscreteOperators& ops, const TwistProfile& profile, Real Ltube, Real h3) {
  const DecayCheck dc = check_decay(profile, Ltube);
  if (!dc.ok)
    throw DecayError("twist perturbation does not decay like (1+x3^2)^{-1} on [-L, L]: weighted sup ratio " +
                     std::to_string(dc.ratio));
  const AxialGrid ax = axial_grid(Ltube, h3);
  detail::guard_size(ops.dim(), ax.M);
  TubeOperator t;
  t.Ltube = Ltube;
  t.h3 = ax.h3;
  t.M = ax.M;
  t.n2d = ops.dim();
  t.profile = profile;
  t.nodes = ax.nodes;
  t.g_mid.resize(static_cast<Eigen::Index>(ax.mids.size()));
  for (std::size_t e = 0; e < ax.mids.size(); ++e) t.g_mid[static_cast<Eigen::Index>(e)] = profile.g(ax.mids[e]);
  t.D = kron(ax.D3, sparse_identity(static_cast<Eigen::Index>(t.n2d)));
  t.S = kron(ax.Avg, ops.Dtau);
  t.H = detail::tube_matrix(ops.L, t.D, t.S, t.g_mid, t.n2d, t.M);
  return t;
}

/// Constant twist on a periodic x3 cell of length 2 L (diagnostic). Its spectrum is the union
/// over k_m = pi m / L of spec h_{beta c}(s) with s = 2 sin(k h3 / 2) / h3, c = cos(k h3 / 2).
inline TubeOperator assemble_tube_periodic(const DiscreteOperators& ops, Real beta, Real Ltube, Real h3) {
  const AxialGrid ax = axial_grid(Ltube, h3, true);
  detail::guard_size(ops.dim(), ax.M);
  TubeOperator t;
  t.Ltube = Ltube;
  t.h3 = ax.h3;
  t.M = ax.M;
  t.n2d = ops.dim();
  t.periodic = true;
  t.profile.beta = beta;
  t.nodes = ax.nodes;
  t.g_mid = VectorR::Constant(static_cast<Eigen::Index>(ax.mids.size()), beta);
  t.D = kron(ax.D3, sparse_identity(static_cast<Eigen::Index>(t.n2d)));
  t.S = kron(ax.Avg, ops.Dtau);
  t.H = detail::tube_matrix(ops.L, t.D, t.S, t.g_mid, t.n2d, t.M);
  return t;
}

/// Discrete momenta of the periodic cell paired with the effective fiber parameters (s, beta c).
struct PeriodicSymbol {
  Real k = 0, s = 0, beta_eff = 0;
};

inline std::vector<PeriodicSymbol> periodic_symbols(const TubeOperator& t) {
  std::vector<PeriodicSymbol> out;
  for (int m = 0; m < t.M; ++m) {
    const Real k = pi * m / t.Ltube;
    out.push_back({k, 2 * std::sin(0.5 * k * t.h3) / t.h3, t.profile.beta * std::cos(0.5 * k * t.h3)});
  }
  return out;
}

/// Residuals of the splittings H_g = H_beta + W and H_g = H_0 + U, both relative to max|H_g|.
struct SplittingCheck {
  Real decomp1 = 0;
  Real decomp2 = 0;
  Real scale = 0;
  SparseR W, U;
};

inline SplittingCheck splitting_check(const DiscreteOperators& ops, const TwistProfile& profile, Real Ltube, Real h3) {
  const TubeOperator tg = assemble_tube(ops, profile, Ltube, h3);
  TwistProfile flat;
  flat.beta = profile.beta;
  const TubeOperator tb = assemble_tube(ops, flat, Ltube, h3);
  TwistProfile zero;
  const TubeOperator t0 = assemble_tube(ops, zero, Ltube, h3);

  const auto n2d = static_cast<Eigen::Index>(tg.n2d);
  const Real beta = profile.beta;
  VectorR eps(tg.g_mid.size()), quad(tg.g_mid.size());
  for (Eigen::Index e = 0; e < eps.size(); ++e) {
    eps[e] = beta - tg.g_mid[e];
    quad[e] = 2 * eps[e] * beta - eps[e] * eps[e];
  }
  const SparseR In = sparse_identity(n2d);
  const SparseR E = kron(sparse_diagonal(eps), In);
  const SparseR Q = kron(sparse_diagonal(quad), In);
  const SparseR& D = tg.D;
  const SparseR& S = tg.S;
  const SparseR St = S.transpose(), Dt = D.transpose();
  // (2 eps beta - eps^2) d_tau^2 + 2 eps d_tau d3 + eps' d_tau
  SparseR W = -(St * Q * S) - (Dt * E * S + St * E * D);
  // - beta^2 d_tau^2 - 2 beta d_tau d3
  SparseR U = W + (beta * beta) * SparseR(St * S) + beta * SparseR(Dt * S + St * D);
  SplittingCheck c;
  c.scale = max_abs(tg.H);
  c.decomp1 = max_abs(SparseR(tg.H - tb.H - W)) / c.scale;
  c.decomp2 = max_abs(SparseR(tg.H - t0.H - U)) / c.scale;
  c.W = std::move(W);
  c.U = std::move(U);
  return c;
}

struct TubeSpectrum {
  VectorR values;
  VectorR residuals;
  Real Ltube = 0;
  Real e1_ref = 0;       ///< fiber band edge E1(0) used for flagging
  int below_edge = 0;    ///< eigenvalues below e1_ref - tol
  std::vector<Real> candidates;
};

/// nev lowest eigenvalues (shift-invert just below mu1). Eigenvalues below e1_ref - tol are
/// reported as candidate discrete spectrum.
inline TubeSpectrum tube_low_spectrum(const TubeOperator& t, int nev, Real mu1, Real e1_ref, Real tol = 1e-8,
                                      SolverOptions opt = {}) {
  if (nev < 1 || nev > 30) throw ConfigError("tube_low_spectrum: nev must be in [1, 30]");
  opt.sigma = mu1 - 1e-3 * (1 + std::abs(mu1));
  opt.fail_tol = std::min(opt.fail_tol, 1e-8 / norm1(t.H));
  const auto r = eig_hermitian(t.H, nev, opt);
  TubeSpectrum s;
  s.values = r.values;
  s.residuals = r.residuals;
  s.Ltube = t.Ltube;
  s.e1_ref = e1_ref;
  for (Eigen::Index i = 0; i < s.values.size(); ++i)
    if (s.values[i] < e1_ref - tol) {
      ++s.below_edge;
      s.candidates.push_back(s.values[i]);
    }
  return s;
}

inline Real phi_weight(Real alpha, Real x) { return std::pow(1 + x * x, -0.5 * alpha); }

struct HsOptions {
  bool stochastic = false;
  int probes = 64;           ///< Hutchinson samples when stochastic
  std::uint64_t seed = 1;
  int block = 256;           ///< columns per solve batch
  std::function<Real(Real)> weight;  ///< overrides phi_alpha when set
};

struct HsEntry {
  Real Ltube = 0;
  Real norm = 0;        ///< ||phi_alpha H^{-1}||_F
  Real std_error = 0;   ///< stochastic estimate only
  std::size_t dim = 0;
};

/// ||phi_alpha(x3) H^{-1}||_F^2 = sum_i phi_alpha(x_i)^2 ||H^{-1} e_i||^2 (H symmetric), by exact
/// column probing, or tr(H^{-1} F^2 H^{-1}) with Rademacher probes. One factorization and one set
/// of solves serve every alpha.
inline std::vector<HsEntry> hs_norms(const TubeOperator& t, const std::vector<Real>& alphas, const HsOptions& opt = {}) {
  for (Real a : alphas)
    if (a < 0) throw ConfigError("hs_diagnostic: alpha must be nonnegative");
  Eigen::SimplicialLDLT<SparseR> ldlt(t.H);
  if (ldlt.info() != Eigen::Success) throw SolverError("tube factorization failed");
  const auto n = static_cast<Eigen::Index>(t.dim());
  const auto na = static_cast<Eigen::Index>(alphas.size());
  MatrixR f2(n, na);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Real x = t.x3(static_cast<std::size_t>(i));
    for (Eigen::Index a = 0; a < na; ++a) {
      const Real w = opt.weight ? opt.weight(x) : phi_weight(alphas[a], x);
      f2(i, a) = w * w;
    }
  }
  std::vector<HsEntry> out(alphas.size());
  for (auto& e : out) {
    e.Ltube = t.Ltube;
    e.dim = t.dim();
  }
  if (!opt.stochastic) {
    VectorR colsq(n);
    for (Eigen::Index c0 = 0; c0 < n; c0 += opt.block) {
      const Eigen::Index w = std::min<Eigen::Index>(opt.block, n - c0);
      MatrixR rhs = MatrixR::Zero(n, w);
      for (Eigen::Index j = 0; j < w; ++j) rhs(c0 + j, j) = 1.0;
      const MatrixR x = ldlt.solve(rhs);
      for (Eigen::Index j = 0; j < w; ++j) colsq[c0 + j] = x.col(j).squaredNorm();
    }
    for (Eigen::Index a = 0; a < na; ++a) out[a].norm = std::sqrt(f2.col(a).dot(colsq));
    return out;
  }
  std::mt19937_64 rng(opt.seed);
  std::bernoulli_distribution coin(0.5);
  MatrixR est(opt.probes, na);
  for (int p = 0; p < opt.probes; ++p) {
    VectorR z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = coin(rng) ? 1.0 : -1.0;
    const VectorR y2 = ldlt.solve(z).array().square();
    for (Eigen::Index a = 0; a < na; ++a) est(p, a) = f2.col(a).dot(y2);
  }
  for (Eigen::Index a = 0; a < na; ++a) {
    const Real mean = est.col(a).mean();
    const Real var = opt.probes > 1 ? (est.col(a).array() - mean).square().sum() / (opt.probes - 1) : 0.0;
    out[a].norm = std::sqrt(std::max<Real>(mean, 0));
    // delta method: sd(sqrt(m)) ~ sd(m) / (2 sqrt(m))
    out[a].std_error = out[a].norm > 0 ? std::sqrt(var / opt.probes) / (2 * out[a].norm) : 0;
  }
  return out;
}

inline HsEntry hs_norm(const TubeOperator& t, Real alpha, const HsOptions& opt = {}) {
  return hs_norms(t, {alpha}, opt).front();
}

struct HsDiagnostic {
  Real alpha = 0;
  std::vector<HsEntry> entries;
  std::vector<Real> ratios;  ///< norm(L_{i+1}) / norm(L_i)
};

/// Weighted Frobenius norms for a sequence of truncations, one diagnostic per alpha; runs in
/// parallel over Ltube.
inline std::vector<HsDiagnostic> hs_diagnostic(const DiscreteOperators& ops, const TwistProfile& profile,
                                               const std::vector<Real>& alphas, const std::vector<Real>& Ls, Real h3,
                                               const HsOptions& opt = {}) {
  const auto per_L = parallel_map(Ls.size(), [&](std::size_t i) {
    const TubeOperator t = assemble_tube(ops, profile, Ls[i], h3);
    return hs_norms(t, alphas, opt);
  });
  std::vector<HsDiagnostic> out(alphas.size());
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    out[a].alpha = alphas[a];
    for (const auto& row : per_L) out[a].entries.push_back(row[a]);
    for (std::size_t i = 1; i < out[a].entries.size(); ++i) {
      const Real prev = out[a].entries[i - 1].norm;
      out[a].ratios.push_back(prev > 0 ? out[a].entries[i].norm / prev : 0.0);
    }
  }
  return out;
}

inline HsDiagnostic hs_diagnostic(const DiscreteOperators& ops, const TwistProfile& profile, Real alpha,
                                  const std::vector<Real>& Ls, Real h3, const HsOptions& opt = {}) {
  return hs_diagnostic(ops, profile, std::vector<Real>{alpha}, Ls, h3, opt).front();
}

}  // namespace twg
