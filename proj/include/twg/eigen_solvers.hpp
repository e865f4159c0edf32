#pragma once
// Lowest eigenpairs of Hermitian matrices: dense solver for small problems and a
// block Krylov shift-invert solver with Ritz restarts for large sparse ones.

#include "twg/core.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <type_traits>

namespace twg {

template <class Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
struct EigResult {
  VectorR values;                 ///< ascending
  DenseMatrix<Scalar> vectors;    ///< orthonormal columns
  VectorR residuals;              ///< ||H v - E v||_2
};

struct SolverOptions {
  /// Problems up to this dimension use the dense path.
  int dense_limit = 400;
  /// Shift for the iterative path; must lie below the wanted part of the spectrum.
  Real sigma = 0.0;
  /// Relative residual target (times ||H||_1) for the iterative path.
  Real tol = 1e-12;
  /// Residual above which the iterative path reports non-convergence.
  Real fail_tol = 1e-9;
  int max_restarts = 200;
  std::uint64_t seed = 0x5eedULL;
};

namespace detail {

/// Makes the largest-magnitude component of each column real and positive.
template <class Scalar>
void fix_phases(DenseMatrix<Scalar>& v) {
  for (int c = 0; c < v.cols(); ++c) {
    Eigen::Index imax = 0;
    v.col(c).cwiseAbs().maxCoeff(&imax);
    const Scalar z = v(imax, c);
    if (std::abs(z) == 0) continue;
    if constexpr (std::is_same_v<Scalar, Complex>) {
      v.col(c) *= std::conj(z) / std::abs(z);
      v(imax, c) = Complex(std::abs(v(imax, c)), 0.0);
    } else {
      if (z < 0) v.col(c) *= -1;
    }
  }
}

template <class Scalar>
DenseMatrix<Scalar> random_block(Eigen::Index n, Eigen::Index p, std::mt19937_64& rng) {
  std::normal_distribution<Real> nd;
  DenseMatrix<Scalar> x(n, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      if constexpr (std::is_same_v<Scalar, Complex>)
        x(i, j) = Complex(nd(rng), nd(rng));
      else
        x(i, j) = nd(rng);
    }
  return x;
}

/// Orthonormalizes y against the first m columns of basis and then internally (block
/// Gram-Schmidt with reorthogonalization plus Householder QR). Rank-deficient directions are
/// replaced by fresh random vectors.
template <class Scalar>
DenseMatrix<Scalar> orthonormalize_against(const DenseMatrix<Scalar>& basis, Eigen::Index m, DenseMatrix<Scalar> y,
                                           std::mt19937_64& rng) {
  const Eigen::Index n = y.rows(), p = y.cols();
  for (int attempt = 0; attempt < 6; ++attempt) {
    const Real scale = std::max<Real>(y.norm(), 1e-300);
    for (int pass = 0; pass < 2; ++pass) {
      if (m > 0) y -= basis.leftCols(m) * (basis.leftCols(m).adjoint() * y);
      Eigen::HouseholderQR<DenseMatrix<Scalar>> qr(y);
      bool deficient = false;
      for (Eigen::Index c = 0; c < p; ++c)
        if (!(std::abs(qr.matrixQR()(c, c)) > 1e-13 * scale)) {
          y.col(c) = random_block<Scalar>(n, 1, rng);
          deficient = true;
        }
      if (deficient) break;
      DenseMatrix<Scalar> q = DenseMatrix<Scalar>::Identity(n, p);
      q.applyOnTheLeft(qr.householderQ());
      y = std::move(q);
      if (pass == 1) return y;
    }
  }
  throw SolverError("block Krylov basis could not be extended (rank breakdown)");
}

}  // namespace detail

template <class Scalar>
EigResult<Scalar> eig_dense(const DenseMatrix<Scalar>& H, int nev) {
  const auto n = static_cast<int>(H.rows());
  if (nev > n || nev < 0) throw SolverError("nev exceeds the matrix dimension");
  Eigen::SelfAdjointEigenSolver<DenseMatrix<Scalar>> es(H);
  if (es.info() != Eigen::Success) throw SolverError("dense Hermitian eigensolver failed");
  EigResult<Scalar> r;
  r.values = es.eigenvalues().head(nev);
  r.vectors = es.eigenvectors().leftCols(nev);
  detail::fix_phases(r.vectors);
  r.residuals.resize(nev);
  for (int i = 0; i < nev; ++i) r.residuals[i] = (H * r.vectors.col(i) - r.values[i] * r.vectors.col(i)).norm();
  return r;
}

/// nev lowest eigenpairs of a sparse Hermitian matrix via (H - sigma)^{-1} block Krylov iteration.
template <class Scalar>
EigResult<Scalar> eig_shift_invert(const Eigen::SparseMatrix<Scalar>& H, int nev, const SolverOptions& opt = {},
                                   const DenseMatrix<Scalar>* start = nullptr) {
  using Sparse = Eigen::SparseMatrix<Scalar>;
  using Dense = DenseMatrix<Scalar>;
  const Eigen::Index n = H.rows();
  if (nev > n || nev <= 0) throw SolverError("nev must be in [1, dim]");
  Sparse shifted = H;
  for (Eigen::Index i = 0; i < n; ++i) shifted.coeffRef(i, i) -= Scalar(opt.sigma);
  Eigen::SimplicialLDLT<Sparse> ldlt(shifted);
  if (ldlt.info() != Eigen::Success) throw SolverError("sparse LDL^T factorization of H - sigma failed");

  const Real hnorm = norm1(H);
  const Eigen::Index p = std::min<Eigen::Index>(n, nev + std::max(4, nev / 2));
  const bool warm = start && start->rows() == n && start->cols() >= nev;
  const Eigen::Index max_basis =
      std::min<Eigen::Index>(n, warm ? 3 * p : std::max<Eigen::Index>(6 * p, 2 * nev + 20));
  std::mt19937_64 rng(opt.seed);
  Dense x0 = detail::random_block<Scalar>(n, p, rng);
  if (start && start->rows() == n) {
    const Eigen::Index s = std::min<Eigen::Index>(p, start->cols());
    x0.leftCols(s) = start->leftCols(s);
  }
  Dense x = detail::orthonormalize_against<Scalar>(Dense(n, 0), 0, x0, rng);

  Dense V(n, max_basis), W(n, max_basis);
  EigResult<Scalar> best;
  for (int restart = 0; restart <= opt.max_restarts; ++restart) {
    Eigen::Index m = x.cols();
    V.leftCols(m) = x;
    Eigen::Index block_start = 0, block = m;
    while (true) {
      Dense y = ldlt.solve(V.middleCols(block_start, block));
      W.middleCols(block_start, block) = y;
      const Eigen::Index room = max_basis - m;
      if (room <= 0) break;
      const Eigen::Index add = std::min(room, block);
      Dense q = detail::orthonormalize_against<Scalar>(V, m, y.leftCols(add), rng);
      V.middleCols(m, add) = q;
      block_start = m;
      block = add;
      m += add;
    }
    Dense T = V.leftCols(m).adjoint() * W.leftCols(m);
    T = (0.5 * (T + T.adjoint())).eval();
    Eigen::SelfAdjointEigenSolver<Dense> es(T);
    if (es.info() != Eigen::Success) throw SolverError("projected eigenproblem failed");
    // Largest theta = 1/(lambda - sigma) correspond to the lowest lambda above sigma.
    const Eigen::Index keep = std::min<Eigen::Index>(p, m);
    Dense Y = es.eigenvectors().rightCols(keep).rowwise().reverse();
    // One extra inverse application (W = (H - sigma)^{-1} V) damps the high-energy components
    // that Rayleigh-Ritz on the inverse leaves untouched; a small Rayleigh-Ritz on H follows.
    Dense Z = detail::orthonormalize_against<Scalar>(Dense(n, 0), 0, W.leftCols(m) * Y, rng);
    Dense HZ = H * Z;
    Dense G = Z.adjoint() * HZ;
    G = (0.5 * (G + G.adjoint())).eval();
    Eigen::SelfAdjointEigenSolver<Dense> gs(G);
    if (gs.info() != Eigen::Success) throw SolverError("projected eigenproblem failed");
    Dense ritz = Z * gs.eigenvectors();
    Dense hritz = HZ * gs.eigenvectors();

    EigResult<Scalar> cur;
    cur.values = gs.eigenvalues().head(nev);
    cur.vectors = ritz.leftCols(nev);
    cur.residuals.resize(nev);
    Real worst = 0;
    for (int i = 0; i < nev; ++i) {
      cur.residuals[i] = (hritz.col(i) - cur.values[i] * ritz.col(i)).norm();
      worst = std::max(worst, cur.residuals[i]);
    }
    best = cur;
    if (worst <= opt.tol * hnorm) break;
    if (restart == opt.max_restarts) {
      if (worst > opt.fail_tol * hnorm)
        throw SolverError("shift-invert iteration did not converge: residual " + std::to_string(worst));
      break;
    }
    x = ritz;
  }
  // Sort ascending (Ritz order is ascending already, but keep it explicit).
  std::vector<int> order(nev);
  for (int i = 0; i < nev; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return best.values[a] < best.values[b]; });
  EigResult<Scalar> out;
  out.values.resize(nev);
  out.residuals.resize(nev);
  out.vectors.resize(n, nev);
  for (int i = 0; i < nev; ++i) {
    out.values[i] = best.values[order[i]];
    out.residuals[i] = best.residuals[order[i]];
    out.vectors.col(i) = best.vectors.col(order[i]);
  }
  detail::fix_phases(out.vectors);
  return out;
}

/// nev smallest eigenpairs; dense path for small dimensions, shift-invert otherwise.
/// `start` optionally seeds the iterative path (e.g. eigenvectors at a nearby parameter).
template <class Scalar>
EigResult<Scalar> eig_hermitian(const Eigen::SparseMatrix<Scalar>& H, int nev, const SolverOptions& opt = {},
                                const DenseMatrix<Scalar>* start = nullptr) {
  if (nev > H.rows()) throw SolverError("nev exceeds the matrix dimension");
  if (H.rows() <= opt.dense_limit) return eig_dense<Scalar>(DenseMatrix<Scalar>(H), nev);
  return eig_shift_invert<Scalar>(H, nev, opt, start);
}

template <class Scalar>
EigResult<Scalar> eig_hermitian(const DenseMatrix<Scalar>& H, int nev) {
  return eig_dense<Scalar>(H, nev);
}

}  // namespace twg
