#pragma once
// Cross-section grids, the discrete Dirichlet Laplacian and rotation generator,
// and the eigenvalue-counting (Weyl) diagnostic.

#include "twg/core.hpp"
#include "twg/eigen_solvers.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace twg {

struct Rectangle {
  Real a = 1.0;
  Real b = 1.0;
};

struct Disc {
  Real r = 1.0;
};

/// Bitmap cross-section; see read_mask for the file layout.
struct Mask {
  std::string path;
};

struct GeometrySpec {
  std::variant<Rectangle, Disc, Mask> shape = Rectangle{};
  Real h = 0.05;
};

inline constexpr int kMinInteriorNodes = 25;

/// Interior nodes of the cross-section on a uniform Cartesian lattice centred at the origin.
struct CrossSectionGrid {
  Real h = 0;
  /// Lattice coordinates (i, j) of node n; its position is (i*h + x_offset, j*h + y_offset).
  std::vector<std::pair<int, int>> lattice;
  std::vector<Real> x1;
  std::vector<Real> x2;
  /// Bounding-box lookup: index_of[(i - imin) * ny + (j - jmin)] = node or -1.
  std::vector<int> index_of;
  int imin = 0, jmin = 0, nx = 0, ny = 0;
  Real area = 0;

  std::size_t size() const { return x1.size(); }

  int node_at(int i, int j) const {
    const int a = i - imin, b = j - jmin;
    if (a < 0 || b < 0 || a >= nx || b >= ny) return -1;
    return index_of[static_cast<std::size_t>(a) * ny + b];
  }
};

struct DiscreteOperators {
  CrossSectionGrid grid;
  SparseR L;     ///< -Laplacian with Dirichlet ghost zeros
  SparseR Dtau;  ///< x1*D2 - x2*D1, exactly antisymmetric
  std::vector<Real> mu;  ///< lowest Dirichlet eigenvalues

  Real mu1() const { return mu.empty() ? 0.0 : mu.front(); }
  std::size_t dim() const { return grid.size(); }
};

namespace detail {

/// Number of lattice steps i >= 1 with i*h strictly below len.
inline int interior_steps(Real len, Real h) {
  const Real ratio = len / h;
  const Real nearest = std::round(ratio);
  if (std::abs(ratio - nearest) < 1e-9 * std::max<Real>(1, ratio)) return static_cast<int>(nearest) - 1;
  return static_cast<int>(std::floor(ratio));
}

inline CrossSectionGrid finish_grid(Real h, std::vector<std::pair<int, int>> lattice, Real xoff, Real yoff) {
  CrossSectionGrid g;
  g.h = h;
  if (static_cast<int>(lattice.size()) < kMinInteriorNodes)
    throw GeometryError("too few interior nodes: " + std::to_string(lattice.size()) + " < " +
                        std::to_string(kMinInteriorNodes) + "; decrease h");
  int imax = lattice.front().first, jmax = lattice.front().second;
  g.imin = imax;
  g.jmin = jmax;
  for (auto [i, j] : lattice) {
    g.imin = std::min(g.imin, i);
    g.jmin = std::min(g.jmin, j);
    imax = std::max(imax, i);
    jmax = std::max(jmax, j);
  }
  g.nx = imax - g.imin + 1;
  g.ny = jmax - g.jmin + 1;
  g.index_of.assign(static_cast<std::size_t>(g.nx) * g.ny, -1);
  g.x1.reserve(lattice.size());
  g.x2.reserve(lattice.size());
  for (std::size_t n = 0; n < lattice.size(); ++n) {
    auto [i, j] = lattice[n];
    g.index_of[static_cast<std::size_t>(i - g.imin) * g.ny + (j - g.jmin)] = static_cast<int>(n);
    g.x1.push_back(i * h + xoff);
    g.x2.push_back(j * h + yoff);
  }
  g.lattice = std::move(lattice);
  g.area = static_cast<Real>(g.size()) * h * h;
  return g;
}

}  // namespace detail

/// Parses the ASCII mask format: header "rows cols h", then rows of '#' (inside) and '.' (outside).
/// The first text row is the top of the cross-section; the bitmap is centred at the origin.
inline std::pair<std::vector<std::string>, Real> read_mask(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GeometryError("unreadable mask: cannot open '" + path + "'");
  int rows = 0, cols = 0;
  Real h = 0;
  std::string header;
  if (!std::getline(in, header)) throw GeometryError("unreadable mask: missing header in '" + path + "'");
  std::istringstream hs(header);
  if (!(hs >> rows >> cols >> h) || rows <= 0 || cols <= 0 || !(h > 0))
    throw GeometryError("unreadable mask: header must be 'rows cols h' in '" + path + "'");
  std::vector<std::string> bitmap;
  std::string line;
  while (static_cast<int>(bitmap.size()) < rows && std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (static_cast<int>(line.size()) != cols)
      throw GeometryError("unreadable mask: row " + std::to_string(bitmap.size() + 1) + " has " +
                          std::to_string(line.size()) + " columns, expected " + std::to_string(cols));
    for (char c : line)
      if (c != '#' && c != '.') throw GeometryError(std::string("unreadable mask: unexpected character '") + c + "'");
    bitmap.push_back(line);
  }
  if (static_cast<int>(bitmap.size()) != rows)
    throw GeometryError("unreadable mask: expected " + std::to_string(rows) + " rows in '" + path + "'");
  return {bitmap, h};
}

inline CrossSectionGrid build_grid(const GeometrySpec& spec) {
  const Real h = spec.h;
  if (const auto* rect = std::get_if<Rectangle>(&spec.shape)) {
    if (!(rect->a > 0) || !(rect->b > 0) || !(h > 0)) throw GeometryError("rectangle sides and h must be positive");
    const int n1 = detail::interior_steps(rect->a, h);
    const int n2 = detail::interior_steps(rect->b, h);
    std::vector<std::pair<int, int>> lattice;
    for (int i = 1; i <= n1; ++i)
      for (int j = 1; j <= n2; ++j) lattice.emplace_back(i, j);
    return detail::finish_grid(h, std::move(lattice), -rect->a / 2, -rect->b / 2);
  }
  if (const auto* disc = std::get_if<Disc>(&spec.shape)) {
    if (!(disc->r > 0) || !(h > 0)) throw GeometryError("disc radius and h must be positive");
    const int m = static_cast<int>(std::ceil(disc->r / h)) + 1;
    const Real r2 = disc->r * disc->r * (1 - 1e-12);
    std::vector<std::pair<int, int>> lattice;
    for (int i = -m; i <= m; ++i)
      for (int j = -m; j <= m; ++j)
        if ((i * h) * (i * h) + (j * h) * (j * h) < r2) lattice.emplace_back(i, j);
    return detail::finish_grid(h, std::move(lattice), 0.0, 0.0);
  }
  const auto& mask = std::get<Mask>(spec.shape);
  auto [bitmap, mh] = read_mask(mask.path);
  const int rows = static_cast<int>(bitmap.size());
  const int cols = static_cast<int>(bitmap.front().size());
  std::vector<std::pair<int, int>> lattice;
  // Column c maps to lattice i = c, row r to lattice j = rows-1-r.
  for (int c = 0; c < cols; ++c)
    for (int r = rows - 1; r >= 0; --r)
      if (bitmap[r][c] == '#') lattice.emplace_back(c, rows - 1 - r);
  return detail::finish_grid(mh, std::move(lattice), -0.5 * (cols - 1) * mh, -0.5 * (rows - 1) * mh);
}

inline void write_grid_csv(std::ostream& os, const CrossSectionGrid& g) {
  os << "i,x1,x2\n";
  os.precision(17);
  for (std::size_t n = 0; n < g.size(); ++n) os << n << ',' << g.x1[n] << ',' << g.x2[n] << '\n';
}

/// Five-point Dirichlet Laplacian and the centred-difference rotation generator.
inline DiscreteOperators assemble_operators(const CrossSectionGrid& grid, int n_mu = 6) {
  const auto n = static_cast<int>(grid.size());
  const Real h = grid.h, ih2 = 1.0 / (h * h), i2h = 0.5 / h;
  std::vector<TripletR> lt, dt;
  lt.reserve(5 * n);
  dt.reserve(4 * n);
  for (int r = 0; r < n; ++r) {
    auto [i, j] = grid.lattice[r];
    lt.emplace_back(r, r, 4 * ih2);
    for (auto [di, dj] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}})
      if (int c = grid.node_at(i + di, j + dj); c >= 0) lt.emplace_back(r, c, -ih2);
    // Dtau = X1 D2 - X2 D1. The coefficient of a D2 neighbour depends only on x1,
    // which the neighbour shares, so the (r,c)/(c,r) pair is an exact negation.
    const Real x1 = grid.x1[r], x2 = grid.x2[r];
    if (int c = grid.node_at(i, j + 1); c >= 0) dt.emplace_back(r, c, x1 * i2h);
    if (int c = grid.node_at(i, j - 1); c >= 0) dt.emplace_back(r, c, -x1 * i2h);
    if (int c = grid.node_at(i + 1, j); c >= 0) dt.emplace_back(r, c, -x2 * i2h);
    if (int c = grid.node_at(i - 1, j); c >= 0) dt.emplace_back(r, c, x2 * i2h);
  }
  DiscreteOperators ops;
  ops.grid = grid;
  ops.L.resize(n, n);
  ops.L.setFromTriplets(lt.begin(), lt.end());
  ops.Dtau.resize(n, n);
  ops.Dtau.setFromTriplets(dt.begin(), dt.end());
  ops.Dtau.prune(0.0);
  if (n_mu > 0) {
    const auto res = eig_hermitian(ops.L, std::min(n_mu, n));
    ops.mu.assign(res.values.data(), res.values.data() + res.values.size());
  }
  return ops;
}

/// Number of eigenvalues of the symmetric matrix below lambda, by Sylvester inertia of LDL^T(A - lambda).
inline int count_below(const SparseR& A, Real lambda) {
  SparseR shifted = A;
  for (int i = 0; i < A.rows(); ++i) shifted.coeffRef(i, i) -= lambda;
  Eigen::SimplicialLDLT<SparseR> ldlt(shifted);
  if (ldlt.info() != Eigen::Success) throw SolverError("LDL^T factorization failed while counting eigenvalues");
  const VectorR d = ldlt.vectorD();
  return static_cast<int>((d.array() < 0).count());
}

struct WeylRow {
  Real lambda = 0;
  int count = 0;
  Real ratio = 0;  ///< count * 4 pi / (|omega| lambda)
};

struct WeylTable {
  std::vector<WeylRow> rows;
  Real ceiling = 0;
  std::vector<std::string> warnings;
};

/// Trust ceiling of the five-point stencil: half of its spectral top 8/h^2.
inline Real weyl_ceiling(const DiscreteOperators& ops) { return 0.5 * 4.0 / (ops.grid.h * ops.grid.h); }

inline WeylTable weyl_check(const DiscreteOperators& ops, const std::vector<Real>& lambdas) {
  WeylTable t;
  t.ceiling = weyl_ceiling(ops);
  for (Real lam : lambdas) {
    if (lam >= t.ceiling) {
      t.warnings.push_back("lambda " + std::to_string(lam) + " exceeds the trust ceiling " +
                           std::to_string(t.ceiling) + "; row skipped");
      continue;
    }
    WeylRow row;
    row.lambda = lam;
    row.count = lam > 0 ? count_below(ops.L, lam) : 0;
    row.ratio = lam > 0 ? row.count * 4 * pi / (ops.grid.area * lam) : 0.0;
    t.rows.push_back(row);
  }
  return t;
}

/// Evenly spaced sample of lambda in (0, lambda_max].
inline WeylTable weyl_check(const DiscreteOperators& ops, Real lambda_max, int samples = 16) {
  std::vector<Real> lams;
  for (int s = 1; s <= samples; ++s) lams.push_back(lambda_max * s / samples);
  return weyl_check(ops, lams);
}

}  // namespace twg
