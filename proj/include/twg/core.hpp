#pragma once
// Shared numeric types, error hierarchy and a deterministic parallel map.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <atomic>
#include <complex>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace twg {

using Real = double;
using Complex = std::complex<double>;

using VectorR = Eigen::VectorXd;
using VectorC = Eigen::VectorXcd;
using MatrixR = Eigen::MatrixXd;
using MatrixC = Eigen::MatrixXcd;
using SparseR = Eigen::SparseMatrix<Real>;
using SparseC = Eigen::SparseMatrix<Complex>;
using TripletR = Eigen::Triplet<Real>;
using TripletC = Eigen::Triplet<Complex>;

inline constexpr Real pi = 3.14159265358979323846;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

class TrackingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised when a requested energy lies on (or within tolerance of) a critical level.
class CriticalEnergyError : public Error {
 public:
  CriticalEnergyError(const std::string& what, Real energy, Real level)
      : Error(what), energy_(energy), level_(level) {}
  Real energy() const noexcept { return energy_; }
  Real level() const noexcept { return level_; }

 private:
  Real energy_;
  Real level_;
};

/// Number of worker threads used by parallel_map; 0 selects hardware concurrency.
inline std::atomic<unsigned>& worker_count() {
  static std::atomic<unsigned> jobs{0};
  return jobs;
}

inline unsigned effective_jobs() {
  unsigned j = worker_count().load();
  if (j == 0) j = std::max(1u, std::thread::hardware_concurrency());
  return j;
}

/// Applies fn to 0..n-1 and returns the results in index order. Work is split
/// across effective_jobs() threads; the first exception (lowest index) is rethrown.
template <class Fn>
auto parallel_map(std::size_t n, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using Out = decltype(fn(std::size_t{}));
  std::vector<Out> out(n);
  const unsigned jobs = std::min<unsigned>(effective_jobs(), static_cast<unsigned>(std::max<std::size_t>(n, 1)));
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(jobs);
  for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline Real max_abs(const SparseR& m) {
  Real r = 0;
  for (int c = 0; c < m.outerSize(); ++c)
    for (SparseR::InnerIterator it(m, c); it; ++it) r = std::max(r, std::abs(it.value()));
  return r;
}

inline Real max_abs(const SparseC& m) {
  Real r = 0;
  for (int c = 0; c < m.outerSize(); ++c)
    for (SparseC::InnerIterator it(m, c); it; ++it) r = std::max(r, std::abs(it.value()));
  return r;
}

/// Induced 1-norm (max column sum) of a sparse matrix.
template <class Scalar>
Real norm1(const Eigen::SparseMatrix<Scalar>& m) {
  Real r = 0;
  for (int c = 0; c < m.outerSize(); ++c) {
    Real s = 0;
    for (typename Eigen::SparseMatrix<Scalar>::InnerIterator it(m, c); it; ++it) s += std::abs(it.value());
    r = std::max(r, s);
  }
  return r;
}

/// Exact symmetrization: entries (i,j) and (j,i) become bitwise equal.
inline SparseR symmetrized(const SparseR& m) {
  SparseR t = m.transpose();
  SparseR s = (m + t) * 0.5;
  s.prune(0.0);
  return s;
}

}  // namespace twg
