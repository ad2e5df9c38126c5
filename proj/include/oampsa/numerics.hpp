#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include "oampsa/error.hpp"

namespace oampsa {

using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using Complex = std::complex<double>;

// ---------------------------------------------------------------------------
// Real-equivalent model
// ---------------------------------------------------------------------------

/// Real-valued doubling of y = Hx + v.
///
/// H_r = [[Re H, -Im H], [Im H, Re H]] (2M x 2N), y_r = [Re y; Im y].
/// `sigma` is the noise standard deviation per complex dimension, so each
/// real noise entry has variance sigma^2 / 2.
struct RealSystem {
  RealMatrix H;
  RealVector y;
  double sigma = 0.0;

  Eigen::Index rx() const { return H.rows() / 2; }  // M
  Eigen::Index tx() const { return H.cols() / 2; }  // N
};

inline RealMatrix real_equivalent_matrix(const ComplexMatrix& H) {
  const auto m = H.rows();
  const auto n = H.cols();
  RealMatrix out(2 * m, 2 * n);
  out.topLeftCorner(m, n) = H.real();
  out.topRightCorner(m, n) = -H.imag();
  out.bottomLeftCorner(m, n) = H.imag();
  out.bottomRightCorner(m, n) = H.real();
  return out;
}

/// Stacks [Re x; Im x].
inline RealVector real_equivalent_vector(const ComplexVector& x) {
  RealVector out(2 * x.size());
  out.head(x.size()) = x.real();
  out.tail(x.size()) = x.imag();
  return out;
}

inline ComplexVector complex_from_real(const RealVector& x) {
  if (x.size() % 2 != 0) throw DimensionError("real-equivalent vector must have even length");
  const auto n = x.size() / 2;
  ComplexVector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = Complex(x(i), x(n + i));
  return out;
}

inline RealSystem to_real_equivalent(const ComplexMatrix& H, const ComplexVector& y, double sigma) {
  if (y.size() != H.rows()) {
    throw DimensionError("y has " + std::to_string(y.size()) + " entries, H has " + std::to_string(H.rows()) +
                         " rows");
  }
  if (!H.allFinite() || !y.allFinite() || !std::isfinite(sigma)) {
    throw DataError("non-finite channel, observation or noise level");
  }
  return RealSystem{real_equivalent_matrix(H), real_equivalent_vector(y), sigma};
}

// ---------------------------------------------------------------------------
// Dense kernels
// ---------------------------------------------------------------------------

/// Solves A X = B for symmetric positive-definite A using a Cholesky factorization.
inline RealMatrix solve_spd(const RealMatrix& A, const RealMatrix& B) {
  if (A.rows() != A.cols()) throw DimensionError("solve_spd: A is not square");
  if (B.rows() != A.rows()) throw DimensionError("solve_spd: B rows do not match A");
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw NumericError("solve_spd: matrix is not symmetric");
  }
  Eigen::LLT<RealMatrix> llt(A);
  if (llt.info() != Eigen::Success) throw SingularSystemError("non-positive pivot in Cholesky factorization");
  RealMatrix X = llt.solve(B);
  if (!X.allFinite()) throw SingularSystemError("Cholesky solve produced non-finite values");
  return X;
}

/// tr(AB) without forming the product.
inline double trace_product(const RealMatrix& A, const RealMatrix& B) {
  if (A.cols() != B.rows() || B.cols() != A.rows()) {
    throw DimensionError("trace_product: shapes " + std::to_string(A.rows()) + "x" + std::to_string(A.cols()) +
                         " and " + std::to_string(B.rows()) + "x" + std::to_string(B.cols()));
  }
  return A.cwiseProduct(B.transpose()).sum();
}

// ---------------------------------------------------------------------------
// Seeded randomness
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based derivation: the seed for task `index` depends only on (base, index).
inline constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/// Single-owner random stream. Uses mt19937_64 (whose output sequence is fixed
/// by the standard) and in-house transforms so streams are identical across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  Rng derive(std::uint64_t index) const { return Rng(derive_seed(seed_, index)); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on (0, 1].
  double uniform() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t bound) {
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = bound == 0 ? 0 : (~std::uint64_t{0} - bound + 1) % bound;
    std::uint64_t v = engine_();
    while (v < limit) v = engine_();
    return v % bound;
  }

  /// Standard normal via Box-Muller; the second deviate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
  Complex complex_normal(double variance = 1.0) {
    const double s = std::sqrt(variance / 2.0);
    const double re = normal();
    const double im = normal();
    return {s * re, s * im};
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace oampsa
