#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oampsa/error.hpp"
#include "oampsa/numerics.hpp"

namespace oampsa {

using SymbolIndices = std::vector<std::uint16_t>;

/// Square QAM alphabet with unit average energy.
///
/// Symbol index s maps to in-phase level s / K and quadrature level s % K,
/// where K = sqrt(order) is the per-dimension PAM size and levels are sorted
/// ascending. Bit labels are Gray-coded per dimension: the in-phase Gray code
/// occupies the high bits, the quadrature Gray code the low bits.
struct Constellation {
  int order = 0;
  int pam_size = 0;  // K
  int bits_per_symbol = 0;
  std::vector<double> pam_levels;
  std::vector<Complex> points;
  std::vector<std::uint32_t> bit_labels;

  int in_phase_index(int symbol) const { return symbol / pam_size; }
  int quadrature_index(int symbol) const { return symbol % pam_size; }
  int symbol_from_levels(int in_phase, int quadrature) const { return in_phase * pam_size + quadrature; }
};

inline std::uint32_t gray_code(std::uint32_t i) { return i ^ (i >> 1); }

inline Constellation qam_constellation(int order) {
  Constellation c;
  if (order == 4) {
    const double a = 1.0 / std::sqrt(2.0);
    c.pam_levels = {-a, a};
  } else if (order == 16) {
    const double s = 1.0 / std::sqrt(10.0);
    c.pam_levels = {-3.0 * s, -1.0 * s, 1.0 * s, 3.0 * s};
  } else {
    throw UsageError("unsupported QAM order " + std::to_string(order) + " (expected 4 or 16)");
  }
  c.order = order;
  c.pam_size = static_cast<int>(c.pam_levels.size());
  const int half_bits = std::countr_zero(static_cast<unsigned>(c.pam_size));
  c.bits_per_symbol = 2 * half_bits;
  c.points.resize(order);
  c.bit_labels.resize(order);
  for (int s = 0; s < order; ++s) {
    const int re = c.in_phase_index(s);
    const int im = c.quadrature_index(s);
    c.points[s] = Complex(c.pam_levels[re], c.pam_levels[im]);
    c.bit_labels[s] = (gray_code(re) << half_bits) | gray_code(im);
  }
  return c;
}

inline Constellation constellation_from_name(const std::string& name) {
  if (name == "qam4") return qam_constellation(4);
  if (name == "qam16") return qam_constellation(16);
  throw UsageError("unknown modulation '" + name + "' (expected qam4 or qam16)");
}

inline ComplexVector modulate(std::span<const std::uint16_t> indices, const Constellation& c) {
  ComplexVector x(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= c.order) {
      throw DataError("symbol index " + std::to_string(indices[i]) + " out of range for QAM-" +
                      std::to_string(c.order));
    }
    x(static_cast<Eigen::Index>(i)) = c.points[indices[i]];
  }
  return x;
}

/// Nearest constellation point per entry; ties go to the smaller index.
inline SymbolIndices nearest_symbol(const ComplexVector& xhat, const Constellation& c) {
  SymbolIndices out(static_cast<std::size_t>(xhat.size()));
  for (Eigen::Index i = 0; i < xhat.size(); ++i) {
    int best = 0;
    double best_d = std::norm(xhat(i) - c.points[0]);
    for (int s = 1; s < c.order; ++s) {
      const double d = std::norm(xhat(i) - c.points[s]);
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    out[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(best);
  }
  return out;
}

/// Nearest PAM level index; ties go to the smaller index.
inline int nearest_level(double value, std::span<const double> levels) {
  int best = 0;
  double best_d = std::abs(value - levels[0]);
  for (std::size_t k = 1; k < levels.size(); ++k) {
    const double d = std::abs(value - levels[k]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

/// Hard decision on a real-equivalent estimate [Re x; Im x], one level per dimension.
inline SymbolIndices hard_decision(const RealVector& x_real, const Constellation& c) {
  const auto n = x_real.size() / 2;
  SymbolIndices out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int re = nearest_level(x_real(i), c.pam_levels);
    const int im = nearest_level(x_real(n + i), c.pam_levels);
    out[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(c.symbol_from_levels(re, im));
  }
  return out;
}

/// Per real dimension PAM level index, ordered like the real-equivalent vector.
inline std::vector<int> level_labels(std::span<const std::uint16_t> indices, const Constellation& c) {
  const std::size_t n = indices.size();
  std::vector<int> out(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = c.in_phase_index(indices[i]);
    out[n + i] = c.quadrature_index(indices[i]);
  }
  return out;
}

inline std::size_t symbol_errors(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> truth) {
  if (pred.size() != truth.size()) throw DimensionError("prediction and truth lengths differ");
  std::size_t errors = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) errors += pred[i] != truth[i];
  return errors;
}

inline std::size_t bit_errors(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> truth,
                              const Constellation& c) {
  if (pred.size() != truth.size()) throw DimensionError("prediction and truth lengths differ");
  std::size_t errors = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    errors += static_cast<std::size_t>(std::popcount(c.bit_labels.at(pred[i]) ^ c.bit_labels.at(truth[i])));
  }
  return errors;
}

inline double ser(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> truth) {
  if (pred.empty()) return pred.size() == truth.size() ? 0.0 : throw DimensionError("length mismatch");
  return static_cast<double>(symbol_errors(pred, truth)) / static_cast<double>(pred.size());
}

inline double ber(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> truth, const Constellation& c) {
  if (pred.empty()) return pred.size() == truth.size() ? 0.0 : throw DimensionError("length mismatch");
  return static_cast<double>(bit_errors(pred, truth, c)) /
         static_cast<double>(pred.size() * static_cast<std::size_t>(c.bits_per_symbol));
}

}  // namespace oampsa
