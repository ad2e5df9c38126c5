#pragma once

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "oampsa/binary_io.hpp"
#include "oampsa/error.hpp"
#include "oampsa/modem.hpp"
#include "oampsa/numerics.hpp"

namespace oampsa {

// ---------------------------------------------------------------------------
// Channel models
// ---------------------------------------------------------------------------

/// I.i.d. CN(0, 1) entries, drawn in row-major order.
inline ComplexMatrix rayleigh_channel(Eigen::Index M, Eigen::Index N, Rng& rng) {
  if (M < 1 || N < 1) throw DimensionError("channel dimensions must be positive");
  ComplexMatrix H(M, N);
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = 0; j < N; ++j) H(i, j) = rng.complex_normal(1.0);
  return H;
}

struct CorrelationSpec {
  double c_r = 0.0;
  double c_t = 0.0;

  void validate() const {
    for (double c : {c_r, c_t}) {
      if (!(c >= 0.0 && c < 1.0)) throw UsageError("correlation coefficient must lie in [0, 1), got " + std::to_string(c));
    }
  }
  bool is_identity() const { return c_r == 0.0 && c_t == 0.0; }
};

/// (R)_ij = c^|i-j|
inline RealMatrix exponential_correlation(Eigen::Index n, double c) {
  RealMatrix R(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) R(i, j) = std::pow(c, static_cast<double>(std::abs(i - j)));
  return R;
}

/// Symmetric PSD square root via eigendecomposition.
inline RealMatrix symmetric_sqrt(const RealMatrix& R) {
  Eigen::SelfAdjointEigenSolver<RealMatrix> eig(R);
  const RealVector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

/// Precomputed R_r^{1/2}, R_t^{1/2} for the exponential Kronecker model.
class KroneckerCorrelator {
 public:
  KroneckerCorrelator(Eigen::Index M, Eigen::Index N, CorrelationSpec spec) : spec_(spec) {
    spec.validate();
    if (spec.c_r != 0.0) rx_root_ = symmetric_sqrt(exponential_correlation(M, spec.c_r));
    if (spec.c_t != 0.0) tx_root_ = symmetric_sqrt(exponential_correlation(N, spec.c_t));
  }

  ComplexMatrix apply(const ComplexMatrix& H) const {
    ComplexMatrix out = H;
    if (rx_root_) {
      if (rx_root_->rows() != H.rows()) throw DimensionError("receive correlation size");
      out = rx_root_->cast<Complex>() * out;
    }
    if (tx_root_) {
      if (tx_root_->rows() != H.cols()) throw DimensionError("transmit correlation size");
      out = out * tx_root_->cast<Complex>();
    }
    return out;
  }

 private:
  CorrelationSpec spec_;
  std::optional<RealMatrix> rx_root_;
  std::optional<RealMatrix> tx_root_;
};

inline ComplexMatrix kronecker_correlate(const ComplexMatrix& H, CorrelationSpec spec) {
  return KroneckerCorrelator(H.rows(), H.cols(), spec).apply(H);
}

/// Noise standard deviation per complex entry for SNR = E||Hx||^2 / E||v||^2
/// with unit-variance channel entries: sigma^2 = N * Es / 10^(snr_db / 10).
inline double sigma_from_snr(double snr_db, Eigen::Index N, double Es = 1.0) {
  if (!(Es > 0.0)) throw UsageError("symbol energy must be positive");
  return std::sqrt(static_cast<double>(N) * Es / std::pow(10.0, snr_db / 10.0));
}

/// y = Hx + v with v ~ CN(0, sigma^2 I).
inline ComplexVector transmit(const ComplexMatrix& H, const ComplexVector& x, double sigma, Rng& rng) {
  if (H.cols() != x.size()) throw DimensionError("transmit: H has " + std::to_string(H.cols()) + " columns, x has " +
                                                 std::to_string(x.size()) + " entries");
  ComplexVector y = H * x;
  const double var = sigma * sigma;
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += rng.complex_normal(var);
  return y;
}

// ---------------------------------------------------------------------------
// Samples and datasets
// ---------------------------------------------------------------------------

struct ChannelSample {
  ComplexMatrix H;
  SymbolIndices x_true;
  ComplexVector y;
  double sigma = 0.0;
  double snr_db = 0.0;

  RealSystem real_system() const { return to_real_equivalent(H, y, sigma); }
};

struct SnrPolicy {
  enum class Kind { fixed, uniform } kind = Kind::fixed;
  double lo_db = 10.0;
  double hi_db = 10.0;

  static SnrPolicy fixed(double db) { return {Kind::fixed, db, db}; }
  static SnrPolicy uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
};

struct DatasetConfig {
  Eigen::Index M = 16;
  Eigen::Index N = 8;
  int order = 4;
  SnrPolicy snr = SnrPolicy::fixed(10.0);
  CorrelationSpec correlation{};
  std::size_t count = 0;
  std::uint64_t seed = 0;
  /// Externally generated channel matrices; used round-robin instead of Rayleigh draws when non-empty.
  std::vector<ComplexMatrix> channel_pool;
};

/// Draws sample `index` of a dataset. Each sample owns an Rng derived from
/// (seed, index), so any subset can be generated independently.
class SampleGenerator {
 public:
  explicit SampleGenerator(DatasetConfig cfg)
      : cfg_(std::move(cfg)), constellation_(qam_constellation(cfg_.order)), correlator_(cfg_.M, cfg_.N, cfg_.correlation) {
    if (cfg_.M < 1 || cfg_.N < 1) throw UsageError("system dimensions must be positive");
    if (cfg_.snr.kind == SnrPolicy::Kind::uniform && cfg_.snr.hi_db < cfg_.snr.lo_db) {
      throw UsageError("uniform SNR range is reversed");
    }
    for (const auto& H : cfg_.channel_pool) {
      if (H.rows() != cfg_.M || H.cols() != cfg_.N) throw DimensionError("ingested channel does not match M x N");
    }
  }

  const DatasetConfig& config() const { return cfg_; }
  const Constellation& constellation() const { return constellation_; }

  ChannelSample operator()(std::size_t index) const {
    Rng rng(derive_seed(cfg_.seed, index));
    ChannelSample s;
    s.snr_db = cfg_.snr.kind == SnrPolicy::Kind::fixed ? cfg_.snr.lo_db : rng.uniform(cfg_.snr.lo_db, cfg_.snr.hi_db);
    if (cfg_.channel_pool.empty()) {
      s.H = correlator_.apply(rayleigh_channel(cfg_.M, cfg_.N, rng));
    } else {
      s.H = cfg_.channel_pool[index % cfg_.channel_pool.size()];
    }
    s.x_true.resize(static_cast<std::size_t>(cfg_.N));
    for (auto& idx : s.x_true) idx = static_cast<std::uint16_t>(rng.below(static_cast<std::uint64_t>(cfg_.order)));
    s.sigma = sigma_from_snr(s.snr_db, cfg_.N);
    s.y = transmit(s.H, modulate(s.x_true, constellation_), s.sigma, rng);
    return s;
  }

 private:
  DatasetConfig cfg_;
  Constellation constellation_;
  KroneckerCorrelator correlator_;
};

struct Dataset {
  Eigen::Index M = 0;
  Eigen::Index N = 0;
  std::vector<ChannelSample> samples;
};

inline Dataset generate_dataset(const DatasetConfig& cfg) {
  SampleGenerator gen(cfg);
  Dataset ds{cfg.M, cfg.N, {}};
  ds.samples.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) ds.samples.push_back(gen(i));
  return ds;
}

// ---------------------------------------------------------------------------
// File format
//
//   "MIMOCHAN" | u32 version=1 | u32 dtype (0 = f64) | u32 M | u32 N | u64 count
//
// Channel files follow with count x M x N (re, im) pairs, each matrix row-major.
// Dataset files follow with count records of
//   N x u16 symbol index | f64 snr_db | f64 sigma | M x (re, im) y | M x N x (re, im) H
// All values little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kChannelMagic = {'M', 'I', 'M', 'O', 'C', 'H', 'A', 'N'};
inline constexpr std::uint32_t kChannelVersion = 1;
inline constexpr std::uint32_t kDtypeF64 = 0;

class BadMagicError : public io::FormatError {
 public:
  explicit BadMagicError(const std::string& path) : io::FormatError("bad magic in '" + path + "'") {}
};
class VersionError : public io::FormatError {
 public:
  VersionError(const std::string& path, std::uint32_t v)
      : io::FormatError("unsupported version " + std::to_string(v) + " in '" + path + "'") {}
};
class DtypeError : public io::FormatError {
 public:
  DtypeError(const std::string& path, std::uint32_t d)
      : io::FormatError("unsupported dtype " + std::to_string(d) + " in '" + path + "'") {}
};

struct ChannelFileHeader {
  std::uint32_t M = 0;
  std::uint32_t N = 0;
  std::uint64_t count = 0;
};

namespace detail {

inline void write_header(io::Writer& w, const ChannelFileHeader& h) {
  w.bytes(kChannelMagic.data(), kChannelMagic.size());
  w.u32(kChannelVersion);
  w.u32(kDtypeF64);
  w.u32(h.M);
  w.u32(h.N);
  w.u64(h.count);
}

inline ChannelFileHeader read_header(io::Reader& r) {
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kChannelMagic) throw BadMagicError(r.path().string());
  const auto version = r.u32();
  if (version != kChannelVersion) throw VersionError(r.path().string(), version);
  const auto dtype = r.u32();
  if (dtype != kDtypeF64) throw DtypeError(r.path().string(), dtype);
  ChannelFileHeader h;
  h.M = r.u32();
  h.N = r.u32();
  h.count = r.u64();
  return h;
}

inline void write_complex_row_major(io::Writer& w, const ComplexMatrix& A) {
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      w.f64(A(i, j).real());
      w.f64(A(i, j).imag());
    }
}

inline ComplexMatrix read_complex_row_major(io::Reader& r, Eigen::Index rows, Eigen::Index cols) {
  ComplexMatrix A(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double re = r.f64();
      const double im = r.f64();
      A(i, j) = Complex(re, im);
    }
  return A;
}

inline std::uint32_t checked_dim(Eigen::Index v) {
  if (v < 0 || v > static_cast<Eigen::Index>(UINT32_MAX)) throw DimensionError("dimension exceeds u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

inline void write_channel_file(const std::filesystem::path& path, const std::vector<ComplexMatrix>& matrices,
                               Eigen::Index M, Eigen::Index N) {
  for (const auto& H : matrices)
    if (H.rows() != M || H.cols() != N) throw DimensionError("all matrices in a channel file must be M x N");
  io::Writer w(path);
  detail::write_header(w, {detail::checked_dim(M), detail::checked_dim(N), matrices.size()});
  for (const auto& H : matrices) detail::write_complex_row_major(w, H);
  w.close();
}

inline std::vector<ComplexMatrix> load_channel_file(const std::filesystem::path& path) {
  io::Reader r(path);
  const auto h = detail::read_header(r);
  const std::uint64_t bytes_per = std::uint64_t{h.M} * h.N * 16;
  if (bytes_per != 0 && h.count > r.remaining() / bytes_per) {
    r.require(static_cast<std::size_t>(h.count * bytes_per));
  }
  std::vector<ComplexMatrix> out;
  out.reserve(h.count);
  for (std::uint64_t k = 0; k < h.count; ++k) out.push_back(detail::read_complex_row_major(r, h.M, h.N));
  r.expect_end();
  return out;
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  io::Writer w(path);
  detail::write_header(w, {detail::checked_dim(ds.M), detail::checked_dim(ds.N), ds.samples.size()});
  for (const auto& s : ds.samples) {
    if (s.H.rows() != ds.M || s.H.cols() != ds.N || s.y.size() != ds.M ||
        s.x_true.size() != static_cast<std::size_t>(ds.N)) {
      throw DimensionError("sample does not match dataset dimensions");
    }
    for (auto idx : s.x_true) w.u16(idx);
    w.f64(s.snr_db);
    w.f64(s.sigma);
    for (Eigen::Index i = 0; i < s.y.size(); ++i) {
      w.f64(s.y(i).real());
      w.f64(s.y(i).imag());
    }
    detail::write_complex_row_major(w, s.H);
  }
  w.close();
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  io::Reader r(path);
  const auto h = detail::read_header(r);
  const std::uint64_t bytes_per = std::uint64_t{h.N} * 2 + 16 + std::uint64_t{h.M} * 16 + std::uint64_t{h.M} * h.N * 16;
  if (h.count > r.remaining() / bytes_per) r.require(static_cast<std::size_t>(h.count * bytes_per));
  Dataset ds{h.M, h.N, {}};
  ds.samples.reserve(h.count);
  for (std::uint64_t k = 0; k < h.count; ++k) {
    ChannelSample s;
    s.x_true.resize(h.N);
    for (auto& idx : s.x_true) idx = r.u16();
    s.snr_db = r.f64();
    s.sigma = r.f64();
    s.y.resize(h.M);
    for (std::uint32_t i = 0; i < h.M; ++i) {
      const double re = r.f64();
      const double im = r.f64();
      s.y(i) = Complex(re, im);
    }
    s.H = detail::read_complex_row_major(r, h.M, h.N);
    ds.samples.push_back(std::move(s));
  }
  r.expect_end();
  return ds;
}

/// Validates every label against the constellation; mismatched --mod flags surface here.
inline void check_labels(const Dataset& ds, const Constellation& c) {
  for (std::size_t k = 0; k < ds.samples.size(); ++k)
    for (auto idx : ds.samples[k].x_true)
      if (idx >= c.order) {
        throw DataError("sample " + std::to_string(k) + " has symbol index " + std::to_string(idx) +
                        " outside QAM-" + std::to_string(c.order));
      }
}

}  // namespace oampsa
