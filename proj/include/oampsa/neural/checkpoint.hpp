#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "oampsa/binary_io.hpp"
#include "oampsa/error.hpp"
#include "oampsa/neural/adam.hpp"
#include "oampsa/neural/params.hpp"

// Checkpoint layout (little-endian):
//   "OAMPSANN" | u32 version | u32 flags | u64 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | rank x u64 dims | f64 payload (row-major)
// flags bit 0 marks optimizer state, stored as extra tensors "adam/step",
// "train/epochs_done", "adam/m/<name>" and "adam/v/<name>".

namespace oampsa::neural {

inline constexpr std::array<char, 8> kCheckpointMagic = {'O', 'A', 'M', 'P', 'S', 'A', 'N', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kFlagOptimizerState = 1u;

struct OptimizerSnapshot {
  AdamState adam;
  std::int64_t epochs_done = 0;
};

struct Checkpoint {
  ParamList params;
  std::optional<OptimizerSnapshot> optimizer;
};

namespace detail {

inline void write_tensor(io::Writer& w, const std::string& name, const RealMatrix& value) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u32(2);
  w.u64(static_cast<std::uint64_t>(value.rows()));
  w.u64(static_cast<std::uint64_t>(value.cols()));
  for (Eigen::Index i = 0; i < value.rows(); ++i)
    for (Eigen::Index j = 0; j < value.cols(); ++j) w.f64(value(i, j));
}

inline NamedTensor read_tensor(io::Reader& r) {
  NamedTensor t;
  const auto len = r.u32();
  if (len > 4096) throw io::FormatError("tensor name length " + std::to_string(len) + " is implausible");
  t.name.resize(len);
  r.bytes(t.name.data(), len);
  const auto rank = r.u32();
  if (rank > 2) throw io::FormatError("tensor '" + t.name + "' has rank " + std::to_string(rank) + " (max 2)");
  std::uint64_t rows = 1, cols = 1;
  if (rank >= 1) rows = r.u64();
  if (rank == 2) cols = r.u64();
  if (cols != 0 && rows > r.remaining() / 8 / cols) r.require(r.remaining() + 1);
  t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::uint64_t i = 0; i < rows; ++i)
    for (std::uint64_t j = 0; j < cols; ++j) t.value(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.f64();
  return t;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ParamList tensors = ckpt.params;
  std::uint32_t flags = 0;
  if (ckpt.optimizer) {
    const auto& opt = *ckpt.optimizer;
    flags |= kFlagOptimizerState;
    tensors.push_back({"adam/step", RealMatrix::Constant(1, 1, static_cast<double>(opt.adam.step))});
    tensors.push_back({"train/epochs_done", RealMatrix::Constant(1, 1, static_cast<double>(opt.epochs_done))});
    if (opt.adam.step > 0) {
      if (!opt.adam.initialized_for(ckpt.params)) throw DimensionError("optimizer state does not match parameters");
      for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
        tensors.push_back({"adam/m/" + ckpt.params[i].name, opt.adam.m[i]});
        tensors.push_back({"adam/v/" + ckpt.params[i].name, opt.adam.v[i]});
      }
    }
  }
  io::Writer w(path);
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.u32(flags);
  w.u64(tensors.size());
  for (const auto& t : tensors) detail::write_tensor(w, t.name, t.value);
  w.close();
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  io::Reader r(path);
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw io::FormatError("bad checkpoint magic in '" + path.string() + "'");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw io::FormatError("unsupported checkpoint version " + std::to_string(version) + " in '" + path.string() + "'");
  }
  const auto flags = r.u32();
  if ((flags & ~kFlagOptimizerState) != 0) throw io::FormatError("unknown checkpoint flags in '" + path.string() + "'");
  const auto count = r.u64();
  ParamList all;
  for (std::uint64_t k = 0; k < count; ++k) all.push_back(detail::read_tensor(r));
  r.expect_end();

  Checkpoint ckpt;
  ParamList moments;
  for (auto& t : all) {
    if (t.name.rfind("adam/", 0) == 0 || t.name.rfind("train/", 0) == 0) {
      if ((flags & kFlagOptimizerState) == 0) throw io::FormatError("optimizer tensor '" + t.name + "' without flag");
      moments.push_back(std::move(t));
    } else {
      ckpt.params.push_back(std::move(t));
    }
  }
  if (flags & kFlagOptimizerState) {
    OptimizerSnapshot opt;
    opt.adam.step = static_cast<std::int64_t>(require_tensor(moments, "adam/step")(0, 0));
    opt.epochs_done = static_cast<std::int64_t>(require_tensor(moments, "train/epochs_done")(0, 0));
    if (opt.adam.step > 0) {
      for (const auto& p : ckpt.params) {
        const RealMatrix& m = require_tensor(moments, "adam/m/" + p.name);
        const RealMatrix& v = require_tensor(moments, "adam/v/" + p.name);
        if (m.rows() != p.value.rows() || m.cols() != p.value.cols() || v.rows() != m.rows() || v.cols() != m.cols()) {
          throw DimensionError("optimizer moments for '" + p.name + "' have the wrong shape");
        }
        opt.adam.m.push_back(m);
        opt.adam.v.push_back(v);
      }
    }
    ckpt.optimizer = std::move(opt);
  }
  return ckpt;
}

/// Loads the parameters of a learned detector and checks them against the
/// expected system; shape errors name the offending tensor.
inline LearnedParams load_learned(const std::filesystem::path& path) {
  return learned_from_list(load_checkpoint(path).params);
}

}  // namespace oampsa::neural
