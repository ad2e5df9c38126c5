#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "oampsa/channel.hpp"
#include "oampsa/detect.hpp"
#include "oampsa/harness/report.hpp"
#include "oampsa/neural/params.hpp"
#include "oampsa/neural/train.hpp"

namespace oampsa::harness {

enum class DetectorKind { mmse, oamp, oampnet2, oamp_sa, ml };

inline std::string detector_name(DetectorKind k) {
  switch (k) {
    case DetectorKind::mmse: return "mmse";
    case DetectorKind::oamp: return "oamp";
    case DetectorKind::oampnet2: return "oampnet2";
    case DetectorKind::oamp_sa: return "oamp_sa";
    case DetectorKind::ml: return "ml";
  }
  return "?";
}

inline DetectorKind parse_detector(const std::string& s) {
  for (auto k : {DetectorKind::mmse, DetectorKind::oamp, DetectorKind::oampnet2, DetectorKind::oamp_sa, DetectorKind::ml})
    if (detector_name(k) == s) return k;
  throw UsageError("unknown detector '" + s + "' (expected mmse, oamp, oampnet2, oamp_sa or ml)");
}

inline bool is_learned(DetectorKind k) { return k == DetectorKind::oampnet2 || k == DetectorKind::oamp_sa; }

/// A detector ready to run; learned detectors carry their parameters.
struct Detector {
  DetectorKind kind = DetectorKind::mmse;
  std::string label;  // CSV name; defaults to the kind name
  const neural::LearnedParams* params = nullptr;

  SymbolIndices detect(const ChannelSample& s, const Constellation& c, const OampConfig& cfg) const {
    switch (kind) {
      case DetectorKind::mmse: return hard_decision(mmse_detect(s.real_system()), c);
      case DetectorKind::oamp: return hard_decision(oamp_detect(s.real_system(), c, cfg).x, c);
      case DetectorKind::ml: return ml_detect_bruteforce(s.H, s.y, c);
      case DetectorKind::oampnet2:
      case DetectorKind::oamp_sa: return hard_decision(neural::detect_learned(s.real_system(), c, cfg, *params).x, c);
    }
    return {};
  }
};

/// Builds the detector list, matching learned detectors to loaded parameter sets by variant.
inline std::vector<Detector> make_detectors(const std::vector<DetectorKind>& kinds,
                                            const std::vector<neural::LearnedParams>& learned) {
  std::vector<Detector> out;
  for (auto k : kinds) {
    Detector d{k, detector_name(k), nullptr};
    if (is_learned(k)) {
      const auto want = k == DetectorKind::oampnet2 ? neural::Variant::oampnet2 : neural::Variant::oamp_sa;
      for (const auto& p : learned)
        if (neural::variant_of(p) == want) d.params = &p;
      if (d.params == nullptr) throw UsageError("missing checkpoint for learned detector '" + d.label + "'");
    }
    out.push_back(std::move(d));
  }
  return out;
}

using SampleSource = std::function<ChannelSample(std::size_t)>;

struct EvalOptions {
  OampConfig detector;
  bool timing = false;
  std::uint64_t seed = 0;  // echoed into the report
};

/// Runs every detector on the same `count` samples and reports one row per detector.
inline std::vector<EvalRow> evaluate_point(double snr_db, std::size_t count, const SampleSource& source,
                                           const Constellation& c, const std::vector<Detector>& detectors,
                                           const EvalOptions& opt) {
  if (count == 0) throw UsageError("evaluation needs at least one sample");
  std::vector<std::uint64_t> sym_err(detectors.size(), 0), bit_err(detectors.size(), 0);
  std::vector<double> elapsed(detectors.size(), 0.0);
  std::uint64_t symbols = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const ChannelSample s = source(i);
    symbols += s.x_true.size();
    for (std::size_t d = 0; d < detectors.size(); ++d) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto est = detectors[d].detect(s, c, opt.detector);
      if (opt.timing) elapsed[d] += std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
      sym_err[d] += symbol_errors(est, s.x_true);
      bit_err[d] += bit_errors(est, s.x_true, c);
    }
  }
  std::vector<EvalRow> rows;
  for (std::size_t d = 0; d < detectors.size(); ++d) {
    EvalRow r;
    r.snr_db = snr_db;
    r.detector = detectors[d].label;
    r.ser = static_cast<double>(sym_err[d]) / static_cast<double>(symbols);
    const auto ci = wilson_interval(sym_err[d], symbols);
    r.ser_ci_lo = ci.lo;
    r.ser_ci_hi = ci.hi;
    r.ber = static_cast<double>(bit_err[d]) / static_cast<double>(symbols * static_cast<std::uint64_t>(c.bits_per_symbol));
    r.n = count;
    r.runtime_us = opt.timing ? elapsed[d] / static_cast<double>(count) : 0.0;
    r.seed = opt.seed;
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Per-point seed of a generated evaluation grid.
inline std::uint64_t eval_point_seed(std::uint64_t seed, std::size_t point) {
  return derive_seed(seed, 0xE7A10000ULL + point);
}

/// Setting (ii): each SNR point draws fresh test samples; the same detectors
/// (e.g. one checkpoint trained at a fixed SNR) are applied at every point.
inline std::vector<EvalRow> evaluate_grid(const DatasetConfig& base, const std::vector<double>& snr_grid,
                                          std::size_t trials, const std::vector<Detector>& detectors,
                                          const EvalOptions& opt) {
  std::vector<EvalRow> rows;
  for (std::size_t p = 0; p < snr_grid.size(); ++p) {
    DatasetConfig cfg = base;
    cfg.snr = SnrPolicy::fixed(snr_grid[p]);
    cfg.seed = eval_point_seed(opt.seed, p);
    const SampleGenerator gen(cfg);
    auto part = evaluate_point(snr_grid[p], trials, [&gen](std::size_t i) { return gen(i); }, gen.constellation(),
                               detectors, opt);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

/// True if SER does not increase with SNR beyond what the Wilson intervals allow
/// (each later point's lower bound stays at or below every earlier point's upper bound).
inline bool non_increasing_within_ci(std::vector<EvalRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) { return a.snr_db < b.snr_db; });
  for (std::size_t j = 1; j < rows.size(); ++j)
    for (std::size_t i = 0; i < j; ++i)
      if (rows[j].ser_ci_lo > rows[i].ser_ci_hi) return false;
  return true;
}

inline std::vector<EvalRow> rows_for(const std::vector<EvalRow>& rows, const std::string& detector) {
  std::vector<EvalRow> out;
  for (const auto& r : rows)
    if (r.detector == detector) out.push_back(r);
  return out;
}

}  // namespace oampsa::harness
